"""Experiment configuration: an INI file with one section per pipeline stage.

Every key is optional; missing keys take the defaults below. Tuple-valued keys
are comma separated. An empty value for ``ratio`` or ``snr_db`` means "natural
ratio" and "noise-free" respectively.

    [global]
    seed = 0

    [dataset]
    target_count = 1100
    otw = 0.03
    ratio = 10:1
    snr_db =
    test_fraction = 0.2

    [labeling]
    fuzzifier = 2.0

    [balancing]
    method = cwgan_gp
    epochs = 500

    [model]
    classifier = staat
    epochs = 200

    [evaluation]
    distances = yes
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigurationError

BALANCE_METHODS = ("cwgan_gp", "ros", "smote", "adasyn", "none")
CLASSIFIER_KINDS = ("staat", "rnn", "cnn")


@dataclass
class DatasetSection:
    target_count: int = 1100
    otw: float = 0.03
    ratio: str = ""
    snr_db: float | None = None
    test_fraction: float = 0.2
    n_buses: int = 10
    horizon: float = 10.0
    # operating-point variability: shared per-sample and independent per-bus parameter spread
    jitter: float = 0.1
    bus_jitter: float = 0.02
    load_levels: tuple = (0.8, 1.0, 1.2)
    motor_ratios: tuple = (0.7, 0.8, 0.9)
    fault_locations: tuple = (0.0, 0.25, 0.5, 0.75)
    clearing_times: tuple = (0.05, 0.1)


@dataclass
class LabelingSection:
    stable_floor: float = 0.9
    unstable_ceiling: float = 0.7
    settle: float = 0.08
    recovered_floor: float = 0.8
    tail: float = 1.0
    fuzzifier: float = 2.0
    tol: float = 1e-5
    max_iter: int = 300
    trajectory_every: int = 10


@dataclass
class BalancingSection:
    method: str = "cwgan_gp"
    target_ratio: float = 1.0
    k: int = 5
    lam: float = 10.0
    lr: float = 1e-4
    batch: int = 64
    n_critic: int = 5
    epochs: int = 500
    noise_dim: int = 100


@dataclass
class ModelSection:
    classifier: str = "staat"
    d_model: int = 64
    n_heads: int = 8
    n_layers: int = 2
    d_ff: int = 128
    dropout: float = 0.5
    epochs: int = 200
    batch: int = 64
    lr: float = 1e-4


@dataclass
class EvaluationSection:
    distances: bool = True
    distance_points: int = 512
    latency_repeats: int = 3


@dataclass
class ExperimentConfig:
    seed: int = 0
    dataset: DatasetSection = field(default_factory=DatasetSection)
    labeling: LabelingSection = field(default_factory=LabelingSection)
    balancing: BalancingSection = field(default_factory=BalancingSection)
    model: ModelSection = field(default_factory=ModelSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)

    def validate(self) -> "ExperimentConfig":
        d, b, m = self.dataset, self.balancing, self.model
        if self.seed < 0:
            raise ConfigurationError("seed must be a non-negative integer")
        if b.method not in BALANCE_METHODS:
            raise ConfigurationError(f"balancing method {b.method!r} not in {BALANCE_METHODS}")
        if m.classifier not in CLASSIFIER_KINDS:
            raise ConfigurationError(f"classifier {m.classifier!r} not in {CLASSIFIER_KINDS}")
        if not (0 <= d.jitter < 1 and 0 <= d.bus_jitter < 1):
            raise ConfigurationError("jitter and bus_jitter must lie in [0, 1)")
        if not 0 < d.test_fraction < 1:
            raise ConfigurationError("test_fraction must lie in (0, 1)")
        if d.snr_db is not None and not d.snr_db == d.snr_db:
            raise ConfigurationError("snr_db must be a number")
        if m.epochs < 1 or b.epochs < 1:
            raise ConfigurationError("epochs must be at least 1")
        if m.d_model % m.n_heads:
            raise ConfigurationError("d_model must be divisible by n_heads")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        """Content hash of the canonical JSON form."""
        text = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(text.encode()).hexdigest()

    def with_overrides(self, **sections) -> "ExperimentConfig":
        """``cfg.with_overrides(model={"epochs": 5}, seed=3)`` returns a modified copy."""
        out = replace(self)
        for name, value in sections.items():
            if isinstance(value, dict):
                setattr(out, name, replace(getattr(self, name), **value))
            else:
                setattr(out, name, value)
        return out.validate()


SECTIONS = {"dataset": DatasetSection, "labeling": LabelingSection, "balancing": BalancingSection,
            "model": ModelSection, "evaluation": EvaluationSection}


def _convert(cls, key: str, text: str, current):
    text = text.strip()
    try:
        if isinstance(current, bool):
            return text.lower() in ("1", "yes", "true", "on")
        if isinstance(current, tuple):
            return tuple(float(v) for v in text.split(",") if v.strip())
        if key == "snr_db":
            return None if text.lower() in ("", "none", "inf") else float(text)
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float):
            return float(text)
    except ValueError:
        raise ConfigurationError(f"[{cls.__name__}] {key} = {text!r} is not a valid value") from None
    return text


def _section(cls, items: dict):
    base = cls()
    known = {f.name for f in fields(cls)}
    unknown = set(items) - known
    if unknown:
        raise ConfigurationError(f"unknown keys {sorted(unknown)} for section {cls.__name__}")
    return replace(base, **{k: _convert(cls, k, v, getattr(base, k)) for k, v in items.items()})


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from None
    unknown = set(parser.sections()) - set(SECTIONS) - {"global"}
    if unknown:
        raise ConfigurationError(f"unknown config sections {sorted(unknown)}")
    cfg = ExperimentConfig()
    if parser.has_section("global"):
        g = dict(parser.items("global"))
        extra = set(g) - {"seed"}
        if extra:
            raise ConfigurationError(f"unknown keys {sorted(extra)} in [global]")
        if "seed" in g:
            cfg.seed = _convert(ExperimentConfig, "seed", g["seed"], 0)
    for name, cls in SECTIONS.items():
        if parser.has_section(name):
            setattr(cfg, name, _section(cls, dict(parser.items(name))))
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def format_config(cfg: ExperimentConfig) -> str:
    """INI text that ``parse_config`` reads back to an equal config."""
    parser = configparser.ConfigParser()
    parser["global"] = {"seed": str(cfg.seed)}
    for name in SECTIONS:
        values = {}
        for k, v in asdict(getattr(cfg, name)).items():
            if isinstance(v, (tuple, list)):
                values[k] = ", ".join(repr(float(x)) for x in v)
            elif v is None:
                values[k] = ""
            elif isinstance(v, bool):
                values[k] = "yes" if v else "no"
            else:
                values[k] = str(v)
        parser[name] = values
    lines = []
    for section in parser.sections():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {v}" for k, v in parser[section].items())
        lines.append("")
    return "\n".join(lines)


def apply_overrides(cfg: ExperimentConfig, assignments: list[str]) -> ExperimentConfig:
    """Apply ``section.key=value`` strings (``seed=3`` for the global seed)."""
    out = cfg
    for item in assignments:
        name, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"override {item!r} must look like section.key=value")
        name = name.strip()
        if name == "seed":
            out = out.with_overrides(seed=_convert(ExperimentConfig, "seed", value, 0))
            continue
        section, _, key = name.partition(".")
        if section not in SECTIONS or key not in {f.name for f in fields(SECTIONS[section])}:
            raise ConfigurationError(f"unknown config key {name!r}")
        current = getattr(getattr(out, section), key)
        out = out.with_overrides(**{section: {key: _convert(SECTIONS[section], key, value, current)}})
    return out
