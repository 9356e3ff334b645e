"""Pipeline stages with persisted artifacts.

A run directory accumulates the outputs of each stage:

    simulate   dataset.csv, trajectories/*.csv, simulate.json
    label      labeled.csv, label_report.json
    balance    normalizer.json, test_raw.csv, train_balanced.csv,
               distances.json, gan_losses.csv, generator.npz
    train      model.npz, losses.csv
    evaluate   report.json, confusion.csv

``manifest.json`` records the content hash of every artifact together with
per-stage timings and status. Each stage reads only what earlier stages wrote,
so stages can be rerun individually.
"""

from __future__ import annotations

import contextlib
import csv
import hashlib
import json
import logging
import platform
import shutil
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import BALANCE_METHODS, CLASSIFIER_KINDS, ExperimentConfig
from .data import Dataset, file_sha256, read_csv, write_csv
from .datagen import (
    CLEARING_TIMES,
    FAULT_LOCATIONS,
    LOAD_LEVELS,
    MOTOR_RATIOS,
    BuildConfig,
    MinMaxNormalizer,
    SimulationSettings,
    build_dataset,
    describe,
    impose_ratio,
    inject_noise,
    labeling_features,
    parse_ratio,
    read_trajectories,
    scenario_grid,
    stratified_split,
    write_trajectories,
)
from .errors import ConfigurationError, ContractError, ShapeError, StvsaError
from .gan import GanTrainConfig, balance_dataset, train_cwgan_gp
from .metrics import classification_metrics, distribution_report, evaluate_predictions, silhouette
from .nn import (
    StaaTConfig,
    TrainConfig,
    build_classifier,
    load_classifier,
    save_checkpoint,
    save_classifier,
    train_classifier,
)
from .resample import ResamplePlan, resample
from .sfcm import UNLABELED, ClusterState, LabelRules, harden, sfcm_fit

log = logging.getLogger(__name__)

DATASET = "dataset.csv"
TRAJECTORIES = "trajectories"
SIM_SUMMARY = "simulate.json"
LABELED = "labeled.csv"
LABEL_REPORT = "label_report.json"
NORMALIZER = "normalizer.json"
TEST_RAW = "test_raw.csv"
TRAIN_BALANCED = "train_balanced.csv"
DISTANCES = "distances.json"
GAN_LOSSES = "gan_losses.csv"
GENERATOR = "generator.npz"
MODEL = "model.npz"
LOSSES = "losses.csv"
REPORT = "report.json"
CONFUSION = "confusion.csv"
MANIFEST = "manifest.json"

METRIC_KEYS = ("acc", "mcc", "f1", "gmean", "mis", "fal")


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

def _versions() -> dict:
    return {"stvsa": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


@dataclass
class RunManifest:
    config_digest: str = ""
    seed: int = 0
    artifacts: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    status: dict = field(default_factory=dict)
    versions: dict = field(default_factory=_versions)
    warnings: list = field(default_factory=list)

    @classmethod
    def load(cls, out) -> "RunManifest":
        path = Path(out) / MANIFEST
        if not path.exists():
            return cls()
        return cls(**json.loads(path.read_text()))

    def save(self, out):
        Path(out, MANIFEST).write_text(json.dumps(asdict(self), indent=2, sort_keys=True))

    def record(self, out, path: Path, stage: str):
        rel = Path(path).relative_to(out).as_posix()
        self.artifacts[rel] = {"sha256": file_sha256(path), "stage": stage}

    def drop_stage(self, stage: str):
        self.artifacts = {k: v for k, v in self.artifacts.items() if v["stage"] != stage}

    def verify(self, out) -> list[str]:
        """Problems found: missing files and hash mismatches."""
        problems = []
        for rel, entry in sorted(self.artifacts.items()):
            path = Path(out) / rel
            if not path.exists():
                problems.append(f"missing {rel}")
            elif file_sha256(path) != entry["sha256"]:
                problems.append(f"hash mismatch {rel}")
        return problems


@contextlib.contextmanager
def _stage(out: Path, name: str, cfg: ExperimentConfig):
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest.load(out)
    manifest.config_digest, manifest.seed = cfg.digest(), cfg.seed
    manifest.drop_stage(name)
    manifest.status[name] = "running"
    start = time.perf_counter()
    try:
        yield manifest
    except BaseException:
        manifest.status[name] = "failed"
        raise
    else:
        manifest.status[name] = "ok"
    finally:
        manifest.timings[name] = round(time.perf_counter() - start, 3)
        manifest.save(out)


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default))
    return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise ConfigurationError(f"{path} not found; run the {stage} stage first")
    return path


def assert_no_synthetic_in_test(ds: Dataset, where: str):
    bad = ds.synthetic & (ds.split == "test")
    if bad.any():
        raise ContractError(f"{where}: {int(bad.sum())} synthetic samples in the test split")


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _build_config(cfg: ExperimentConfig) -> BuildConfig:
    d, lab = cfg.dataset, cfg.labeling
    default_grid = (tuple(d.load_levels), tuple(d.motor_ratios), tuple(d.fault_locations),
                    tuple(d.clearing_times)) == (LOAD_LEVELS, MOTOR_RATIOS, FAULT_LOCATIONS, CLEARING_TIMES)
    grid = None if default_grid else scenario_grid(d.load_levels, d.motor_ratios, d.fault_locations,
                                                   d.clearing_times)
    rules = LabelRules(lab.stable_floor, lab.unstable_ceiling, lab.settle, lab.recovered_floor, lab.tail)
    settings = SimulationSettings(n_buses=d.n_buses, horizon=d.horizon, jitter=d.jitter, bus_jitter=d.bus_jitter)
    return BuildConfig(target_count=d.target_count, otw=d.otw, seed=cfg.seed, rules=rules,
                       settings=settings, grid=grid)


def _simulation_key(cfg: ExperimentConfig) -> str:
    d = asdict(cfg.dataset)
    for k in ("ratio", "snr_db", "test_fraction"):
        d.pop(k)
    key = {"dataset": d, "labeling": asdict(cfg.labeling), "seed": cfg.seed, "every": cfg.labeling.trajectory_every}
    return hashlib.sha256(json.dumps(key, sort_keys=True, default=list).encode()).hexdigest()[:16]


def _simulate_or_load(cfg: ExperimentConfig, cache_dir: Path | None, progress=None):
    """(dataset, coarse trajectories, coarse dt, summary), reusing a cached build when possible."""
    every = cfg.labeling.trajectory_every
    cached = Path(cache_dir) / f"sim_{_simulation_key(cfg)}.npz" if cache_dir else None
    if cached is not None and cached.exists():
        with np.load(cached, allow_pickle=False) as z:
            summary = json.loads(str(z["summary"]))
            ds = Dataset(x=z["x"], labels=z["labels"], sample_id=z["sample_id"].astype(object),
                         scenario_id=z["scenario_id"], provenance=z["provenance"].astype(object),
                         synthetic=np.zeros(len(z["x"]), dtype=bool),
                         split=np.array([""] * len(z["x"]), dtype=object), reference=z["reference"])
            return ds, z["u"], float(z["dt"]), summary
    bc = _build_config(cfg)
    result = build_dataset(bc, progress=progress)
    ds, summary = result.dataset, describe(result)
    u = result.u_record[:, ::every]
    dt = bc.settings.record_dt * every
    if cached is not None:
        cached.parent.mkdir(parents=True, exist_ok=True)
        tmp = cached.with_suffix(".tmp.npz")
        np.savez(tmp, x=ds.x, labels=ds.labels, sample_id=ds.sample_id.astype(str),
                 scenario_id=ds.scenario_id, provenance=ds.provenance.astype(str), reference=ds.reference,
                 u=u, dt=dt, summary=json.dumps(summary, default=_json_default))
        tmp.replace(cached)
    return ds, u, dt, summary


def cmd_simulate(cfg: ExperimentConfig, out, strict: bool = False, cache_dir=None, progress=None) -> dict:
    """Simulate the scenario grid, impose the class ratio and write dataset plus trajectories."""
    out = Path(out)
    with _stage(out, "simulate", cfg) as manifest:
        ds, u, dt, summary = _simulate_or_load(cfg, cache_dir, progress)
        warnings = list(summary.get("warnings", []))
        if cfg.dataset.ratio:
            ratio = parse_ratio(cfg.dataset.ratio)
            pos = {sid: i for i, sid in enumerate(ds.sample_id)}
            ds = impose_ratio(ds, ratio, cfg.seed)
            u = u[[pos[s] for s in ds.sample_id]]
            summary["ratio"] = cfg.dataset.ratio
        summary["written"] = {"samples": len(ds), "reference_stable": int(np.sum(ds.reference == 0)),
                              "reference_unstable": int(np.sum(ds.reference == 1)),
                              "rule_counts": ds.counts()}
        traj_dir = out / TRAJECTORIES
        if traj_dir.exists():
            shutil.rmtree(traj_dir)
        for p in write_trajectories(traj_dir, ds, u, dt, every=1):
            manifest.record(out, p, "simulate")
        write_csv(ds, out / DATASET)
        manifest.record(out, out / DATASET, "simulate")
        manifest.record(out, _write_json(out / SIM_SUMMARY, summary), "simulate")
        manifest.warnings = [w for w in manifest.warnings if not w.startswith("simulate:")]
        manifest.warnings += [f"simulate: {w}" for w in warnings]
        for w in warnings:
            log.warning(w)
        if strict and warnings:
            raise ConfigurationError("strict mode: " + "; ".join(warnings))
    return summary


# ---------------------------------------------------------------------------
# label
# ---------------------------------------------------------------------------

def cmd_label(cfg: ExperimentConfig, out) -> dict:
    """SFCM labels for every sample, silhouette comparison and the stratified split."""
    out = Path(out)
    ds = read_csv(_require(out / DATASET, "simulate"))
    with _stage(out, "label", cfg) as manifest:
        traj = read_trajectories((out / TRAJECTORIES).glob("scenario_*.csv"))
        missing = [s for s in ds.sample_id if s not in traj]
        if missing:
            raise ConfigurationError(f"{len(missing)} samples have no stored trajectory (first {missing[0]})")
        feats = labeling_features(np.stack([traj[s] for s in ds.sample_id]))
        rule = ds.labels
        for k, name in ((0, "stable"), (1, "unstable")):
            if not np.any(rule == k):
                raise ConfigurationError(f"rule labels contain no {name} sample; SFCM needs both classes")
        lab = cfg.labeling
        fit = sfcm_fit(feats, rule, ClusterState(fuzzifier=lab.fuzzifier, tol=lab.tol, max_iter=lab.max_iter))
        labels = harden(fit.memberships)
        locked = rule != UNLABELED
        if np.any(labels[locked] != rule[locked]):
            raise ContractError("SFCM changed a locked rule label")
        test = stratified_split(labels, cfg.dataset.test_fraction, cfg.seed)
        labeled = Dataset(
            x=ds.x, labels=labels, sample_id=ds.sample_id, scenario_id=ds.scenario_id,
            provenance=np.where(locked, "rule", "sfcm").astype(object), synthetic=ds.synthetic,
            split=np.where(test, "test", "train").astype(object), reference=ds.reference,
        )
        sc_sfcm = silhouette(feats, labels)
        sc_eng = silhouette(feats, ds.reference) if np.all(ds.reference >= 0) else None
        report = {
            "silhouette_sfcm": sc_sfcm,
            "silhouette_engineering": sc_eng,
            "sfcm_at_least_engineering": None if sc_eng is None else bool(sc_sfcm >= sc_eng),
            "sfcm_iterations": fit.n_iter,
            "sfcm_converged": fit.converged,
            "locked": int(locked.sum()),
            "counts": labeled.counts(),
            "agreement_with_engineering": float(np.mean(labels == ds.reference)),
            "train": int(np.sum(~test)),
            "test": int(np.sum(test)),
        }
        if report["sfcm_at_least_engineering"] is False:
            log.warning("silhouette of SFCM labels %.4f below engineering labels %.4f", sc_sfcm, sc_eng)
        if not fit.converged:
            log.warning("SFCM stopped at max_iter=%d before converging", lab.max_iter)
        write_csv(labeled, out / LABELED)
        manifest.record(out, out / LABELED, "label")
        manifest.record(out, _write_json(out / LABEL_REPORT, report), "label")
    return report


# ---------------------------------------------------------------------------
# balance
# ---------------------------------------------------------------------------

def _write_curve(path: Path, header: list[str], rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return path


def cmd_balance(cfg: ExperimentConfig, out, split: str = "train") -> dict:
    """Normalise on the training split, then oversample its minority class."""
    if split != "train":
        raise ContractError(f"refusing to balance the {split!r} split: only training data may be resampled")
    out = Path(out)
    ds = read_csv(_require(out / LABELED, "label"))
    assert_no_synthetic_in_test(ds, "balance input")
    b = cfg.balancing
    with _stage(out, "balance", cfg) as manifest:
        for stale in (DISTANCES, GAN_LOSSES, GENERATOR):
            (out / stale).unlink(missing_ok=True)
        if np.any(ds.labels == UNLABELED):
            raise ConfigurationError("labelled dataset still has unlabelled rows; rerun label")
        train, test = ds.subset(ds.split == "train"), ds.subset(ds.split == "test")
        norm = MinMaxNormalizer.fit(train.x)
        manifest.record(out, _write_json(out / NORMALIZER, norm.to_dict()), "balance")
        write_csv(test, out / TEST_RAW)
        manifest.record(out, out / TEST_RAW, "balance")
        train_n = train.with_features(norm.transform(train.x))
        summary = {"method": b.method, "before": train_n.counts()}
        if b.method == "none":
            balanced = train_n
        elif b.method == "cwgan_gp":
            gcfg = GanTrainConfig(lam=b.lam, lr=b.lr, batch=b.batch, n_critic=b.n_critic, epochs=b.epochs,
                                  noise_dim=b.noise_dim, seed=cfg.seed)
            result = train_cwgan_gp(train_n.flat(), train_n.labels, gcfg)
            _write_curve(out / GAN_LOSSES, ["epoch", "critic_loss", "generator_loss"],
                         ((i + 1, c, g) for i, (c, g) in enumerate(zip(result.critic_losses,
                                                                         result.generator_losses))))
            G = result.generator
            save_checkpoint(out / GENERATOR, "generator",
                            {"noise_dim": G.noise_dim, "out_dim": G.out_dim, "hidden": list(G.hidden)},
                            G.state_dict())
            manifest.record(out, out / GAN_LOSSES, "balance")
            manifest.record(out, out / GENERATOR, "balance")
            notices = []
            balanced = balance_dataset(G, train_n, b.target_ratio, seed=cfg.seed, notices=notices)
            for n in notices:
                log.info(n)
        else:
            n_min = min(np.sum(train_n.labels == 0), np.sum(train_n.labels == 1))
            k = min(b.k, int(n_min) - 1)
            if k < 1:
                raise ConfigurationError(f"{b.method} needs at least 2 minority samples, got {n_min}")
            if k < b.k:
                log.warning("%s: k reduced from %d to %d for %d minority samples", b.method, b.k, k, n_min)
            summary["k"] = k
            balanced = resample(train_n, ResamplePlan(method=b.method, k=k, seed=cfg.seed,
                                                      target_ratio=b.target_ratio))
        assert_no_synthetic_in_test(balanced, "balance output")
        if np.any(balanced.split != "train"):
            raise ContractError("balanced set contains rows outside the training split")
        summary["after"] = balanced.counts()
        summary["synthetic"] = int(balanced.synthetic.sum())
        if balanced.synthetic.any() and cfg.evaluation.distances:
            minority = int(balanced.labels[balanced.synthetic][0])
            real = train_n.flat()[train_n.labels == minority]
            synth = balanced.flat()[balanced.synthetic]
            dist = distribution_report(real, synth, np.random.default_rng(cfg.seed),
                                       max_points=cfg.evaluation.distance_points)
            dist.update(method=b.method, n_real=len(real), n_synthetic=len(synth))
            manifest.record(out, _write_json(out / DISTANCES, dist), "balance")
            summary["distances"] = {k: dist[k] for k in ("wd", "mmd", "fid")}
        write_csv(balanced, out / TRAIN_BALANCED)
        manifest.record(out, out / TRAIN_BALANCED, "balance")
    return summary


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def model_config(cfg: ExperimentConfig, ds: Dataset) -> StaaTConfig:
    m = cfg.model
    return StaaTConfig(n_features=ds.n_features, seq_len=ds.seq_len, d_model=m.d_model, n_heads=m.n_heads,
                       n_layers=m.n_layers, d_ff=m.d_ff, dropout=m.dropout, seed=cfg.seed)


def cmd_train(cfg: ExperimentConfig, out) -> dict:
    """Train the configured classifier on the balanced set; write checkpoint and loss curve."""
    out = Path(out)
    ds = read_csv(_require(out / TRAIN_BALANCED, "balance"))
    if np.any(ds.split != "train"):
        raise ContractError("training input contains rows outside the training split")
    m = cfg.model
    with _stage(out, "train", cfg) as manifest:
        (out / MODEL).unlink(missing_ok=True)
        model = build_classifier(m.classifier, model_config(cfg, ds))
        history: list[float] = []
        try:
            train_classifier(model, ds.x, ds.labels,
                             TrainConfig(epochs=m.epochs, batch=m.batch, lr=m.lr, dropout=m.dropout, seed=cfg.seed),
                             log=lambda epoch, loss: history.append(loss))
        finally:
            _write_curve(out / LOSSES, ["epoch", "loss"], ((i + 1, v) for i, v in enumerate(history)))
            manifest.record(out, out / LOSSES, "train")
        save_classifier(out / MODEL, model, extra={"config_digest": cfg.digest()})
        manifest.record(out, out / MODEL, "train")
    return {"classifier": m.classifier, "epochs": len(history), "final_loss": history[-1],
            "parameters": model.n_parameters()}


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def _noise_rng(cfg: ExperimentConfig, snr_db: float) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, 2718, int(round(snr_db * 1000)) & 0xFFFFFFFF])


def cmd_evaluate(cfg: ExperimentConfig, out, source=None):
    """Score the checkpoint on the held-out test split, optionally with measurement noise.

    ``source`` is the directory holding the trained artifacts (defaults to ``out``).
    """
    out = Path(out)
    src = Path(source) if source is not None else out
    model, meta = load_classifier(_require(src / MODEL, "train"))
    norm = MinMaxNormalizer.from_dict(json.loads(_require(src / NORMALIZER, "balance").read_text()))
    test = read_csv(_require(src / TEST_RAW, "balance"))
    assert_no_synthetic_in_test(test, "evaluate input")
    expected = (model.config.seq_len, model.config.n_features)
    if test.x.shape[1:] != expected:
        raise ShapeError(f"test features have shape {test.x.shape[1:]} but the checkpoint expects {expected}")
    if np.any(test.labels == UNLABELED):
        raise ConfigurationError("test split contains unlabelled samples")
    with _stage(out, "evaluate", cfg) as manifest:
        x = test.x
        snr = cfg.dataset.snr_db
        if snr is not None:
            x = inject_noise(x, snr, _noise_rng(cfg, snr))
        x = norm.transform(x)
        best = float("inf")
        for _ in range(max(1, cfg.evaluation.latency_repeats)):
            t0 = time.perf_counter()
            pred = model.predict(x)
            best = min(best, time.perf_counter() - t0)
        train_metrics = None
        if (src / TRAIN_BALANCED).exists():
            train = read_csv(src / TRAIN_BALANCED)
            real = train.subset(~train.synthetic)
            train_metrics = classification_metrics(evaluate_predictions(real.labels, model.predict(real.x)).confusion)
        extra = {}
        if (src / DISTANCES).exists():
            dist = json.loads((src / DISTANCES).read_text())
            extra = {k: dist[k] for k in ("wd", "mmd", "fid")}
        report = evaluate_predictions(test.labels, pred, **extra, metadata={
            "classifier": meta["kind"],
            "n_test": len(test),
            "snr_db": snr,
            "latency_ms_per_sample": 1000.0 * best / max(1, len(test)),
            "train_metrics": train_metrics,
            "config_digest": cfg.digest(),
        })
        (out / REPORT).write_text(report.to_json())
        (out / CONFUSION).write_text(report.confusion_csv())
        manifest.record(out, out / REPORT, "evaluate")
        manifest.record(out, out / CONFUSION, "evaluate")
    return report


def run_pipeline(cfg: ExperimentConfig, out, strict: bool = False, cache_dir=None, upto: str = "evaluate"):
    """simulate -> label -> balance -> train -> evaluate in one directory."""
    out = Path(out)
    cmd_simulate(cfg, out, strict=strict, cache_dir=cache_dir)
    cmd_label(cfg, out)
    cmd_balance(cfg, out)
    cmd_train(cfg, out)
    if upto == "train":
        return None
    return cmd_evaluate(cfg, out)


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def _parse_ratio_text(v: str) -> str:
    parse_ratio(v)
    return v


def _parse_snr(v: str):
    text = v.strip().lower()
    if text in ("none", "inf", "noise-free", "clean"):
        return None
    try:
        return float(text)
    except ValueError:
        raise ConfigurationError(f"SNR value {v!r} is not a number or 'none'") from None


def _parse_otw(v: str) -> float:
    try:
        otw = float(v)
    except ValueError:
        raise ConfigurationError(f"OTW value {v!r} is not a number") from None
    if not 0 < otw <= SimulationSettings().feature_window + 1e-12:
        raise ConfigurationError(f"OTW {otw} s outside (0, {SimulationSettings().feature_window}]")
    return otw


def _choice(options):
    def parse(v):
        if v not in options:
            raise ConfigurationError(f"{v!r} not in {options}")
        return v
    return parse


AXES = {
    "imbalance": ("dataset", "ratio", _parse_ratio_text),
    "otw": ("dataset", "otw", _parse_otw),
    "snr": ("dataset", "snr_db", _parse_snr),
    "resampler": ("balancing", "method", _choice(BALANCE_METHODS)),
    "classifier": ("model", "classifier", _choice(CLASSIFIER_KINDS)),
}

ROW_FIELDS = ["axis", "value", "seed", "status", *METRIC_KEYS, "wd", "mmd", "fid", "latency_ms", "error"]


def _slug(v: str) -> str:
    return "".join(c if c.isalnum() or c in "._-" else "_" for c in v)


@dataclass
class SweepResult:
    axis: str
    rows: list
    summary: list
    table: Path
    summary_table: Path

    @property
    def failed(self) -> int:
        return sum(r["status"] != "ok" for r in self.rows)


def _row_from_report(axis, value, seed, report) -> dict:
    d = report.to_dict()
    row = {"axis": axis, "value": value, "seed": seed, "status": "ok", "error": ""}
    row.update({k: d[k] for k in METRIC_KEYS})
    row.update({k: d.get(k) for k in ("wd", "mmd", "fid")})
    row["latency_ms"] = d["metadata"]["latency_ms_per_sample"]
    return row


def _trained_ok(path: Path, cfg: ExperimentConfig) -> bool:
    manifest = RunManifest.load(path)
    return (manifest.config_digest == cfg.digest() and manifest.status.get("train") == "ok"
            and not manifest.verify(path))


def median_summary(rows: list[dict], values: list[str]) -> list[dict]:
    """Per-value medians over successful seeds; an undefined MCC counts as 0."""
    out = []
    for v in values:
        ok = [r for r in rows if r["value"] == v and r["status"] == "ok"]
        entry = {"value": v, "runs": len(ok)}
        for k in METRIC_KEYS:
            vals = [(0.0 if k == "mcc" else None) if r[k] is None else r[k] for r in ok]
            vals = [x for x in vals if x is not None]
            entry[k] = statistics.median(vals) if vals else None
        out.append(entry)
    return out


def _write_rows(path: Path, header: list[str], rows: list[dict]) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in header})
    return path


def cmd_sweep(cfg: ExperimentConfig, out, axis: str, values: list[str], seeds: list[int] | None = None,
              strict: bool = False) -> SweepResult:
    """One pipeline run per (value, seed); failed runs are recorded and the sweep continues.

    Completed rows whose config digest matches are reused, so an interrupted
    sweep resumes where it stopped. Simulations are cached across rows that
    differ only in downstream settings; on the ``snr`` axis a single model
    per seed is trained and then evaluated at every noise level.
    """
    if axis not in AXES:
        raise ConfigurationError(f"sweep axis {axis!r} not in {sorted(AXES)}")
    if not values:
        raise ConfigurationError("sweep needs at least one value")
    section, key, parse = AXES[axis]
    parsed = [parse(v) for v in values]
    seeds = list(seeds) if seeds else [cfg.seed]
    out = Path(out)
    root = out / f"sweep_{axis}"
    cache = out / "_cache"
    root.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in seeds:
        for value, pv in zip(values, parsed):
            row_cfg = cfg.with_overrides(seed=seed, **{section: {key: pv}})
            row_dir = root / f"{_slug(value)}_seed{seed}"
            row_file = row_dir / "row.json"
            if row_file.exists():
                prev = json.loads(row_file.read_text())
                if prev.get("digest") == row_cfg.digest() and prev["row"]["status"] == "ok" \
                        and not RunManifest.load(row_dir).verify(row_dir):
                    log.info("sweep %s=%s seed %d: reusing completed row", axis, value, seed)
                    rows.append(prev["row"])
                    continue
            row_dir.mkdir(parents=True, exist_ok=True)
            try:
                if axis == "snr":
                    shared_cfg = row_cfg.with_overrides(dataset={"snr_db": None})
                    shared = root / f"_trained_seed{seed}"
                    if not _trained_ok(shared, shared_cfg):
                        run_pipeline(shared_cfg, shared, strict=strict, cache_dir=cache, upto="train")
                    report = cmd_evaluate(row_cfg, row_dir, source=shared)
                else:
                    report = run_pipeline(row_cfg, row_dir, strict=strict, cache_dir=cache)
                row = _row_from_report(axis, value, seed, report)
            except (StvsaError, ArithmeticError, ValueError) as exc:
                log.error("sweep %s=%s seed %d failed: %s", axis, value, seed, exc)
                row = {"axis": axis, "value": value, "seed": seed, "status": "failed",
                       "error": f"{type(exc).__name__}: {exc}"}
                row.update({k: None for k in (*METRIC_KEYS, "wd", "mmd", "fid", "latency_ms")})
            _write_json(row_file, {"digest": row_cfg.digest(), "row": row})
            rows.append(row)
    summary = median_summary(rows, values)
    table = _write_rows(out / f"sweep_{axis}.csv", ROW_FIELDS, rows)
    summary_table = _write_rows(out / f"sweep_{axis}_summary.csv", ["value", "runs", *METRIC_KEYS], summary)
    return SweepResult(axis, rows, summary, table, summary_table)
