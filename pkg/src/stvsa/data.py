"""Labelled trajectory datasets and their CSV representation.

A sample's features are a (timesteps, 3 * buses) array laid out per
timestep as [U_1..U_L, P_1..P_L, Q_1..Q_L]. On disk the array is flattened
row-major into columns named ``U3_t0``, ``P1_t12`` and so on, which lets a
reader recover both dimensions from the header alone.
"""

from __future__ import annotations

import csv
import hashlib
import io
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ShapeError

LABEL_NAMES = {-1: "unlabeled", 0: "stable", 1: "unstable"}
LABEL_CODES = {v: k for k, v in LABEL_NAMES.items()}
CHANNELS = "UPQ"
META_COLUMNS = ["sample_id", "scenario_id", "split", "label", "provenance", "synthetic", "reference"]


@dataclass
class Dataset:
    x: np.ndarray
    labels: np.ndarray
    sample_id: np.ndarray
    scenario_id: np.ndarray
    provenance: np.ndarray
    synthetic: np.ndarray
    split: np.ndarray
    # complete engineering-criterion label, -1 where unknown (synthetic rows)
    reference: np.ndarray | None = None
    attrs: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim != 3:
            raise ShapeError(f"dataset features must be (n, timesteps, channels), got {self.x.shape}")
        n = len(self.x)
        if self.reference is None:
            self.reference = np.full(n, -1)
        for name in ("labels", "sample_id", "scenario_id", "provenance", "synthetic", "split", "reference"):
            if len(getattr(self, name)) != n:
                raise ShapeError(f"dataset column {name!r} has {len(getattr(self, name))} rows, expected {n}")
        self.labels = np.asarray(self.labels, dtype=int)
        self.synthetic = np.asarray(self.synthetic, dtype=bool)
        self.reference = np.asarray(self.reference, dtype=int)

    @classmethod
    def from_arrays(cls, x, labels, **kw) -> "Dataset":
        n = len(x)
        defaults = dict(
            sample_id=np.array([f"s{i:06d}" for i in range(n)], dtype=object),
            scenario_id=np.full(n, -1),
            provenance=np.array(["rule" if l >= 0 else "" for l in labels], dtype=object),
            synthetic=np.zeros(n, dtype=bool),
            split=np.array([""] * n, dtype=object),
        )
        defaults.update(kw)
        return cls(x=x, labels=labels, **defaults)

    def __len__(self):
        return len(self.x)

    @property
    def seq_len(self) -> int:
        return self.x.shape[1]

    @property
    def n_features(self) -> int:
        return self.x.shape[2]

    @property
    def n_buses(self) -> int:
        return self.x.shape[2] // 3

    def flat(self) -> np.ndarray:
        return self.x.reshape(len(self.x), -1)

    def counts(self) -> dict:
        return {name: int(np.sum(self.labels == code)) for code, name in LABEL_NAMES.items()}

    def subset(self, mask) -> "Dataset":
        idx = np.asarray(mask)
        return replace(self, x=self.x[idx], labels=self.labels[idx], sample_id=self.sample_id[idx],
                       scenario_id=self.scenario_id[idx], provenance=self.provenance[idx],
                       synthetic=self.synthetic[idx], split=self.split[idx],
                       reference=self.reference[idx], attrs=dict(self.attrs))

    def with_features(self, x: np.ndarray) -> "Dataset":
        return replace(self, x=np.asarray(x, dtype=np.float64).reshape(self.x.shape[0], *self.x.shape[1:]),
                       attrs=dict(self.attrs))

    def append_synthetic(self, x_flat: np.ndarray, label: int, prefix: str) -> "Dataset":
        """Return a copy with flagged synthetic samples appended after the real ones."""
        k = len(x_flat)
        if k == 0:
            return self.subset(np.arange(len(self)))
        x_new = np.asarray(x_flat, dtype=np.float64).reshape((k,) + self.x.shape[1:])
        split = self.split[0] if len(self) else ""
        return replace(
            self,
            x=np.concatenate([self.x, x_new]),
            labels=np.concatenate([self.labels, np.full(k, label)]),
            sample_id=np.concatenate([self.sample_id, np.array([f"{prefix}{i:06d}" for i in range(k)], dtype=object)]),
            scenario_id=np.concatenate([self.scenario_id, np.full(k, -1)]),
            provenance=np.concatenate([self.provenance, np.array([prefix.rstrip("_")] * k, dtype=object)]),
            synthetic=np.concatenate([self.synthetic, np.ones(k, dtype=bool)]),
            split=np.concatenate([self.split, np.array([split] * k, dtype=object)]),
            reference=np.concatenate([self.reference, np.full(k, -1)]),
            attrs=dict(self.attrs),
        )

    def minority_label(self) -> int:
        c = self.counts()
        if c["stable"] == 0 or c["unstable"] == 0:
            raise ConfigurationError("dataset must contain both classes")
        return 1 if c["unstable"] <= c["stable"] else 0


def feature_columns(seq_len: int, n_buses: int) -> list[str]:
    return [f"{CHANNELS[c]}{b + 1}_t{t}"
            for t in range(seq_len) for c in range(3) for b in range(n_buses)]


_COL = re.compile(r"^([UPQ])(\d+)_t(\d+)$")


def write_csv(ds: Dataset, path) -> str:
    """Write the dataset; floats use shortest round-trip repr. Returns the sha256."""
    text = to_csv_text(ds)
    Path(path).write_text(text)
    return hashlib.sha256(text.encode()).hexdigest()


def to_csv_text(ds: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(META_COLUMNS + feature_columns(ds.seq_len, ds.n_buses))
    flat = ds.flat()
    for i in range(len(ds)):
        w.writerow([ds.sample_id[i], int(ds.scenario_id[i]), ds.split[i], LABEL_NAMES[int(ds.labels[i])],
                    ds.provenance[i], "true" if ds.synthetic[i] else "false",
                    LABEL_NAMES[int(ds.reference[i])]]
                   + [repr(v) for v in flat[i].tolist()])
    return buf.getvalue()


def read_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    if header[:len(META_COLUMNS)] != META_COLUMNS:
        raise ConfigurationError(f"{path}: not a labelled-dataset CSV (header {header[:6]})")
    feats = header[len(META_COLUMNS):]
    last = _COL.match(feats[-1]) if feats else None
    if last is None:
        raise ConfigurationError(f"{path}: no feature columns")
    seq_len, n_buses = int(last.group(3)) + 1, int(last.group(2))
    if len(feats) != seq_len * 3 * n_buses:
        raise ShapeError(f"{path}: {len(feats)} feature columns do not match {seq_len}x3x{n_buses}")
    n = len(rows)
    m = len(META_COLUMNS)
    x = np.array([[float(v) for v in r[m:]] for r in rows]).reshape(n, seq_len, 3 * n_buses)
    col = list(zip(*rows)) if rows else [[] for _ in META_COLUMNS]
    return Dataset(
        x=x,
        labels=np.array([LABEL_CODES[v] for v in col[3]], dtype=int),
        sample_id=np.array(col[0], dtype=object),
        scenario_id=np.array([int(v) for v in col[1]], dtype=int),
        split=np.array(col[2], dtype=object),
        provenance=np.array(col[4], dtype=object),
        synthetic=np.array([v == "true" for v in col[5]], dtype=bool),
        reference=np.array([LABEL_CODES[v] for v in col[6]], dtype=int),
    )


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
