"""Figures and a run index rendered from a pipeline output directory.

Every figure is written next to the CSV or JSON file it is drawn from.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import ConfigurationError  # noqa: E402

INDEX = "report_index.csv"
INDEX_FIELDS = ["run", "classifier", "snr_db", "n_test", "acc", "mcc", "f1", "gmean", "mis", "fal",
                "wd", "mmd", "fid", "latency_ms_per_sample"]


def _read_rows(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _num(text: str):
    return float(text) if text not in ("", None) else float("nan")


def plot_sweep_summary(path: Path) -> Path:
    rows = _read_rows(path)
    axis = path.stem.removeprefix("sweep_").removesuffix("_summary")
    labels = [r["value"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for key, marker in (("acc", "o"), ("mcc", "s"), ("gmean", "^")):
        ax.plot(range(len(rows)), [_num(r[key]) for r in rows], marker=marker, label=key.upper())
    ax.set_xticks(range(len(rows)), labels)
    ax.set_xlabel(axis)
    ax.set_ylabel("median over seeds")
    ax.set_ylim(-0.05, 1.05)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    target = path.with_suffix(".png")
    fig.savefig(target, dpi=120)
    plt.close(fig)
    return target


def plot_confusion(path: Path) -> Path:
    report = json.loads(path.read_text())
    cm = report["confusion"]
    grid = [[cm["n_ss"], cm["n_su"]], [cm["n_us"], cm["n_uu"]]]
    fig, ax = plt.subplots(figsize=(3.6, 3.2))
    ax.imshow(grid, cmap="Blues")
    for i in range(2):
        for j in range(2):
            ax.text(j, i, str(grid[i][j]), ha="center", va="center")
    ax.set_xticks([0, 1], ["stable", "unstable"])
    ax.set_yticks([0, 1], ["stable", "unstable"])
    ax.set_xlabel("actual")
    ax.set_ylabel("predicted")
    fig.tight_layout()
    target = path.with_name("confusion.png")
    fig.savefig(target, dpi=120)
    plt.close(fig)
    return target


def plot_curves(path: Path) -> Path:
    rows = _read_rows(path)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    if rows:
        keys = [k for k in rows[0] if k != "epoch"]
        epochs = [int(r["epoch"]) for r in rows]
        for k in keys:
            ax.plot(epochs, [_num(r[k]) for r in rows], label=k)
        ax.legend()
    ax.set_xlabel("epoch")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    target = path.with_suffix(".png")
    fig.savefig(target, dpi=120)
    plt.close(fig)
    return target


def write_index(out: Path, reports: list[Path]) -> Path:
    target = out / INDEX
    with open(target, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=INDEX_FIELDS, lineterminator="\n")
        w.writeheader()
        for path in reports:
            r = json.loads(path.read_text())
            meta = r.get("metadata", {})
            row = {k: r.get(k) for k in INDEX_FIELDS if k in r}
            row.update(run=path.parent.relative_to(out).as_posix() or ".", classifier=meta.get("classifier"),
                       snr_db=meta.get("snr_db"), n_test=meta.get("n_test"),
                       latency_ms_per_sample=meta.get("latency_ms_per_sample"))
            w.writerow({k: ("" if v is None else v) for k, v in row.items()})
    return target


def render(out) -> list[Path]:
    """Draw every figure the directory supports; returns the files written."""
    out = Path(out)
    if not out.is_dir():
        raise ConfigurationError(f"{out} is not a directory")
    written = []
    for path in sorted(out.glob("sweep_*_summary.csv")):
        written.append(plot_sweep_summary(path))
    reports = sorted(p for p in out.rglob("report.json") if "_cache" not in p.parts)
    for path in reports:
        written.append(plot_confusion(path))
    for name in ("losses.csv", "gan_losses.csv"):
        for path in sorted(out.rglob(name)):
            written.append(plot_curves(path))
    if reports:
        written.append(write_index(out, reports))
    if not written:
        raise ConfigurationError(f"nothing to report in {out}: no sweep tables, reports or loss curves")
    return written
