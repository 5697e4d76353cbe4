"""Matplotlib figures for metric reports, compute profiles and training logs.

Everything renders through the non-interactive Agg backend straight to
files; nothing here opens a window.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.bbox": "tight",
}


def figure(nrows: int = 1, ncols: int = 1, size=(5.0, 3.2)):
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(nrows, ncols, figsize=size, squeeze=False)
    fig.set_layout_engine("constrained")
    return fig, axes if nrows * ncols > 1 else axes[0, 0]


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(STYLE):
        fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_metrics(report, path, baseline=None) -> Path:
    """Per-frame PSNR and SSIM; ``baseline`` is an optional second report (e.g. the blurry input)."""
    fig, axes = figure(1, 2, size=(8.0, 3.0))
    ax_p, ax_s = axes[0]
    frames = range(len(report.per_frame_psnr))
    ax_p.plot(frames, [min(p, 100.0) for p in report.per_frame_psnr], marker="o", ms=3, label="restored")
    ax_s.plot(frames, report.per_frame_ssim, marker="o", ms=3, label="restored")
    if baseline is not None:
        ax_p.plot(frames, [min(p, 100.0) for p in baseline.per_frame_psnr], ls="--", label="input")
        ax_s.plot(frames, baseline.per_frame_ssim, ls="--", label="input")
        ax_p.legend()
    ax_p.set(xlabel="frame", ylabel="PSNR (dB)", title=f"mean {report.psnr_db:.2f} dB")
    ax_s.set(xlabel="frame", ylabel="SSIM", title=f"mean {report.ssim:.4f}")
    return _save(fig, path)


def plot_compute_profile(profile, path) -> Path:
    """Horizontal bars of GMACs per frame by component."""
    items = sorted(profile.breakdown.items(), key=lambda kv: kv[1])
    fig, ax = figure(size=(5.5, 0.3 * len(items) + 1.2))
    ax.barh([k for k, _ in items], [v for _, v in items], color="tab:blue")
    ax.set(xlabel="GMACs per frame",
           title=f"{profile.gmacs:.2f} GMACs/frame at {profile.frame_dims[0]}x{profile.frame_dims[1]}")
    ax.grid(axis="y", visible=False)
    return _save(fig, path)


def read_metrics_log(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def plot_training_curve(records, path) -> Path:
    """Loss (log scale) and validation PSNR against epoch from ``metrics.jsonl`` records."""
    if isinstance(records, (str, Path)):
        records = read_metrics_log(records)
    fig, ax = figure(size=(5.5, 3.2))
    epochs = [r["epoch"] for r in records]
    ax.plot(epochs, [r["loss"] for r in records], color="tab:blue", label="loss")
    ax.set(xlabel="epoch", ylabel="Charbonnier loss", yscale="log")
    val = [(r["epoch"], r["psnr_val"]) for r in records
           if r.get("psnr_val") is not None and math.isfinite(r["psnr_val"])]
    if val:
        ax2 = ax.twinx()
        ax2.plot(*zip(*val), color="tab:orange", marker="o", ms=3, label="val PSNR")
        ax2.set_ylabel("PSNR (dB)")
        ax2.grid(False)
    return _save(fig, path)
