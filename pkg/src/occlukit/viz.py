"""Headless matplotlib figures for evaluation reports.

Renders nearest-neighbor distance histograms and the precision/recall/
f-score-versus-threshold curve to PNG files; all rendering uses the Agg
backend so no display is required.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .core import PointCloud, ValidationError
from .metrics import FScoreReport, nn_distances

HIST_BINS = 60


def save_distance_histograms(pred: PointCloud, gt: PointCloud, tau: float,
                             out_dir, method: str = "kdtree") -> list:
    """Histogram the pred-to-gt and gt-to-pred nearest-neighbor distances
    with the acceptance threshold marked; returns the written file paths."""
    if tau <= 0:
        raise ValidationError(f"tau must be positive, got {tau}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    pairs = (
        ("pred_to_gt", nn_distances(pred, gt, method=method)),
        ("gt_to_pred", nn_distances(gt, pred, method=method)),
    )
    for name, dists in pairs:
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.hist(dists, bins=HIST_BINS, color="#4878cf", edgecolor="none")
        ax.axvline(tau, color="#d1495b", linestyle="--", linewidth=1.2,
                   label=f"tau = {tau:g}")
        ax.set_xlabel("nearest-neighbor distance")
        ax.set_ylabel("count")
        ax.set_title(name.replace("_", " "))
        ax.legend()
        fig.tight_layout()
        path = out / f"nn_hist_{name}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(str(path))
    return paths


def save_fscore_curve(report: FScoreReport, out_dir) -> str:
    """Plot precision, recall and f-score against the threshold multiples of
    one report; returns the written file path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ks = sorted(report.multiples)
    xs = [k * report.tau for k in ks]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(xs, [report.precision[k] for k in ks], marker="o", label="precision")
    ax.plot(xs, [report.recall[k] for k in ks], marker="s", label="recall")
    ax.plot(xs, [report.fs[k] for k in ks], marker="^", label="f-score")
    ax.set_xlabel("distance threshold")
    ax.set_ylabel("score")
    ax.set_ylim(0.0, 1.05)
    ax.set_title("f-score vs threshold")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    path = out / "fscore_curve.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def save_eval_figures(pred: PointCloud, gt: PointCloud, report: FScoreReport,
                      out_dir, method: str = "kdtree") -> list:
    """All evaluation figures for one pred/gt pair; returns file paths."""
    paths = save_distance_histograms(pred, gt, report.tau, out_dir, method=method)
    paths.append(save_fscore_curve(report, out_dir))
    return paths
