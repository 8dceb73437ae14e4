"""Report figures written next to the delimited benchmark outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# strip volatile metadata so reruns give identical files
_PNG_META = {"Software": None}


def plot_calibration(curves, path, title=""):
    """``curves`` maps a label to a :class:`~molgp.evaluation.CalibrationCurve`."""
    fig, ax = plt.subplots(figsize=(3.6, 3.4))
    ax.plot([0, 1], [0, 1], "k:", lw=1, label="ideal")
    for label, curve in curves.items():
        ax.plot(curve.quantiles, curve.scores, "o-", ms=3, lw=1.2, label=label)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_xlabel("q")
    ax.set_ylabel("C(q)")
    if title:
        ax.set_title(title, fontsize=10)
    ax.legend(frameon=False, fontsize=8, loc="upper left")
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata=_PNG_META)
    plt.close(fig)


def plot_parity(means, stds, truths, path, units="", title=""):
    means, stds, truths = map(np.asarray, (means, stds, truths))
    fig, ax = plt.subplots(figsize=(3.6, 3.4))
    lo = float(min(means.min(), truths.min()))
    hi = float(max(means.max(), truths.max()))
    pad = 0.05 * (hi - lo or 1.0)
    ax.plot([lo - pad, hi + pad], [lo - pad, hi + pad], "k:", lw=1)
    ax.errorbar(truths, means, yerr=stds, fmt="o", ms=2, lw=0.5, alpha=0.6)
    unit = f" [{units}]" if units else ""
    ax.set_xlabel("measured" + unit)
    ax.set_ylabel("predicted" + unit)
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata=_PNG_META)
    plt.close(fig)


def plot_rmse(per_split_rmse, path, title=""):
    fig, ax = plt.subplots(figsize=(3.6, 2.6))
    ax.bar(np.arange(1, len(per_split_rmse) + 1), per_split_rmse, color="0.5")
    ax.axhline(float(np.mean(per_split_rmse)), color="k", lw=1, ls="--")
    ax.set_xlabel("split")
    ax.set_ylabel("RMSE")
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata=_PNG_META)
    plt.close(fig)
