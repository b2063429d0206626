"""Report figures rendered to files next to the delimited outputs.

All rendering targets files (Agg backend); figures are written atomically
like every other artifact.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "save_loss_figure",
    "save_marginal_figure",
    "save_bivariate_figure",
    "save_curve_figure",
]

_DPI = 150


def _atomic_savefig(fig, path: str | Path) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(
        dir=path.parent, prefix=f".{path.stem}.", suffix=path.suffix or ".png"
    )
    os.close(fd)
    try:
        fig.savefig(tmp, dpi=_DPI, bbox_inches="tight")
        current_umask = os.umask(0)
        os.umask(current_umask)
        os.chmod(tmp, 0o666 & ~current_umask)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise
    finally:
        plt.close(fig)


def save_loss_figure(history, path: str | Path) -> None:
    """Per-epoch mean loss (log scale) with the learning-rate schedule."""
    epochs = [s.epoch for s in history]
    losses = [s.mean_loss for s in history]
    lrs = [s.lr for s in history]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epochs, losses, color="tab:blue", lw=1.2, label="mean loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    ax2 = ax.twinx()
    ax2.plot(epochs, lrs, color="tab:orange", lw=1.0, ls="--", label="learning rate")
    ax2.set_ylabel("learning rate")
    ax2.set_yscale("log")
    lines = ax.get_lines() + ax2.get_lines()
    ax.legend(lines, [ln.get_label() for ln in lines], loc="upper right")
    ax.set_title("training loss")
    _atomic_savefig(fig, path)


def save_marginal_figure(reference, generated, schema, path: str | Path) -> None:
    """Side-by-side bars of reference vs generated category proportions."""
    ref = np.asarray(reference.proportions)
    gen = np.asarray(generated.proportions)
    labels = [
        f"{name}={cat}"
        for name, cats in zip(schema.names, schema.categories)
        for cat in cats
    ]
    x = np.arange(ref.size)
    width = 0.4
    fig, ax = plt.subplots(figsize=(max(7.0, 0.45 * ref.size), 4))
    ax.bar(x - width / 2, ref, width, label="reference", color="tab:gray")
    ax.bar(x + width / 2, gen, width, label="generated", color="tab:blue")
    for _, stop in schema.spans[:-1]:
        ax.axvline(stop - 0.5, color="black", lw=0.6, alpha=0.4)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=60, ha="right", fontsize=8)
    ax.set_ylabel("proportion")
    ax.set_title("per-category marginals")
    ax.legend()
    ax.grid(axis="y", alpha=0.3)
    _atomic_savefig(fig, path)


def save_bivariate_figure(pairs, path: str | Path) -> None:
    """Scatter of generated vs reference cell proportions over all pairs.

    ``pairs`` is a list of (name_a, name_b, ref_proportions, gen_proportions).
    """
    fig, ax = plt.subplots(figsize=(5, 5))
    top = 0.0
    for name_a, name_b, ref, gen in pairs:
        ref = np.asarray(ref)
        gen = np.asarray(gen)
        ax.scatter(ref, gen, s=18, alpha=0.7, label=f"{name_a} x {name_b}")
        top = max(top, float(ref.max()), float(gen.max()))
    top = top * 1.05 if top > 0 else 1.0
    ax.plot([0, top], [0, top], color="black", lw=0.8, ls=":")
    ax.set_xlim(0, top)
    ax.set_ylim(0, top)
    ax.set_xlabel("reference cell proportion")
    ax.set_ylabel("generated cell proportion")
    ax.set_title("bivariate cells")
    if len(pairs) <= 10:
        ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    _atomic_savefig(fig, path)


def save_curve_figure(points, path: str | Path) -> None:
    """Combination share and coverage against the sampling rate."""
    rates = [p.rate for p in points]
    shares = [p.combination_share for p in points]
    coverage = [p.coverage for p in points]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(rates, shares, marker="o", color="tab:blue", label="combination share")
    ax.plot(rates, coverage, marker="s", color="tab:red", label="record coverage")
    ax.set_xlabel("sampling rate")
    ax.set_ylabel("fraction of reference")
    ax.set_ylim(0, 1.02)
    ax.set_title("subsample variety")
    ax.legend()
    ax.grid(alpha=0.3)
    _atomic_savefig(fig, path)
