"""Figures written next to the report files."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .. import scenegen as sg  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}


def _figure(width=5.0, height=3.0):
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(width, height))
    return fig, ax


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(RC):
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def loss_curve(losses, path, title="training loss") -> Path:
    fig, ax = _figure()
    ax.plot(range(1, len(losses) + 1), losses, marker="o", ms=2, lw=1)
    ax.set_xlabel("epoch")
    ax.set_ylabel("cross-entropy")
    ax.set_title(title)
    return _save(fig, path)


def category_accuracy(report, path) -> Path:
    cats = [c for c in sg.CATEGORIES if c in report.per_category]
    fig, ax = _figure(5.5, 3.0)
    ax.bar(range(len(cats)), [report.per_category[c] for c in cats], color="0.4")
    ax.axhline(report.overall, ls="--", lw=1, color="k", label=f"overall {report.overall:.3f}")
    ax.set_xticks(range(len(cats)), [c.replace("-", "\n") for c in cats])
    ax.set_ylim(0, 1)
    ax.set_ylabel("accuracy")
    ax.set_title(f"{report.split} split")
    ax.legend(frameon=False, loc="upper right")
    return _save(fig, path)


def ablation_bars(rows, path) -> Path:
    fig, ax = _figure(6.0, 3.2)
    names = [r["variant"] for r in rows]
    means = [r["mean_accuracy"] for r in rows]
    ax.barh(range(len(rows)), means, color=["k" if n == "default" else "0.6" for n in names])
    for i, r in enumerate(rows):
        ax.plot(r["accuracies"], [i] * len(r["accuracies"]), "o", ms=3, color="tab:red")
    ax.set_yticks(range(len(rows)), names)
    ax.invert_yaxis()
    ax.set_xlabel("test accuracy")
    ax.set_title("ablation sweep")
    return _save(fig, path)
