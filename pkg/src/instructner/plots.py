"""Report figures rendered straight to files with the Agg canvas.

Figures are built with :class:`matplotlib.figure.Figure` rather than pyplot,
so no global state leaks between calls and nothing needs a display. PNGs are
written without the ``Software`` metadata chunk to keep them byte-stable.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Mapping, Sequence

from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure
from matplotlib.ticker import MaxNLocator

GOLDEN = (math.sqrt(5) - 1.0) / 2.0
_COLORS = ("#4C72B0", "#DD8452", "#55A868", "#C44E52", "#8172B3", "#937860")


def _figure(width: float = 6.0, height: float | None = None) -> Figure:
    fig = Figure(figsize=(width, height or width * GOLDEN), dpi=100)
    FigureCanvasAgg(fig)
    return fig


def _tidy(ax) -> None:
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    ax.xaxis.set_ticks_position("bottom")
    ax.yaxis.set_ticks_position("left")


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, format="png", metadata={"Software": None})
    return path


def grouped_bars(groups: Sequence[str], series: Mapping[str, Sequence[float]], path,
                 ylabel: str, title: str = "", fmt: str = "{:.2f}") -> Path:
    """Bars for each group, one colour per series, values printed on top."""
    fig = _figure(max(6.0, 1.2 * len(groups) + 2))
    ax = fig.add_subplot(1, 1, 1)
    n = max(1, len(series))
    width = 0.8 / n
    for k, (label, values) in enumerate(series.items()):
        xs = [i + (k - (n - 1) / 2) * width for i in range(len(groups))]
        bars = ax.bar(xs, values, width, label=label, color=_COLORS[k % len(_COLORS)])
        for b, v in zip(bars, values):
            ax.annotate(fmt.format(v), (b.get_x() + b.get_width() / 2, b.get_height()),
                        ha="center", va="bottom", fontsize=7)
    ax.set_xticks(range(len(groups)))
    ax.set_xticklabels(groups)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    top = max((v for vals in series.values() for v in vals), default=0.0)
    if top > 0:
        ax.set_ylim(0, top * 1.22)  # headroom for labels and legend
    ax.legend(frameon=False, fontsize=8, ncol=n, loc="upper center")
    _tidy(ax)
    return _save(fig, path)


def entity_density(datasets: Sequence[str], original: Sequence[float],
                   dbr_positive: Sequence[float], path) -> Path:
    """Average entities per sample: source sentences vs dense samples."""
    return grouped_bars(datasets, {"original": original, "DBR": dbr_positive}, path,
                        "avg. entities per sample", "Entity density")


def token_length(datasets: Sequence[str], original: Sequence[float],
                 dbr: Sequence[float], path) -> Path:
    return grouped_bars(datasets, {"original": original, "DBR": dbr}, path,
                        "avg. tokens per sample", "Sample length", fmt="{:.1f}")


def dev_curves(curves: Mapping[str, Sequence[float]], path,
               threshold: float | None = None) -> Path:
    """Dev F1 per epoch, one line per run."""
    fig = _figure()
    ax = fig.add_subplot(1, 1, 1)
    for k, (label, values) in enumerate(curves.items()):
        ax.plot(range(1, len(values) + 1), values, marker="o", markersize=3,
                label=label, color=_COLORS[k % len(_COLORS)])
    if threshold is not None:
        ax.axhline(threshold, color="0.5", linestyle="--", linewidth=0.8)
    ax.xaxis.set_major_locator(MaxNLocator(integer=True))
    ax.set_xlabel("epoch")
    ax.set_ylabel("dev F1")
    ax.set_ylim(0, 1.02)
    ax.legend(frameon=False, fontsize=8)
    _tidy(ax)
    return _save(fig, path)


def score_bars(scores: Mapping[str, tuple[float, float, float]], path) -> Path:
    """Precision/recall/F1 (as percentages) per dataset."""
    names = list(scores)
    series = {m: [100 * scores[n][i] for n in names]
              for i, m in enumerate(("P", "R", "F1"))}
    return grouped_bars(names, series, path, "%", "Entity-level scores")
