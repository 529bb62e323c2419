"""Report figures. Uses the object-oriented Figure API so no global pyplot state is touched."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

from matplotlib.figure import Figure

_META = {"Software": None}


def plot_loss_curve(trace: Sequence[float], path: str | Path) -> Path:
    fig = Figure(figsize=(5.0, 3.2), dpi=100, layout="constrained")
    ax = fig.add_subplot()
    ax.plot(range(len(trace)), trace, lw=1.5, color="#1f5f8b")
    ax.set_xlabel("epoch")
    ax.set_ylabel("masked BCE")
    ax.set_title("GCN training loss")
    ax.grid(alpha=0.3)
    fig.savefig(path, metadata=_META)
    return Path(path)


def plot_map_bars(rows: Mapping[str, float], path: str | Path) -> Path:
    names = list(rows)
    fig = Figure(figsize=(max(4.0, 1.1 * len(names) + 1.5), 3.4), dpi=100, layout="constrained")
    ax = fig.add_subplot()
    bars = ax.bar(range(len(names)), [rows[n] for n in names], color="#6a8caf", edgecolor="black", lw=0.6)
    for b, n in zip(bars, names):
        ax.text(b.get_x() + b.get_width() / 2, b.get_height() + 0.01, f"{rows[n]:.3f}", ha="center", fontsize=8)
    ax.set_xticks(range(len(names)), names, rotation=20, ha="right", fontsize=8)
    ax.set_ylim(0, 1.08)
    ax.set_ylabel("MAP")
    fig.savefig(path, metadata=_META)
    return Path(path)


def plot_per_paper_ap(per_paper: Mapping[str, Mapping[str, float]], path: str | Path) -> Path:
    """One marker series per score table across papers."""
    papers = sorted({p for aps in per_paper.values() for p in aps})
    fig = Figure(figsize=(max(4.5, 0.35 * len(papers) + 2), 3.4), dpi=100, layout="constrained")
    ax = fig.add_subplot()
    markers = "osD^v<>"
    for k, (name, aps) in enumerate(per_paper.items()):
        xs = [i for i, p in enumerate(papers) if p in aps]
        ax.plot(xs, [aps[papers[i]] for i in xs], markers[k % len(markers)], ms=5, alpha=0.8, label=name)
    ax.set_xticks(range(len(papers)), papers, rotation=60, ha="right", fontsize=7)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("AP")
    ax.legend(fontsize=7, frameon=False)
    fig.savefig(path, metadata=_META)
    return Path(path)
