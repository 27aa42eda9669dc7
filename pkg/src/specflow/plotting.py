"""Figures of labelled and sorted eigenvalue branches."""

from __future__ import annotations

from pathlib import Path

import matplotlib
from matplotlib.figure import Figure

matplotlib.rcParams["svg.hashsalt"] = "specflow"


def flow_figure(flow, tracking, focus=None) -> Figure:
    """Two panels: labelled branches (left) and the sorted enumeration (right).

    Every line carries a gid (``branch-<id>`` / ``sorted-<j>``) so the SVG
    output can be inspected programmatically.
    """
    focus = focus or tracking.focus
    ts = tracking.t_grid
    fig = Figure(figsize=(9, 4))
    ax_lab, ax_sort = fig.subplots(1, 2, sharey=True)
    for col in tracking.focus_branches():
        bid = int(tracking.branch_ids[col])
        (line,) = ax_lab.plot(ts, tracking.values[:, col], lw=1.4, label=f"branch {bid}")
        line.set_gid(f"branch-{bid}")
    for j in range(focus[0], focus[1] + 1):
        (line,) = ax_sort.plot(ts, [w(j) for w in flow.windows], lw=1.4, marker=".", ms=3,
                               label=f"j = {j}")
        line.set_gid(f"sorted-{j}")
    for ev in tracking.crossings:
        for ax in (ax_lab, ax_sort):
            ax.axvline(ev.t_estimate, color="0.6", ls="--", lw=0.8)
    ax_lab.set_title("labelled branches")
    ax_sort.set_title("sorted enumeration")
    ax_lab.set_xlabel("t")
    ax_sort.set_xlabel("t")
    ax_lab.set_ylabel(r"$\lambda$")
    if len(tracking.focus_branches()) <= 8:
        ax_lab.legend(fontsize=7)
        ax_sort.legend(fontsize=7)
    fig.tight_layout()
    return fig


def save_figure(fig: Figure, path) -> Path:
    path = Path(path)
    fig.savefig(path, metadata={"Date": None} if path.suffix == ".svg" else None)
    return path
