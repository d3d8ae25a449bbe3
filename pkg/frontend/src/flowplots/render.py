"""Draw assembled figure tables with matplotlib and write the manifest."""

from __future__ import annotations

from typing import Dict, List

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .tables import (
    FigureKind,
    FigureSpec,
    FigureTable,
    SeriesRow,
    build_table,
    manifest_path,
    manifest_text,
)

# Glyphs keyed by the classification half of a fixed-point label.
POINT_MARKERS = {
    "source": ("^", "tab:red"),
    "sink": ("v", "tab:blue"),
    "hyperbolic": ("x", "tab:purple"),
    "degenerate": ("s", "tab:gray"),
}


def _by_series(table: FigureTable) -> Dict[str, List[SeriesRow]]:
    grouped: Dict[str, List[SeriesRow]] = {}
    for row in table.rows:
        grouped.setdefault(row.series, []).append(row)
    return grouped


def _draw_portrait(ax, table: FigureTable) -> None:
    grouped = _by_series(table)
    for series in sorted(grouped):
        rows = grouped[series]
        xs = [r.x for r in rows]
        ys = [r.y for r in rows]
        if series.startswith("nullcline-"):
            ax.plot(xs, ys, lw=1.6, label=rows[0].label)
        elif series.startswith("trajectory-"):
            ax.plot(xs, ys, lw=0.9, alpha=0.75, color="tab:green")
    for row in grouped.get("fixed-points", ()):
        kind, _, classification = row.label.partition(":")
        marker, color = POINT_MARKERS.get(classification, ("o", "black"))
        ax.plot([row.x], [row.y], marker=marker, color=color, ms=7, ls="none")
        ax.annotate(kind, (row.x, row.y), textcoords="offset points",
                    xytext=(5, 4), fontsize=8)
    ax.set_xlabel("Y1")
    ax.set_ylabel("Y2")
    ax.set_aspect("equal", adjustable="box")
    ax.legend(loc="upper right", fontsize=8)


def _draw_metric_growth(ax, table: FigureTable) -> None:
    grouped = _by_series(table)
    for series in sorted(grouped):
        rows = grouped[series]
        ax.plot([r.x for r in rows], [r.y for r in rows], lw=1.2, label=series)
    if "reference" in table.annotations:
        ax.axhline(table.annotations["reference"], ls="--", lw=1.0,
                   color="black", label="target slope")
    ax.set_xscale("log")
    ax.set_xlabel("tau")
    ax.set_ylabel("scale / tau")
    ax.legend(fontsize=8)


def _draw_slope_fit(ax, table: FigureTable) -> None:
    grouped = _by_series(table)
    psi = grouped.get("psi", [])
    ax.plot([r.x for r in psi], [r.y for r in psi], lw=1.2, label="psi")
    fit = grouped.get("fit", [])
    slope = table.annotations.get("slope", float("nan"))
    ax.plot([r.x for r in fit], [r.y for r in fit], ls="--", lw=1.0,
            color="black", label=f"fit slope {slope:.6g}")
    ax.set_xlabel("tau")
    ax.set_ylabel("psi")
    ax.legend(fontsize=8)


def render(spec: FigureSpec) -> FigureTable:
    """Build the data table, draw it, and write the sidecar manifest."""
    table = build_table(spec)
    fig, ax = plt.subplots(figsize=(6.0, 4.5), dpi=spec.dpi)
    try:
        if spec.kind is FigureKind.PORTRAIT:
            _draw_portrait(ax, table)
        elif spec.kind is FigureKind.METRIC_GROWTH:
            _draw_metric_growth(ax, table)
        else:
            _draw_slope_fit(ax, table)
        if spec.title:
            ax.set_title(spec.title)
        spec.out_path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(spec.out_path)
    finally:
        plt.close(fig)
    manifest_path(spec.out_path).write_text(manifest_text(table))
    return table
