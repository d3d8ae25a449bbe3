"""Figure data assembled from exported CSV/JSON artifacts.

Every figure is built from a flat row table first; tests compare those
tables and the input manifest, never rendered pixels.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

# Long metric exports are thinned to this many plotted points per
# series; the stride rule always keeps the final row, where the
# limiting behavior lives.
MAX_SERIES_POINTS = 512

NULLCLINE_HEADER = ("locus", "t", "Y1", "Y2")
FIXEDPOINT_HEADER = ("kind", "Y1", "Y2", "classification", "unstable_dimension")
TRAJECTORY_HEADER = ("u", "Y1", "Y2", "region", "E")
METRIC_HEADER = ("tau", "psi", "b1", "b2")


class TableError(Exception):
    """A required input is missing, unreadable, or misheaded."""


class FigureKind(enum.Enum):
    PORTRAIT = "Portrait"
    METRIC_GROWTH = "MetricGrowth"
    SLOPE_FIT = "SlopeFit"


@dataclass(frozen=True)
class FigureSpec:
    in_dir: Path
    kind: FigureKind
    out_path: Path
    dpi: int = 150
    title: Optional[str] = None


@dataclass(frozen=True)
class InputRecord:
    file: str
    rows: Optional[int]  # data rows for CSV, None for JSON
    sha256: str


@dataclass(frozen=True)
class SeriesRow:
    series: str
    label: str
    x: float
    y: float


@dataclass(frozen=True)
class FigureTable:
    kind: FigureKind
    rows: Tuple[SeriesRow, ...]
    annotations: Dict[str, float]
    inputs: Tuple[InputRecord, ...]


def _checksum(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _read_csv(path: Path, expected: Sequence[str]) -> Tuple[List[dict], InputRecord]:
    if not path.is_file():
        raise TableError(f"missing input: {path}")
    lines = [ln for ln in path.read_text().splitlines() if ln]
    data = [ln for ln in lines if not ln.startswith("#")]
    if not data:
        raise TableError(f"empty input: {path}")
    parsed = list(csv.reader(data))
    header = parsed[0]
    if tuple(header[: len(expected)]) != tuple(expected):
        raise TableError(
            f"unexpected header in {path}: got {header}, need {list(expected)}"
        )
    rows = [dict(zip(header, row)) for row in parsed[1:]]
    if not rows:
        raise TableError(f"no data rows in {path}")
    record = InputRecord(
        file=path.name, rows=len(rows), sha256=_checksum(path)
    )
    return rows, record


def _read_json(path: Path) -> Tuple[dict, InputRecord]:
    if not path.is_file():
        raise TableError(f"missing input: {path}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise TableError(f"unreadable JSON in {path}: {exc}") from exc
    return payload, InputRecord(file=path.name, rows=None, sha256=_checksum(path))


def _thin(values: List[SeriesRow]) -> List[SeriesRow]:
    if len(values) <= MAX_SERIES_POINTS:
        return values
    stride = math.ceil(len(values) / MAX_SERIES_POINTS)
    kept = values[::stride]
    if kept[-1] is not values[-1]:
        kept.append(values[-1])
    return kept


def _portrait_table(spec: FigureSpec) -> FigureTable:
    rows: List[SeriesRow] = []
    inputs: List[InputRecord] = []

    loci, rec = _read_csv(spec.in_dir / "nullclines.csv", NULLCLINE_HEADER)
    inputs.append(rec)
    for r in loci:
        rows.append(
            SeriesRow(f"nullcline-{r['locus']}", r["locus"], float(r["Y1"]), float(r["Y2"]))
        )

    points, rec = _read_csv(spec.in_dir / "fixedpoints.csv", FIXEDPOINT_HEADER)
    inputs.append(rec)
    for r in points:
        rows.append(
            SeriesRow(
                "fixed-points",
                f"{r['kind']}:{r['classification']}",
                float(r["Y1"]),
                float(r["Y2"]),
            )
        )

    for path in sorted(spec.in_dir.glob("trajectory_[0-9]*.csv")):
        states, rec = _read_csv(path, TRAJECTORY_HEADER)
        inputs.append(rec)
        series = path.stem.replace("_", "-")
        rows.extend(
            _thin(
                [
                    SeriesRow(series, r["region"], float(r["Y1"]), float(r["Y2"]))
                    for r in states
                ]
            )
        )
    return FigureTable(spec.kind, tuple(rows), {}, tuple(inputs))


def _metric_growth_table(spec: FigureSpec) -> FigureTable:
    samples, rec = _read_csv(spec.in_dir / "metric.csv", ("tau",))
    inputs = [rec]
    header = [k for k in samples[0] if k != "tau"]
    rows: List[SeriesRow] = []
    for column in header:
        series = [
            SeriesRow(f"{column}/tau", column, tau, float(r[column]) / tau)
            for r in samples
            if (tau := float(r["tau"])) > 0.0
        ]
        rows.extend(_thin(series))

    annotations: Dict[str, float] = {}
    fit_path = spec.in_dir / "asymptotics.json"
    if fit_path.is_file():
        payload, rec = _read_json(fit_path)
        inputs.append(rec)
        if isinstance(payload.get("slope_target"), (int, float)):
            annotations["reference"] = float(payload["slope_target"])
    return FigureTable(spec.kind, tuple(rows), annotations, tuple(inputs))


def _slope_fit_table(spec: FigureSpec) -> FigureTable:
    samples, rec = _read_csv(spec.in_dir / "metric.csv", METRIC_HEADER[:2])
    inputs = [rec]
    psi = _thin(
        [
            SeriesRow("psi", "", float(r["tau"]), float(r["psi"]))
            for r in samples
        ]
    )

    fit_path = spec.in_dir / "asymptotics.json"
    payload, rec = _read_json(fit_path)
    inputs.append(rec)
    if not isinstance(payload.get("slope"), (int, float)):
        detail = payload.get("error", "no slope field")
        raise TableError(f"no usable fit in {fit_path}: {detail}")
    slope = float(payload["slope"])
    collapse = payload.get("collapse_time")
    offset = float(collapse) if isinstance(collapse, (int, float)) else 0.0

    taus = [r.x for r in psi]
    fit = [
        SeriesRow("fit", "", t, slope * (t + offset))
        for t in (min(taus), max(taus))
    ]
    annotations = {"slope": slope}
    if isinstance(payload.get("slope_target"), (int, float)):
        annotations["slope_target"] = float(payload["slope_target"])
    if isinstance(collapse, (int, float)):
        annotations["collapse_time"] = float(collapse)
    return FigureTable(spec.kind, tuple(psi + fit), annotations, tuple(inputs))


def build_table(spec: FigureSpec) -> FigureTable:
    if spec.kind is FigureKind.PORTRAIT:
        return _portrait_table(spec)
    if spec.kind is FigureKind.METRIC_GROWTH:
        return _metric_growth_table(spec)
    return _slope_fit_table(spec)


def table_to_csv(table: FigureTable) -> str:
    """Deterministic text form of the plotted data, for golden tests."""
    lines = ["series,label,x,y"]
    for r in table.rows:
        lines.append(f"{r.series},{r.label},{r.x:.17g},{r.y:.17g}")
    for key in sorted(table.annotations):
        lines.append(f"annotation,{key},{table.annotations[key]:.17g},")
    return "\n".join(lines) + "\n"


def manifest_text(table: FigureTable) -> str:
    payload = {
        "kind": table.kind.value,
        "inputs": [
            {"file": rec.file, "rows": rec.rows, "sha256": rec.sha256}
            for rec in sorted(table.inputs, key=lambda rec: rec.file)
        ],
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def manifest_path(out_path: Path) -> Path:
    return out_path.with_name(out_path.name + ".manifest.json")
