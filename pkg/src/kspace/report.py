"""Aggregation of divergence results into tables, summaries and box-plot data.

A result table is a flat list of (model, benchmark, layer, comparison) rows
with one MMD and one JS value each. The shipped fixture
``fixtures/table1.csv`` holds the published per-layer divergence grid for
the two reference models on both benchmarks and is the desk-scale
reproduction target for the aggregate statistics.

Conventions: the cross-modality standard deviation is reported under both
the population (divisor N) and sample (divisor N-1) conventions; quantiles
interpolate linearly between order statistics.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .divergence import CROSS, INTRA_IMAGE, INTRA_TEXT
from .errors import ParameterError, StorageError, ValidationError

COMPARISONS = (CROSS, INTRA_IMAGE, INTRA_TEXT)
METRICS = ("mmd", "js")
CSV_HEADER = ["model", "benchmark", "layer", "comparison", "mmd", "js"]


@dataclass(frozen=True)
class TableRow:
    model: str
    benchmark: str
    layer: int
    comparison: str
    mmd: float
    js: float


@dataclass
class ResultTable:
    rows: list[TableRow] = field(default_factory=list)

    def validate(self) -> None:
        seen = set()
        for row in self.rows:
            if row.comparison not in COMPARISONS:
                raise ValidationError(f"unknown comparison tag {row.comparison!r}")
            key = (row.model, row.benchmark, row.layer, row.comparison)
            if key in seen:
                raise ValidationError(f"duplicate table row {key}")
            seen.add(key)

    def subset(self, comparison: str) -> list[TableRow]:
        return [r for r in self.rows if r.comparison == comparison]

    def models(self) -> list[str]:
        out: list[str] = []
        for r in self.rows:
            if r.model not in out:
                out.append(r.model)
        return out


@dataclass
class BoxplotGroup:
    """Five-number summary plus raw values for one box of the summary figure."""

    model: str
    comparison: str
    metric: str
    benchmark: str | None  # None = pooled over benchmarks
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float
    values: list[float]


@dataclass
class AggregateReport:
    mean_cross_mmd: float
    std_cross_mmd: float          # population convention (divisor N)
    std_cross_mmd_sample: float   # sample convention (divisor N-1)
    mean_intra_img_mmd: float
    mean_intra_txt_mmd: float
    max_cross_mmd: float
    max_cross_mmd_at: tuple[str, str, int]  # (model, benchmark, layer)
    boxplot: list[BoxplotGroup]
    n_cross: int


def parse_table_csv(text: str) -> ResultTable:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != CSV_HEADER:
        raise ValidationError(f"unexpected table header {header}, want {CSV_HEADER}")
    rows = []
    for rec in reader:
        if not rec:
            continue
        rows.append(
            TableRow(
                model=rec[0],
                benchmark=rec[1],
                layer=int(rec[2]),
                comparison=rec[3],
                mmd=float(rec[4]),
                js=float(rec[5]),
            )
        )
    table = ResultTable(rows)
    table.validate()
    return table


def load_table_csv(path: str | Path) -> ResultTable:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"failed to read {path}: {exc}") from exc
    return parse_table_csv(text)


def load_fixture_table1() -> ResultTable:
    """The published per-layer divergence grid shipped with the package."""
    try:
        text = (
            resources.files("kspace").joinpath("fixtures/table1.csv").read_text("utf-8")
        )
    except (FileNotFoundError, OSError) as exc:
        raise StorageError(f"fixture table1.csv missing from distribution: {exc}") from exc
    table = parse_table_csv(text)
    if len(table.rows) != 108:
        raise ValidationError(
            f"fixture table1.csv corrupt: expected 108 rows, got {len(table.rows)}"
        )
    return table


def _five_numbers(values: np.ndarray) -> tuple[float, float, float, float, float]:
    qs = np.percentile(values, [0, 25, 50, 75, 100])  # linear interpolation
    return tuple(float(v) for v in qs)  # type: ignore[return-value]


def aggregate(table: ResultTable, per_benchmark_boxes: bool = False) -> AggregateReport:
    """Cross-layer summary statistics and box-plot records.

    Box-plot groups pool both benchmarks per (model, comparison, metric) by
    default; pass ``per_benchmark_boxes=True`` to split them out instead.
    """
    table.validate()
    if not table.rows:
        raise ParameterError("empty table: nothing to aggregate")
    cross = table.subset(CROSS)
    if not cross:
        raise ParameterError("table has no image_vs_text rows")
    # sort before reducing so aggregation is exactly row-order invariant
    cross_mmd = np.sort([r.mmd for r in cross])
    intra_img = np.sort([r.mmd for r in table.subset(INTRA_IMAGE)])
    intra_txt = np.sort([r.mmd for r in table.subset(INTRA_TEXT)])
    best = min(
        (r for r in cross if r.mmd == cross_mmd[-1]),
        key=lambda r: (r.model, r.benchmark, r.layer),
    )

    boxes: list[BoxplotGroup] = []
    benchmarks: list[str | None]
    if per_benchmark_boxes:
        benchmarks = sorted({r.benchmark for r in table.rows})
    else:
        benchmarks = [None]
    for model in sorted(table.models()):
        for comparison in COMPARISONS:
            for metric in METRICS:
                for benchmark in benchmarks:
                    values = [
                        getattr(r, metric)
                        for r in table.rows
                        if r.model == model
                        and r.comparison == comparison
                        and (benchmark is None or r.benchmark == benchmark)
                    ]
                    if not values:
                        continue
                    values = sorted(values)
                    lo, q1, med, q3, hi = _five_numbers(np.array(values))
                    boxes.append(
                        BoxplotGroup(
                            model=model,
                            comparison=comparison,
                            metric=metric,
                            benchmark=benchmark,
                            minimum=lo,
                            q1=q1,
                            median=med,
                            q3=q3,
                            maximum=hi,
                            values=[float(v) for v in values],
                        )
                    )

    return AggregateReport(
        mean_cross_mmd=float(cross_mmd.mean()),
        std_cross_mmd=float(cross_mmd.std()),
        std_cross_mmd_sample=float(cross_mmd.std(ddof=1)) if len(cross_mmd) > 1 else 0.0,
        mean_intra_img_mmd=float(intra_img.mean()) if intra_img.size else float("nan"),
        mean_intra_txt_mmd=float(intra_txt.mean()) if intra_txt.size else float("nan"),
        max_cross_mmd=float(best.mmd),
        max_cross_mmd_at=(best.model, best.benchmark, best.layer),
        boxplot=boxes,
        n_cross=len(cross),
    )


def _ordered_rows(table: ResultTable) -> list[TableRow]:
    comp_order = {c: i for i, c in enumerate(COMPARISONS)}
    return sorted(
        table.rows,
        key=lambda r: (r.model, r.benchmark, r.layer, comp_order[r.comparison]),
    )


def render_table(table: ResultTable, fmt: str) -> str:
    """Serialize the table as csv, json or markdown.

    CSV column order is fixed: model,benchmark,layer,comparison,mmd,js.
    Markdown emits one section per (model, benchmark) with rows grouped by
    layer, three comparison rows per layer.
    """
    table.validate()
    if fmt == "csv":
        out = io.StringIO()
        out.write(",".join(CSV_HEADER) + "\n")
        for r in _ordered_rows(table):
            out.write(
                f"{r.model},{r.benchmark},{r.layer},{r.comparison},"
                f"{r.mmd:.4f},{r.js:.4f}\n"
            )
        return out.getvalue()
    if fmt == "json":
        rows = [
            {
                "model": r.model,
                "benchmark": r.benchmark,
                "layer": r.layer,
                "comparison": r.comparison,
                "mmd": r.mmd,
                "js": r.js,
            }
            for r in _ordered_rows(table)
        ]
        return json.dumps(rows, indent=2, sort_keys=True) + "\n"
    if fmt == "md":
        out = io.StringIO()
        ordered = _ordered_rows(table)
        groups: dict[tuple[str, str], list[TableRow]] = {}
        for r in ordered:
            groups.setdefault((r.model, r.benchmark), []).append(r)
        for (model, benchmark), rows in groups.items():
            out.write(f"## {model} / {benchmark}\n\n")
            out.write("| layer | comparison | mmd | js |\n")
            out.write("|---|---|---|---|\n")
            for r in rows:
                out.write(f"| {r.layer} | {r.comparison} | {r.mmd:.4f} | {r.js:.4f} |\n")
            out.write("\n")
        return out.getvalue()
    raise ParameterError(f"unknown format {fmt!r}; choose csv, json or md")


def report_to_dict(report: AggregateReport) -> dict:
    return {
        "mean_cross_mmd": report.mean_cross_mmd,
        "std_cross_mmd": report.std_cross_mmd,
        "std_cross_mmd_sample": report.std_cross_mmd_sample,
        "mean_intra_img_mmd": report.mean_intra_img_mmd,
        "mean_intra_txt_mmd": report.mean_intra_txt_mmd,
        "max_cross_mmd": report.max_cross_mmd,
        "max_cross_mmd_at": {
            "model": report.max_cross_mmd_at[0],
            "benchmark": report.max_cross_mmd_at[1],
            "layer": report.max_cross_mmd_at[2],
        },
        "n_cross": report.n_cross,
        "boxplot": [
            {
                "model": g.model,
                "comparison": g.comparison,
                "metric": g.metric,
                "benchmark": g.benchmark,
                "min": g.minimum,
                "q1": g.q1,
                "median": g.median,
                "q3": g.q3,
                "max": g.maximum,
                "values": g.values,
            }
            for g in report.boxplot
        ],
    }


def export_boxplot_data(report: AggregateReport, path: str | Path) -> None:
    """Write the box-plot records (five-number summaries plus raw values)."""
    payload = report_to_dict(report)["boxplot"]
    try:
        Path(path).write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise StorageError(f"failed to write {path}: {exc}") from exc


def table_from_results(
    model: str, benchmark: str, results: list
) -> ResultTable:
    """Build a table from DivergenceResult records of one pipeline run."""
    rows = [
        TableRow(
            model=model,
            benchmark=benchmark,
            layer=r.layer_index,
            comparison=r.comparison,
            mmd=r.mmd,
            js=r.js,
        )
        for r in results
    ]
    table = ResultTable(rows)
    table.validate()
    return table
