"""End-to-end evaluation pipeline and the normalization x metric grid.

One evaluation run: fit the normalizer on the index set, apply it to index
and queries (queries may be the index itself), rank with the requested
metric under protocol-appropriate exclusions, then score. Grid runs invoke
exactly this pipeline per (scheme, metric) cell, so a cell always equals the
corresponding standalone evaluation.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from . import normalization, search
from .datasets import validate_against_store
from .errors import GroundTruthError, ValidationError, VitrieverError
from .evaluation import EvalProtocol, EvalReport, GroundTruth, score
from .metrics import Metric
from .normalization import NormalizationSpec, Scheme
from .store import DescriptorMatrix

DEFAULT_GRID_SCHEMES = (
    Scheme.L2_AXIS1,
    Scheme.L2_AXIS0,
    Scheme.L1_AXIS1,
    Scheme.L1_AXIS0,
    Scheme.ROBUST,
)
DEFAULT_GRID_METRICS = tuple(Metric)


@dataclass(frozen=True)
class DescriptorSet:
    """A matrix with its row ids, as loaded from one store."""

    matrix: DescriptorMatrix
    ids: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.ids) != self.matrix.count:
            raise ValidationError(
                f"id count {len(self.ids)} does not match matrix rows {self.matrix.count}"
            )
        object.__setattr__(self, "ids", tuple(self.ids))


@dataclass
class EvaluationOutcome:
    report: EvalReport
    degenerate_normalizations: int


def evaluate_retrieval(
    index: DescriptorSet,
    gt: GroundTruth,
    metric: Metric,
    spec: NormalizationSpec,
    queries: DescriptorSet | None = None,
    k: int | None = search.FULL,
    threads: int = 1,
) -> EvaluationOutcome:
    """Run the full pipeline and score it; `queries=None` reuses the index set."""
    if gt.protocol is EvalProtocol.MAP and k is not None:
        raise ValidationError("the mAP protocol needs full rankings; pass k=FULL")
    if gt.protocol is EvalProtocol.NS and k is not None and k < 4:
        raise ValidationError(f"the N-S protocol needs rankings of depth >= 4, got k={k}")

    normalizer = normalization.fit(spec, index.matrix)
    index_norm, degenerate = normalization.apply(normalizer, index.matrix)
    if queries is None:
        query_set = DescriptorSet(index_norm, index.ids)
    else:
        queries_norm, q_degenerate = normalization.apply(normalizer, queries.matrix)
        degenerate += q_degenerate
        query_set = DescriptorSet(queries_norm, queries.ids)

    gt = _validate_gt_ids(gt, index, query_set)
    row_of = {ident: i for i, ident in enumerate(query_set.ids)}
    rows = [row_of[q.query_id] for q in gt.queries]
    query_matrix = DescriptorMatrix(query_set.matrix.data[rows])
    query_ids = [q.query_id for q in gt.queries]
    exclusions = {
        q.query_id: frozenset((q.query_id,)) for q in gt.queries if q.exclude_self
    }

    rankings = search.batch_search(
        query_matrix,
        query_ids,
        index_norm,
        index.ids,
        metric,
        k=k,
        exclusions=exclusions,
        threads=threads,
    )
    return EvaluationOutcome(score(rankings, gt), degenerate)


def _validate_gt_ids(gt: GroundTruth, index: DescriptorSet, queries: DescriptorSet) -> GroundTruth:
    gt = validate_against_store(gt, index.ids)
    available = set(queries.ids)
    missing = [q.query_id for q in gt.queries if q.query_id not in available]
    if missing:
        raise GroundTruthError(f"queries absent from the query store: {missing}")
    return gt


@dataclass(frozen=True)
class GridSpec:
    """Which normalization schemes and metrics to sweep, plus a report label."""

    schemes: tuple[Scheme, ...] = DEFAULT_GRID_SCHEMES
    metrics: tuple[Metric, ...] = DEFAULT_GRID_METRICS
    model_label: str = "model"
    robust_q_low: float = 0.25
    robust_q_high: float = 0.75

    def normalization_spec(self, scheme: Scheme) -> NormalizationSpec:
        return NormalizationSpec(
            scheme, robust_q_low=self.robust_q_low, robust_q_high=self.robust_q_high
        )


@dataclass
class GridCell:
    scheme: Scheme
    metric: Metric
    report: EvalReport | None = None
    error: str | None = None

    @property
    def aggregate(self) -> float | None:
        return None if self.report is None else self.report.aggregate


@dataclass
class GridResult:
    spec: GridSpec
    cells: list[list[GridCell]] = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return any(cell.error is not None for row in self.cells for cell in row)

    def best_cell(self) -> GridCell | None:
        best: GridCell | None = None
        for row in self.cells:
            for cell in row:
                if cell.aggregate is None:
                    continue
                if best is None or cell.aggregate > best.aggregate:
                    best = cell
        return best

    def to_text(self) -> str:
        best = self.best_cell()
        col_width = 10
        name_width = max([len(s.display_name) for s in self.spec.schemes] + [8])
        lines = [f"Model: {self.spec.model_label}"]
        header = " " * name_width + "".join(
            f"{m.short_label:>{col_width}}" for m in self.spec.metrics
        )
        lines.append(header)
        for row in self.cells:
            rendered = f"{row[0].scheme.display_name:<{name_width}}"
            for cell in row:
                if cell.error is not None:
                    rendered += f"{'ERR':>{col_width}}"
                else:
                    mark = "*" if cell is best else ""
                    rendered += f"{cell.aggregate:{col_width - len(mark)}.2f}{mark}"
            lines.append(rendered)
        if best is not None:
            lines.append(
                f"best: {best.scheme.display_name} + {best.metric.value} "
                f"= {best.aggregate:.2f}"
            )
        for row in self.cells:
            for cell in row:
                if cell.error is not None:
                    lines.append(f"failed: {cell.scheme.display_name} + {cell.metric.value}: {cell.error}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        best = self.best_cell()
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["model", "normalization", "metric", "score", "best", "error"])
        for row in self.cells:
            for cell in row:
                writer.writerow(
                    [
                        self.spec.model_label,
                        cell.scheme.display_name,
                        cell.metric.value,
                        "" if cell.aggregate is None else f"{cell.aggregate:.6f}",
                        "1" if cell is best else "0",
                        cell.error or "",
                    ]
                )
        return buf.getvalue()


def run_grid(
    index: DescriptorSet,
    gt: GroundTruth,
    grid: GridSpec,
    queries: DescriptorSet | None = None,
    k: int | None = search.FULL,
    threads: int = 1,
    parallel_cells: int = 1,
) -> GridResult:
    """Evaluate every (scheme, metric) cell; failures are recorded, not fatal."""
    result = GridResult(grid)
    result.cells = [
        [GridCell(scheme, metric) for metric in grid.metrics] for scheme in grid.schemes
    ]
    flat = [cell for row in result.cells for cell in row]

    def run_cell(cell: GridCell) -> None:
        try:
            outcome = evaluate_retrieval(
                index,
                gt,
                cell.metric,
                grid.normalization_spec(cell.scheme),
                queries=queries,
                k=k,
                threads=threads,
            )
            cell.report = outcome.report
        except VitrieverError as exc:
            cell.error = str(exc)

    if parallel_cells > 1:
        with ThreadPoolExecutor(max_workers=parallel_cells) as pool:
            list(pool.map(run_cell, flat))
    else:
        for cell in flat:
            run_cell(cell)
    return result
