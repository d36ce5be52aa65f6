"""The seven distance functions, as scalar calls and batched kernels.

Cosine and correlation are similarities turned into distances as
``1 - similarity`` so that smaller always means closer; ranking by the result
is identical to ranking by descending similarity. All kernels accumulate in
float64 over the (possibly float32) inputs. Batched kernels must agree with
the scalar path to 1e-6 relative, which is why Euclidean uses the chunked
difference form rather than a Gram-matrix expansion: the expansion loses the
leading digits exactly where distances approach zero.

Degenerate operands (zero-norm vector under cosine, constant vector under
correlation, near-zero Bray-Curtis denominator) raise `MetricError` from the
scalar API; the batched API instead flags the affected entries with +infinity
so one bad database row ranks last instead of aborting a run.
"""

from __future__ import annotations

from enum import Enum
from typing import NamedTuple

import numpy as np

from .errors import DimensionMismatchError, MetricError, ValidationError
from .store import DescriptorMatrix

BRAY_CURTIS_DENOM_EPS = 1e-12
_NEGATIVE_CLAMP = 1e-9
_CHUNK_ELEMENTS = 4_000_000  # per-chunk f64 scratch of ~32 MB
_INDEX_BLOCK_ELEMENTS = 1_572_864  # ~12 MB of f64 index rows kept hot per block


class Metric(Enum):
    """The supported distance functions, in the grid's column order."""

    MANHATTAN = "manhattan"
    EUCLIDEAN = "euclidean"
    COSINE = "cosine"
    BRAY_CURTIS = "braycurtis"
    CANBERRA = "canberra"
    CHEBYSHEV = "chebyshev"
    CORRELATION = "correlation"

    @classmethod
    def parse(cls, name: str) -> "Metric":
        try:
            return cls(name.strip().lower())
        except ValueError:
            valid = ", ".join(m.value for m in cls)
            raise ValidationError(f"unknown metric {name!r} (expected one of {valid})")

    @property
    def short_label(self) -> str:
        return _SHORT_LABELS[self]


_SHORT_LABELS = {
    Metric.MANHATTAN: "Manh.",
    Metric.EUCLIDEAN: "Eucl.",
    Metric.COSINE: "Cos",
    Metric.BRAY_CURTIS: "BC",
    Metric.CANBERRA: "Canb.",
    Metric.CHEBYSHEV: "Cheb.",
    Metric.CORRELATION: "Correl.",
}


class BatchDistances(NamedTuple):
    """Distances from one query to every index row, plus a degenerate-row count."""

    values: np.ndarray
    degenerate_count: int


def _clamp_tiny_negative(value: float) -> float:
    if -_NEGATIVE_CLAMP < value < 0.0:
        return 0.0
    return value


def _as_vector(name: str, v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    if arr.size < 1:
        raise ValidationError(f"{name} must have length >= 1")
    if not np.isfinite(arr).all():
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def distance(metric: Metric, p, q) -> float:
    """Distance between two equal-length finite vectors."""
    pv = _as_vector("p", p)
    qv = _as_vector("q", q)
    if pv.size != qv.size:
        raise DimensionMismatchError(f"vector lengths differ: {pv.size} vs {qv.size}")

    if metric is Metric.MANHATTAN:
        return float(np.abs(pv - qv).sum())
    if metric is Metric.EUCLIDEAN:
        diff = pv - qv
        return float(np.sqrt((diff * diff).sum()))
    if metric is Metric.CHEBYSHEV:
        return float(np.abs(pv - qv).max())
    if metric is Metric.CANBERRA:
        num = np.abs(pv - qv)
        den = np.abs(pv) + np.abs(qv)
        terms = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
        return float(terms.sum())
    if metric is Metric.BRAY_CURTIS:
        den = float((pv + qv).sum())
        if abs(den) < BRAY_CURTIS_DENOM_EPS:
            raise MetricError(f"Bray-Curtis denominator {den!r} is below {BRAY_CURTIS_DENOM_EPS}")
        return _clamp_tiny_negative(float(np.abs(pv - qv).sum() / den))
    if metric is Metric.COSINE:
        return _similarity_distance(pv, qv, center=False)
    if metric is Metric.CORRELATION:
        return _similarity_distance(pv, qv, center=True)
    raise ValidationError(f"unhandled metric {metric!r}")


def _similarity_distance(pv: np.ndarray, qv: np.ndarray, center: bool) -> float:
    kind = "correlation" if center else "cosine"
    if center:
        pv = pv - pv.mean()
        qv = qv - qv.mean()
    pn = float(np.sqrt((pv * pv).sum()))
    qn = float(np.sqrt((qv * qv).sum()))
    if pn == 0.0 or qn == 0.0:
        what = "constant" if center else "zero-norm"
        raise MetricError(f"{kind} is undefined for a {what} operand")
    return _clamp_tiny_negative(1.0 - float(pv @ qv) / (pn * qn))


def distance_batch(metric: Metric, query, index: DescriptorMatrix) -> BatchDistances:
    """Distances from `query` to every row of `index`, in row order.

    Rows that would raise in the scalar API come back as +infinity and are
    counted in `degenerate_count`.
    """
    qv = _as_vector("query", query)
    if qv.size != index.dim:
        raise DimensionMismatchError(
            f"query length {qv.size} does not match index dimension {index.dim}"
        )
    values = pairwise_distances(metric, qv[None, :], np.asarray(index.data, dtype=np.float64))[0]
    return BatchDistances(values, int(np.isinf(values).sum()))


def pairwise_distances(metric: Metric, queries: np.ndarray, index: np.ndarray) -> np.ndarray:
    """(M, N) distance matrix between float64 row sets; degenerate pairs are +inf."""
    return make_batch_kernel(metric, index)(queries)


def make_batch_kernel(metric: Metric, index: np.ndarray):
    """Build a ``queries -> (M, N) distances`` kernel with index-side state precomputed.

    Callers streaming many query chunks against one index (batch search) pay
    for index normalization, centering, and row sums once. Every output row
    is produced by row-local arithmetic, so results are bitwise identical
    whether a query arrives alone or inside any chunking.
    """
    n = index.shape[0]

    if metric in (Metric.COSINE, Metric.CORRELATION):
        center = metric is Metric.CORRELATION
        xi = index - index.mean(axis=1, keepdims=True) if center else index
        xn = np.sqrt((xi * xi).sum(axis=1))
        x_bad = xn == 0.0
        normalized_index = xi / np.where(x_bad, 1.0, xn)[:, None]
        # Index rows are visited in fixed-size blocks that stay cache-resident
        # while a whole query chunk streams past; the block size never depends
        # on the caller, which keeps every row's arithmetic reproducible.
        block_rows = max(1, _INDEX_BLOCK_ELEMENTS // max(1, index.shape[1]))

        def similarity_kernel(queries: np.ndarray) -> np.ndarray:
            qi = queries - queries.mean(axis=1, keepdims=True) if center else queries
            qn = np.sqrt((qi * qi).sum(axis=1))
            q_bad = qn == 0.0
            normalized_queries = qi / np.where(q_bad, 1.0, qn)[:, None]
            out = np.empty((queries.shape[0], n), dtype=np.float64)
            for start in range(0, n, block_rows):
                stop = min(start + block_rows, n)
                block = normalized_index[start:stop]
                for i in range(queries.shape[0]):
                    out[i, start:stop] = 1.0 - block @ normalized_queries[i]
            out[(out < 0) & (out > -_NEGATIVE_CLAMP)] = 0.0
            out[q_bad, :] = np.inf
            out[:, x_bad] = np.inf
            return out

        return similarity_kernel

    if metric is Metric.BRAY_CURTIS:
        index_sums = index.sum(axis=1)

        def bray_curtis_kernel(queries: np.ndarray) -> np.ndarray:
            num = _pairwise_reduce(queries, index, _reduce_abs_sum)
            den = queries.sum(axis=1)[:, None] + index_sums[None, :]
            out = np.full((queries.shape[0], n), np.inf)
            safe = np.abs(den) >= BRAY_CURTIS_DENOM_EPS
            np.divide(num, den, out=out, where=safe)
            out[(out < 0) & (out > -_NEGATIVE_CLAMP)] = 0.0
            return out

        return bray_curtis_kernel

    try:
        reduce_fn, needs_sqrt = _REDUCERS[metric]
    except KeyError:
        raise ValidationError(f"unhandled metric {metric!r}")

    def reduce_kernel(queries: np.ndarray) -> np.ndarray:
        out = _pairwise_reduce(queries, index, reduce_fn)
        return np.sqrt(out) if needs_sqrt else out

    return reduce_kernel


def _reduce_abs_sum(diff: np.ndarray, q_row: np.ndarray, x_chunk: np.ndarray) -> np.ndarray:
    np.abs(diff, out=diff)
    return diff.sum(axis=1)


def _reduce_sq_sum(diff: np.ndarray, q_row: np.ndarray, x_chunk: np.ndarray) -> np.ndarray:
    np.multiply(diff, diff, out=diff)
    return diff.sum(axis=1)


def _reduce_abs_max(diff: np.ndarray, q_row: np.ndarray, x_chunk: np.ndarray) -> np.ndarray:
    np.abs(diff, out=diff)
    return diff.max(axis=1)


def _reduce_canberra(diff: np.ndarray, q_row: np.ndarray, x_chunk: np.ndarray) -> np.ndarray:
    np.abs(diff, out=diff)
    den = np.abs(x_chunk) + np.abs(q_row)
    terms = np.divide(diff, den, out=np.zeros_like(diff), where=den > 0)
    return terms.sum(axis=1)


def _pairwise_reduce(queries: np.ndarray, index: np.ndarray, reduce_fn) -> np.ndarray:
    """Row-chunked elementwise reduction over query/index differences."""
    m, dim = queries.shape
    n = index.shape[0]
    out = np.empty((m, n), dtype=np.float64)
    chunk = max(1, _CHUNK_ELEMENTS // dim)
    for qi in range(m):
        q_row = queries[qi]
        for start in range(0, n, chunk):
            stop = min(start + chunk, n)
            diff = index[start:stop] - q_row
            out[qi, start:stop] = reduce_fn(diff, q_row, index[start:stop])
    return out


_REDUCERS = {
    Metric.MANHATTAN: (_reduce_abs_sum, False),
    Metric.EUCLIDEAN: (_reduce_sq_sum, True),
    Metric.CHEBYSHEV: (_reduce_abs_max, False),
    Metric.CANBERRA: (_reduce_canberra, False),
}
