"""Exhaustive top-k retrieval over a descriptor index.

Rankings are fully deterministic: ascending distance, ties broken by
ascending index row order, regardless of k, chunking, or thread count. When
k is small relative to the eligible set a partial selection (argpartition
plus an explicit rule for ties at the k-th value) avoids the full sort; the
result is identical to sorting everything and truncating.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import AbstractSet, Mapping, NamedTuple, Sequence, TextIO

import numpy as np

from .errors import DimensionMismatchError, ValidationError
from .metrics import Metric, make_batch_kernel, pairwise_distances
from .store import DescriptorMatrix

FULL = None  # pass as k to request a complete ranking

_QUERY_CHUNK = 64


class RankedEntry(NamedTuple):
    id: str
    distance: float


@dataclass(frozen=True)
class RankedList:
    """Retrieval result for one query: entries sorted by ascending distance."""

    query_id: str
    entries: tuple[RankedEntry, ...]
    k: int | None


def _check_k(k: int | None) -> None:
    if k is not None and k < 1:
        raise ValidationError(f"k must be a positive integer or FULL, got {k}")


def _select_smallest(distances: np.ndarray, eligible: np.ndarray, k: int | None) -> np.ndarray:
    """Indices of the k smallest distances among `eligible`, in final rank order."""
    d = distances[eligible]
    n = d.size
    take = n if k is None else min(k, n)
    if take == 0:
        return np.empty(0, dtype=np.intp)

    if take < n // 2:
        # Partial selection; argpartition splits ties at the k-th value
        # arbitrarily, so re-pick those by ascending row index.
        part = np.argpartition(d, take - 1)[:take]
        threshold = d[part].max()
        below = np.flatnonzero(d < threshold)
        at = np.flatnonzero(d == threshold)
        local = np.concatenate([below, at[: take - below.size]])
    else:
        local = np.arange(n)
    order = np.argsort(d[local], kind="stable")
    return eligible[local[order]][:take]


def top_k(
    query,
    query_id: str,
    index: DescriptorMatrix,
    index_ids: Sequence[str],
    metric: Metric,
    k: int | None = FULL,
    exclude: AbstractSet[str] = frozenset(),
) -> RankedList:
    """Rank index rows by distance to one query, honoring exclusions."""
    _check_k(k)
    query_arr = np.asarray(query, dtype=np.float64)
    if query_arr.ndim != 1 or query_arr.size != index.dim:
        raise DimensionMismatchError(
            f"query shape {query_arr.shape} does not match index dimension {index.dim}"
        )
    distances = pairwise_distances(metric, query_arr[None, :], np.asarray(index.data, dtype=np.float64))[0]
    return _rank_row(distances, query_id, index_ids, k, exclude)


def _rank_row(
    distances: np.ndarray,
    query_id: str,
    index_ids: Sequence[str],
    k: int | None,
    exclude: AbstractSet[str],
) -> RankedList:
    if exclude:
        eligible = np.fromiter(
            (i for i, ident in enumerate(index_ids) if ident not in exclude),
            dtype=np.intp,
        )
    else:
        eligible = np.arange(len(index_ids), dtype=np.intp)
    chosen = _select_smallest(distances, eligible, k)
    entries = tuple(RankedEntry(index_ids[i], float(distances[i])) for i in chosen)
    return RankedList(query_id=query_id, entries=entries, k=k)


def batch_search(
    queries: DescriptorMatrix,
    query_ids: Sequence[str],
    index: DescriptorMatrix,
    index_ids: Sequence[str],
    metric: Metric,
    k: int | None = FULL,
    exclusions: Mapping[str, AbstractSet[str]] | None = None,
    threads: int = 1,
) -> list[RankedList]:
    """Rank the index against every query row; output order matches query order."""
    _check_k(k)
    if queries.dim != index.dim:
        raise DimensionMismatchError(
            f"query dimension {queries.dim} does not match index dimension {index.dim}"
        )
    if len(query_ids) != queries.count:
        raise ValidationError(
            f"query id count {len(query_ids)} does not match query rows {queries.count}"
        )
    exclusions = exclusions or {}
    query_data = np.asarray(queries.data, dtype=np.float64)
    kernel = make_batch_kernel(metric, np.asarray(index.data, dtype=np.float64))

    chunks = [
        (start, min(start + _QUERY_CHUNK, queries.count))
        for start in range(0, queries.count, _QUERY_CHUNK)
    ]

    def run_chunk(bounds: tuple[int, int]) -> list[RankedList]:
        start, stop = bounds
        block = kernel(query_data[start:stop])
        return [
            _rank_row(
                block[row],
                query_ids[start + row],
                index_ids,
                k,
                exclusions.get(query_ids[start + row], frozenset()),
            )
            for row in range(stop - start)
        ]

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_chunk = list(pool.map(run_chunk, chunks))
    else:
        per_chunk = [run_chunk(bounds) for bounds in chunks]
    return [ranked for chunk in per_chunk for ranked in chunk]


def write_ranked_lists(rankings: Sequence[RankedList], out: TextIO) -> None:
    """Dump rankings as text lines: ``<query_id> <rank> <id> <distance>``."""
    for ranked in rankings:
        for rank, entry in enumerate(ranked.entries, start=1):
            out.write(f"{ranked.query_id} {rank} {entry.id} {entry.distance:.12g}\n")
