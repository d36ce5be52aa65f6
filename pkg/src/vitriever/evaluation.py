"""Retrieval scoring: mean Average Precision and the top-4 (N-S) protocol.

AP follows the instance-retrieval convention: junk entries are deleted from
the ranking (later entries close up), then AP is the sum of precision values
at each retrieved positive divided by the number of positives, so positives
never retrieved contribute zero. No interpolation is applied. mAP is the
arithmetic mean of per-query AP, reported on the 0-100 scale.

The N-S protocol scores each query by how many of its 4-member group appear
in the top 4 ranked entries (the query's own self-match counts); a perfect
run scores 4.0.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import AbstractSet, Sequence, TextIO

from .errors import GroundTruthError, ValidationError
from .search import RankedList


class EvalProtocol(Enum):
    MAP = "map"
    NS = "ns"

    @classmethod
    def parse(cls, name: str) -> "EvalProtocol":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ValidationError(f"unknown protocol {name!r} (expected 'map' or 'ns')")


@dataclass(frozen=True)
class QueryGroundTruth:
    query_id: str
    positives: frozenset[str]
    junk: frozenset[str] = frozenset()
    exclude_self: bool = False


@dataclass(frozen=True)
class GroundTruth:
    queries: tuple[QueryGroundTruth, ...]
    protocol: EvalProtocol

    def __post_init__(self) -> None:
        if not self.queries:
            raise GroundTruthError("ground truth holds no queries")
        seen: set[str] = set()
        for q in self.queries:
            if q.query_id in seen:
                raise GroundTruthError(f"duplicate ground-truth query {q.query_id!r}")
            seen.add(q.query_id)
            if not q.positives:
                raise GroundTruthError(f"query {q.query_id!r} has no positives")
            if q.positives & q.junk:
                raise GroundTruthError(
                    f"query {q.query_id!r} has ids that are both positive and junk"
                )
            if q.junk and self.protocol is not EvalProtocol.MAP:
                raise GroundTruthError(
                    f"query {q.query_id!r}: junk sets are only permitted under the mAP protocol"
                )


@dataclass(frozen=True)
class EvalReport:
    protocol: EvalProtocol
    aggregate: float
    per_query: tuple[tuple[str, float], ...]

    def to_machine_lines(self) -> list[str]:
        lines = [f"{qid} {score:.6f}" for qid, score in self.per_query]
        lines.append(f"AGGREGATE {self.aggregate:.6f}")
        return lines

    def to_table(self) -> str:
        label = "AP" if self.protocol is EvalProtocol.MAP else "top-4"
        width = max([len(qid) for qid, _ in self.per_query] + [5])
        rows = [f"{'query':<{width}}  {label}"]
        rows += [f"{qid:<{width}}  {score:.6f}" for qid, score in self.per_query]
        name = "mAP" if self.protocol is EvalProtocol.MAP else "N-S"
        rows.append(f"{name}: {self.aggregate:.4f}")
        return "\n".join(rows)

    def write(self, out: TextIO) -> None:
        for line in self.to_machine_lines():
            out.write(line + "\n")


def average_precision(
    ranked: RankedList, positives: AbstractSet[str], junk: AbstractSet[str] = frozenset()
) -> float:
    """AP of one full ranking after junk removal, in [0, 1]."""
    if not positives:
        raise GroundTruthError(f"query {ranked.query_id!r} has no positives")
    hits = 0
    precision_sum = 0.0
    rank = 0
    for entry in ranked.entries:
        if entry.id in junk:
            continue
        rank += 1
        if entry.id in positives:
            hits += 1
            precision_sum += hits / rank
    return precision_sum / len(positives)


def _match_rankings(
    rankings: Sequence[RankedList], gt: GroundTruth
) -> dict[str, RankedList]:
    by_query: dict[str, RankedList] = {}
    for ranked in rankings:
        if ranked.query_id in by_query:
            raise ValidationError(f"duplicate ranking for query {ranked.query_id!r}")
        by_query[ranked.query_id] = ranked
    missing = [q.query_id for q in gt.queries if q.query_id not in by_query]
    if missing:
        raise ValidationError(f"no ranking for ground-truth queries: {missing}")
    return by_query


def _check_positives_present(query: QueryGroundTruth, ranked: RankedList) -> None:
    present = {entry.id for entry in ranked.entries}
    if query.exclude_self:
        present.add(query.query_id)
    absent = query.positives - present
    if absent:
        raise GroundTruthError(
            f"query {query.query_id!r}: positives missing from the ranking "
            f"(not in the index?): {sorted(absent)}"
        )


def mean_average_precision(rankings: Sequence[RankedList], gt: GroundTruth) -> EvalReport:
    """Score full rankings under the mAP protocol; aggregate is on the 0-100 scale."""
    if gt.protocol is not EvalProtocol.MAP:
        raise ValidationError("ground truth does not use the mAP protocol")
    by_query = _match_rankings(rankings, gt)
    per_query: list[tuple[str, float]] = []
    for query in gt.queries:
        ranked = by_query[query.query_id]
        _check_positives_present(query, ranked)
        per_query.append((query.query_id, average_precision(ranked, query.positives, query.junk)))
    aggregate = 100.0 * sum(score for _, score in per_query) / len(per_query)
    return EvalReport(EvalProtocol.MAP, aggregate, tuple(per_query))


def ns_score(rankings: Sequence[RankedList], gt: GroundTruth) -> EvalReport:
    """Score rankings under the top-4 protocol; aggregate lies in [0, 4]."""
    if gt.protocol is not EvalProtocol.NS:
        raise ValidationError("ground truth does not use the N-S protocol")
    by_query = _match_rankings(rankings, gt)
    per_query: list[tuple[str, float]] = []
    for query in gt.queries:
        if len(query.positives) != 4 or query.query_id not in query.positives:
            raise GroundTruthError(
                f"query {query.query_id!r}: the N-S protocol needs exactly 4 positives "
                "including the query itself"
            )
        ranked = by_query[query.query_id]
        if len(ranked.entries) < 4:
            raise ValidationError(
                f"query {query.query_id!r}: ranking depth {len(ranked.entries)} is below 4"
            )
        top4 = {entry.id for entry in ranked.entries[:4]}
        per_query.append((query.query_id, float(len(top4 & query.positives))))
    aggregate = sum(score for _, score in per_query) / len(per_query)
    return EvalReport(EvalProtocol.NS, aggregate, tuple(per_query))


def score(rankings: Sequence[RankedList], gt: GroundTruth) -> EvalReport:
    """Dispatch to the protocol named by the ground truth."""
    if gt.protocol is EvalProtocol.MAP:
        return mean_average_precision(rankings, gt)
    return ns_score(rankings, gt)
