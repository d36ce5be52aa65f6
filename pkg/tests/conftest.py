from __future__ import annotations

import numpy as np
import pytest

from vitriever import DescriptorMatrix, EvalProtocol, GroundTruth, QueryGroundTruth


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)


def make_ids(n: int, prefix: str = "img") -> list[str]:
    return [f"{prefix}{i:05d}" for i in range(n)]


def random_matrix(rng: np.random.Generator, n: int, dim: int, scale: float = 1.0) -> DescriptorMatrix:
    return DescriptorMatrix((rng.standard_normal((n, dim)) * scale).astype(np.float32))


def make_planted_clusters(
    rng: np.random.Generator, n_groups: int, group_size: int, dim: int, noise: float = 1e-3
) -> tuple[DescriptorMatrix, list[str], list[list[str]]]:
    """Groups of near-duplicate descriptors around well-separated directions.

    Every group member is closer (under any reasonable metric) to its own
    group than to any other group, so perfect retrieval is attainable.
    """
    centers = rng.standard_normal((n_groups, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    rows = []
    ids = []
    groups: list[list[str]] = []
    for g in range(n_groups):
        members = []
        for m in range(group_size):
            rows.append(centers[g] + noise * rng.standard_normal(dim))
            ident = f"g{g:03d}_{m}"
            ids.append(ident)
            members.append(ident)
        groups.append(members)
    matrix = DescriptorMatrix(np.asarray(rows, dtype=np.float32))
    return matrix, ids, groups


def planted_map_ground_truth(groups: list[list[str]]) -> GroundTruth:
    queries = [
        QueryGroundTruth(members[0], frozenset(members[1:]), exclude_self=True)
        for members in groups
    ]
    return GroundTruth(tuple(queries), EvalProtocol.MAP)


def planted_ns_ground_truth(groups: list[list[str]]) -> GroundTruth:
    queries = [
        QueryGroundTruth(member, frozenset(members))
        for members in groups
        for member in members
    ]
    return GroundTruth(tuple(queries), EvalProtocol.NS)
