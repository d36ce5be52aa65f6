"""Descriptor normalization schemes and quantile-based robust scaling.

Five schemes are supported: L1 and L2 norms applied per row (axis 1, each
descriptor independently) or per column (axis 0, each feature across the
reference set), and robust scaling which maps each column affinely so that
its low/high quantiles land on 0 and 1. Axis-0 and robust schemes are fitted
on a reference (index) set and re-applied unchanged to query descriptors so
both share one coordinate transform.

All accumulation happens in float64 and the output matrix is float64: the
rounding from a float32 round-trip is large enough to perturb downstream
distance rankings. Degenerate denominators (zero row/column norm, equal
quantiles) below `DEGENERATE_EPS` leave the affected row or column unscaled
and are counted instead of raising, so a constant feature cannot abort a
batch run.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import DimensionMismatchError, StoreFormatError, ValidationError
from .store import DescriptorMatrix

DEGENERATE_EPS = 1e-12

SIDECAR_MAGIC = b"VITN"
SIDECAR_VERSION = 1


class Scheme(Enum):
    """Normalization scheme identifiers, in the grid's row order."""

    L2_AXIS1 = "l2-axis1"
    L2_AXIS0 = "l2-axis0"
    L1_AXIS1 = "l1-axis1"
    L1_AXIS0 = "l1-axis0"
    ROBUST = "robust"
    NONE = "none"

    @classmethod
    def parse(cls, name: str) -> "Scheme":
        try:
            return cls(name.strip().lower())
        except ValueError:
            valid = ", ".join(s.value for s in cls)
            raise ValidationError(f"unknown normalization scheme {name!r} (expected one of {valid})")

    @property
    def display_name(self) -> str:
        return _DISPLAY_NAMES[self]

    @property
    def is_fitted(self) -> bool:
        """Whether the scheme carries per-column statistics from a reference set."""
        return self in (Scheme.L1_AXIS0, Scheme.L2_AXIS0, Scheme.ROBUST)


_DISPLAY_NAMES = {
    Scheme.L2_AXIS1: "L2 Axis=1",
    Scheme.L2_AXIS0: "L2 Axis=0",
    Scheme.L1_AXIS1: "L1 Axis=1",
    Scheme.L1_AXIS0: "L1 Axis=0",
    Scheme.ROBUST: "ROBUST",
    Scheme.NONE: "none",
}

_SCHEME_TAGS = {
    Scheme.NONE: 0,
    Scheme.L1_AXIS1: 1,
    Scheme.L2_AXIS1: 2,
    Scheme.L1_AXIS0: 3,
    Scheme.L2_AXIS0: 4,
    Scheme.ROBUST: 5,
}
_TAG_SCHEMES = {tag: scheme for scheme, tag in _SCHEME_TAGS.items()}


@dataclass(frozen=True)
class NormalizationSpec:
    """Scheme selection plus robust-quantile and compatibility settings.

    `l1_signed_sum` divides by the signed sum instead of the sum of absolute
    values; `l2_squared` omits the square root in the L2 denominator. Both
    exist only for A/B comparison against the literal formula variants and
    default to the standard norms.
    """

    scheme: Scheme = Scheme.NONE
    robust_q_low: float = 0.25
    robust_q_high: float = 0.75
    l1_signed_sum: bool = False
    l2_squared: bool = False

    def __post_init__(self) -> None:
        if not (0.0 < self.robust_q_low < 1.0 and 0.0 < self.robust_q_high < 1.0):
            raise ValidationError("robust quantiles must lie in (0, 1)")
        if self.robust_q_low >= self.robust_q_high:
            raise ValidationError(
                f"robust_q_low ({self.robust_q_low}) must be below robust_q_high ({self.robust_q_high})"
            )


@dataclass(frozen=True)
class FittedNormalizer:
    """A spec plus the per-column statistics fitted from a reference set.

    `column_stats` is None for stateless schemes (axis-1 and none), shape (D,)
    for axis-0 column norms, and shape (D, 2) holding (q_low, q_high) value
    pairs for robust scaling.
    """

    spec: NormalizationSpec
    column_stats: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.spec.scheme.is_fitted:
            if self.column_stats is None:
                raise ValidationError(f"{self.spec.scheme.value} requires fitted column statistics")
            stats = np.ascontiguousarray(np.asarray(self.column_stats, dtype=np.float64))
            expected_ndim = 2 if self.spec.scheme is Scheme.ROBUST else 1
            if stats.ndim != expected_ndim:
                raise ValidationError(
                    f"column_stats for {self.spec.scheme.value} must be {expected_ndim}-D"
                )
            if self.spec.scheme is Scheme.ROBUST:
                if stats.shape[1] != 2:
                    raise ValidationError("robust column_stats must have shape (D, 2)")
                if np.any(stats[:, 1] < stats[:, 0]):
                    raise ValidationError("robust q_high values must be >= q_low values")
            stats.setflags(write=False)
            object.__setattr__(self, "column_stats", stats)
        elif self.column_stats is not None:
            raise ValidationError(f"{self.spec.scheme.value} carries no fitted state")

    @property
    def dim(self) -> int | None:
        """Fitted dimension, or None for stateless schemes."""
        if self.column_stats is None:
            return None
        return int(self.column_stats.shape[0])


class ApplyResult(NamedTuple):
    matrix: DescriptorMatrix
    degenerate_count: int


def fit(spec: NormalizationSpec, reference: DescriptorMatrix) -> FittedNormalizer:
    """Fit a normalizer on a reference set.

    Axis-1 schemes and `none` need no statistics and accept any reference,
    including an empty one. Axis-0 schemes record per-column L1/L2 norms;
    robust records per-column empirical quantiles, interpolated linearly
    between order statistics (position q * (n - 1) in the sorted column).
    """
    if not spec.scheme.is_fitted:
        return FittedNormalizer(spec)
    if reference.count < 1:
        raise ValidationError(f"{spec.scheme.value} cannot be fitted on an empty reference set")

    data = reference.data.astype(np.float64)
    if spec.scheme is Scheme.L1_AXIS0:
        if spec.l1_signed_sum:
            stats = data.sum(axis=0)
        else:
            stats = np.abs(data).sum(axis=0)
    elif spec.scheme is Scheme.L2_AXIS0:
        stats = (data * data).sum(axis=0)
        if not spec.l2_squared:
            stats = np.sqrt(stats)
    else:
        quantiles = np.quantile(
            data, [spec.robust_q_low, spec.robust_q_high], axis=0, method="linear"
        )
        stats = quantiles.T
    return FittedNormalizer(spec, stats)


def apply(normalizer: FittedNormalizer, matrix: DescriptorMatrix) -> ApplyResult:
    """Apply a fitted normalizer, returning a new float64 matrix.

    The input is never mutated and the output has the same shape. Returns the
    number of rows (axis-1) or columns (axis-0/robust) whose denominator was
    degenerate and therefore passed through unscaled.
    """
    spec = normalizer.spec
    fitted_dim = normalizer.dim
    if fitted_dim is not None and matrix.dim != fitted_dim:
        raise DimensionMismatchError(
            f"matrix dimension {matrix.dim} does not match fitted dimension {fitted_dim}"
        )

    out = matrix.data.astype(np.float64)
    degenerate = 0

    if spec.scheme is Scheme.NONE:
        pass
    elif spec.scheme in (Scheme.L1_AXIS1, Scheme.L2_AXIS1):
        if spec.scheme is Scheme.L1_AXIS1:
            if spec.l1_signed_sum:
                denom = out.sum(axis=1)
            else:
                denom = np.abs(out).sum(axis=1)
        else:
            denom = (out * out).sum(axis=1)
            if not spec.l2_squared:
                denom = np.sqrt(denom)
        safe = np.abs(denom) >= DEGENERATE_EPS
        degenerate = int(matrix.count - safe.sum())
        out[safe] /= denom[safe, None]
    elif spec.scheme in (Scheme.L1_AXIS0, Scheme.L2_AXIS0):
        denom = normalizer.column_stats
        safe = np.abs(denom) >= DEGENERATE_EPS
        degenerate = int(matrix.dim - safe.sum())
        out[:, safe] /= denom[safe]
    else:
        q_low = normalizer.column_stats[:, 0]
        q_high = normalizer.column_stats[:, 1]
        scale = q_high - q_low
        safe = np.abs(scale) >= DEGENERATE_EPS
        degenerate = int(matrix.dim - safe.sum())
        out -= q_low
        out[:, safe] /= scale[safe]

    return ApplyResult(DescriptorMatrix(out), degenerate)


def fit_apply(
    spec: NormalizationSpec, reference: DescriptorMatrix, matrix: DescriptorMatrix
) -> ApplyResult:
    """Convenience wrapper: fit on `reference`, apply to `matrix`."""
    return apply(fit(spec, reference), matrix)


def save_normalizer(normalizer: FittedNormalizer, path: str | Path) -> None:
    """Write the binary sidecar so a fit can be re-applied to later extractions."""
    spec = normalizer.spec
    flags = (1 if spec.l1_signed_sum else 0) | (2 if spec.l2_squared else 0)
    stats = normalizer.column_stats
    dim = 0 if stats is None else stats.shape[0]
    flat = np.empty(0, dtype=np.float64) if stats is None else stats.reshape(-1)
    with open(path, "wb") as fh:
        fh.write(SIDECAR_MAGIC)
        fh.write(
            struct.pack(
                "<IBBddII",
                SIDECAR_VERSION,
                _SCHEME_TAGS[spec.scheme],
                flags,
                spec.robust_q_low,
                spec.robust_q_high,
                dim,
                flat.size,
            )
        )
        fh.write(np.ascontiguousarray(flat, dtype="<f8").tobytes())


def load_normalizer(path: str | Path) -> FittedNormalizer:
    """Read a sidecar written by `save_normalizer`."""
    blob = Path(path).read_bytes()
    fixed = struct.calcsize("<IBBddII")
    if len(blob) < 4 + fixed:
        raise StoreFormatError(f"{path}: sidecar shorter than its header")
    if blob[:4] != SIDECAR_MAGIC:
        raise StoreFormatError(f"{path}: bad sidecar magic {blob[:4]!r}")
    version, tag, flags, q_low, q_high, dim, n_stats = struct.unpack_from("<IBBddII", blob, 4)
    if version != SIDECAR_VERSION:
        raise StoreFormatError(f"{path}: unsupported sidecar version {version}")
    if tag not in _TAG_SCHEMES:
        raise StoreFormatError(f"{path}: unknown scheme tag {tag}")
    scheme = _TAG_SCHEMES[tag]
    expected = 4 + fixed + n_stats * 8
    if len(blob) != expected:
        raise StoreFormatError(f"{path}: sidecar length {len(blob)}, expected {expected}")
    spec = NormalizationSpec(
        scheme=scheme,
        robust_q_low=q_low,
        robust_q_high=q_high,
        l1_signed_sum=bool(flags & 1),
        l2_squared=bool(flags & 2),
    )
    if not scheme.is_fitted:
        if n_stats:
            raise StoreFormatError(f"{path}: stateless scheme with {n_stats} statistics")
        return FittedNormalizer(spec)
    flat = np.frombuffer(blob, dtype="<f8", count=n_stats, offset=4 + fixed)
    if scheme is Scheme.ROBUST:
        if n_stats != 2 * dim:
            raise StoreFormatError(f"{path}: robust sidecar needs 2*{dim} statistics, has {n_stats}")
        stats = flat.reshape(dim, 2).copy()
    else:
        if n_stats != dim:
            raise StoreFormatError(f"{path}: sidecar needs {dim} statistics, has {n_stats}")
        stats = flat.copy()
    return FittedNormalizer(spec, stats)
