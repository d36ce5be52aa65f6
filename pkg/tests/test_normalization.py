from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vitriever import (
    DescriptorMatrix,
    DimensionMismatchError,
    FittedNormalizer,
    NormalizationSpec,
    Scheme,
    StoreFormatError,
    ValidationError,
    apply,
    fit,
    fit_apply,
    load_normalizer,
    save_normalizer,
)

from conftest import random_matrix
from oracles import oracle_quantile


def mat(rows) -> DescriptorMatrix:
    return DescriptorMatrix(np.asarray(rows, dtype=np.float32))


class TestFit:
    def test_robust_quantiles_of_integer_column(self):
        # oracle: linear interpolation over sorted [0..4] gives q25=1.0, q75=3.0
        fitted = fit(NormalizationSpec(Scheme.ROBUST), mat([[0], [1], [2], [3], [4]]))
        np.testing.assert_allclose(fitted.column_stats, [[1.0, 3.0]])

    def test_robust_matches_interpolation_oracle(self, rng):
        reference = random_matrix(rng, 37, 5)
        spec = NormalizationSpec(Scheme.ROBUST, robust_q_low=0.1, robust_q_high=0.9)
        fitted = fit(spec, reference)
        for col in range(5):
            values = reference.data[:, col].astype(np.float64).tolist()
            assert fitted.column_stats[col, 0] == pytest.approx(oracle_quantile(values, 0.1), abs=1e-12)
            assert fitted.column_stats[col, 1] == pytest.approx(oracle_quantile(values, 0.9), abs=1e-12)

    def test_l2_axis0_column_norm(self):
        fitted = fit(NormalizationSpec(Scheme.L2_AXIS0), mat([[3], [4]]))
        np.testing.assert_allclose(fitted.column_stats, [5.0])

    def test_l1_axis0_column_norm_uses_absolute_values(self):
        fitted = fit(NormalizationSpec(Scheme.L1_AXIS0), mat([[3], [-4]]))
        np.testing.assert_allclose(fitted.column_stats, [7.0])

    def test_axis1_schemes_are_stateless(self):
        for scheme in (Scheme.L1_AXIS1, Scheme.L2_AXIS1, Scheme.NONE):
            fitted = fit(NormalizationSpec(scheme), mat([[1.0, 2.0]]))
            assert fitted.column_stats is None
            assert fitted.dim is None

    def test_stateless_fit_accepts_empty_reference(self):
        empty = DescriptorMatrix(np.empty((0, 3), dtype=np.float32))
        assert fit(NormalizationSpec(Scheme.L2_AXIS1), empty).column_stats is None

    def test_fitted_scheme_rejects_empty_reference(self):
        empty = DescriptorMatrix(np.empty((0, 3), dtype=np.float32))
        for scheme in (Scheme.L1_AXIS0, Scheme.L2_AXIS0, Scheme.ROBUST):
            with pytest.raises(ValidationError, match="empty reference"):
                fit(NormalizationSpec(scheme), empty)

    def test_invalid_quantile_settings(self):
        with pytest.raises(ValidationError):
            NormalizationSpec(Scheme.ROBUST, robust_q_low=0.75, robust_q_high=0.25)
        with pytest.raises(ValidationError):
            NormalizationSpec(Scheme.ROBUST, robust_q_low=0.0)
        with pytest.raises(ValidationError):
            NormalizationSpec(Scheme.ROBUST, robust_q_high=1.5)


class TestApply:
    def test_l2_axis1_unit_triangle(self):
        result, warnings = fit_apply(NormalizationSpec(Scheme.L2_AXIS1), mat([[3, 4]]), mat([[3, 4]]))
        np.testing.assert_allclose(result.data, [[0.6, 0.8]])
        assert warnings == 0

    def test_l1_axis1_mixed_signs(self):
        result, _ = fit_apply(NormalizationSpec(Scheme.L1_AXIS1), mat([[1, -1, 2]]), mat([[1, -1, 2]]))
        np.testing.assert_allclose(result.data, [[0.25, -0.25, 0.5]])

    def test_robust_endpoints_map_to_unit_interval(self):
        fitted = fit(NormalizationSpec(Scheme.ROBUST), mat([[0], [1], [2], [3], [4]]))
        result, _ = apply(fitted, mat([[1.0], [3.0]]))
        np.testing.assert_allclose(result.data, [[0.0], [1.0]], atol=1e-12)

    def test_none_is_identity(self, rng):
        matrix = random_matrix(rng, 4, 6)
        result, warnings = fit_apply(NormalizationSpec(Scheme.NONE), matrix, matrix)
        np.testing.assert_array_equal(result.data, matrix.data.astype(np.float64))
        assert warnings == 0

    def test_axis0_divides_columns_by_reference_norms(self):
        reference = mat([[3, 1], [4, 1]])
        fitted = fit(NormalizationSpec(Scheme.L2_AXIS0), reference)
        result, _ = apply(fitted, mat([[10, 10]]))
        np.testing.assert_allclose(result.data, [[2.0, 10.0 / np.sqrt(2.0)]])

    def test_input_not_mutated_and_output_float64(self, rng):
        matrix = random_matrix(rng, 5, 4)
        before = matrix.data.copy()
        result, _ = fit_apply(NormalizationSpec(Scheme.L2_AXIS1), matrix, matrix)
        np.testing.assert_array_equal(matrix.data, before)
        assert result.data.dtype == np.float64

    def test_dimension_mismatch(self, rng):
        fitted = fit(NormalizationSpec(Scheme.L2_AXIS0), random_matrix(rng, 3, 4))
        with pytest.raises(DimensionMismatchError):
            apply(fitted, random_matrix(rng, 3, 5))

    @settings(max_examples=25, deadline=None)
    @given(
        n=st.integers(1, 12),
        dim=st.integers(1, 10),
        scheme=st.sampled_from(list(Scheme)),
        seed=st.integers(0, 2**31),
    )
    def test_shape_preserved_for_every_scheme(self, n, dim, scheme, seed):
        matrix = random_matrix(np.random.default_rng(seed), n, dim)
        result, _ = fit_apply(NormalizationSpec(scheme), matrix, matrix)
        assert result.data.shape == matrix.data.shape

    def test_l2_axis1_rows_have_unit_norm(self, rng):
        matrix = random_matrix(rng, 40, 17)
        result, _ = fit_apply(NormalizationSpec(Scheme.L2_AXIS1), matrix, matrix)
        np.testing.assert_allclose(np.linalg.norm(result.data, axis=1), 1.0, atol=1e-6)

    def test_l1_axis1_rows_sum_to_unit_absolute_mass(self, rng):
        matrix = random_matrix(rng, 40, 17)
        result, _ = fit_apply(NormalizationSpec(Scheme.L1_AXIS1), matrix, matrix)
        np.testing.assert_allclose(np.abs(result.data).sum(axis=1), 1.0, atol=1e-6)

    def test_l2_axis1_idempotent(self, rng):
        matrix = random_matrix(rng, 20, 9)
        spec = NormalizationSpec(Scheme.L2_AXIS1)
        once, _ = fit_apply(spec, matrix, matrix)
        twice, _ = fit_apply(spec, once, once)
        np.testing.assert_allclose(twice.data, once.data, atol=1e-6)

    def test_robust_self_application_maps_quantiles(self, rng):
        matrix = random_matrix(rng, 60, 8, scale=3.0)
        spec = NormalizationSpec(Scheme.ROBUST, robust_q_low=0.2, robust_q_high=0.8)
        fitted = fit(spec, matrix)
        quantile_rows = mat(fitted.column_stats.T)
        result, _ = apply(fitted, quantile_rows)
        np.testing.assert_allclose(result.data[0], 0.0, atol=1e-6)
        np.testing.assert_allclose(result.data[1], 1.0, atol=1e-6)

    def test_deterministic(self, rng):
        matrix = random_matrix(rng, 25, 7)
        spec = NormalizationSpec(Scheme.ROBUST)
        a, _ = fit_apply(spec, matrix, matrix)
        b, _ = fit_apply(spec, matrix, matrix)
        np.testing.assert_array_equal(a.data, b.data)


class TestDegenerate:
    def test_zero_row_passes_through_with_warning(self):
        matrix = mat([[0, 0, 0], [3, 0, 4]])
        result, warnings = fit_apply(NormalizationSpec(Scheme.L2_AXIS1), matrix, matrix)
        np.testing.assert_array_equal(result.data[0], [0, 0, 0])
        np.testing.assert_allclose(result.data[1], [0.6, 0.0, 0.8])
        assert warnings == 1

    def test_zero_column_passes_through_with_warning(self):
        matrix = mat([[0, 2], [0, 2]])
        result, warnings = fit_apply(NormalizationSpec(Scheme.L1_AXIS0), matrix, matrix)
        np.testing.assert_allclose(result.data, [[0, 0.5], [0, 0.5]])
        assert warnings == 1

    def test_robust_constant_column_subtracts_low_quantile(self):
        matrix = mat([[5, 0], [5, 2], [5, 4]])
        result, warnings = fit_apply(NormalizationSpec(Scheme.ROBUST), matrix, matrix)
        assert warnings == 1
        np.testing.assert_array_equal(result.data[:, 0], [0, 0, 0])
        assert np.isfinite(result.data).all()

    def test_no_nan_or_inf_on_fully_degenerate_input(self):
        matrix = mat(np.zeros((4, 3)))
        for scheme in Scheme:
            result, _ = fit_apply(NormalizationSpec(scheme), matrix, matrix)
            assert np.isfinite(result.data).all(), scheme


class TestCompatibilityVariants:
    def test_l1_signed_sum_divides_by_signed_total(self):
        spec = NormalizationSpec(Scheme.L1_AXIS1, l1_signed_sum=True)
        result, _ = fit_apply(spec, mat([[1, -1, 2]]), mat([[1, -1, 2]]))
        np.testing.assert_allclose(result.data, [[0.5, -0.5, 1.0]])

    def test_l1_signed_sum_near_zero_total_passes_through(self):
        spec = NormalizationSpec(Scheme.L1_AXIS1, l1_signed_sum=True)
        result, warnings = fit_apply(spec, mat([[1, -1]]), mat([[1, -1]]))
        np.testing.assert_array_equal(result.data, [[1.0, -1.0]])
        assert warnings == 1

    def test_l2_squared_omits_square_root(self):
        spec = NormalizationSpec(Scheme.L2_AXIS1, l2_squared=True)
        result, _ = fit_apply(spec, mat([[3, 4]]), mat([[3, 4]]))
        np.testing.assert_allclose(result.data, [[3 / 25, 4 / 25]])

    def test_l2_squared_axis0(self):
        spec = NormalizationSpec(Scheme.L2_AXIS0, l2_squared=True)
        fitted = fit(spec, mat([[3], [4]]))
        np.testing.assert_allclose(fitted.column_stats, [25.0])


class TestSidecar:
    @pytest.mark.parametrize("scheme", list(Scheme))
    def test_roundtrip(self, tmp_path, rng, scheme):
        spec = NormalizationSpec(scheme, robust_q_low=0.1, robust_q_high=0.6, l1_signed_sum=True)
        fitted = fit(spec, random_matrix(rng, 9, 5))
        path = tmp_path / "norm.vitn"
        save_normalizer(fitted, path)
        back = load_normalizer(path)
        assert back.spec == spec
        if fitted.column_stats is None:
            assert back.column_stats is None
        else:
            np.testing.assert_array_equal(back.column_stats, fitted.column_stats)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "norm.vitn"
        path.write_bytes(b"XXXX" + b"\0" * 40)
        with pytest.raises(StoreFormatError, match="magic"):
            load_normalizer(path)

    def test_truncated(self, tmp_path, rng):
        fitted = fit(NormalizationSpec(Scheme.ROBUST), random_matrix(rng, 9, 5))
        path = tmp_path / "norm.vitn"
        save_normalizer(fitted, path)
        bad = tmp_path / "bad.vitn"
        bad.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(StoreFormatError, match="length"):
            load_normalizer(bad)

    def test_stats_validation(self):
        with pytest.raises(ValidationError, match="q_high"):
            FittedNormalizer(NormalizationSpec(Scheme.ROBUST), np.array([[2.0, 1.0]]))
        with pytest.raises(ValidationError, match="no fitted state"):
            FittedNormalizer(NormalizationSpec(Scheme.L2_AXIS1), np.array([1.0]))
        with pytest.raises(ValidationError, match="requires fitted"):
            FittedNormalizer(NormalizationSpec(Scheme.ROBUST), None)
