"""Tests for the Tukey bisquare family and the robust scale estimators."""

import numpy as np
import pytest

from errors import EmptyResiduals
from parameter_registry import MAD_CONSISTENCY, S_SCALE_NORMALIZER, TUKEY_C_M, TUKEY_C_S
from robust_estimators import (
    mad_scale,
    s_scale_update,
    s_weight,
    tukey_psi,
    tukey_rho,
    tukey_weight,
)


@pytest.mark.parametrize("c", [TUKEY_C_M, TUKEY_C_S])
def test_closed_form_checkpoints(c):
    assert float(tukey_rho(c, c)) == pytest.approx(c * c / 6.0, rel=1e-14)
    assert float(tukey_rho(0.0, c)) == 0.0
    assert float(tukey_weight(0.0, c)) == 1.0
    assert float(tukey_weight(c, c)) == 0.0
    assert float(s_weight(0.0, c)) == 0.5
    assert float(s_weight(c, c)) == pytest.approx(1.0 / 6.0, rel=1e-14)


@pytest.mark.parametrize("c", [TUKEY_C_M, TUKEY_C_S])
def test_rho_is_flat_beyond_cutoff(c):
    u = np.array([c * 1.01, 2 * c, -10 * c])
    np.testing.assert_array_equal(tukey_rho(u, c), np.full(3, c * c / 6.0))
    np.testing.assert_array_equal(tukey_weight(u, c), np.zeros(3))
    np.testing.assert_array_equal(tukey_psi(u, c), np.zeros(3))


@pytest.mark.parametrize("c", [TUKEY_C_M, TUKEY_C_S])
def test_psi_is_derivative_of_rho(c):
    h = 1e-6
    u = np.linspace(-1.5 * c, 1.5 * c, 301)
    u = u[np.abs(np.abs(u) - c) > 2 * h]
    numeric = (tukey_rho(u + h, c) - tukey_rho(u - h, c)) / (2 * h)
    np.testing.assert_allclose(tukey_psi(u, c), numeric, atol=1e-6)


def test_psi_equals_u_times_weight():
    u = np.linspace(-6, 6, 101)
    np.testing.assert_array_equal(tukey_psi(u, TUKEY_C_M), u * tukey_weight(u, TUKEY_C_M))


def test_rho_is_even_and_bounded():
    u = np.linspace(0, 10, 50)
    np.testing.assert_array_equal(tukey_rho(u, TUKEY_C_M), tukey_rho(-u, TUKEY_C_M))
    assert np.all(np.diff(tukey_rho(u, TUKEY_C_M)) >= 0)
    assert tukey_rho(u, TUKEY_C_M).max() <= TUKEY_C_M ** 2 / 6.0


def test_s_weight_matches_rho_over_u_squared():
    u = np.array([0.3, -1.0, 1.4, 5.0])
    np.testing.assert_allclose(s_weight(u, TUKEY_C_S), tukey_rho(u, TUKEY_C_S) / u ** 2)


def test_scalar_input_keeps_scalar_shape():
    assert np.shape(tukey_weight(1.0, TUKEY_C_M)) == ()


@pytest.mark.parametrize("fn", [tukey_rho, tukey_psi, tukey_weight, s_weight])
def test_non_positive_tuning_constant(fn):
    with pytest.raises(ValueError):
        fn(1.0, 0.0)


# ============================================================================
# SCALE ESTIMATES
# ============================================================================

def test_mad_scale_ignores_a_gross_outlier():
    # median 3, absolute deviations [2, 1, 0, 1, 97] -> MAD 1
    assert mad_scale([1.0, 2.0, 3.0, 4.0, 100.0]) == pytest.approx(1.0 / MAD_CONSISTENCY)


def test_mad_scale_is_consistent_for_gaussian_noise():
    rng = np.random.default_rng(0)
    assert mad_scale(rng.normal(0.0, 2.0, size=200000)) == pytest.approx(2.0, rel=0.01)


def test_mad_scale_floor():
    assert mad_scale(np.zeros(10), floor=0.1) == 0.1


def test_s_scale_update():
    d = np.ones(4)
    assert s_scale_update(np.ones(4), d) == pytest.approx(np.sqrt(1.0 / S_SCALE_NORMALIZER))
    assert s_scale_update(np.ones(4), d, count=8) == pytest.approx(np.sqrt(0.5 / S_SCALE_NORMALIZER))
    assert s_scale_update(np.zeros(4), d, floor=0.2) == 0.2


def test_s_scale_update_needs_matching_lengths():
    with pytest.raises(ValueError):
        s_scale_update(np.ones(3), np.ones(4))


@pytest.mark.parametrize("fn", [
    lambda: mad_scale([]),
    lambda: s_scale_update([], []),
])
def test_empty_residuals(fn):
    with pytest.raises(EmptyResiduals):
        fn()
