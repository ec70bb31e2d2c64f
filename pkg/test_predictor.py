import math

import numpy as np
import pytest

from src.core.errors import OutOfTheoryError
from src.core.fields import SourceSpec, VelocitySpec, source_functionals
from src.core.predictor import (
    BELOW_VALIDITY,
    LIMIT_REPLACED,
    angular_closed_form,
    angular_integral,
    annulus_cell_constant,
    dyadic_coefficient,
    expected_band_power,
    expected_mode_power,
    gamma_envelope,
    lattice_band_expectation,
    m_beta,
    mode_power_sum,
    predict_bands,
    sandwich_bounds,
    smallness_diagnostics,
    variance_band_bound,
    velocity_band_power,
    lattice_annulus_error,
)

SOURCE = SourceSpec(kappa_g=4.0)
G0 = 320.0


@pytest.mark.parametrize("x,expected", [(-6.0, 0.1640625), (-2.0, 0.375), (-14.0, 0.0714242)])
def test_dyadic_coefficient(x, expected):
    value, limit = dyadic_coefficient(x)
    assert value == pytest.approx(expected, rel=1e-6)
    assert not limit


def test_dyadic_coefficient_limit():
    value, limit = dyadic_coefficient(0.0)
    assert value == pytest.approx(math.log(2))
    assert limit


def test_expected_mode_power_single_source_pair():
    source = SourceSpec(kappa_g=2.0, modes=[(1, 0)])
    est = expected_mode_power((0, 5), source, 1.0, -3.0, "phi1")
    assert est.value == pytest.approx(50 / 17576)
    assert est.flags == ()
    vt = expected_mode_power((0, 5), source, 1.0, -3.0, "vartheta")
    assert vt.value == pytest.approx(50 / 17576 / 625)


def test_expected_mode_power_flags_low_modes():
    est = expected_mode_power((3, 0), SOURCE, 0.01, -3.0)
    assert BELOW_VALIDITY in est.flags
    with pytest.raises(ValueError):
        expected_mode_power((0, 0), SOURCE, 0.01, -3.0)
    with pytest.raises(ValueError):
        expected_mode_power((9, 0), SOURCE, 0.01, -3.0, target="psi")


def test_mode_power_sum_truncation():
    source = SourceSpec(kappa_g=2.0, modes=[(1, 0)])
    # k - j = (-1, 5) and (1, 5) both have |k-j|^2 = 26 > 25
    assert mode_power_sum([0], [5], source, -3.0, k_max=5)[0] == 0.0
    assert mode_power_sum([0], [5], source, -3.0, k_max=6)[0] == pytest.approx(50 / 17576)


def test_expected_band_power_at_beta_minus_three():
    est = expected_band_power(16, SOURCE, 0.01, -3.0)
    assert est.value == pytest.approx(0.1640625 * math.pi * G0 * 1e-4 * 16.0 ** -6)
    assert est.flags == ()
    phi1 = expected_band_power(16, SOURCE, 0.01, -3.0, "phi1")
    assert phi1.value == pytest.approx(0.375 * math.pi * G0 * 1e-4 * 16.0 ** -2)


def test_expected_band_power_flags():
    assert BELOW_VALIDITY in expected_band_power(8, SOURCE, 0.01, -3.0).flags
    assert LIMIT_REPLACED in expected_band_power(32, SOURCE, 0.01, -2.0 - 1e-13, "phi1").flags
    with pytest.raises(OutOfTheoryError):
        expected_band_power(16, SOURCE, 0.01, -1.5)


def test_variance_band_bound():
    g1 = source_functionals(SOURCE).G1
    est = variance_band_bound(16, SOURCE, 0.01, -3.0)
    assert est.value == pytest.approx(0.5 * math.pi * g1 * 0.0714242 * 1e-8 * 16.0 ** -14, rel=1e-6)


def test_lattice_expectation_tracks_continuum_law():
    for kappa, tol in ((16, 0.15), (32, 0.05)):
        lattice = lattice_band_expectation(kappa, SOURCE, 0.01, -3.0, "vartheta", 128)
        law = expected_band_power(kappa, SOURCE, 0.01, -3.0).value
        assert lattice == pytest.approx(law, rel=tol)


def test_lattice_expectation_equals_mode_sum():
    source = SourceSpec(kappa_g=2.0)
    total = 0.0
    for kx in range(-9, 10):
        for ky in range(-9, 10):
            if 16 <= kx * kx + ky * ky < 64:
                total += expected_mode_power((kx, ky), source, 0.1, -2.5, "vartheta").value
    assert lattice_band_expectation(4, source, 0.1, -2.5, "vartheta") == pytest.approx(total, rel=1e-12)


def test_velocity_band_power_conventions():
    coeff = velocity_band_power(16, 0.01, -3.0)
    domain = velocity_band_power(16, 0.01, -3.0, "domain")
    assert coeff == pytest.approx(2 * math.pi * 0.375 * 1e-4 / 16 ** 2)
    assert domain / coeff == pytest.approx(2 * math.pi)
    with pytest.raises(ValueError):
        velocity_band_power(16, 0.01, -3.0, "physical")


def test_gamma_envelope():
    assert gamma_envelope(16, -3.0, 4.0) == pytest.approx(0.0078125)
    assert gamma_envelope(2, -3.0, 4.0) == pytest.approx(2.0)
    values = gamma_envelope(np.array([2.0, 16.0]), -3.0, 4.0)
    assert list(values) == pytest.approx([2.0, 0.0078125])
    with pytest.raises(ValueError):
        gamma_envelope(0.5, -3.0, 4.0)


def test_m_beta():
    assert m_beta(100, 0.1, -3.0) == pytest.approx(math.log(10))
    assert m_beta(100, 0.1, -3.5) == pytest.approx(2.0)
    assert m_beta(20, 0.1, -2.5) == pytest.approx(2 * math.sqrt(2))
    with pytest.raises(ValueError):
        m_beta(5, 0.1, -3.0)
    with pytest.raises(ValueError):
        m_beta(100, 1.5, -3.0)


@pytest.mark.parametrize("alpha", [-6.0, -1.0, 1.0, 2.0])
def test_sandwich_bounds_hold(alpha):
    kg = 3.0
    for radius in (9.0, 15.0, 40.0):
        for angle in np.linspace(0, 2 * math.pi, 7, endpoint=False):
            k = np.array([radius * math.cos(angle), radius * math.sin(angle)])
            lo, hi = sandwich_bounds(radius, kg, alpha)
            for j in ((1, 0), (2, 2), (0, -2), (-1, 2)):
                r = (np.linalg.norm(k - np.array(j)) / radius) ** alpha
                assert lo <= r * (1 + 1e-12) and r <= hi * (1 + 1e-12)


def test_sandwich_requires_large_k():
    with pytest.raises(ValueError):
        sandwich_bounds(5.0, 2.0, 1.0)


def test_annulus_error_within_cell_bound():
    rows = [lattice_annulus_error((1, 1), kappa, -3.0) for kappa in (8, 16, 32)]
    for r in rows:
        assert r.error == pytest.approx(abs(r.lattice_sum - r.integral))
        assert r.cell_ratio == pytest.approx(r.ratio / r.kappa ** 2)
        assert r.cell_ratio <= annulus_cell_constant(-3.0)
        # the lattice sum approximates the annulus integral
        assert r.error < 0.2 * r.integral
    assert annulus_cell_constant(-3.0) == pytest.approx(96 * math.pi)
    assert lattice_annulus_error((0, 0), 8, -3.0).error == 0.0
    with pytest.raises(ValueError):
        lattice_annulus_error((5, 0), 8, -3.0)


def test_annulus_rotation_symmetry():
    a = lattice_annulus_error((1, 0), 16, -2.5)
    b = lattice_annulus_error((0, 1), 16, -2.5)
    assert a.lattice_sum == pytest.approx(b.lattice_sum, rel=1e-12)


def test_angular_identity():
    for j, n in (((1, 0), (1, 0)), ((1, 2), (3, -1)), ((0, 1), (2, 5))):
        assert angular_integral(j, n) == pytest.approx(angular_closed_form(j, n), rel=1e-10)
    # (sin w)^4 integrates to 3 pi / 4
    assert angular_closed_form((1, 0), (1, 0)) == pytest.approx(0.75 * math.pi)


def test_smallness_diagnostics_flags_large_U():
    small = smallness_diagnostics(VelocitySpec(U=1e-4, beta=-3.0, K_max=32), SOURCE)
    assert small.sup_norm_ok
    assert small.contraction_value == pytest.approx(0.01 * small.lattice_constant)
    large = smallness_diagnostics(VelocitySpec(U=10.0, beta=-3.0, K_max=32), SOURCE)
    assert not large.passes
    assert large.alpha > 1


def test_predict_bands_report():
    velocity = VelocitySpec(U=0.01, beta=-3.0, K_max=64)
    report = predict_bands(velocity, SOURCE, [8, 16, 32])
    assert report.G0 == pytest.approx(G0)
    row = report.band(16)
    assert row.expected_vartheta == pytest.approx(0.1640625 * math.pi * G0 * 1e-4 * 16.0 ** -6)
    assert row.error_budget == pytest.approx(4 / 16 + 1 / 16)
    assert BELOW_VALIDITY in report.band(8).flags
    assert report.band(32).flags == []
    with pytest.raises(KeyError):
        report.band(11)
