import math

import numpy as np
import pytest

from src.core.errors import NoSamplerError
from src.core.lattice import get_grid
from src.core.phases import (
    CorrelationLaw,
    correlation_oracle,
    derive_seed,
    frozen_family,
    get_correlation_shape,
    sample_phase_family,
    sample_phase_path,
    sample_static_phases,
)


def test_derive_seed_is_deterministic_and_keyed():
    assert derive_seed(7, 1, 0) == derive_seed(7, 1, 0)
    assert derive_seed(7, 1, 0) != derive_seed(7, 1, 1)
    assert derive_seed(7, 1, 0) != derive_seed(8, 1, 0)


def test_static_phases_are_antisymmetric():
    phases = sample_static_phases(42, 6)
    grid = get_grid(6)
    for i, j in np.argwhere(grid.mask):
        k = grid.wavevector(i, j)
        total = (phases.phase(k) + phases.phase(-k)) % (2 * math.pi)
        assert min(total, 2 * math.pi - total) < 1e-12
    assert np.all(phases.phases[~grid.mask] == 0)
    assert np.all((phases.phases >= 0) & (phases.phases < 2 * math.pi))


def test_static_phases_reproducible():
    a = sample_static_phases(3, 5)
    b = sample_static_phases(3, 5)
    c = sample_static_phases(4, 5)
    assert np.array_equal(a.phases, b.phases)
    assert not np.array_equal(a.phases, c.phases)
    with pytest.raises(ValueError):
        sample_static_phases(3, 0)


def test_cis_conjugate_pairs():
    cis = sample_static_phases(11, 4).cis()
    assert np.allclose(cis, np.conj(cis[::-1, ::-1]))


def test_phase_mean_is_uniform():
    # mean of e^{i phi} over many upper half-plane modes should be near 0
    phases = sample_static_phases(5, 40)
    grid = get_grid(40)
    values = np.exp(1j * phases.phases[grid.upper])
    assert abs(values.mean()) < 4 / math.sqrt(len(values))


@pytest.mark.parametrize("shape,s,expected", [
    ("constant", 3.0, 1.0),
    ("gaussian", 1.0, math.exp(-0.5)),
    ("sech", 1.0, 1 / math.cosh(1.0)),
])
def test_shape_values(shape, s, expected):
    assert float(get_correlation_shape(shape).value(s)) == pytest.approx(expected)


def test_unknown_shape():
    with pytest.raises(ValueError):
        get_correlation_shape("lorentzian")


@pytest.mark.parametrize("shape,derivs", [
    ("constant", [1.0, 0.0, 0.0, 0.0]),
    ("gaussian", [1.0, 0.0, -1.0, 0.0, 3.0]),
    ("sech", [1.0, 0.0, -1.0, 0.0, 5.0]),
])
def test_derivatives_at_zero(shape, derivs):
    phi = get_correlation_shape(shape)
    for n, d in enumerate(derivs):
        assert phi.derivative_at_zero(n) == pytest.approx(d, abs=1e-12)


def test_sech_derivative_matches_finite_difference():
    phi = get_correlation_shape("sech")
    s, h = 0.7, 1e-5
    fd = (phi.value(s + h) - phi.value(s - h)) / (2 * h)
    assert float(phi.derivative(1, s)) == pytest.approx(float(fd), rel=1e-8)


def test_correlation_law_validation():
    assert float(CorrelationLaw(chi=2.0, eta=1.0).chi_k(3.0)) == pytest.approx(6.0)
    with pytest.raises(ValueError):
        CorrelationLaw(eta=2.0)
    with pytest.raises(ValueError):
        CorrelationLaw(chi=0.0)


def test_correlation_oracle():
    law = CorrelationLaw(shape="gaussian", chi=0.5, eta=1.0)
    # chi_k = 0.5 * 5 = 2.5
    assert correlation_oracle(law, (3, 4), 0.4) == pytest.approx(math.exp(-0.5))
    assert correlation_oracle(CorrelationLaw(), (3, 4), 10.0) == 1.0
    with pytest.raises(ValueError):
        correlation_oracle(law, (3, 4), -1.0)


def test_phase_path_constant_is_frozen():
    law = CorrelationLaw()
    path = sample_phase_path(9, (2, 1), law, [0.0, 0.5, 1.0])
    assert np.allclose(path.values, path.values[0])


def test_phase_path_mirror():
    law = CorrelationLaw(shape="gaussian", chi=1.0)
    times = np.linspace(0, 1, 5)
    a = sample_phase_path(9, (2, 1), law, times)
    b = sample_phase_path(9, (-2, -1), law, times)
    assert np.allclose(a.values, -b.values)


def test_phase_path_rejects_sech_and_bad_times():
    with pytest.raises(NoSamplerError):
        sample_phase_path(1, (1, 0), CorrelationLaw(shape="sech"), [0.0, 1.0])
    with pytest.raises(ValueError):
        sample_phase_path(1, (1, 0), CorrelationLaw(), [0.0, 0.0])
    with pytest.raises(ValueError):
        sample_phase_path(1, (0, 0), CorrelationLaw(), [0.0, 1.0])


def test_gaussian_path_increment_statistics():
    law = CorrelationLaw(shape="gaussian", chi=1.0, eta=0.0)
    dt = 0.8
    values = np.array([
        np.exp(1j * np.diff(sample_phase_path(derive_seed(3, n), (1, 2), law, [0.0, dt]).values)[0])
        for n in range(4000)
    ])
    assert values.mean().real == pytest.approx(correlation_oracle(law, (1, 2), dt), abs=0.05)


def test_phase_family():
    law = CorrelationLaw(shape="gaussian", chi=1.0, eta=0.5)
    family = sample_phase_family(12, 5, law)
    grid = get_grid(5)
    assert not family.is_frozen
    assert np.allclose(family.rates, -family.rates[::-1, ::-1])
    path = family.path((1, 2), [0.0, 1.0, 2.0])
    assert path.values[2] - path.values[1] == pytest.approx(path.values[1] - path.values[0])
    assert np.allclose(np.abs(family.cis_at(0.3))[grid.mask], 1.0)
    with pytest.raises(NoSamplerError):
        sample_phase_family(12, 5, CorrelationLaw(shape="sech"))


def test_frozen_family_keeps_phases():
    phases = sample_static_phases(21, 4)
    family = frozen_family(phases)
    assert family.is_frozen
    assert family.k_max == 4
    assert np.array_equal(family.phases_at(10.0), phases.phases)
    assert sample_phase_family(21, 4, CorrelationLaw()).is_frozen


def test_static_phase_mean_over_seeds():
    n = 2000
    values = np.array([np.exp(1j * sample_static_phases(derive_seed(17, s), 2).phase((1, 1))) for s in range(n)])
    assert abs(values.mean()) < 4 / math.sqrt(n)


def test_phases_of_distinct_modes_are_independent():
    n = 2000
    law = CorrelationLaw(shape="gaussian", chi=1.0, eta=0.0)
    pairs = [((1, 0), (0, 1)), ((1, 1), (2, -1)), ((1, 0), (-1, 1))]
    for j, k in pairs:
        static = np.array([
            np.exp(1j * (sample_static_phases(s, 2).phase(j) - sample_static_phases(s, 2).phase(k))) for s in range(n)
        ])
        assert abs(static.mean()) < 4 / math.sqrt(n)
        moving = []
        for s in range(n):
            family = sample_phase_family(s, 2, law)
            moving.append(np.exp(1j * (family.path(j, [0.4]).values[0] - family.path(k, [1.1]).values[0])))
        assert abs(np.mean(moving)) < 4 / math.sqrt(n)


def test_phase_increments_are_stationary():
    n = 2000
    law = CorrelationLaw(shape="gaussian", chi=1.0, eta=0.0)
    early, late = [], []
    for s in range(n):
        v = sample_phase_path(derive_seed(23, s), (1, 2), law, [0.0, 0.5, 0.7, 1.2]).values
        early.append(np.exp(1j * (v[1] - v[0])))
        late.append(np.exp(1j * (v[3] - v[2])))
    early, late = np.array(early), np.array(late)
    assert np.allclose(early, late)
    expected = correlation_oracle(law, (1, 2), 0.5)
    assert abs(early.mean() - expected) < 4 / math.sqrt(n)
    assert abs(late.mean() - expected) < 4 / math.sqrt(n)


@pytest.mark.parametrize("shape", ["gaussian", "sech"])
def test_oracle_finite_differences(shape):
    law = CorrelationLaw(shape=shape, chi=1.0, eta=0.0)
    phi = get_correlation_shape(shape)
    h = 1e-3

    def oracle(dt):
        return correlation_oracle(law, (1, 0), dt)

    # Phi is even, so the one-sided difference at 0 is h Phi''(0)/2 up to O(h^3)
    assert (oracle(h) - oracle(0.0)) / h == pytest.approx(0.5 * h * phi.derivative_at_zero(2), abs=1e-6)
    assert 2 * (oracle(h) - oracle(0.0)) / h ** 2 == pytest.approx(phi.derivative_at_zero(2), abs=1e-6)
    fd = (oracle(0.5 + h) - oracle(0.5 - h)) / (2 * h)
    assert fd == pytest.approx(float(phi.derivative(1, 0.5)), abs=1e-6)
