import numpy as np
import pytest

from src.core.config import BandLadder, EnsembleConfig, EnsembleSettings
from src.core.errors import SampleFailedError
from src.core.fields import SourceSpec, VelocitySpec
from src.core.lattice import dyadic_band
from src.core.phases import CorrelationLaw
from src.worker import _run_sample, resolve_threads, run_ensemble, sample_phases


def _config(**ensemble):
    settings = {"n_samples": 8, "seed": 5, **ensemble}
    return EnsembleConfig(
        velocity=VelocitySpec(U=0.01, beta=-3.0, K_max=16),
        source=SourceSpec(kappa_g=2.0),
        ensemble=EnsembleSettings(**settings),
        bands=BandLadder(kappas=[2.0, 4.0, 8.0]),
    )


def test_resolve_threads(monkeypatch):
    monkeypatch.delenv("BHT_LAB_THREADS", raising=False)
    assert resolve_threads() == 1
    assert resolve_threads(3) == 3
    monkeypatch.setenv("BHT_LAB_THREADS", "4")
    assert resolve_threads() == 4
    monkeypatch.setenv("BHT_LAB_THREADS", "many")
    assert resolve_threads() == 1


def test_sample_phases_are_keyed_by_index():
    config = _config()
    phi0, xi0 = sample_phases(config, 0)
    phi1, xi1 = sample_phases(config, 1)
    assert not np.array_equal(phi0.phases, phi1.phases)
    assert not np.array_equal(phi0.phases, xi0.phases)
    same = _config(identical_samples=True)
    assert np.array_equal(sample_phases(same, 0)[0].phases, sample_phases(same, 1)[0].phases)
    frozen = _config(freeze_source=True)
    assert np.array_equal(sample_phases(frozen, 0)[1].phases, sample_phases(frozen, 1)[1].phases)
    assert not np.array_equal(sample_phases(frozen, 0)[0].phases, sample_phases(frozen, 1)[0].phases)


def test_thread_count_does_not_change_results():
    config = _config()
    one = run_ensemble(config, threads=1)
    three = run_ensemble(config, threads=3)
    assert np.array_equal(one.band_powers, three.band_powers)
    assert [s.sample_mean for s in one.stats] == [s.sample_mean for s in three.stats]


def test_static_ensemble_statistics():
    result = run_ensemble(_config(), threads=2)
    assert result.mode == "static"
    assert result.band_powers.shape == (8, 3)
    assert [r.index for r in result.samples] == list(range(8))
    for i, st in enumerate(result.stats):
        assert st.mode_count == dyadic_band(st.kappa, 16).count
        assert st.sample_mean == pytest.approx(result.band_powers[:, i].mean())
    names = [c.name for c in result.checks.checks]
    assert "mean vs lattice kappa=8" in names
    assert "envelope violations" in names
    assert "mean vs law kappa=2" not in names
    assert set(result.fits) >= {"mean", "density", "per-mode"}


def test_identical_samples_have_no_spread():
    result = run_ensemble(_config(identical_samples=True), threads=1)
    assert np.all(result.band_powers == result.band_powers[0])
    assert all(st.sample_variance == 0 for st in result.stats)


def test_static_full_solve_records_remainders():
    result = run_ensemble(_config(n_samples=3, full_solve=True), threads=1)
    assert all(r.iterations > 1 for r in result.samples)
    assert all(r.remainder_powers.shape == (3,) for r in result.samples)
    names = [c.name for c in result.checks.checks]
    assert "iteration contraction" in names
    assert "remainder subdominant kappa=4" in names


def test_timedep_ensemble_compares_with_quadrature():
    config = EnsembleConfig(
        velocity=VelocitySpec(U=0.01, beta=-3.0, K_max=8),
        source=SourceSpec(kappa_g=2.0),
        correlation=CorrelationLaw(shape="gaussian", chi=1.0),
        ensemble=EnsembleSettings(n_samples=4, seed=9, mode="timedep"),
        bands=BandLadder(kappas=[2.0, 4.0]),
    )
    result = run_ensemble(config, threads=2)
    assert result.mode == "timedep"
    assert set(result.quadrature) == {2.0, 4.0}
    assert all(q > 0 for q in result.quadrature.values())
    assert len(result.corrections[4.0]) == 3
    assert "mean vs quadrature kappa=4" in [c.name for c in result.checks.checks]


def test_failed_sample_names_its_index():
    def broken(config, bands, envelope, index):
        raise FloatingPointError("overflow")

    with pytest.raises(SampleFailedError) as err:
        _run_sample(broken, _config(), [], None, 3)
    assert err.value.sample_index == 3
    assert isinstance(err.value.cause, FloatingPointError)


def test_mean_tolerance_follows_the_band():
    result = run_ensemble(_config(mean_tolerance={4.0: 0.2, 8.0: 0.1}), threads=1)
    checks = {c.name: c for c in result.checks.checks}
    tolerance = checks["mean tolerance kappa=8"]
    assert tolerance.margin == pytest.approx(0.1 * abs(tolerance.expected))
    assert "mean tolerance kappa=4" not in checks
