import math

import numpy as np
import pytest

from src.core.errors import NonPositiveMeanError
from src.core.statistics import band_statistics, fit_power_law, fit_scaling_exponent, lag1_autocorrelation


def test_band_statistics_moments():
    st = band_statistics(8, [1.0, 2.0, 3.0, 4.0], mode_count=10)
    assert st.n == 4
    assert st.sample_mean == pytest.approx(2.5)
    assert st.sample_variance == pytest.approx(5 / 3)
    assert st.std_error == pytest.approx(math.sqrt(5 / 12))
    assert st.density_mean == pytest.approx(2.5 / 8)
    assert st.per_mode_mean == pytest.approx(0.25)
    with pytest.raises(ValueError):
        band_statistics(8, [1.0], mode_count=10)


def test_lag1_autocorrelation():
    assert lag1_autocorrelation([1.0, 1.0, 1.0]) == 0.0
    assert lag1_autocorrelation([1.0]) == 0.0
    # alternating values are perfectly anticorrelated at lag one
    assert lag1_autocorrelation([1.0, -1.0] * 50) == pytest.approx(-0.99)
    rng = np.random.default_rng(0)
    assert abs(lag1_autocorrelation(rng.standard_normal(4000))) < 0.05


def test_power_law_fit_recovers_exponent():
    kappas = [8.0, 16.0, 32.0, 64.0]
    fit = fit_power_law(kappas, [3.0 * k ** -6 for k in kappas])
    assert fit.slope == pytest.approx(-6.0)
    assert fit.intercept == pytest.approx(math.log(3.0))
    assert fit.stderr == pytest.approx(0.0, abs=1e-10)
    assert fit.bands == 4


def test_power_law_fit_rejects_bad_input():
    with pytest.raises(ValueError):
        fit_power_law([8.0, 16.0], [1.0, 2.0])
    with pytest.raises(NonPositiveMeanError):
        fit_power_law([8.0, 16.0, 32.0], [1.0, 0.0, 2.0])


def test_scaling_conventions_shift_the_slope():
    stats = [
        band_statistics(k, [k ** -6 * 0.9, k ** -6 * 1.1], mode_count=int(3 * math.pi * k * k))
        for k in (8.0, 16.0, 32.0)
    ]
    assert fit_scaling_exponent(stats, "mean").slope == pytest.approx(-6.0)
    assert fit_scaling_exponent(stats, "density").slope == pytest.approx(-7.0)
    assert fit_scaling_exponent(stats, "per-mode").slope == pytest.approx(-8.0, abs=0.01)
    assert fit_scaling_exponent(stats, "fluctuation").slope == pytest.approx(0.0, abs=1e-10)
    with pytest.raises(ValueError):
        fit_scaling_exponent(stats, "median")
