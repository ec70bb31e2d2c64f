"""
Ensemble estimators: per-band sample statistics and log-log scaling fits.
"""

import math
from typing import List, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy import stats

from src.core.errors import NonPositiveMeanError

CONVENTIONS = ("mean", "density", "per-mode", "fluctuation")


class BandStatistics(BaseModel):
    model_config = ConfigDict(frozen=True)

    kappa: float
    n: int
    sample_mean: float
    sample_variance: float
    std_error: float
    mode_count: int
    lag1_autocorrelation: float = 0.0

    @property
    def density_mean(self) -> float:
        """Band power per unit of |k|: the band is kappa wide."""
        return self.sample_mean / self.kappa

    @property
    def per_mode_mean(self) -> float:
        return self.sample_mean / self.mode_count if self.mode_count else 0.0

    @property
    def relative_fluctuation(self) -> float:
        return math.sqrt(self.sample_variance) / self.sample_mean if self.sample_mean > 0 else math.inf


def lag1_autocorrelation(values: Sequence[float]) -> float:
    x = np.asarray(values, dtype=float)
    if len(x) < 2:
        return 0.0
    d = x - x.mean()
    denom = float(np.dot(d, d))
    if denom == 0:
        return 0.0
    return float(np.dot(d[:-1], d[1:]) / denom)


def band_statistics(kappa: float, values: Sequence[float], mode_count: int) -> BandStatistics:
    x = np.asarray(values, dtype=float)
    n = len(x)
    if n < 2:
        raise ValueError(f"need at least 2 samples, got {n}")
    variance = float(np.var(x, ddof=1))
    return BandStatistics(
        kappa=float(kappa),
        n=n,
        sample_mean=float(x.mean()),
        sample_variance=variance,
        std_error=math.sqrt(variance / n),
        mode_count=int(mode_count),
        lag1_autocorrelation=lag1_autocorrelation(x),
    )


class ScalingFit(BaseModel):
    model_config = ConfigDict(frozen=True)

    convention: str
    slope: float
    stderr: float
    intercept: float
    bands: int


def fit_power_law(kappas: Sequence[float], values: Sequence[float], convention: str = "mean") -> ScalingFit:
    k = np.asarray(kappas, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(k) < 3:
        raise ValueError(f"a scaling fit needs at least 3 bands, got {len(k)}")
    if np.any(v <= 0) or np.any(k <= 0):
        raise NonPositiveMeanError(f"cannot take logarithms of nonpositive values in {convention} fit")
    fit = stats.linregress(np.log(k), np.log(v))
    return ScalingFit(
        convention=convention,
        slope=float(fit.slope),
        stderr=float(fit.stderr),
        intercept=float(fit.intercept),
        bands=len(k),
    )


def fit_scaling_exponent(band_stats: List[BandStatistics], convention: str = "mean") -> ScalingFit:
    """
    Slope of log(observable) against log(kappa).

    mean:        sample mean band power (2 beta for vartheta)
    density:     band power per unit |k|, a spectral density (2 beta - 1)
    per-mode:    band power per lattice mode (2 beta - 2)
    fluctuation: sample std / sample mean (-1 from the variance bound)
    """
    kappas = [s.kappa for s in band_stats]
    if convention == "mean":
        values = [s.sample_mean for s in band_stats]
    elif convention == "density":
        values = [s.density_mean for s in band_stats]
    elif convention == "per-mode":
        values = [s.per_mode_mean for s in band_stats]
    elif convention == "fluctuation":
        if any(s.sample_mean <= 0 for s in band_stats):
            raise NonPositiveMeanError("fluctuation fit needs positive means")
        values = [s.relative_fluctuation for s in band_stats]
    else:
        raise ValueError(f"Unknown convention: {convention}")
    return fit_power_law(kappas, values, convention)
