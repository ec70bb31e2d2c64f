"""
Random phase generation.

Static phases are i.i.d. uniform on the Fourier upper half-plane and mirrored
onto the lower half-plane so that phi_{-k} = -phi_k (mod 2 pi). Time-dependent
phases are stationary processes whose increments have characteristic function
Phi(chi_k |s - r|); the correlation shape is picked through
get_correlation_shape(), one class per supported Phi.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import lru_cache
from typing import Literal, Sequence, Union

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial import hermite_e
from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.core.errors import NoSamplerError
from src.core.lattice import WaveVector, get_grid

TWO_PI = 2.0 * np.pi


def derive_seed(master_seed: int, *keys: int) -> int:
    """Deterministic 64-bit child seed for (master_seed, keys...)."""
    seq = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) & 0xFFFFFFFF for k in keys))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


# --- Correlation shapes ---

class CorrelationShape(ABC):
    name: str = ""
    has_sampler: bool = False

    @abstractmethod
    def value(self, s):
        """Phi(s) for s >= 0."""

    @abstractmethod
    def derivative(self, order: int, s):
        """n-th derivative of Phi at s >= 0."""

    def derivative_at_zero(self, order: int) -> float:
        return float(self.derivative(order, 0.0))


class ConstantShape(CorrelationShape):
    """Frozen phases, Phi == 1."""

    name = "constant"
    has_sampler = True

    def value(self, s):
        return np.ones_like(np.asarray(s, dtype=float))

    def derivative(self, order: int, s):
        if order == 0:
            return self.value(s)
        return np.zeros_like(np.asarray(s, dtype=float))


class GaussianShape(CorrelationShape):
    """Phi(s) = exp(-s^2/2); Phi^(n)(s) = (-1)^n He_n(s) exp(-s^2/2)."""

    name = "gaussian"
    has_sampler = True

    def value(self, s):
        s = np.asarray(s, dtype=float)
        return np.exp(-0.5 * s * s)

    def derivative(self, order: int, s):
        s = np.asarray(s, dtype=float)
        coeffs = [0.0] * order + [1.0]
        return (-1.0) ** order * hermite_e.hermeval(s, coeffs) * np.exp(-0.5 * s * s)


@lru_cache(maxsize=None)
def _sech_polynomial(order: int) -> Polynomial:
    # d^n/ds^n sech(s) = P_n(tanh s) sech(s)
    if order == 0:
        return Polynomial([1.0])
    prev = _sech_polynomial(order - 1)
    t = Polynomial([0.0, 1.0])
    return prev.deriv() * (1 - t * t) - t * prev


class SechShape(CorrelationShape):
    """Phi(s) = 1/cosh(s). Correlation and series coefficients only; no path sampler."""

    name = "sech"
    has_sampler = False

    def value(self, s):
        return 1.0 / np.cosh(np.asarray(s, dtype=float))

    def derivative(self, order: int, s):
        s = np.asarray(s, dtype=float)
        return _sech_polynomial(order)(np.tanh(s)) / np.cosh(s)


_SHAPES = {
    "constant": ConstantShape,
    "gaussian": GaussianShape,
    "sech": SechShape,
}


def get_correlation_shape(shape_type: str = "constant") -> CorrelationShape:
    if shape_type not in _SHAPES:
        raise ValueError(f"Unknown correlation shape: {shape_type}")
    return _SHAPES[shape_type]()


class CorrelationLaw(BaseModel):
    """Phi_k(t) = Phi(chi_k |t|) with chi_k = chi |k|^eta."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    shape: Literal["constant", "gaussian", "sech"] = "constant"
    chi: float = Field(1.0, gt=0, description="correlation rate prefactor chi")
    eta: float = Field(0.0, ge=0, description="exponent in chi_k = chi |k|^eta")

    @field_validator("eta")
    @classmethod
    def _eta_below_two(cls, v: float) -> float:
        if v >= 2:
            raise ValueError("eta must be < 2 so that chi_k / |k|^2 -> 0")
        return v

    @property
    def correlation_shape(self) -> CorrelationShape:
        return get_correlation_shape(self.shape)

    def chi_k(self, k_mag):
        return self.chi * np.asarray(k_mag, dtype=float) ** self.eta

    def value(self, s):
        return self.correlation_shape.value(s)

    def derivative_at_zero(self, order: int) -> float:
        return self.correlation_shape.derivative_at_zero(order)


def _magnitude(k: Union[WaveVector, Sequence[int], float]) -> float:
    if isinstance(k, (tuple, list, WaveVector)):
        return float(np.hypot(k[0], k[1]))
    return float(k)


def correlation_oracle(law: CorrelationLaw, k, dt: float) -> float:
    """Phi(chi_k dt)."""
    if dt < 0:
        raise ValueError(f"dt must be >= 0, got {dt}")
    return float(law.value(law.chi_k(_magnitude(k)) * dt))


# --- Static phases ---

@dataclass(frozen=True, eq=False)
class PhaseAssignment:
    seed: int
    k_max: int
    phases: np.ndarray

    def phase(self, k) -> float:
        grid = get_grid(self.k_max)
        return float(self.phases[grid.index(k)])

    def cis(self) -> np.ndarray:
        """e^{i phi_k} on stored modes, zero elsewhere."""
        grid = get_grid(self.k_max)
        return np.where(grid.mask, np.exp(1j * self.phases), 0.0)


def _mirror_antisymmetric(upper_values: np.ndarray, k_max: int) -> np.ndarray:
    """Fill an array from its upper half-plane entries with f_{-k} = -f_k."""
    grid = get_grid(k_max)
    arr = np.zeros((grid.size, grid.size))
    arr[grid.upper] = upper_values
    lower = grid.mask & ~grid.upper
    arr[lower] = -arr[::-1, ::-1][lower]
    return arr


def sample_static_phases(seed: int, k_max: int) -> PhaseAssignment:
    if k_max < 1:
        raise ValueError(f"K_max must be >= 1, got {k_max}")
    grid = get_grid(k_max)
    rng = np.random.default_rng(seed)
    draws = rng.uniform(0.0, TWO_PI, size=int(grid.upper.sum()))
    phases = np.mod(_mirror_antisymmetric(draws, k_max), TWO_PI)
    phases[~grid.mask] = 0.0
    phases.flags.writeable = False
    return PhaseAssignment(int(seed), k_max, phases)


# --- Time-dependent phases ---

@dataclass(frozen=True, eq=False)
class PhasePath:
    k: WaveVector
    times: np.ndarray
    values: np.ndarray


def _check_times(times) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or len(times) == 0:
        raise ValueError("time grid must be a non-empty 1D array")
    if np.any(np.diff(times) <= 0):
        raise ValueError("time grid must be strictly increasing")
    return times


def sample_phase_path(seed: int, k, law: CorrelationLaw, times) -> PhasePath:
    """
    One realisation of phi_k(t) on the given grid.

    Gaussian law: phi_k(t) = phi_k(0) + chi_k t Z_k with Z_k standard normal, so
    the increment phi(s) - phi(r) is N(0, chi_k^2 (s-r)^2) and
    E e^{i(phi(s) - phi(r))} = exp(-chi_k^2 (s-r)^2 / 2) exactly.
    """
    shape = law.correlation_shape
    if not shape.has_sampler:
        raise NoSamplerError(f"no path sampler for correlation shape '{law.shape}'")
    times = _check_times(times)
    k = WaveVector(int(k[0]), int(k[1]))
    if k.norm2 == 0:
        raise ValueError("the zero mode carries no phase")
    canonical, sign = (k, 1.0) if k.in_upper_half_plane() else (-k, -1.0)
    rng = np.random.default_rng(derive_seed(seed, canonical.kx, canonical.ky))
    phi0 = rng.uniform(0.0, TWO_PI)
    rate = 0.0
    if shape.name == "gaussian":
        rate = float(law.chi_k(k.norm)) * rng.standard_normal()
    values = sign * (phi0 + rate * times)
    return PhasePath(k, times, values)


@dataclass(frozen=True, eq=False)
class PhasePathFamily:
    """All velocity phases at once: phi_k(t) = phi_k(0) + rates_k t."""

    initial: PhaseAssignment
    rates: np.ndarray

    @property
    def k_max(self) -> int:
        return self.initial.k_max

    @property
    def is_frozen(self) -> bool:
        return not np.any(self.rates)

    def phases_at(self, t: float) -> np.ndarray:
        return self.initial.phases + self.rates * t

    def cis_at(self, t: float) -> np.ndarray:
        grid = get_grid(self.k_max)
        return np.where(grid.mask, np.exp(1j * self.phases_at(t)), 0.0)

    def path(self, k, times) -> PhasePath:
        times = _check_times(times)
        grid = get_grid(self.k_max)
        idx = grid.index(k)
        values = self.initial.phases[idx] + self.rates[idx] * times
        return PhasePath(WaveVector(int(k[0]), int(k[1])), times, values)


def sample_phase_family(seed: int, k_max: int, law: CorrelationLaw) -> PhasePathFamily:
    shape = law.correlation_shape
    if not shape.has_sampler:
        raise NoSamplerError(f"no path sampler for correlation shape '{law.shape}'")
    grid = get_grid(k_max)
    initial = sample_static_phases(derive_seed(seed, 0), k_max)
    if shape.name == "constant":
        rates = np.zeros((grid.size, grid.size))
    else:
        rng = np.random.default_rng(derive_seed(seed, 1))
        z = rng.standard_normal(int(grid.upper.sum()))
        rates = _mirror_antisymmetric(law.chi_k(grid.kmag[grid.upper]) * z, k_max)
    rates.flags.writeable = False
    return PhasePathFamily(initial, rates)


def frozen_family(phases: PhaseAssignment) -> PhasePathFamily:
    grid = get_grid(phases.k_max)
    rates = np.zeros((grid.size, grid.size))
    rates.flags.writeable = False
    return PhasePathFamily(phases, rates)
