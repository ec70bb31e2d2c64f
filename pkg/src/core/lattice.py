"""
Truncated 2D Fourier lattice.

Fields live on the square [-K_max, K_max]^2 of integer wavevectors, stored as a
dense complex array indexed by (kx + K_max, ky + K_max). Only modes with
0 < |k| <= K_max carry coefficients; the zero mode and the square's corners are
kept at zero. All band logic uses exact integer |k|^2.
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import List, NamedTuple, Tuple

import numpy as np

from src.core.errors import BandTruncatedError, TruncationMismatchError


class WaveVector(NamedTuple):
    kx: int
    ky: int

    @property
    def norm2(self) -> int:
        return self.kx * self.kx + self.ky * self.ky

    @property
    def norm(self) -> float:
        return float(np.sqrt(self.norm2))

    def wedge(self, other: "WaveVector") -> int:
        """j ^ k := j_x k_y - j_y k_x"""
        return self.kx * other.ky - self.ky * other.kx

    def __neg__(self) -> "WaveVector":
        return WaveVector(-self.kx, -self.ky)

    def __sub__(self, other) -> "WaveVector":
        return WaveVector(self.kx - other[0], self.ky - other[1])

    def in_upper_half_plane(self) -> bool:
        return self.ky > 0 or (self.ky == 0 and self.kx > 0)


class SpectralGrid:
    """Index arrays for one truncation. Obtain through get_grid()."""

    def __init__(self, k_max: int):
        if k_max < 1:
            raise ValueError(f"K_max must be >= 1, got {k_max}")
        self.k_max = k_max
        self.size = 2 * k_max + 1
        axis = np.arange(-k_max, k_max + 1, dtype=np.int64)
        self.kx, self.ky = np.meshgrid(axis, axis, indexing="ij")
        self.k2 = self.kx * self.kx + self.ky * self.ky
        self.mask = (self.k2 > 0) & (self.k2 <= k_max * k_max)
        self.upper = self.mask & ((self.ky > 0) | ((self.ky == 0) & (self.kx > 0)))
        self.kmag = np.sqrt(self.k2.astype(float))
        self.inv_k2 = np.zeros(self.k2.shape)
        self.inv_k2[self.mask] = 1.0 / self.k2[self.mask]
        for arr in (self.kx, self.ky, self.k2, self.mask, self.upper, self.kmag, self.inv_k2):
            arr.flags.writeable = False

    def index(self, k) -> Tuple[int, int]:
        return k[0] + self.k_max, k[1] + self.k_max

    def wavevector(self, i: int, j: int) -> WaveVector:
        return WaveVector(int(i - self.k_max), int(j - self.k_max))

    @property
    def mode_count(self) -> int:
        return int(self.mask.sum())


@lru_cache(maxsize=32)
def get_grid(k_max: int) -> SpectralGrid:
    return SpectralGrid(int(k_max))


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Immutable truncated Fourier coefficients of a real, mean-free field."""

    k_max: int
    coeffs: np.ndarray

    def __post_init__(self):
        grid = get_grid(self.k_max)
        arr = np.array(self.coeffs, dtype=complex)
        if arr.shape != (grid.size, grid.size):
            raise ValueError(
                f"coefficient array shape {arr.shape} does not match K_max={self.k_max}"
            )
        arr[~grid.mask] = 0.0
        arr.flags.writeable = False
        object.__setattr__(self, "coeffs", arr)

    @classmethod
    def zeros(cls, k_max: int) -> "SpectralField":
        size = 2 * k_max + 1
        return cls(k_max, np.zeros((size, size), dtype=complex))

    @classmethod
    def from_modes(cls, k_max: int, modes: dict) -> "SpectralField":
        """Build from {(kx, ky): value}; values are taken as given, no symmetrisation."""
        grid = get_grid(k_max)
        arr = np.zeros((grid.size, grid.size), dtype=complex)
        for k, value in modes.items():
            arr[grid.index(k)] = value
        return cls(k_max, arr)

    @property
    def grid(self) -> SpectralGrid:
        return get_grid(self.k_max)

    def coeff(self, k) -> complex:
        if abs(k[0]) > self.k_max or abs(k[1]) > self.k_max:
            return 0j
        return complex(self.coeffs[self.grid.index(k)])

    def norm2(self) -> float:
        """|f|^2_{L2} := sum_k |f_k|^2"""
        return float(np.sum(np.abs(self.coeffs) ** 2))

    def norm(self) -> float:
        return float(np.sqrt(self.norm2()))

    def is_reality_symmetric(self, rtol: float = 1e-12) -> bool:
        mirrored = np.conj(self.coeffs[::-1, ::-1])
        scale = max(float(np.max(np.abs(self.coeffs))), 1e-300)
        return bool(np.max(np.abs(self.coeffs - mirrored)) <= rtol * scale)

    def support(self) -> List[WaveVector]:
        grid = self.grid
        return [grid.wavevector(i, j) for i, j in np.argwhere(self.coeffs != 0)]

    def map(self, multiplier) -> "SpectralField":
        return SpectralField(self.k_max, self.coeffs * multiplier)

    def _check(self, other: "SpectralField"):
        if other.k_max != self.k_max:
            raise TruncationMismatchError(f"K_max {self.k_max} vs {other.k_max}")

    def __add__(self, other: "SpectralField") -> "SpectralField":
        self._check(other)
        return SpectralField(self.k_max, self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        self._check(other)
        return SpectralField(self.k_max, self.coeffs - other.coeffs)

    def __mul__(self, scalar) -> "SpectralField":
        return SpectralField(self.k_max, self.coeffs * scalar)

    __rmul__ = __mul__


def inverse_laplacian(f: SpectralField) -> SpectralField:
    """(Delta^{-1} f)_k = -f_k / |k|^2"""
    return f.map(-f.grid.inv_k2)


@dataclass(frozen=True, eq=False)
class DyadicBand:
    kappa: float
    k_max: int
    mask: np.ndarray

    @property
    def members(self) -> List[WaveVector]:
        grid = get_grid(self.k_max)
        return [grid.wavevector(i, j) for i, j in np.argwhere(self.mask)]

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    def mask_for(self, k_max: int) -> np.ndarray:
        if k_max == self.k_max:
            return self.mask
        return dyadic_band(self.kappa, k_max).mask


def dyadic_band(kappa: float, k_max: int) -> DyadicBand:
    """All stored modes with kappa <= |k| < 2 kappa."""
    if kappa <= 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    if 2 * kappa > k_max + 1:
        raise BandTruncatedError(f"2*kappa={2 * kappa:g} exceeds K_max+1={k_max + 1}")
    grid = get_grid(k_max)
    lo = kappa * kappa
    mask = grid.mask & (grid.k2 >= lo) & (grid.k2 < 4 * lo)
    mask.flags.writeable = False
    return DyadicBand(float(kappa), k_max, mask)


def band_power(f: SpectralField, band: DyadicBand) -> float:
    return float(np.sum(np.abs(f.coeffs[band.mask_for(f.k_max)]) ** 2))


def accumulate_shifted(out: np.ndarray, arr: np.ndarray, dx: int, dy: int, weight: complex):
    """out[i + dx, j + dy] += weight * arr[i, j] wherever both indices are in range."""
    n = arr.shape[0]
    if abs(dx) >= n or abs(dy) >= n:
        return
    src_x = slice(max(0, -dx), n - max(0, dx))
    dst_x = slice(max(0, dx), n - max(0, -dx))
    src_y = slice(max(0, -dy), n - max(0, dy))
    dst_y = slice(max(0, dy), n - max(0, -dy))
    out[dst_x, dst_y] += weight * arr[src_x, src_y]


def convolve_advection(u: Tuple[SpectralField, SpectralField], theta: SpectralField) -> SpectralField:
    """
    Galerkin-truncated (u . grad theta)_k = sum_j i(k-j).u_j theta_{k-j}.

    Loops over whichever factor has the smaller support; output modes with
    |k| > K_max and the k = 0 coefficient are dropped.
    """
    ux, uy = u
    if not (ux.k_max == uy.k_max == theta.k_max):
        raise TruncationMismatchError(
            f"velocity K_max ({ux.k_max}, {uy.k_max}) vs tracer K_max {theta.k_max}"
        )
    grid = theta.grid
    k = grid.k_max
    out = np.zeros_like(theta.coeffs)

    u_support = np.argwhere((ux.coeffs != 0) | (uy.coeffs != 0))
    t_support = np.argwhere(theta.coeffs != 0)
    if len(u_support) == 0 or len(t_support) == 0:
        return SpectralField(k, out)

    if len(u_support) <= len(t_support):
        grad_x = 1j * grid.kx * theta.coeffs
        grad_y = 1j * grid.ky * theta.coeffs
        for i, j in u_support:
            jx, jy = int(i - k), int(j - k)
            accumulate_shifted(out, grad_x, jx, jy, ux.coeffs[i, j])
            accumulate_shifted(out, grad_y, jx, jy, uy.coeffs[i, j])
    else:
        for i, j in t_support:
            mx, my = int(i - k), int(j - k)
            transport = 1j * (mx * ux.coeffs + my * uy.coeffs)
            accumulate_shifted(out, transport, mx, my, theta.coeffs[i, j])

    return SpectralField(k, out)


def convolve_advection_direct(u: Tuple[SpectralField, SpectralField], theta: SpectralField) -> SpectralField:
    """Dense double-sum evaluation of u . grad theta; only for small K_max."""
    ux, uy = u
    if not (ux.k_max == uy.k_max == theta.k_max):
        raise TruncationMismatchError(
            f"velocity K_max ({ux.k_max}, {uy.k_max}) vs tracer K_max {theta.k_max}"
        )
    grid = theta.grid
    modes = [grid.wavevector(i, j) for i, j in np.argwhere(grid.mask)]
    values = {}
    for kv in modes:
        total = 0j
        for jv in modes:
            m = kv - jv
            if m.norm2 == 0 or m.norm2 > grid.k_max ** 2:
                continue
            total += (ux.coeff(jv) * 1j * m.kx + uy.coeff(jv) * 1j * m.ky) * theta.coeff(m)
        values[tuple(kv)] = total
    return SpectralField.from_modes(grid.k_max, values)
