"""
Synthetic velocity and tracer source.

psi_k = U |k|^beta e^{i phi_k},  u = grad^perp psi,
g_k   = -gamma(|k|) |k|^2 e^{i xi_k}  with gamma = 0 for |k| >= kappa_g.
"""

import math
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.core.errors import BandTruncatedError, OutOfTheoryError, TruncationMismatchError
from src.core.lattice import SpectralField, get_grid, inverse_laplacian
from src.core.phases import PhaseAssignment

Velocity = Tuple[SpectralField, SpectralField]


class VelocitySpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    U: float = Field(0.01, gt=0, description="stream-function amplitude")
    beta: float = Field(-3.0, description="spectral exponent, |psi_k| = U |k|^beta")
    K_max: int = Field(128, ge=1, description="truncation radius")

    @field_validator("beta")
    @classmethod
    def _beta_in_theory(cls, v: float) -> float:
        if v >= -2:
            # not a ValueError, so pydantic lets it through unwrapped
            raise OutOfTheoryError(f"beta={v} but the theory requires beta < -2")
        return v


class SourceSpec(BaseModel):
    """
    Band-limited source. gamma maps |k|^2 classes to gamma(|k|); when absent,
    gamma = 1 for 0 < |k| < kappa_g. `modes` optionally restricts the source to
    the listed wavevectors (their negatives are added).
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    kappa_g: float = Field(4.0, gt=0)
    gamma: Optional[Dict[int, float]] = None
    modes: Optional[List[Tuple[int, int]]] = None
    seed: Optional[int] = Field(None, description="xi seed when source phases are frozen")

    @field_validator("gamma")
    @classmethod
    def _gamma_table(cls, v):
        if v is None:
            return v
        for k2, value in v.items():
            if k2 <= 0:
                raise ValueError("gamma(0) must be 0; table keys are |k|^2 > 0")
            if value < 0:
                raise ValueError(f"gamma must be nonnegative, got {value} at |k|^2={k2}")
        return v

    @field_validator("modes")
    @classmethod
    def _symmetric_modes(cls, v):
        if v is None:
            return v
        closed = set()
        for kx, ky in v:
            if kx == 0 and ky == 0:
                raise ValueError("the zero mode cannot carry source")
            closed.add((int(kx), int(ky)))
            closed.add((-int(kx), -int(ky)))
        return sorted(closed)

    @model_validator(mode="after")
    def _band_limited(self):
        limit = self.kappa_g * self.kappa_g
        for k2, value in (self.gamma or {}).items():
            if value != 0 and k2 >= limit:
                raise ValueError(f"gamma must vanish for |k| >= kappa_g (|k|^2={k2})")
        for kx, ky in self.modes or []:
            if kx * kx + ky * ky >= limit:
                raise ValueError(f"source mode ({kx}, {ky}) lies outside |k| < kappa_g")
        return self

    @property
    def support_radius(self) -> int:
        return max(1, math.ceil(self.kappa_g))

    def gamma_at(self, k2: np.ndarray) -> np.ndarray:
        k2 = np.asarray(k2)
        inside = (k2 > 0) & (k2 < self.kappa_g * self.kappa_g)
        if self.gamma is None:
            return np.where(inside, 1.0, 0.0)
        out = np.zeros(k2.shape)
        for cls_k2, value in self.gamma.items():
            out[k2 == cls_k2] = value
        return np.where(inside, out, 0.0)

    def gamma_array(self, k_max: int) -> np.ndarray:
        grid = get_grid(k_max)
        gamma = np.where(grid.mask, self.gamma_at(grid.k2), 0.0)
        if self.modes is not None:
            keep = np.zeros_like(grid.mask)
            for k in self.modes:
                if abs(k[0]) <= k_max and abs(k[1]) <= k_max:
                    keep[grid.index(k)] = True
            gamma = np.where(keep, gamma, 0.0)
        return gamma


def build_streamfunction(spec: VelocitySpec, phases: PhaseAssignment) -> SpectralField:
    if phases.k_max != spec.K_max:
        raise TruncationMismatchError(f"phases cover K_max={phases.k_max}, spec wants {spec.K_max}")
    grid = get_grid(spec.K_max)
    amplitude = np.zeros(grid.k2.shape)
    amplitude[grid.mask] = spec.U * grid.kmag[grid.mask] ** spec.beta
    return SpectralField(spec.K_max, amplitude * phases.cis())


def velocity_from_streamfunction(psi: SpectralField) -> Velocity:
    """u_k = i(-k_y, k_x) psi_k"""
    grid = psi.grid
    return psi.map(-1j * grid.ky), psi.map(1j * grid.kx)


def streamfunction_from_velocity(u: Velocity) -> SpectralField:
    ux, uy = u
    grid = ux.grid
    return SpectralField(ux.k_max, -1j * (grid.kx * uy.coeffs - grid.ky * ux.coeffs) * grid.inv_k2)


def build_source(spec: SourceSpec, xi: PhaseAssignment) -> SpectralField:
    if spec.kappa_g ** 2 > xi.k_max ** 2 + 1:
        raise BandTruncatedError(f"source cutoff kappa_g={spec.kappa_g} exceeds K_max={xi.k_max}")
    grid = get_grid(xi.k_max)
    return SpectralField(xi.k_max, -spec.gamma_array(xi.k_max) * grid.k2 * xi.cis())


def level_set_streamfunction(g: SpectralField) -> SpectralField:
    """psi = Delta^{-1} g, whose flow preserves the level sets of g."""
    return inverse_laplacian(g)


def sup_norm_bound(f: SpectralField) -> float:
    return float(np.sum(np.abs(f.coeffs)))


def velocity_sup_norm_bound(u: Velocity) -> float:
    ux, uy = u
    return float(np.sum(np.sqrt(np.abs(ux.coeffs) ** 2 + np.abs(uy.coeffs) ** 2)))


def velocity_sup_norm_from_spec(spec: VelocitySpec) -> float:
    """sum_k |k| U |k|^beta, phase independent."""
    grid = get_grid(spec.K_max)
    return float(spec.U * np.sum(grid.kmag[grid.mask] ** (spec.beta + 1)))


class SourceFunctionals(NamedTuple):
    G0: float
    G1: float
    grad_inv_sup: float


def source_functionals(spec: SourceSpec) -> SourceFunctionals:
    k_max = spec.support_radius
    grid = get_grid(k_max)
    w = spec.gamma_array(k_max) ** 2
    kx = grid.kx.astype(float)
    ky = grid.ky.astype(float)
    g0 = float(np.sum(grid.k2 * w))
    # sum_{i,j} (3ix^2jx^2 + ix^2jy^2 + iy^2jx^2 + 3iy^2jy^2 + 4 ix iy jx jy) g_i^2 g_j^2
    a = float(np.sum(kx * kx * w))
    b = float(np.sum(ky * ky * w))
    c = float(np.sum(kx * ky * w))
    g1 = 3 * a * a + 2 * a * b + 3 * b * b + 4 * c * c
    grad_inv_sup = float(np.sum(grid.kmag * np.sqrt(w)))
    return SourceFunctionals(g0, g1, grad_inv_sup)
