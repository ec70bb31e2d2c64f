"""
Closed-form band predictions and bounds.

Everything here is a pure function of the velocity/source specs. Values that
fall outside the regime where a formula is meaningful are still returned, but
wrapped in an Estimate carrying flags ("below-validity", "limit-replaced") and
logged as warnings.
"""

import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field
from scipy import integrate

from src.core.errors import OutOfTheoryError
from src.core.fields import SourceSpec, VelocitySpec, source_functionals, velocity_sup_norm_from_spec
from src.core.lattice import dyadic_band, get_grid
from src.core.validator import CheckResult

SPLIT_ETA = 0.1
BELOW_VALIDITY = "below-validity"
LIMIT_REPLACED = "limit-replaced"


@dataclass(frozen=True)
class Estimate:
    value: float
    flags: Tuple[str, ...] = ()

    def __float__(self) -> float:
        return self.value


def dyadic_coefficient(x: float) -> Tuple[float, bool]:
    """(2^x - 1)/x, with its x -> 0 limit ln 2. The flag says the limit was used."""
    if abs(x) < 1e-12:
        return math.log(2.0), True
    return (2.0 ** x - 1.0) / x, False


def _check_beta(beta: float):
    if beta >= -2:
        raise OutOfTheoryError(f"beta={beta} but the theory requires beta < -2")


# --- Per-mode expectations ---

def _source_modes(source: SourceSpec):
    grid = get_grid(source.support_radius)
    gamma = source.gamma_array(source.support_radius)
    nz = gamma > 0
    return grid.kx[nz].astype(float), grid.ky[nz].astype(float), gamma[nz]


def mode_power_sum(kx, ky, source: SourceSpec, beta: float, k_max: Optional[int] = None) -> np.ndarray:
    """
    sum_j gamma_j^2 (k ^ j)^2 |k - j|^{2 beta} for each (kx, ky), without U^2.

    Terms with k = j carry no velocity mode and are skipped; with k_max given,
    terms whose k - j falls outside the truncation are skipped too.
    """
    kx = np.atleast_1d(np.asarray(kx, dtype=float))[:, None]
    ky = np.atleast_1d(np.asarray(ky, dtype=float))[:, None]
    jx, jy, gamma = _source_modes(source)
    wedge = kx * jy[None, :] - ky * jx[None, :]
    d2 = (kx - jx[None, :]) ** 2 + (ky - jy[None, :]) ** 2
    keep = d2 > 0
    if k_max is not None:
        keep &= d2 <= k_max * k_max
    safe = np.where(keep, d2, 1.0)
    terms = np.where(keep, gamma[None, :] ** 2 * wedge ** 2 * safe ** beta, 0.0)
    return terms.sum(axis=1)


def expected_mode_power(k, source: SourceSpec, U: float, beta: float,
                        target: str = "phi1", k_max: Optional[int] = None) -> Estimate:
    """E|phi1_k|^2 = U^2 sum_j gamma_j^2 (k^j)^2 |k-j|^{2 beta}; divided by |k|^4 for vartheta."""
    if target not in ("phi1", "vartheta"):
        raise ValueError(f"Unknown target: {target}")
    k2 = float(k[0] * k[0] + k[1] * k[1])
    if k2 == 0:
        raise ValueError("the zero mode has no first-order term")
    value = U * U * float(mode_power_sum([k[0]], [k[1]], source, beta, k_max)[0])
    if target == "vartheta":
        value /= k2 * k2
    flags = ()
    if math.sqrt(k2) <= 2 * source.kappa_g:
        logger.warning(f"[Predictor] |k|={math.sqrt(k2):.3g} <= 2 kappa_g; phase independence does not hold")
        flags = (BELOW_VALIDITY,)
    return Estimate(value, flags)


# --- Band expectations and bounds ---

def _band_flags(kappa: float, source: SourceSpec, limit_used: bool, what: str) -> Tuple[str, ...]:
    flags = []
    if kappa <= 2 * source.kappa_g:
        logger.warning(f"[Predictor] {what}: kappa={kappa:g} <= 2 kappa_g={2 * source.kappa_g:g}")
        flags.append(BELOW_VALIDITY)
    if limit_used:
        logger.warning(f"[Predictor] {what}: zero exponent, coefficient replaced by ln 2")
        flags.append(LIMIT_REPLACED)
    return tuple(flags)


def expected_band_power(kappa: float, source: SourceSpec, U: float, beta: float,
                        target: str = "vartheta") -> Estimate:
    """pi G0 c U^2 kappa^p with (c, p) = ((4^b-1)/2b, 2b) for vartheta, ((2^{2b+4}-1)/(2b+4), 2b+4) for phi1."""
    _check_beta(beta)
    if target == "vartheta":
        power = 2 * beta
    elif target == "phi1":
        power = 2 * beta + 4
    else:
        raise ValueError(f"Unknown target: {target}")
    coeff, limit_used = dyadic_coefficient(power)
    g0 = source_functionals(source).G0
    value = math.pi * g0 * coeff * U * U * kappa ** power
    return Estimate(value, _band_flags(kappa, source, limit_used, f"expected {target}"))


def variance_band_bound(kappa: float, source: SourceSpec, U: float, beta: float,
                        target: str = "vartheta") -> Estimate:
    _check_beta(beta)
    if target == "vartheta":
        power = 4 * beta - 2
    elif target == "phi1":
        power = 4 * beta + 6
    else:
        raise ValueError(f"Unknown target: {target}")
    coeff, limit_used = dyadic_coefficient(power)
    g1 = source_functionals(source).G1
    value = 0.5 * math.pi * g1 * coeff * U ** 4 * kappa ** power
    return Estimate(value, _band_flags(kappa, source, limit_used, f"variance bound {target}"))


def lattice_band_expectation(kappa: float, source: SourceSpec, U: float, beta: float,
                             target: str = "vartheta", k_max: Optional[int] = None) -> float:
    """Exact lattice sum of expected_mode_power over the dyad [kappa, 2 kappa)."""
    band_k_max = k_max if k_max is not None else int(math.ceil(2 * kappa))
    band = dyadic_band(kappa, band_k_max)
    grid = get_grid(band_k_max)
    kx, ky = grid.kx[band.mask], grid.ky[band.mask]
    sums = mode_power_sum(kx, ky, source, beta, k_max)
    if target == "vartheta":
        k2 = grid.k2[band.mask].astype(float)
        sums = sums / (k2 * k2)
    elif target != "phi1":
        raise ValueError(f"Unknown target: {target}")
    return float(U * U * sums.sum())


def velocity_band_power(kappa: float, U: float, beta: float, convention: str = "coefficients") -> float:
    """
    Annulus prediction for the velocity band power.

    "coefficients" is the plain coefficient sum sum_k |u_k|^2 (prefactor 2 pi);
    "domain" uses the domain area |D| = 4 pi^2 as in the L2 norm over the torus.
    """
    coeff, _ = dyadic_coefficient(2 * beta + 4)
    prefactor = {"coefficients": 2 * math.pi, "domain": 4 * math.pi ** 2}.get(convention)
    if prefactor is None:
        raise ValueError(f"Unknown convention: {convention}")
    return prefactor * coeff * U * U * kappa ** (2 * beta + 4)


# --- Envelope and split constants ---

def gamma_envelope(k_mag, beta: float, kappa_g: float):
    """Gamma(|k|; beta) = |k|^-2 min{2 kappa_g, (2 kappa_g)^-beta |k|^(beta+1)}"""
    k = np.asarray(k_mag, dtype=float)
    if np.any(k < 1):
        raise ValueError("gamma_envelope needs |k| >= 1")
    two_kg = 2.0 * kappa_g
    out = np.minimum(two_kg, two_kg ** (-beta) * k ** (beta + 1)) / (k * k)
    return float(out) if out.ndim == 0 else out


def m_beta(k_mag: float, eta: float, beta: float) -> float:
    if not 0 < eta < 1:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    if eta * k_mag <= 1:
        raise ValueError(f"need eta |k| > 1, got {eta * k_mag:g}")
    if beta > -3:
        return (eta * k_mag) ** (beta + 3) / (beta + 3)
    if beta == -3:
        return math.log(eta * k_mag)
    return 1.0 / abs(beta + 3)


def sandwich_bounds(k_mag: float, kappa_g: float, alpha: float) -> Tuple[float, float]:
    """Bounds on |k - j|^alpha / |k|^alpha for |j| < kappa_g, valid once |k| >= 3 kappa_g."""
    if k_mag < 3 * kappa_g:
        raise ValueError(f"|k|={k_mag:g} is below 3 kappa_g={3 * kappa_g:g}")
    near = (1.0 - 2.0 * kappa_g / k_mag) ** alpha
    far = (1.0 + 3.0 * kappa_g / k_mag) ** alpha
    return (near, far) if alpha > 0 else (far, near)


# --- Lattice error of the annulus approximation ---

class AnnulusErrorRow(NamedTuple):
    kappa: float
    lattice_sum: float
    integral: float
    error: float
    ratio: float
    cell_ratio: float


def annulus_cell_constant(beta: float) -> float:
    """Unit-cell Taylor bound 6 pi (1 + |2 beta - 1|), doubled for the annulus/cell mismatch."""
    return 12 * math.pi * (1 + abs(2 * beta - 1))


def lattice_annulus_error(j, kappa: float, beta: float) -> AnnulusErrorRow:
    """
    Compare sum_{band}(k^j)^2 |k|^{2 beta} with its annulus integral.

    ratio = error/(|j|^2 kappa^{2 beta+1}); cell_ratio = error/(|j|^2 kappa^{2 beta+3}),
    the normalisation the cell-by-cell Taylor estimate actually delivers.
    """
    jx, jy = float(j[0]), float(j[1])
    j2 = jx * jx + jy * jy
    if math.sqrt(j2) > kappa / 3:
        raise ValueError(f"|j|={math.sqrt(j2):g} exceeds kappa/3={kappa / 3:g}")
    k_max = int(math.ceil(2 * kappa))
    band = dyadic_band(kappa, k_max)
    grid = get_grid(k_max)
    kx = grid.kx[band.mask].astype(float)
    ky = grid.ky[band.mask].astype(float)
    k2 = grid.k2[band.mask].astype(float)
    lattice_sum = float(np.sum((kx * jy - ky * jx) ** 2 * k2 ** beta))
    coeff, _ = dyadic_coefficient(2 * beta + 4)
    integral = math.pi * j2 * kappa ** (2 * beta + 4) * coeff
    error = abs(lattice_sum - integral)
    if j2 == 0:
        return AnnulusErrorRow(float(kappa), lattice_sum, integral, error, 0.0, 0.0)
    ratio = error / (j2 * kappa ** (2 * beta + 1))
    return AnnulusErrorRow(float(kappa), lattice_sum, integral, error, ratio, ratio / (kappa * kappa))


def angular_integral(j, n) -> float:
    """int_0^{2 pi} (j_x sin w - j_y cos w)^2 (n_x sin w - n_y cos w)^2 dw by quadrature."""
    def integrand(w):
        s, c = math.sin(w), math.cos(w)
        return (j[0] * s - j[1] * c) ** 2 * (n[0] * s - n[1] * c) ** 2

    value, _ = integrate.quad(integrand, 0.0, 2 * math.pi, epsabs=1e-13, epsrel=1e-13, limit=200)
    return value


def angular_closed_form(j, n) -> float:
    jx, jy, nx, ny = (float(v) for v in (j[0], j[1], n[0], n[1]))
    return 0.25 * math.pi * (
        3 * jx * jx * nx * nx + jx * jx * ny * ny + jy * jy * nx * nx
        + 3 * jy * jy * ny * ny + 4 * jx * jy * nx * ny
    )


# --- Smallness conditions ---

class SmallnessReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    U: float
    beta: float
    kappa_g: float
    gamma_sum: float = Field(description="sum_j |j| Gamma_j on the lattice plus the continuum tail")
    gamma_sum_estimate: float = Field(description="2 pi (2 kappa_g)^2 + 2 pi 2 kappa_g / |beta + 1|")
    split_constant: float = Field(description="four-part split estimate of c4 with eta = 1/10")
    lattice_constant: float = Field(description="c4 evaluated as a lattice supremum")
    contraction_value: float
    contraction_ok: bool
    sup_norm_bound: float
    alpha: float
    sup_norm_ok: bool

    @property
    def passes(self) -> bool:
        return self.contraction_ok and self.sup_norm_ok


def _gamma_sum(beta: float, kappa_g: float, radius: int) -> float:
    grid = get_grid(radius)
    k = grid.kmag[grid.mask]
    lattice = float(np.sum(k * gamma_envelope(k, beta, kappa_g)))
    # |j| Gamma_j = (2 kappa_g)^-beta |j|^beta beyond 2 kappa_g
    tail = 2 * math.pi * (2 * kappa_g) ** (-beta) * radius ** (beta + 2) / abs(beta + 2)
    return lattice + tail


def _split_constant(beta: float, kappa_g: float, gamma_sum: float, k_max: int) -> float:
    worst = 0.0
    for k in range(1, k_max + 1):
        gk = gamma_envelope(k, beta, kappa_g)
        if k <= 2 * kappa_g:
            bound = k * gamma_sum
        else:
            bound = SPLIT_ETA ** beta * k ** (beta + 1) * gamma_sum
            if SPLIT_ETA * k > 1:
                bound += (1 - SPLIT_ETA) ** (beta + 1) * k * gk * 2 * math.pi * m_beta(k, SPLIT_ETA, beta)
        worst = max(worst, bound / (k * k * gk))
    return worst


def _lattice_constant(beta: float, kappa_g: float, k_max: int) -> float:
    """sup_k |k|^-2 sum_j |k^j| |k-j|^beta Gamma_j / Gamma_k over a lattice-symmetric sample of k."""
    radius = min(k_max, 96)
    grid = get_grid(radius)
    jx = grid.kx[grid.mask].astype(float)
    jy = grid.ky[grid.mask].astype(float)
    gamma_j = gamma_envelope(grid.kmag[grid.mask], beta, kappa_g)

    # S_k is invariant under the lattice symmetries, so 0 <= ky <= kx suffices
    near = min(12, k_max)
    samples = [(kx, ky) for kx in range(1, near + 1) for ky in range(0, kx + 1) if kx * kx + ky * ky <= near * near]
    if k_max > near:
        samples += [(int(n), 0) for n in np.unique(np.geomspace(near + 1, k_max, 8).astype(int))]

    worst = 0.0
    for kx, ky in samples:
        d2 = (kx - jx) ** 2 + (ky - jy) ** 2
        keep = d2 > 0
        s = np.sum(np.abs(kx * jy[keep] - ky * jx[keep]) * d2[keep] ** (0.5 * beta) * gamma_j[keep])
        k2 = float(kx * kx + ky * ky)
        worst = max(worst, float(s) / (k2 * gamma_envelope(math.sqrt(k2), beta, kappa_g)))
    return worst


def smallness_diagnostics(velocity: VelocitySpec, source: SourceSpec) -> SmallnessReport:
    beta, kappa_g, U = velocity.beta, source.kappa_g, velocity.U
    _check_beta(beta)
    gamma_sum = _gamma_sum(beta, kappa_g, min(velocity.K_max, 96))
    estimate = 2 * math.pi * (2 * kappa_g) ** 2 + 2 * math.pi * 2 * kappa_g / abs(beta + 1)
    split = _split_constant(beta, kappa_g, gamma_sum, velocity.K_max)
    lattice = _lattice_constant(beta, kappa_g, velocity.K_max)
    contraction = math.sqrt(U) * lattice
    sup_bound = velocity_sup_norm_from_spec(velocity)
    alpha = sup_bound * sup_bound

    report = SmallnessReport(
        U=U, beta=beta, kappa_g=kappa_g,
        gamma_sum=gamma_sum, gamma_sum_estimate=estimate,
        split_constant=split, lattice_constant=lattice,
        contraction_value=contraction, contraction_ok=contraction <= 0.5,
        sup_norm_bound=sup_bound, alpha=alpha, sup_norm_ok=alpha < 1,
    )
    logger.info(
        f"[Predictor] smallness: U^1/2 c4 = {contraction:.3g} (split estimate c4 = {split:.3g}), "
        f"alpha = {alpha:.3g} -> {'ok' if report.passes else 'FAILED'}"
    )
    return report


# --- Band report ---

class BandPrediction(BaseModel):
    model_config = ConfigDict(frozen=True)

    kappa: float
    expected_vartheta: float
    expected_phi1: float
    lattice_vartheta: float
    lattice_phi1: float
    var_bound_vartheta: float
    var_bound_phi1: float
    velocity_band_coefficients: float
    velocity_band_domain: float
    error_budget: float = Field(description="quoted relative error O(kappa_g/kappa) + O(1/kappa)")
    flags: List[str] = Field(default_factory=list)


class PredictionReport(BaseModel):
    velocity: VelocitySpec
    source: SourceSpec
    G0: float
    G1: float
    bands: List[BandPrediction]
    checks: List[CheckResult] = Field(default_factory=list)

    def band(self, kappa: float) -> BandPrediction:
        for row in self.bands:
            if row.kappa == kappa:
                return row
        raise KeyError(kappa)


def predict_bands(velocity: VelocitySpec, source: SourceSpec, kappas: Sequence[float]) -> PredictionReport:
    U, beta = velocity.U, velocity.beta
    functionals = source_functionals(source)
    rows = []
    for kappa in kappas:
        ev = expected_band_power(kappa, source, U, beta, "vartheta")
        ep = expected_band_power(kappa, source, U, beta, "phi1")
        vv = variance_band_bound(kappa, source, U, beta, "vartheta")
        vp = variance_band_bound(kappa, source, U, beta, "phi1")
        flags = sorted(set(ev.flags + ep.flags + vv.flags + vp.flags))
        rows.append(BandPrediction(
            kappa=float(kappa),
            expected_vartheta=ev.value,
            expected_phi1=ep.value,
            lattice_vartheta=lattice_band_expectation(kappa, source, U, beta, "vartheta", velocity.K_max),
            lattice_phi1=lattice_band_expectation(kappa, source, U, beta, "phi1", velocity.K_max),
            var_bound_vartheta=vv.value,
            var_bound_phi1=vp.value,
            velocity_band_coefficients=velocity_band_power(kappa, U, beta, "coefficients"),
            velocity_band_domain=velocity_band_power(kappa, U, beta, "domain"),
            error_budget=source.kappa_g / kappa + 1.0 / kappa,
            flags=flags,
        ))
    logger.info(f"[Predictor] {len(rows)} band predictions (G0={functionals.G0:.6g}, G1={functionals.G1:.6g})")
    return PredictionReport(velocity=velocity, source=source, G0=functionals.G0, G1=functionals.G1, bands=rows)
