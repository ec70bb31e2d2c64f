"""
Time-dependent tracer  d_t theta + u(t) . grad theta = Delta theta + g.

Three routes to the same object:
  - evolve_full: exponential time differencing on the full equation,
  - picard_iterate_time: the Duhamel fixed point on a time grid,
  - theta1_path / mode_power_*: the first-order term vartheta_k(t) per mode,
    either along sampled phase paths or in expectation through the
    correlation kernel int_0^t int_0^t e^{(s+r-2t)|k|^2} Phi(chi |s-r|) ds dr.

All time integrals of e^{-|k|^2 (t-s)} f(s) use the exponential-weighted
trapezoid rule: f is interpolated linearly on each step and the exponential is
integrated exactly, so large |k| never makes the quadrature stiff.
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Literal, Optional, Tuple

import numpy as np
from loguru import logger
from numpy.polynomial import legendre
from pydantic import BaseModel, ConfigDict, Field
from scipy import integrate

from src.core.errors import (
    ConvergenceGateError,
    DivergentPicardError,
    TruncationMismatchError,
    UnderResolvedError,
    UnstableStepError,
)
from src.core.fields import (
    SourceSpec,
    Velocity,
    VelocitySpec,
    build_source,
    source_functionals,
    velocity_from_streamfunction,
    velocity_sup_norm_bound,
)
from src.core.lattice import SpectralField, WaveVector, band_power, convolve_advection, dyadic_band, get_grid
from src.core.phases import (
    CorrelationLaw,
    PhasePathFamily,
    derive_seed,
    get_correlation_shape,
    sample_phase_path,
    sample_static_phases,
)
from src.core.predictor import dyadic_coefficient
from src.core.static_solver import steady_state_without_flow

POINTS_PER_SCALE = 20
SERIES_CUTOFF = 1e-3
# beyond x = 60 the weight e^{-x} is below double precision relative to the head
KERNEL_HORIZON = 60.0


class TimeSolveConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    t_end: float = Field(1.0, gt=0)
    dt: Optional[float] = Field(None, gt=0, description="step; default 1/(2 K_max^2)")
    order: Literal[1, 2] = 1
    picard_tol: float = Field(1e-10, gt=0)
    picard_max_iter: int = Field(60, ge=1)
    save_every: int = Field(0, ge=0, description="store every n-th step; 0 keeps the final state only")

    def step_for(self, k_max: int) -> float:
        return self.dt if self.dt is not None else 1.0 / (2.0 * k_max * k_max)


# --- Exponential weights ---

def phi1(z):
    """(e^z - 1)/z, entrywise, with the z -> 0 limit 1."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < SERIES_CUTOFF
    safe = np.where(small, 1.0, z)
    series = 1 + z / 2 + z * z / 6 + z ** 3 / 24
    return np.where(small, series, np.expm1(safe) / safe)


def phi2(z):
    """(e^z - 1 - z)/z^2"""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < SERIES_CUTOFF
    safe = np.where(small, 1.0, z)
    series = 0.5 + z / 6 + z * z / 24 + z ** 3 / 120
    return np.where(small, series, (np.expm1(safe) - safe) / (safe * safe))


def _left_weight(z):
    """(1 - e^{-z}(1 + z))/z^2, the weight of the left endpoint."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < SERIES_CUTOFF
    safe = np.where(small, 1.0, z)
    series = 0.5 - z / 3 + z * z / 8 - z ** 3 / 30
    return np.where(small, series, -(np.expm1(-safe) + safe * np.exp(-safe)) / (safe * safe))


def trapezoid_weights(a, h: float):
    """(decay, left, right) so that int_0^h e^{-a(h-s)} f(s) ds = left f(0) + right f(h) for linear f."""
    z = np.asarray(a, dtype=float) * h
    return np.exp(-z), h * _left_weight(z), h * phi2(-z)


def exp_trapezoid(a, times: np.ndarray, f: np.ndarray, final_only: bool = False):
    """
    I(t_i) = int_0^{t_i} e^{-a (t_i - s)} f(s) ds along the grid, I(t_0) = 0.

    f has the time axis first; a broadcasts against the remaining axes.
    """
    times = np.asarray(times, dtype=float)
    acc = np.zeros(f.shape[1:], dtype=complex)
    path = None if final_only else np.zeros(f.shape, dtype=complex)
    for i in range(len(times) - 1):
        decay, left, right = trapezoid_weights(a, times[i + 1] - times[i])
        acc = decay * acc + left * f[i] + right * f[i + 1]
        if path is not None:
            path[i + 1] = acc
    return acc if final_only else path


# --- Velocity along phase paths ---

def velocity_amplitude(spec: VelocitySpec) -> np.ndarray:
    grid = get_grid(spec.K_max)
    amp = np.zeros(grid.k2.shape)
    amp[grid.mask] = spec.U * grid.kmag[grid.mask] ** spec.beta
    return amp


def velocity_at(family: PhasePathFamily, spec: VelocitySpec, t: float, amplitude: Optional[np.ndarray] = None) -> Velocity:
    amp = velocity_amplitude(spec) if amplitude is None else amplitude
    return velocity_from_streamfunction(SpectralField(spec.K_max, amp * family.cis_at(t)))


def _check_gate(family: PhasePathFamily, spec: VelocitySpec) -> float:
    alpha = velocity_sup_norm_bound(velocity_at(family, spec, 0.0)) ** 2
    if alpha >= 1:
        raise ConvergenceGateError(f"(sum_k |u_k|)^2 = {alpha:.4g} >= 1")
    return alpha


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    coeffs: np.ndarray
    k_max: int

    def state(self, i: int) -> SpectralField:
        return SpectralField(self.k_max, self.coeffs[i])

    @property
    def final(self) -> SpectralField:
        return self.state(len(self.times) - 1)

    def __len__(self):
        return len(self.times)


# --- First-order term along paths ---

def _check_resolution(times: np.ndarray, a_max: float, chi_max: float = 0.0):
    scale = 1.0 / a_max
    if chi_max > 0:
        scale = min(scale, 1.0 / chi_max)
    h = float(np.max(np.diff(times))) if len(times) > 1 else 0.0
    if h * POINTS_PER_SCALE > scale * (1 + 1e-9):
        raise UnderResolvedError(
            f"step {h:.3g} gives fewer than {POINTS_PER_SCALE} points per scale {scale:.3g}"
        )


def _time_grid(times) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or len(times) == 0 or times[0] != 0.0:
        raise ValueError("time grid must start at 0")
    if np.any(np.diff(times) <= 0):
        raise ValueError("time grid must be strictly increasing")
    return times


def uniform_times(t_end: float, a_max: float, chi_max: float = 0.0) -> np.ndarray:
    """Smallest uniform grid on [0, t_end] that passes the resolution check."""
    scale = 1.0 / a_max if chi_max <= 0 else min(1.0 / a_max, 1.0 / chi_max)
    n = max(1, int(math.ceil(t_end * POINTS_PER_SCALE / scale)))
    return np.linspace(0.0, t_end, n + 1)


def _phi1_path(k: WaveVector, g: SpectralField, spec: VelocitySpec, phase_of, times: np.ndarray) -> np.ndarray:
    """phi1_k(s) = sum_j (k ^ j) psi_{k-j}(s) g_j/|j|^2 on the grid; phase_of(d) gives phi_d(times)."""
    grid = g.grid
    f = np.zeros(len(times), dtype=complex)
    for i, j in np.argwhere(g.coeffs != 0):
        jv = grid.wavevector(i, j)
        d = k - jv
        if d.norm2 == 0 or d.norm2 > spec.K_max ** 2:
            continue
        amp = spec.U * d.norm ** spec.beta
        f += k.wedge(jv) * amp * np.exp(1j * phase_of(d)) * g.coeffs[i, j] / jv.norm2
    return f


def theta1_path(family: PhasePathFamily, spec: VelocitySpec, g: SpectralField, k, times,
                law: Optional[CorrelationLaw] = None, full: bool = False):
    """vartheta_k(t) at times[-1] (or along the grid with full=True) for one velocity realisation."""
    times = _time_grid(times)
    k = WaveVector(int(k[0]), int(k[1]))
    if k.norm2 == 0:
        raise ValueError("the zero mode has no first-order term")
    chi_max = 0.0
    if law is not None and law.shape != "constant":
        chi_max = float(law.chi_k(2 * spec.K_max))
    _check_resolution(times, k.norm2, chi_max)
    f = _phi1_path(k, g, spec, lambda d: family.path(d, times).values, times)
    path = exp_trapezoid(float(k.norm2), times, f)
    return path if full else complex(path[-1])


def theta1_band(family: PhasePathFamily, spec: VelocitySpec, g: SpectralField, kappa: float,
                times, law: Optional[CorrelationLaw] = None, chunk: int = 128) -> np.ndarray:
    """vartheta_k(times[-1]) for every mode of the dyad [kappa, 2 kappa), in band order."""
    times = _time_grid(times)
    grid = get_grid(spec.K_max)
    band = dyadic_band(kappa, spec.K_max)
    kx = grid.kx[band.mask]
    ky = grid.ky[band.mask]
    a = grid.k2[band.mask].astype(float)
    chi_max = 0.0
    if law is not None and law.shape != "constant":
        chi_max = float(law.chi_k(2 * spec.K_max))
    _check_resolution(times, float(a.max()), chi_max)

    amp = velocity_amplitude(spec)
    src = [(g.grid.wavevector(i, j), g.coeffs[i, j]) for i, j in np.argwhere(g.coeffs != 0)]
    out = np.zeros(len(kx), dtype=complex)
    K = spec.K_max
    for start in range(0, len(kx), chunk):
        sl = slice(start, start + chunk)
        ckx, cky = kx[sl], ky[sl]
        f = np.zeros((len(times), len(ckx)), dtype=complex)
        for jv, gj in src:
            dx, dy = ckx - jv.kx, cky - jv.ky
            valid = (np.abs(dx) <= K) & (np.abs(dy) <= K)
            ix, iy = np.where(valid, dx + K, 0), np.where(valid, dy + K, 0)
            valid &= grid.mask[ix, iy]
            weight = np.where(valid, (ckx * jv.ky - cky * jv.kx) * amp[ix, iy] * gj / jv.norm2, 0.0)
            phases = family.initial.phases[ix, iy][None, :] + family.rates[ix, iy][None, :] * times[:, None]
            f += weight[None, :] * np.exp(1j * phases)
        out[sl] = exp_trapezoid(a[sl], times, f, final_only=True)
    return out


# --- Correlation kernels ---

@dataclass(frozen=True)
class ModePowerEstimate:
    k: WaveVector
    t: float
    value: float
    method: str
    std_error: float = 0.0
    terms: Tuple[float, ...] = ()
    remainder: float = 0.0
    flags: Tuple[str, ...] = ()


@lru_cache(maxsize=65536)
def time_kernel(a: float, c: float, t: float, shape: str = "constant") -> float:
    """
    int_0^t int_0^t e^{(s+r-2t) a} Phi(c |s-r|) ds dr, reduced to one dimension:
    (1/a^2) int_0^{a t} Phi(c x / a) [e^{-x} - e^{x - 2 a t}] dx. t may be inf.
    """
    phi = get_correlation_shape(shape)
    upper = min(a * t, KERNEL_HORIZON) if math.isfinite(t) else KERNEL_HORIZON
    if upper <= 0:
        return 0.0
    if shape == "constant":
        if not math.isfinite(t):
            return 1.0 / (a * a)
        return float(-np.expm1(-a * t)) ** 2 / (a * a)
    at2 = 2 * a * t if math.isfinite(t) else math.inf

    def integrand(x):
        return float(phi.value(c * x / a)) * (math.exp(-x) - (math.exp(x - at2) if math.isfinite(at2) else 0.0))

    value, _ = integrate.quad(integrand, 0.0, upper, epsabs=1e-15, epsrel=1e-12, limit=200)
    return value / (a * a)


def static_kernel_quadrature(a: float, t: float) -> float:
    """The Phi == 1 kernel through the general quadrature path (no closed-form shortcut)."""
    upper = a * t

    def integrand(x):
        return math.exp(-x) - math.exp(x - 2 * upper)

    value, _ = integrate.quad(integrand, 0.0, upper, epsabs=1e-16, epsrel=1e-13, limit=200)
    return value / (a * a)


def time_kernel_double(a: float, c: float, t: float, shape: str = "constant") -> float:
    """Same kernel as time_kernel, by two-dimensional quadrature over the lower triangle."""
    if not math.isfinite(t):
        raise ValueError("the double integral needs finite t")
    phi = get_correlation_shape(shape)
    T = a * t

    def integrand(y, x):
        return math.exp(x + y - 2 * T) * float(phi.value(c * (x - y) / a))

    value, _ = integrate.dblquad(integrand, 0.0, T, lambda x: 0.0, lambda x: x, epsabs=1e-14, epsrel=1e-11)
    return 2 * value / (a * a)


def phi_hat(law: CorrelationLaw, k_mag: float, t: float) -> float:
    """2 int_{-t}^{t} Phi_k(2 s) ds = 4 int_0^t Phi(2 chi_k s) ds"""
    chi = float(law.chi_k(k_mag))
    value, _ = integrate.quad(lambda s: float(law.value(2 * chi * s)), 0.0, t, epsabs=1e-15, epsrel=1e-12)
    return 4 * value


def kernel_tau_sigma(a: float, law: CorrelationLaw, d_mag: float, t: float) -> float:
    """The kernel rewritten in tau = (s+r)/2, sigma = (s-r)/2: split at t/2, inner integral through phi_hat."""
    def outer_first(tau):
        return math.exp(2 * a * (tau - t)) * phi_hat(law, d_mag, tau)

    def outer_second(tau):
        return math.exp(2 * a * (tau - t)) * phi_hat(law, d_mag, t - tau)

    first, _ = integrate.quad(outer_first, 0.0, t / 2, epsabs=1e-15, epsrel=1e-11)
    second, _ = integrate.quad(outer_second, t / 2, t, epsabs=1e-15, epsrel=1e-11)
    return first + second


def variance_kernel(a: float, c1: float, c2: float, t: float, shape: str = "gaussian", nodes: int = 16) -> float:
    """
    Four-fold integral of e^{(s1+s2+s3+s4-4t) a} Phi(c1|s1-s2|) Phi(c2|s3-s4|) over [0, t]^4
    by tensor Gauss-Legendre on the full four-dimensional grid. For an even, smooth
    Phi it should equal time_kernel(a, c1, t) * time_kernel(a, c2, t).
    """
    phi = get_correlation_shape(shape)
    x, w = legendre.leggauss(nodes)
    s = 0.5 * t * (x + 1)
    w = 0.5 * t * w
    s1, s2, s3, s4 = np.meshgrid(s, s, s, s, indexing="ij", sparse=True)
    w1, w2, w3, w4 = np.meshgrid(w, w, w, w, indexing="ij", sparse=True)
    integrand = (
        np.exp(a * (s1 + s2 + s3 + s4 - 4 * t))
        * phi.value(c1 * np.abs(s1 - s2))
        * phi.value(c2 * np.abs(s3 - s4))
    )
    return float(np.sum(w1 * w2 * w3 * w4 * integrand))


# --- Expected mode power ---

def _source_terms(k: WaveVector, source: SourceSpec, beta: float, k_max: Optional[int]):
    """[(d = k - j, gamma_j^2 (k^j)^2 |k-j|^{2 beta})] over source modes with nonzero weight."""
    grid = get_grid(source.support_radius)
    gamma = source.gamma_array(source.support_radius)
    out = []
    for i, j in np.argwhere(gamma > 0):
        jv = grid.wavevector(i, j)
        d = k - jv
        if d.norm2 == 0 or (k_max is not None and d.norm2 > k_max * k_max):
            continue
        weight = gamma[i, j] ** 2 * k.wedge(jv) ** 2 * float(d.norm2) ** beta
        if weight:
            out.append((d, weight))
    return out


def mode_power_quadrature(k, law: CorrelationLaw, source: SourceSpec, U: float, beta: float,
                          t: float = math.inf, method: str = "reduced", k_max: Optional[int] = None) -> ModePowerEstimate:
    """E|vartheta_k(t)|^2 = U^2 sum_j gamma_j^2 (k^j)^2 |k-j|^{2 beta} K(|k|^2, chi_{k-j}, t)."""
    k = WaveVector(int(k[0]), int(k[1]))
    if k.norm2 == 0:
        raise ValueError("the zero mode has no first-order term")
    if t <= 0:
        return ModePowerEstimate(k, t, 0.0, "quadrature")
    a = float(k.norm2)
    kernel = time_kernel if method == "reduced" else time_kernel_double
    if method not in ("reduced", "double"):
        raise ValueError(f"Unknown quadrature method: {method}")
    total = 0.0
    for d, weight in _source_terms(k, source, beta, k_max):
        c = float(law.chi_k(d.norm))
        total += weight * kernel(a, c, t, law.shape)
    return ModePowerEstimate(k, t, U * U * total, f"quadrature-{method}")


def mode_power_series(k, law: CorrelationLaw, source: SourceSpec, U: float, beta: float,
                      n_terms: int = 2, k_max: Optional[int] = None) -> ModePowerEstimate:
    """
    t -> inf expansion  |k|^-4 [sum_{m<=n} (chi/|k|^2)^m Phi^(m)(0)]  per source term.

    The remainder (chi/|k|^2)^n int_0^inf e^{-s|k|^2/chi} Phi^(n+1)(s) ds is
    evaluated by quadrature and reported separately; partial sum plus remainder
    equals the t -> inf quadrature.
    """
    if n_terms < 0:
        raise ValueError(f"n_terms must be >= 0, got {n_terms}")
    k = WaveVector(int(k[0]), int(k[1]))
    a = float(k.norm2)
    shape = law.correlation_shape
    derivs = [shape.derivative_at_zero(m) for m in range(n_terms + 1)]
    terms = np.zeros(n_terms + 1)
    remainder = 0.0
    flags = []
    for d, weight in _source_terms(k, source, beta, k_max):
        ratio = float(law.chi_k(d.norm)) / a
        if ratio > 0.1 and "weak-separation" not in flags:
            flags.append("weak-separation")
        for m in range(n_terms + 1):
            terms[m] += weight * ratio ** m * derivs[m] / (a * a)
        tail, _ = integrate.quad(
            lambda x: math.exp(-x) * float(shape.derivative(n_terms + 1, ratio * x)),
            0.0, KERNEL_HORIZON, epsabs=1e-15, epsrel=1e-12, limit=200,
        )
        remainder += weight * ratio ** (n_terms + 1) * tail / (a * a)
    terms *= U * U
    remainder *= U * U
    if flags:
        logger.warning(f"[TimeSolver] series at k={tuple(k)}: chi_{{k-j}}/|k|^2 > 0.1, asymptotics are weak")
    return ModePowerEstimate(
        k, math.inf, float(terms.sum()), f"series-{n_terms}",
        terms=tuple(float(x) for x in terms), remainder=float(remainder), flags=tuple(flags),
    )


def mode_power_paths(k, law: CorrelationLaw, spec: VelocitySpec, source: SourceSpec, t: float,
                     n_paths: int, seed: int) -> ModePowerEstimate:
    """Sample mean of |vartheta_k(t)|^2 over independent phase paths (fresh xi per path)."""
    k = WaveVector(int(k[0]), int(k[1]))
    chi_max = 0.0 if law.shape == "constant" else float(law.chi_k(2 * spec.K_max))
    times = uniform_times(t, float(k.norm2), chi_max)
    values = np.zeros(n_paths)
    for p in range(n_paths):
        path_seed = derive_seed(seed, p, 0)
        xi = sample_static_phases(derive_seed(seed, p, 1), spec.K_max)
        g = build_source(source, xi)
        f = _phi1_path(k, g, spec, lambda d: sample_phase_path(path_seed, d, law, times).values, times)
        values[p] = abs(exp_trapezoid(float(k.norm2), times, f, final_only=True)) ** 2
    std_error = float(np.std(values, ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    return ModePowerEstimate(k, t, float(values.mean()), "path-MC", std_error=std_error)


def band_power_quadrature(kappa: float, law: CorrelationLaw, source: SourceSpec, U: float, beta: float,
                          k_max: int, t: float = math.inf) -> float:
    """Sum of mode_power_quadrature over the dyad [kappa, 2 kappa)."""
    band = dyadic_band(kappa, k_max)
    return float(sum(mode_power_quadrature(k, law, source, U, beta, t, k_max=k_max).value for k in band.members))


@dataclass(frozen=True)
class BandCorrection:
    total: float
    terms: Tuple[float, ...]
    flags: Tuple[str, ...] = ()


def band_correction_series(kappa: float, law: CorrelationLaw, source: SourceSpec, U: float, beta: float,
                           n_terms: int = 2) -> BandCorrection:
    """pi G0 U^2 kappa^{2 beta} sum_n c(2 beta + n(eta-2)) Phi^(n)(0) chi^n kappa^{(eta-2) n}, c(x) = (2^x-1)/x."""
    g0 = source_functionals(source).G0
    shape = law.correlation_shape
    lead = math.pi * g0 * U * U * kappa ** (2 * beta)
    terms = []
    flags = []
    for n in range(n_terms + 1):
        x = 2 * beta + n * (law.eta - 2)
        coeff, limit_used = dyadic_coefficient(x)
        if limit_used:
            logger.warning(f"[TimeSolver] correction term {n}: zero exponent, coefficient replaced by ln 2")
            flags.append(f"limit-replaced-{n}")
        terms.append(lead * coeff * shape.derivative_at_zero(n) * law.chi ** n * kappa ** ((law.eta - 2) * n))
    return BandCorrection(float(sum(terms)), tuple(terms), tuple(flags))


def chi_for_correction(kappa: float, beta: float, shape: str = "gaussian", eta: float = 0.0,
                       order: int = 2, fraction: float = 0.05) -> float:
    """chi at which |term n / term 0| of band_correction_series equals fraction at this kappa."""
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    derivative = get_correlation_shape(shape).derivative_at_zero(order)
    if derivative == 0:
        raise ValueError(f"Phi^({order})(0) = 0 for '{shape}'; that term carries no correction")
    lead, _ = dyadic_coefficient(2 * beta)
    coeff, _ = dyadic_coefficient(2 * beta + order * (eta - 2))
    return (fraction * abs(lead / (coeff * derivative))) ** (1.0 / order) * kappa ** (2 - eta)


# --- Full equation ---

def _nonlinear(u: Velocity, g: SpectralField, theta: np.ndarray, k_max: int) -> np.ndarray:
    return g.coeffs - convolve_advection(u, SpectralField(k_max, theta)).coeffs


def evolve_full(family: PhasePathFamily, spec: VelocitySpec, g: SpectralField, config: TimeSolveConfig,
                theta_init: Optional[SpectralField] = None) -> Trajectory:
    """
    ETD1:    theta <- e^{-ah} theta + h phi1(-ah) N(theta, t)
    ETD2RK:  plus h phi2(-ah) [N(predictor, t+h) - N(theta, t)]
    with a = |k|^2 and N = g - u(t) . grad theta. Starts from theta0 = -Delta^{-1} g.
    """
    K = spec.K_max
    if family.k_max != K or g.k_max != K:
        raise TruncationMismatchError(f"family K_max={family.k_max}, source K_max={g.k_max}, velocity K_max={K}")
    alpha = _check_gate(family, spec)
    h_default = 1.0 / (2.0 * K * K)
    h = config.step_for(K)
    if h > h_default * (1 + 1e-12):
        logger.warning(f"[TimeSolver] dt={h:.3g} exceeds the resolution bound 1/(2 K_max^2)={h_default:.3g}")
    n_steps = max(1, int(math.ceil(config.t_end / h - 1e-9)))
    h = config.t_end / n_steps

    grid = get_grid(K)
    a = grid.k2.astype(float)
    decay = np.exp(-a * h)
    w1 = h * phi1(-a * h)
    w2 = h * phi2(-a * h)
    amp = velocity_amplitude(spec)

    theta = (theta_init if theta_init is not None else steady_state_without_flow(g)).coeffs.copy()
    times = [0.0]
    saved = [theta.copy()]
    u_now = velocity_at(family, spec, 0.0, amp)
    for n in range(n_steps):
        t = n * h
        u_next = velocity_at(family, spec, t + h, amp) if not family.is_frozen else u_now
        N0 = _nonlinear(u_now, g, theta, K)
        pred = decay * theta + w1 * N0
        if config.order == 2:
            pred = pred + w2 * (_nonlinear(u_next, g, pred, K) - N0)
        theta = pred
        if not np.all(np.isfinite(theta)):
            raise UnstableStepError(f"non-finite coefficients at t={t + h:.4g}")
        u_now = u_next
        last = n == n_steps - 1
        if last or (config.save_every and (n + 1) % config.save_every == 0):
            times.append(t + h)
            saved.append(theta.copy())
    if not config.save_every:
        times, saved = [0.0, config.t_end], [saved[0], saved[-1]]
    logger.debug(f"[TimeSolver] evolved {n_steps} steps (order {config.order}, alpha={alpha:.3g})")
    return Trajectory(np.array(times), np.array(saved), K)


# --- Picard iteration ---

@dataclass(frozen=True, eq=False)
class PicardResult:
    trajectory: Trajectory
    iterations: int
    energies: List[float] = field(default_factory=list)

    @property
    def contraction(self) -> float:
        e = self.energies
        ratios = [e[i + 1] / e[i] for i in range(len(e) - 1) if e[i] > 0]
        return max(ratios) if ratios else 0.0


def picard_step(family: PhasePathFamily, spec: VelocitySpec, g: SpectralField, times: np.ndarray,
                path: np.ndarray) -> np.ndarray:
    """theta^(n+1)(t) = theta0 - int_0^t e^{(t-s) Delta} [u(s) . grad theta^(n)(s)] ds on the grid."""
    K = spec.K_max
    amp = velocity_amplitude(spec)
    forcing = np.empty_like(path)
    for i, t in enumerate(times):
        u = velocity_at(family, spec, float(t), amp)
        forcing[i] = -convolve_advection(u, SpectralField(K, path[i])).coeffs
    a = get_grid(K).k2.astype(float)
    return steady_state_without_flow(g).coeffs[None] + exp_trapezoid(a, times, forcing)


def _h1_energy(times: np.ndarray, diff: np.ndarray, k2: np.ndarray) -> float:
    per_time = np.sum(k2[None] * np.abs(diff) ** 2, axis=(1, 2))
    return float(integrate.trapezoid(per_time, times))


def picard_iterate_time(family: PhasePathFamily, spec: VelocitySpec, g: SpectralField,
                        config: TimeSolveConfig) -> PicardResult:
    K = spec.K_max
    _check_gate(family, spec)
    h = config.step_for(K)
    n_steps = max(1, int(math.ceil(config.t_end / h - 1e-9)))
    times = np.linspace(0.0, config.t_end, n_steps + 1)
    k2 = get_grid(K).k2.astype(float)

    theta0 = steady_state_without_flow(g).coeffs
    path = np.broadcast_to(theta0, (len(times),) + theta0.shape).copy()
    scale = _h1_energy(times, path, k2)
    energies: List[float] = []
    for n in range(1, config.picard_max_iter + 1):
        new = picard_step(family, spec, g, times, path)
        if not np.all(np.isfinite(new)):
            raise DivergentPicardError(f"non-finite iterate at step {n}")
        energies.append(_h1_energy(times, new - path, k2))
        path = new
        if math.sqrt(energies[-1]) <= config.picard_tol * math.sqrt(max(scale, 1e-300)):
            break
        if n >= 2 and energies[-2] > 0 and energies[-1] / energies[-2] >= 1:
            raise DivergentPicardError(
                f"energy ratio {energies[-1] / energies[-2]:.3g} at iterate {n}; iterates do not contract"
            )
    else:
        raise DivergentPicardError(f"no convergence within {config.picard_max_iter} iterates")
    logger.debug(f"[TimeSolver] Picard converged in {len(energies)} iterates")
    return PicardResult(Trajectory(times, path, K), len(energies), energies)


def deviation_band_power(trajectory: Trajectory, g: SpectralField, kappa: float) -> np.ndarray:
    """Band power of theta(t) - g/|k|^2 at every stored time."""
    steady = steady_state_without_flow(g)
    band = dyadic_band(kappa, trajectory.k_max)
    return np.array([band_power(trajectory.state(i) - steady, band) for i in range(len(trajectory))])
