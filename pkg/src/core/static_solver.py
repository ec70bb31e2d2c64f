"""
Static tracer problem  -Delta theta + u . grad theta = g.

The solution is built as the limit of
    theta^(0)   = -Delta^{-1} g
    theta^(n+1) = -Delta^{-1} [g - u . grad theta^(n)]
and split as theta = theta^(0) + vartheta + remainder, vartheta being the first
increment. dense_oracle_solve solves the same truncated linear system directly.
"""

import math
import warnings
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from loguru import logger
from scipy import linalg

from src.core.errors import DivergentIterationError, SingularSystemError
from src.core.fields import SourceSpec, Velocity, VelocitySpec, source_functionals, streamfunction_from_velocity
from src.core.lattice import SpectralField, accumulate_shifted, band_power, convolve_advection, dyadic_band, get_grid
from src.core.predictor import gamma_envelope

EARLY_STEPS = 3
EARLY_RATIO = 0.9
MAX_DENSE_MODES = 5000


@dataclass(frozen=True, eq=False)
class StaticSolveResult:
    theta: SpectralField
    theta0: SpectralField
    vartheta: SpectralField
    remainder: SpectralField
    iterations: int
    increment_norms: List[float]
    envelope_violations: int = 0

    @property
    def contraction_ratios(self) -> List[float]:
        n = self.increment_norms
        return [n[i + 1] / n[i] for i in range(len(n) - 1) if n[i] > 0]


def steady_state_without_flow(g: SpectralField) -> SpectralField:
    """theta0_k = g_k / |k|^2"""
    return g.map(g.grid.inv_k2)


def first_order_term(u: Velocity, g: SpectralField) -> SpectralField:
    """
    vartheta_k = phi1_k / |k|^2 with phi1_k = sum_j (k ^ j) psi_{k-j} g_j / |j|^2.

    Sums over the source support only; convolve_advection gives the same
    result through -(u . grad theta0).
    """
    psi = streamfunction_from_velocity(u)
    grid = g.grid
    phi1 = np.zeros_like(g.coeffs)
    shifted = np.zeros_like(g.coeffs)
    for i, j in np.argwhere(g.coeffs != 0):
        jv = grid.wavevector(i, j)
        shifted[:] = 0.0
        accumulate_shifted(shifted, psi.coeffs, jv.kx, jv.ky, g.coeffs[i, j] / jv.norm2)
        phi1 += (grid.kx * jv.ky - grid.ky * jv.kx) * shifted
    return SpectralField(g.k_max, phi1 * grid.inv_k2)


def vartheta_envelope(velocity: VelocitySpec, source: SourceSpec) -> np.ndarray:
    """|grad^{-1} g|_inf U Gamma(|k|; beta) on the velocity grid (zero off the stored modes)."""
    grid = get_grid(velocity.K_max)
    env = np.zeros(grid.k2.shape)
    grad_inv_sup = source_functionals(source).grad_inv_sup
    env[grid.mask] = grad_inv_sup * velocity.U * gamma_envelope(grid.kmag[grid.mask], velocity.beta, source.kappa_g)
    return env


def count_envelope_violations(f: SpectralField, envelope: np.ndarray, scale: float = 1.0) -> int:
    return int(np.sum(np.abs(f.coeffs) > scale * envelope * (1 + 1e-9) + 1e-300))


def iterate_static(u: Velocity, g: SpectralField, tol: Optional[float] = None, max_iter: int = 200,
                   envelope: Optional[np.ndarray] = None, U: Optional[float] = None) -> StaticSolveResult:
    """
    Fixed-point iteration to increment L2 norm <= tol (default 1e-13 |theta0|).

    Raises DivergentIterationError when an early ratio exceeds 0.9 or a ratio
    from step 5 on is >= 1. With envelope (and U) given, increments n >= 2 are
    checked against 2^{-n+1} sqrt(U) * envelope and violations are counted.
    """
    theta0 = steady_state_without_flow(g)
    if tol is None:
        tol = 1e-13 * theta0.norm()
    if tol < 0:
        raise ValueError(f"tol must be nonnegative, got {tol}")

    theta = theta0
    vartheta = SpectralField.zeros(g.k_max)
    norms: List[float] = []
    violations = 0
    for n in range(1, max_iter + 1):
        new = steady_state_without_flow(g - convolve_advection(u, theta))
        increment = new - theta
        norms.append(increment.norm())
        if n == 1:
            vartheta = increment
        elif envelope is not None and U is not None:
            violations += count_envelope_violations(increment, envelope, 2.0 ** (1 - n) * math.sqrt(U))
        theta = new
        if norms[-1] <= tol:
            break
        if n >= 2 and norms[-2] > 0:
            ratio = norms[-1] / norms[-2]
            if (n <= EARLY_STEPS and ratio > EARLY_RATIO) or (n >= 5 and ratio >= 1):
                raise DivergentIterationError(
                    f"increment ratio {ratio:.3g} at step {n}; U is too large for the iteration to contract"
                )
    else:
        raise DivergentIterationError(f"no convergence to tol={tol:.3g} within {max_iter} steps")

    logger.debug(f"[StaticSolver] converged in {len(norms)} steps, last increment {norms[-1]:.3g}")
    if violations:
        logger.warning(f"[StaticSolver] {violations} iterate envelope violations")
    remainder = theta - theta0 - vartheta
    return StaticSolveResult(theta, theta0, vartheta, remainder, len(norms), norms, violations)


def static_residual(u: Velocity, g: SpectralField, theta: SpectralField) -> float:
    """|-Delta theta + u . grad theta - g|_{L2}"""
    lhs = theta.map(theta.grid.k2) + convolve_advection(u, theta)
    return (lhs - g).norm()


def _dense_operator(u: Velocity, modes: np.ndarray, k_max: int) -> np.ndarray:
    ux, uy = u
    n = len(modes)
    kx, ky = modes[:, 0], modes[:, 1]
    A = np.zeros((n, n), dtype=complex)
    # rows in blocks keep the index arrays small
    for start in range(0, n, 512):
        rows = slice(start, min(n, start + 512))
        dx = kx[rows, None] - kx[None, :]
        dy = ky[rows, None] - ky[None, :]
        valid = (np.abs(dx) <= k_max) & (np.abs(dy) <= k_max)
        ix = np.where(valid, dx + k_max, 0)
        iy = np.where(valid, dy + k_max, 0)
        u_x = np.where(valid, ux.coeffs[ix, iy], 0.0)
        u_y = np.where(valid, uy.coeffs[ix, iy], 0.0)
        A[rows] = 1j * (kx[None, :] * u_x + ky[None, :] * u_y)
    A[np.arange(n), np.arange(n)] += kx * kx + ky * ky
    return A


def dense_oracle_solve(u: Velocity, g: SpectralField, max_modes: int = MAX_DENSE_MODES) -> SpectralField:
    """Solve (-Delta + u . grad) theta = g over all stored modes by dense linear algebra."""
    grid = g.grid
    idx = np.argwhere(grid.mask)
    if len(idx) > max_modes:
        raise ValueError(f"{len(idx)} modes exceeds the dense solve limit {max_modes}")
    modes = idx - grid.k_max
    A = _dense_operator(u, modes, grid.k_max)
    b = g.coeffs[idx[:, 0], idx[:, 1]]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", linalg.LinAlgWarning)
            x = linalg.solve(A, b)
    except (linalg.LinAlgError, linalg.LinAlgWarning) as e:
        raise SingularSystemError(f"dense system is singular or ill-conditioned: {e}") from e
    out = np.zeros_like(g.coeffs)
    out[idx[:, 0], idx[:, 1]] = x
    logger.debug(f"[StaticSolver] dense oracle solved {len(idx)} modes")
    return SpectralField(g.k_max, out)


def remainder_band_check(result: StaticSolveResult, kappa: float, U: float,
                         grad_inv_sup: float, beta: float) -> Tuple[float, float]:
    """(|P_{kappa,2kappa} remainder|^2, grad_inv_sup^2 U^3 kappa^{2 beta})"""
    band = dyadic_band(kappa, result.remainder.k_max)
    return band_power(result.remainder, band), grad_inv_sup ** 2 * U ** 3 * kappa ** (2 * beta)
