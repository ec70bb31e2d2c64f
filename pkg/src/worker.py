"""
Ensemble harness.

Every sample draws fresh velocity phases phi (and source phases xi unless the
config freezes them) from seeds derived from (master seed, sample index), so a
run is reproducible bit for bit whatever the thread count: samples are mapped
in index order and reduced in index order.
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from dotenv import load_dotenv
from loguru import logger

from src.core.config import EnsembleConfig
from src.core.errors import SampleFailedError
from src.core.fields import build_source, build_streamfunction, source_functionals, velocity_from_streamfunction
from src.core.lattice import DyadicBand, band_power, dyadic_band
from src.core.phases import PhaseAssignment, derive_seed, frozen_family, sample_phase_family, sample_static_phases
from src.core.predictor import (
    BELOW_VALIDITY,
    PredictionReport,
    SmallnessReport,
    predict_bands,
    smallness_diagnostics,
)
from src.core.static_solver import (
    count_envelope_violations,
    first_order_term,
    iterate_static,
    remainder_band_check,
    steady_state_without_flow,
    vartheta_envelope,
)
from src.core.statistics import BandStatistics, ScalingFit, band_statistics, fit_scaling_exponent
from src.core.timedep_solver import (
    TimeSolveConfig,
    band_correction_series,
    band_power_quadrature,
    evolve_full,
    theta1_band,
    uniform_times,
)
from src.core.validator import CheckReport, validate_and_log

load_dotenv()

PROGRESS_STEPS = 10
# largest chi_k/kappa^2 at which the static law is still compared
STATIC_SEPARATION = 0.05


def resolve_threads(requested: Optional[int] = None) -> int:
    """--threads, then the config, then BHT_LAB_THREADS, then 1."""
    if requested:
        return int(requested)
    env = os.getenv("BHT_LAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            logger.warning(f"[Ensemble] ignoring BHT_LAB_THREADS={env!r}")
    return 1


@dataclass
class SampleRecord:
    index: int
    band_powers: np.ndarray
    envelope_violations: int = 0
    iterations: int = 0
    max_ratio: float = 0.0
    remainder_powers: Optional[np.ndarray] = None
    full_band_powers: Optional[np.ndarray] = None


@dataclass
class EnsembleResult:
    mode: str
    config: EnsembleConfig
    stats: List[BandStatistics]
    prediction: PredictionReport
    checks: CheckReport
    smallness: SmallnessReport
    fits: Dict[str, ScalingFit] = field(default_factory=dict)
    samples: List[SampleRecord] = field(default_factory=list)
    corrections: Dict[float, Tuple[float, ...]] = field(default_factory=dict)
    quadrature: Dict[float, float] = field(default_factory=dict)

    @property
    def band_powers(self) -> np.ndarray:
        return np.array([s.band_powers for s in self.samples])


# --- Per-sample tasks ---

def sample_phases(config: EnsembleConfig, index: int) -> Tuple[PhaseAssignment, PhaseAssignment]:
    """(phi, xi) for one sample."""
    settings = config.ensemble
    s = 0 if settings.identical_samples else index
    k_max = config.velocity.K_max
    phi = sample_static_phases(derive_seed(settings.seed, s, 0), k_max)
    if settings.freeze_source:
        xi_seed = config.source.seed if config.source.seed is not None else derive_seed(settings.seed, 0, 1)
    else:
        xi_seed = derive_seed(settings.seed, s, 1)
    return phi, sample_static_phases(xi_seed, k_max)


def run_static_sample(config: EnsembleConfig, bands: List[DyadicBand], envelope: np.ndarray,
                      index: int) -> SampleRecord:
    phi, xi = sample_phases(config, index)
    u = velocity_from_streamfunction(build_streamfunction(config.velocity, phi))
    g = build_source(config.source, xi)
    vartheta = first_order_term(u, g)
    record = SampleRecord(
        index=index,
        band_powers=np.array([band_power(vartheta, b) for b in bands]),
        envelope_violations=count_envelope_violations(vartheta, envelope),
    )
    if config.ensemble.full_solve:
        result = iterate_static(
            u, g, tol=config.solver.tol, max_iter=config.solver.max_iter,
            envelope=envelope, U=config.velocity.U,
        )
        grad_inv_sup = source_functionals(config.source).grad_inv_sup
        record.iterations = result.iterations
        record.max_ratio = max(result.contraction_ratios, default=0.0)
        record.envelope_violations += result.envelope_violations
        record.remainder_powers = np.array([
            remainder_band_check(result, b.kappa, config.velocity.U, grad_inv_sup, config.velocity.beta)[0]
            for b in bands
        ])
    return record


def band_end_time(config: EnsembleConfig, kappa: float) -> float:
    return config.ensemble.relaxations / (kappa * kappa)


def run_timedep_sample(config: EnsembleConfig, bands: List[DyadicBand], envelope: np.ndarray,
                       index: int) -> SampleRecord:
    law = config.correlation
    settings = config.ensemble
    s = 0 if settings.identical_samples else index
    _, xi = sample_phases(config, index)
    g = build_source(config.source, xi)
    if law.shape == "constant":
        family = frozen_family(sample_static_phases(derive_seed(settings.seed, s, 0), config.velocity.K_max))
    else:
        family = sample_phase_family(derive_seed(settings.seed, s, 0), config.velocity.K_max, law)

    chi_max = 0.0 if law.shape == "constant" else float(law.chi_k(2 * config.velocity.K_max))
    powers = []
    for band in bands:
        times = uniform_times(band_end_time(config, band.kappa), (2 * band.kappa) ** 2, chi_max)
        powers.append(float(np.sum(np.abs(theta1_band(family, config.velocity, g, band.kappa, times, law)) ** 2)))
    record = SampleRecord(index=index, band_powers=np.array(powers))

    if settings.full_solve:
        t_end = band_end_time(config, bands[0].kappa)
        trajectory = evolve_full(
            family, config.velocity, g,
            TimeSolveConfig(t_end=t_end, dt=config.solver.dt, order=config.solver.order),
        )
        deviation = trajectory.final - steady_state_without_flow(g)
        record.full_band_powers = np.array([band_power(deviation, b) for b in bands])
    return record


def _run_sample(task, config, bands, envelope, index) -> SampleRecord:
    try:
        return task(config, bands, envelope, index)
    except Exception as e:
        raise SampleFailedError(index, e) from e


def _map_samples(task, config: EnsembleConfig, bands: List[DyadicBand], envelope: np.ndarray,
                 threads: int) -> List[SampleRecord]:
    n = config.ensemble.n_samples
    step = max(1, n // PROGRESS_STEPS)
    records = []
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = pool.map(lambda i: _run_sample(task, config, bands, envelope, i), range(n))
        for record in futures:
            records.append(record)
            if len(records) % step == 0 or len(records) == n:
                logger.info(f"[Ensemble] {len(records)}/{n} samples")
    return records


# --- Reduction and verdicts ---

def _statistics(records: List[SampleRecord], bands: List[DyadicBand], attr: str = "band_powers") -> List[BandStatistics]:
    matrix = np.array([getattr(r, attr) for r in records])
    return [band_statistics(b.kappa, matrix[:, i], b.count) for i, b in enumerate(bands)]


def _fits(stats: List[BandStatistics]) -> Dict[str, ScalingFit]:
    if len(stats) < 3 or any(s.sample_mean <= 0 for s in stats):
        return {}
    fits = {c: fit_scaling_exponent(stats, c) for c in ("mean", "density", "per-mode")}
    if all(s.sample_variance > 0 for s in stats):
        fits["fluctuation"] = fit_scaling_exponent(stats, "fluctuation")
    return fits


def _common_checks(config: EnsembleConfig, stats: List[BandStatistics], records: List[SampleRecord],
                   report: CheckReport):
    n = config.ensemble.n_samples
    for st in stats:
        report.check_at_most(
            f"independence kappa={st.kappa:g}", abs(st.lag1_autocorrelation), 3 / math.sqrt(n),
            detail="|lag-1 autocorrelation| <= 3/sqrt(n)",
        )
    violations = sum(r.envelope_violations for r in records)
    report.check_at_most("envelope violations", violations, 0, detail="|vartheta_k| <= |grad^-1 g|_inf U Gamma_k")


def _scaling_checks(config: EnsembleConfig, fits: Dict[str, ScalingFit], report: CheckReport):
    if "mean" in fits:
        report.check_close("scaling exponent", fits["mean"].slope, 2 * config.velocity.beta, abs_tol=0.3,
                           detail="log-log slope of band mean")
    if "fluctuation" in fits:
        report.check_close("fluctuation exponent", fits["fluctuation"].slope, -1.0, abs_tol=0.4,
                           detail="log-log slope of std/mean")


def _continuum_checks(config: EnsembleConfig, prediction: PredictionReport, stats: List[BandStatistics],
                      report: CheckReport, separation: float = 0.0):
    settings = config.ensemble
    for st in stats:
        row = prediction.band(st.kappa)
        if BELOW_VALIDITY in row.flags:
            report.add_warning(f"kappa={st.kappa:g} is below 2 kappa_g; continuum law not checked")
            continue
        if separation and float(config.correlation.chi_k(st.kappa)) / st.kappa ** 2 > separation:
            report.add_warning(f"kappa={st.kappa:g}: chi_k/kappa^2 > {separation:g}; static law not checked")
            continue
        report.check_close(
            f"mean vs law kappa={st.kappa:g}", st.sample_mean, row.expected_vartheta,
            abs_tol=settings.sigma * st.std_error, detail=f"{settings.sigma:g} standard errors",
        )
        report.check_close(
            f"mean tolerance kappa={st.kappa:g}", st.sample_mean, row.expected_vartheta,
            rel=settings.tolerance_for(st.kappa), detail="relative",
        )
        report.check_at_most(
            f"variance bound kappa={st.kappa:g}", st.sample_variance, row.var_bound_vartheta,
            slack=settings.slack,
        )


def run_static_ensemble(config: EnsembleConfig, threads: Optional[int] = None) -> EnsembleResult:
    smallness = smallness_diagnostics(config.velocity, config.source)
    if not smallness.passes:
        logger.warning("[Ensemble] smallness conditions fail; results are outside the perturbative regime")
    threads = threads or resolve_threads(config.ensemble.threads)
    bands = [dyadic_band(k, config.velocity.K_max) for k in config.bands.kappas]
    envelope = vartheta_envelope(config.velocity, config.source)
    logger.info(
        f"[Ensemble] static: {config.ensemble.n_samples} samples, K_max={config.velocity.K_max}, "
        f"bands={list(config.bands.kappas)}, threads={threads}"
    )
    records = _map_samples(run_static_sample, config, bands, envelope, threads)
    stats = _statistics(records, bands)
    prediction = predict_bands(config.velocity, config.source, config.bands.kappas)

    report = CheckReport("static ensemble")
    if not smallness.passes:
        report.add_warning("smallness conditions fail")
    for st in stats:
        lattice = prediction.band(st.kappa).lattice_vartheta
        report.check_close(
            f"mean vs lattice kappa={st.kappa:g}", st.sample_mean, lattice,
            abs_tol=config.ensemble.sigma * st.std_error, detail="exact lattice expectation",
        )
    _continuum_checks(config, prediction, stats, report)
    _common_checks(config, stats, records, report)
    if config.ensemble.full_solve:
        worst = max(r.max_ratio for r in records)
        report.check_at_most("iteration contraction", worst, 0.5, detail="largest increment ratio")
        rem = _statistics(records, bands, "remainder_powers")
        for st, vt in zip(rem, stats):
            report.check_at_most(f"remainder subdominant kappa={st.kappa:g}", st.sample_mean, vt.sample_mean)
    fits = _fits(stats)
    _scaling_checks(config, fits, report)

    prediction = prediction.model_copy(update={"checks": report.checks})
    validate_and_log(report)
    return EnsembleResult("static", config, stats, prediction, report, smallness, fits, records)


def run_timedep_ensemble(config: EnsembleConfig, threads: Optional[int] = None) -> EnsembleResult:
    law = config.correlation
    smallness = smallness_diagnostics(config.velocity, config.source)
    threads = threads or resolve_threads(config.ensemble.threads)
    bands = [dyadic_band(k, config.velocity.K_max) for k in config.bands.kappas]
    envelope = vartheta_envelope(config.velocity, config.source)
    logger.info(
        f"[Ensemble] timedep ({law.shape}, chi={law.chi:g}, eta={law.eta:g}): "
        f"{config.ensemble.n_samples} samples, bands={list(config.bands.kappas)}, threads={threads}"
    )
    records = _map_samples(run_timedep_sample, config, bands, envelope, threads)
    stats = _statistics(records, bands)
    prediction = predict_bands(config.velocity, config.source, config.bands.kappas)

    U, beta = config.velocity.U, config.velocity.beta
    report = CheckReport("time-dependent ensemble")
    if not smallness.passes:
        report.add_warning("smallness conditions fail")
    corrections = {}
    quadrature = {}
    for st in stats:
        t_end = band_end_time(config, st.kappa)
        quad = band_power_quadrature(st.kappa, law, config.source, U, beta, config.velocity.K_max, t_end)
        quadrature[st.kappa] = quad
        report.check_close(
            f"mean vs quadrature kappa={st.kappa:g}", st.sample_mean, quad,
            abs_tol=config.ensemble.sigma * st.std_error, detail="per-mode correlation kernel",
        )
        corrections[st.kappa] = band_correction_series(st.kappa, law, config.source, U, beta).terms
    if law.shape != "constant":
        _continuum_checks(config, prediction, stats, report, separation=STATIC_SEPARATION)
    else:
        _continuum_checks(config, prediction, stats, report)
    _common_checks(config, stats, records, report)
    if config.ensemble.full_solve:
        full = _statistics(records, bands, "full_band_powers")
        for st, vt in zip(full, stats):
            report.check_close(
                f"full solve kappa={st.kappa:g}", st.sample_mean, vt.sample_mean, rel=0.5,
                detail="theta - theta0 against the first-order term",
            )
    fits = _fits(stats)
    _scaling_checks(config, fits, report)

    prediction = prediction.model_copy(update={"checks": report.checks})
    validate_and_log(report)
    return EnsembleResult("timedep", config, stats, prediction, report, smallness, fits, records,
                          corrections, quadrature)


def run_ensemble(config: EnsembleConfig, threads: Optional[int] = None) -> EnsembleResult:
    if config.ensemble.mode == "timedep":
        return run_timedep_ensemble(config, threads)
    return run_static_ensemble(config, threads)
