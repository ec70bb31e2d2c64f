import pytest

from src.core.config import EnsembleConfig
from src.core.fields import SourceSpec, VelocitySpec
from src.core.validator import CheckReport
from src.core.verification import (
    angular_suite,
    annulus_suite,
    correction_suite,
    envelope_suite,
    kernel_suite,
    lattice_suite,
    oracle_suite,
    picard_suite,
    run_verification,
    sandwich_suite,
    series_suite,
)

VELOCITY = VelocitySpec(U=0.01, beta=-3.0, K_max=128)
SOURCE = SourceSpec(kappa_g=4.0)


def _passes(report: CheckReport):
    assert report.checks
    assert report.failures == [], "\n".join(str(c) for c in report.failures)


def test_annulus_suite_rows():
    report = CheckReport()
    rows = annulus_suite(report, kappas=(8.0, 16.0))
    _passes(report)
    assert len(rows) == 2 * 3 * 2
    assert set(rows[0]) == {"beta", "jx", "jy", "kappa", "lattice_sum", "integral", "error", "ratio", "cell_ratio"}


def test_angular_and_kernel_suites():
    report = CheckReport()
    angular_suite(report)
    kernel_suite(report)
    _passes(report)


def test_series_suite():
    report = CheckReport()
    series_suite(report, VELOCITY, SOURCE)
    _passes(report)


def test_envelope_and_sandwich_suites():
    report = CheckReport()
    envelope_suite(report, VELOCITY, SOURCE)
    sandwich_suite(report, SOURCE, VELOCITY.beta)
    _passes(report)


def test_lattice_suite_skips_truncated_bands():
    report = CheckReport()
    lattice_suite(report, VELOCITY, SOURCE)
    _passes(report)
    assert len(report.checks) == 2
    small = CheckReport()
    lattice_suite(small, VelocitySpec(U=0.01, beta=-3.0, K_max=40), SOURCE)
    assert [c.name for c in small.checks] == ["lattice vs continuum kappa=16"]


def test_oracle_suite_small_truncation():
    report = CheckReport()
    oracle_suite(report, VELOCITY, SourceSpec(kappa_g=2.0), master_seed=3, k_max=6, seeds=2)
    _passes(report)


def test_run_verification_collects_every_suite():
    result = run_verification(EnsembleConfig(), oracle_k_max=6, oracle_seeds=2)
    names = [c.name for c in result.report.checks]
    for expected in ("annulus rotation symmetry", "angular identity", "static kernel identity",
                     "sandwich bounds", "smallness sup-norm", "oracle equivalence", "static residual",
                     "correction series kappa=4", "picard first iterate"):
        assert expected in names
    assert len(result.annulus_rows) == 2 * 3 * 4
    assert result.report.failures == []


def test_correction_suite():
    report = CheckReport()
    chi = correction_suite(report, VELOCITY)
    _passes(report)
    assert chi == pytest.approx(4.5848, rel=1e-3)
    (check,) = report.checks
    assert check.name == "correction series kappa=4"
    assert check.expected == pytest.approx(-0.05)
    assert check.measured < 0


def test_picard_suite():
    report = CheckReport()
    picard_suite(report, VELOCITY, master_seed=3)
    _passes(report)
    assert [c.name for c in report.checks] == ["picard first iterate", "picard vs evolution", "picard contraction"]
