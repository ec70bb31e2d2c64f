"""
Check report for predictions and verification suites.

Each check records what was measured, what it was compared against, the
margin it had to meet and the outcome. A report passes when every check
passes; warnings never fail a report.
"""

import math
from typing import Dict, List, Optional

from loguru import logger
from pydantic import BaseModel, Field


class CheckResult(BaseModel):
    name: str
    measured: float
    expected: float
    margin: float
    passed: bool
    detail: str = ""

    def __str__(self):
        mark = "✅" if self.passed else "❌"
        line = f"{mark} {self.name}: measured={self.measured:.6g} expected={self.expected:.6g} margin={self.margin:.3g}"
        return f"{line} ({self.detail})" if self.detail else line


class CheckReport:
    def __init__(self, title: str = ""):
        self.title = title
        self.checks: List[CheckResult] = []
        self.warnings: List[str] = []

    def add_check(self, name: str, measured: float, expected: float, margin: float,
                  passed: bool, detail: str = "") -> CheckResult:
        check = CheckResult(
            name=name, measured=float(measured), expected=float(expected),
            margin=float(margin), passed=bool(passed), detail=detail,
        )
        self.checks.append(check)
        return check

    def check_close(self, name: str, measured: float, expected: float,
                    rel: Optional[float] = None, abs_tol: float = 0.0, detail: str = "") -> CheckResult:
        """|measured - expected| <= max(rel |expected|, abs_tol); margin holds the allowed deviation."""
        allowed = max((rel or 0.0) * abs(expected), abs_tol)
        ok = math.isfinite(measured) and abs(measured - expected) <= allowed
        return self.add_check(name, measured, expected, allowed, ok, detail)

    def check_at_most(self, name: str, measured: float, bound: float,
                      slack: float = 1.0, detail: str = "") -> CheckResult:
        """measured <= slack * bound; margin holds the slack."""
        ok = math.isfinite(measured) and measured <= slack * bound
        return self.add_check(name, measured, bound, slack, ok, detail)

    def add_warning(self, message: str):
        self.warnings.append(f"⚠️  {message}")

    def extend(self, other: "CheckReport"):
        self.checks.extend(other.checks)
        self.warnings.extend(other.warnings)

    @property
    def failures(self) -> List[CheckResult]:
        return [c for c in self.checks if not c.passed]

    def is_passing(self) -> bool:
        return not self.failures

    def to_verdict(self) -> Dict:
        return {
            "title": self.title,
            "verdict": "pass" if self.is_passing() else "fail",
            "passed": len(self.checks) - len(self.failures),
            "total": len(self.checks),
            "checks": [c.model_dump() for c in self.checks],
            "warnings": list(self.warnings),
        }

    def __str__(self):
        status = "✅ PASS" if self.is_passing() else "❌ FAIL"
        return f"{status} - {len(self.checks) - len(self.failures)}/{len(self.checks)} checks"


def validate_and_log(report: CheckReport, label: str = "") -> CheckReport:
    """Log a report the way the lab prints every verdict, then hand it back."""
    name = label or report.title
    logger.info(f"[Validator] {name}: {report}")
    for check in report.checks:
        if check.passed:
            logger.debug(f"[Validator]   {check}")
        else:
            logger.warning(f"[Validator]   {check}")
    for warning in report.warnings:
        logger.warning(f"[Validator]   {warning}")
    return report
