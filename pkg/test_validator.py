import math

from src.core.validator import CheckReport, validate_and_log


def test_check_close_relative_and_absolute():
    report = CheckReport("demo")
    assert report.check_close("rel", 1.05, 1.0, rel=0.1).passed
    assert not report.check_close("rel tight", 1.05, 1.0, rel=0.01).passed
    assert report.check_close("abs", 0.5, 0.0, abs_tol=1.0).passed
    assert not report.check_close("nan", math.nan, 1.0, rel=1.0).passed
    assert len(report.failures) == 2
    assert not report.is_passing()


def test_check_at_most_uses_slack():
    report = CheckReport()
    check = report.check_at_most("bounded", 3.0, 2.0, slack=2.0)
    assert check.passed
    assert check.margin == 2.0
    assert not report.check_at_most("over", 5.0, 2.0, slack=2.0).passed
    assert not report.check_at_most("inf", math.inf, 2.0).passed


def test_warnings_never_fail():
    report = CheckReport()
    report.add_warning("below validity")
    assert report.is_passing()
    assert "below validity" in report.warnings[0]


def test_verdict_and_extend():
    a = CheckReport("a")
    a.check_close("one", 1.0, 1.0, rel=1e-12)
    b = CheckReport("b")
    b.check_at_most("two", 3.0, 1.0, detail="too large")
    b.add_warning("note")
    a.extend(b)
    verdict = a.to_verdict()
    assert verdict["verdict"] == "fail"
    assert (verdict["passed"], verdict["total"]) == (1, 2)
    assert verdict["checks"][1]["detail"] == "too large"
    assert len(verdict["warnings"]) == 1
    assert "1/2" in str(a)
    assert "two" in str(a.checks[1])
    assert validate_and_log(a) is a
