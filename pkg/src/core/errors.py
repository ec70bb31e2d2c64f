"""
Lab error hierarchy.

Every failure the lab can signal carries a stable string ``code`` so the CLI
and the reports can name it without parsing messages.
"""

from typing import Optional


class LabError(Exception):
    code = "lab-error"

    def __init__(self, message: str):
        super().__init__(f"{self.code}: {message}")
        self.detail = message


class BandTruncatedError(LabError):
    code = "band-truncated"


class TruncationMismatchError(LabError):
    code = "truncation-mismatch"


class NoSamplerError(LabError):
    code = "no-sampler"


class UnderResolvedError(LabError):
    code = "under-resolved"


class DivergentIterationError(LabError):
    code = "divergent-iteration"


class SingularSystemError(LabError):
    code = "singular-system"


class ConvergenceGateError(LabError):
    code = "convergence-gate"


class UnstableStepError(LabError):
    code = "unstable-step"


class DivergentPicardError(LabError):
    code = "divergent-picard"


class OutOfTheoryError(LabError):
    code = "out-of-theory"


class NonPositiveMeanError(LabError):
    code = "nonpositive-mean"


class ConfigError(LabError):
    code = "config-error"


class SampleFailedError(LabError):
    code = "sample-failed"

    def __init__(self, sample_index: int, cause: Exception):
        super().__init__(f"sample {sample_index} failed: {cause}")
        self.sample_index = sample_index
        self.cause: Optional[Exception] = cause
