"""Exception types shared across the package."""

from __future__ import annotations


class RmbpError(Exception):
    """Base class for all errors raised by this package."""


class SpecError(RmbpError, ValueError):
    """Invalid model specification (probabilities, supports, matrices)."""


class ConfigError(RmbpError, ValueError):
    """Malformed or semantically inconsistent experiment configuration."""

    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        self.line = line
        self.key = key
        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if key is not None:
            prefix += f"[{key}] "
        super().__init__(prefix + message)


class DriftError(RmbpError, RuntimeError):
    """Stationarity precondition violated (nonnegative or near-critical drift)."""


class SaturationError(RmbpError, OverflowError):
    """A population count exceeded the 64-bit representation."""

    def __init__(self, message: str, step: int | None = None):
        self.step = step
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)


class DomainError(RmbpError, ValueError):
    """A moment or transform was evaluated outside its finite domain."""


class NoPositiveRootError(RmbpError):
    """The cumulant has no positive root: the tail is lighter than any power law."""


class AnalysisError(RmbpError, ValueError):
    """A tail-analysis operation received unusable input (too few samples, ties, ...)."""


class EngineError(RmbpError, RuntimeError):
    """One or more replication chunks failed inside the experiment runner."""

    def __init__(self, failures: list[tuple[int, Exception]]):
        self.failures = failures
        ids = ", ".join(str(i) for i, _ in failures[:8])
        more = "" if len(failures) <= 8 else f" (+{len(failures) - 8} more)"
        first = failures[0][1] if failures else None
        super().__init__(f"replication chunks [{ids}]{more} failed: {first!r}")
