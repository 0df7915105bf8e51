"""Error types shared across the package."""

from __future__ import annotations


class ConvergenceError(RuntimeError):
    """An iterative solver exhausted its budget before meeting tolerance."""


class NumericalError(RuntimeError):
    """A numerical operation failed (factorization breakdown, singularity)."""


class ConfigError(ValueError):
    """Scenario configuration rejected; carries every violation found."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))
