import typing as T


class StochasticFDError(Exception):
    exit_code = 1


class LatticeMismatchError(StochasticFDError, ValueError):
    """Operands live on different lattices or directions do not match the lattice dimension."""


class CoefficientError(StochasticFDError, ValueError):
    """A coefficient field evaluated to a non-finite value or is not usable by the caller."""


class AdmissibilityError(StochasticFDError, ValueError):
    exit_code = 2

    def __init__(self, gamma: int, theta: float, value: float) -> None:
        self.gamma = gamma
        self.theta = theta
        self.value = value
        super().__init__(
            f"Inadmissible theta for direction e{gamma}: |a| = {abs(value):g} exceeds theta = {theta:g}"
        )


class OffGridError(StochasticFDError, ValueError):
    """A time that is not a node of the path grid was queried."""


class PathMismatchError(StochasticFDError, ValueError):
    """Solutions were not driven by the same realization or are not on nested grids."""


class MissingReferenceError(StochasticFDError, ValueError):
    exit_code = 2


class ConfigError(StochasticFDError, ValueError):
    exit_code = 2

    def __init__(self, problems: T.Sequence[str]) -> None:
        self.problems = list(problems)
        super().__init__("Invalid configuration:\n" + "\n".join(f"  {i}" for i in self.problems))


class SolverAbort(StochasticFDError, RuntimeError):
    exit_code = 3

    def __init__(
        self,
        step: int,
        time: float,
        h: float | None = None,
        seed: int | None = None,
        reason: str = "non-finite value",
    ) -> None:
        self.step = step
        self.time = time
        self.h = h
        self.seed = seed
        self.reason = reason
        location = f"step {step} (t={time:g})"
        if h is not None:
            location += f", h={h:g}"
        if seed is not None:
            location += f", seed={seed}"
        super().__init__(f"Solver aborted at {location}: {reason}")

    def with_context(self, h: float, seed: int) -> "SolverAbort":
        return SolverAbort(self.step, self.time, h=h, seed=seed, reason=self.reason)


__all__ = [
    "StochasticFDError",
    "LatticeMismatchError",
    "CoefficientError",
    "AdmissibilityError",
    "OffGridError",
    "PathMismatchError",
    "MissingReferenceError",
    "ConfigError",
    "SolverAbort",
]
