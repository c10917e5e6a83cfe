"""
Seed-deterministic Wiener driver paths.

Increments come from a counter-based Philox stream keyed by (seed, driver, level), so the k-th
normal of a stream does not depend on how many are drawn. Refinement inserts Brownian bridge
midpoints drawn from the stream of the next level and keeps existing nodes bitwise.
"""

import typing as T
from dataclasses import dataclass

import numpy as np
from stdl import fs

from stochastic_fd.errors import OffGridError

_MASK64 = (1 << 64) - 1


def stream(seed: int, driver: int, level: int) -> np.random.Generator:
    key = ((seed & _MASK64) << 64) | ((driver & 0xFFFFFFFF) << 32) | (level & 0xFFFFFFFF)
    return np.random.Generator(np.random.Philox(key=key))


def normals(seed: int, driver: int, level: int, count: int) -> np.ndarray:
    """The first ``count`` standard normals of the (seed, driver, level) stream."""
    return stream(seed, driver, level).standard_normal(count)


@dataclass(frozen=True, eq=False)
class WienerPath:
    """
    m driver paths on a common time grid.

    Args:
        times (np.ndarray): Increasing nodes 0 = t_0 < ... < t_K.
        values (np.ndarray): Array of shape (m, K+1) with values[:, 0] == 0.
        seed (int): Seed of the realization.
        level (int): Number of bridge refinements applied since sampling.

    Values are deterministic by prefix, not by random access: the nodes of level L are bridge
    midpoints of the level L-1 path, so reaching level L means refining through every coarser
    level from the sampled grid. Sampling a finer grid directly gives a different realization.
    """

    times: np.ndarray
    values: np.ndarray
    seed: int
    level: int = 0

    def __post_init__(self) -> None:
        times = np.array(self.times, dtype=float)
        values = np.atleast_2d(np.array(self.values, dtype=float))
        if times.ndim != 1 or times.size < 2:
            raise ValueError("A path needs at least two time nodes")
        if times[0] != 0 or np.any(np.diff(times) <= 0):
            raise ValueError("Path times must start at 0 and increase strictly")
        if values.shape[1] != times.size:
            raise ValueError(f"Values have {values.shape[1]} columns for {times.size} time nodes")
        if np.any(values[:, 0] != 0):
            raise ValueError("Every driver must start at 0")
        times.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_values(
        cls, times: T.Sequence[float], values: T.Sequence[T.Sequence[float]], seed: int = 0, level: int = 0
    ) -> "WienerPath":
        """A path with prescribed node values, e.g. one conditioned on w(T)."""
        return cls(np.asarray(times), np.asarray(values), seed, level)

    @property
    def driver_count(self) -> int:
        return self.values.shape[0]

    @property
    def steps(self) -> int:
        return self.times.size - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=1)

    def index_of(self, t: float) -> int:
        k = int(np.searchsorted(self.times, t))
        tol = 1e-9 * float(np.min(np.diff(self.times)))
        for i in (k - 1, k):
            if 0 <= i < self.times.size and abs(self.times[i] - t) <= tol:
                return i
        raise OffGridError(f"t={t} is not a node of the path grid (refine the path instead)")

    def value_at(self, r: int, t: float) -> float:
        return float(self.values[r, self.index_of(t)])

    def increment(self, r: int, k: int) -> float:
        if not 0 <= k < self.steps:
            raise OffGridError(f"Increment index {k} outside 0..{self.steps - 1}")
        return float(self.values[r, k + 1] - self.values[r, k])

    def coarsen(self, levels: int = 1) -> "WienerPath":
        """Restriction to the nodes of the path ``levels`` refinements earlier."""
        if levels < 0 or levels > self.level:
            raise ValueError(f"Cannot coarsen a level-{self.level} path by {levels}")
        stride = 2**levels
        return WienerPath(
            self.times[::stride], self.values[:, ::stride], self.seed, self.level - levels
        )

    def to_csv(self, path: str) -> None:
        lines = [f"# seed={self.seed} level={self.level}"]
        for k, t in enumerate(self.times):
            row = [f"{t:.17g}"] + [f"{v:.17g}" for v in self.values[:, k]]
            lines.append(",".join(row))
        fs.File(path).write("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path: str) -> "WienerPath":
        lines = [i for i in fs.File(path).read().splitlines() if i.strip()]
        header = dict(i.split("=") for i in lines[0].lstrip("#").split())
        rows = np.array([[float(v) for v in i.split(",")] for i in lines[1:]])
        return cls(rows[:, 0], rows[:, 1:].T, int(header["seed"]), int(header["level"]))


def sample(m: int, steps: int, horizon: float, seed: int) -> WienerPath:
    """m independent Wiener paths on a uniform grid of ``steps`` intervals over [0, horizon]."""
    if steps < 1:
        raise ValueError(f"steps must be at least 1, got {steps}")
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    times = np.linspace(0.0, horizon, steps + 1)
    sqrt_dt = np.sqrt(np.diff(times))
    values = np.zeros((m, steps + 1))
    for r in range(m):
        values[r, 1:] = np.cumsum(sqrt_dt * normals(seed, r, 0, steps))
    return WienerPath(times, values, seed, 0)


def refine(path: WienerPath) -> WienerPath:
    """Insert Brownian bridge midpoints between all nodes."""
    dt = np.diff(path.times)
    level = path.level + 1
    times = np.empty(2 * path.steps + 1)
    times[0::2] = path.times
    times[1::2] = path.times[:-1] + dt / 2
    values = np.empty((path.driver_count, times.size))
    values[:, 0::2] = path.values
    for r in range(path.driver_count):
        z = normals(path.seed, r, level, path.steps)
        values[r, 1::2] = (path.values[r, :-1] + path.values[r, 1:]) / 2 + np.sqrt(dt / 4) * z
    return WienerPath(times, values, path.seed, level)


def refine_to(path: WienerPath, level: int) -> WienerPath:
    while path.level < level:
        path = refine(path)
    return path


__all__ = ["WienerPath", "sample", "refine", "refine_to", "normals", "stream"]
