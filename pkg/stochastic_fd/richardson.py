"""
Richardson extrapolation over dyadic lattice ladders.

Weights solve V c = e_1 with V_ij = 2^(-s i j), i, j = 0..k, in exact rational arithmetic, so the
combination sum c_i u^{h/2^i} keeps the u-term and cancels the h^s, ..., h^(s k) terms.
"""

import typing as T
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from stochastic_fd.errors import PathMismatchError
from stochastic_fd.grid import GridFunction, restrict
from stochastic_fd.integrator import Trajectory, trajectory_errors
from stochastic_fd.util import format_fractions


@dataclass(frozen=True)
class RichardsonWeights:
    order: int
    power_step: int
    coefficients: tuple[Fraction, ...]

    def as_floats(self) -> list[float]:
        return [float(i) for i in self.coefficients]

    def residuals(self) -> list[Fraction]:
        """sum c_i - 1 followed by sum c_i 2^(-s j i) for j = 1..k; all zero for valid weights."""
        c = self.coefficients
        out = [sum(c, Fraction(0)) - 1]
        for j in range(1, self.order + 1):
            out.append(sum((ci * Fraction(1, 2 ** (self.power_step * j * i)) for i, ci in enumerate(c)), Fraction(0)))
        return out

    def __str__(self) -> str:
        return format_fractions(self.coefficients)


def _solve_exact(matrix: list[list[Fraction]], rhs: list[Fraction]) -> list[Fraction]:
    n = len(matrix)
    m = [row[:] + [b] for row, b in zip(matrix, rhs)]
    for col in range(n):
        pivot = next(r for r in range(col, n) if m[r][col] != 0)
        m[col], m[pivot] = m[pivot], m[col]
        for r in range(n):
            if r == col or m[r][col] == 0:
                continue
            factor = m[r][col] / m[col][col]
            for c in range(col, n + 1):
                m[r][c] -= factor * m[col][c]
    return [m[i][n] / m[i][i] for i in range(n)]


def weights(order: int, power_step: int = 2) -> RichardsonWeights:
    """
    Extrapolation weights c_0..c_k.

    Args:
        order (int): k, the number of expansion terms to cancel.
        power_step (int): s = 2 when only even powers of h appear (symmetric schemes), else 1.
    """
    if order < 0:
        raise ValueError(f"Extrapolation order must be nonnegative, got {order}")
    if power_step not in (1, 2):
        raise ValueError(f"power_step must be 1 or 2, got {power_step}")
    n = order + 1
    matrix = [[Fraction(1, 2 ** (power_step * i * j)) for j in range(n)] for i in range(n)]
    rhs = [Fraction(int(i == 0)) for i in range(n)]
    return RichardsonWeights(order, power_step, tuple(_solve_exact(matrix, rhs)))


def _check_compatible(solutions: T.Sequence[Trajectory]) -> None:
    refs = {i.path_ref for i in solutions}
    seeds = {None if i is None else i[0] for i in refs}
    if len(seeds) > 1:
        raise PathMismatchError(f"Solutions come from different realizations: {sorted(map(str, seeds))}")
    times = solutions[0].record_times
    for sol in solutions[1:]:
        if len(sol.record_times) != len(times) or not np.allclose(sol.record_times, times, rtol=0, atol=1e-12):
            raise PathMismatchError("Solutions have different record times")
    for coarse, fine in zip(solutions, solutions[1:]):
        if fine.lattice != coarse.lattice.refine():
            raise PathMismatchError(f"{fine.lattice} is not the dyadic refinement of {coarse.lattice}")


def extrapolate(solutions: T.Sequence[Trajectory], w: RichardsonWeights) -> Trajectory:
    """
    sum_i c_i u^{h/2^i} on the coarsest lattice, summed in a fixed order.

    Raises:
        PathMismatchError: Different seeds, record times or non-nested lattices.
    """
    if len(solutions) != w.order + 1:
        raise ValueError(f"{w.order + 1} solutions are needed, got {len(solutions)}")
    _check_compatible(solutions)
    coarse = solutions[0].lattice
    c = w.as_floats()
    states = []
    for k in range(len(solutions[0].record_times)):
        acc = np.zeros(coarse.shape)
        for ci, sol in zip(c, solutions):
            acc = acc + ci * restrict(sol.states[k], coarse).values
        states.append(GridFunction(coarse, acc))
    return Trajectory(coarse, solutions[0].record_times, states, solutions[0].path_ref)


def order_boost(
    solutions: T.Sequence[Trajectory], w: RichardsonWeights, reference: Trajectory
) -> list[tuple[float, tuple[float, float]]]:
    """
    Errors of the extrapolation started from every level that has k finer levels above it.

    Returns:
        list[tuple[float, tuple[float, float]]]: (h, (sup error, l_{h,2} error)) per starting level.

    Raises:
        ValueError: Fewer than k + 1 solutions.
    """
    n = w.order + 1
    if len(solutions) < n:
        raise ValueError(f"Order {w.order} needs {n} solutions, got {len(solutions)}")
    result = []
    for i in range(len(solutions) - n + 1):
        v = extrapolate(solutions[i : i + n], w)
        result.append((v.lattice.spacing, trajectory_errors(v, reference)))
    return result


__all__ = ["RichardsonWeights", "weights", "extrapolate", "order_boost"]
