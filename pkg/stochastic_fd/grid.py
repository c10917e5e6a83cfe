"""Periodic lattices, grid functions and the discrete difference calculus on them."""

import itertools
import math
import typing as T
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache, reduce

import numpy as np
from stdl import fs

from stochastic_fd.errors import LatticeMismatchError

Direction = tuple[int, ...]
DirectionLike = T.Union[int, T.Sequence[int]]


@dataclass(frozen=True)
class Lattice:
    """
    The lattice hZ^d folded onto a torus with N points per axis.

    Args:
        dim (int): Spatial dimension d.
        points_per_axis (int): Number of nodes N along every axis. Must be at least 4.
        spacing (float): Mesh size h.
    """

    dim: int
    points_per_axis: int
    spacing: float

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError(f"Lattice dimension must be positive, got {self.dim}")
        if self.points_per_axis < 4:
            raise ValueError(f"Lattice needs at least 4 points per axis, got {self.points_per_axis}")
        if not (math.isfinite(self.spacing) and self.spacing > 0):
            raise ValueError(f"Lattice spacing must be positive, got {self.spacing}")

    @classmethod
    def periodic(cls, dim: int, points_per_axis: int, period: float = 2 * math.pi) -> "Lattice":
        return cls(dim, points_per_axis, period / points_per_axis)

    @property
    def period(self) -> float:
        return self.points_per_axis * self.spacing

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_axis,) * self.dim

    @property
    def size(self) -> int:
        return self.points_per_axis**self.dim

    def coordinates(self) -> tuple[np.ndarray, ...]:
        return _coordinates(self)

    def refine(self) -> "Lattice":
        return Lattice(self.dim, 2 * self.points_per_axis, self.spacing / 2)

    def refinement_ratio(self, coarse: "Lattice") -> int:
        """Number of fine steps per coarse step. Raises if this lattice does not refine ``coarse``."""
        if self.dim != coarse.dim:
            raise LatticeMismatchError(f"Dimension mismatch: {self.dim} != {coarse.dim}")
        ratio = self.points_per_axis // coarse.points_per_axis
        if (
            ratio < 1
            or ratio * coarse.points_per_axis != self.points_per_axis
            or not math.isclose(self.spacing * ratio, coarse.spacing, rel_tol=1e-12)
        ):
            raise LatticeMismatchError(f"{self} is not a refinement of {coarse}")
        return ratio


def periodic_ladder(
    dim: int, points_per_axis: int, levels: int, period: float = 2 * math.pi
) -> list[Lattice]:
    """Dyadically refined lattices h0, h0/2, ..., h0/2^(levels-1) on one torus."""
    if levels < 1:
        raise ValueError(f"levels must be at least 1, got {levels}")
    ladder = [Lattice.periodic(dim, points_per_axis, period)]
    for _ in range(levels - 1):
        ladder.append(ladder[-1].refine())
    return ladder


@lru_cache(maxsize=64)
def _coordinates(lattice: Lattice) -> tuple[np.ndarray, ...]:
    axis = np.arange(lattice.points_per_axis) * lattice.spacing
    grids = np.meshgrid(*([axis] * lattice.dim), indexing="ij")
    for i in grids:
        i.flags.writeable = False
    return tuple(grids)


def as_direction(direction: DirectionLike, dim: int) -> Direction:
    if isinstance(direction, (int, np.integer)):
        components = (direction,)
    else:
        components = tuple(direction)
    if len(components) != dim:
        raise LatticeMismatchError(
            f"Direction {components} has {len(components)} components, lattice has dimension {dim}"
        )
    result = []
    for c in components:
        if float(c) != int(c):
            raise ValueError(f"Direction {components} must have integer components")
        result.append(int(c))
    return tuple(result)


def zero_direction(dim: int) -> Direction:
    return (0,) * dim


def unit_direction(axis: int, dim: int) -> Direction:
    return tuple(1 if i == axis else 0 for i in range(dim))


def is_zero(direction: Direction) -> bool:
    return not any(direction)


def _integer_det(rows: T.Sequence[Direction]) -> int:
    m = [[Fraction(v) for v in row] for row in rows]
    n = len(m)
    det = Fraction(1)
    for col in range(n):
        pivot = next((r for r in range(col, n) if m[r][col] != 0), None)
        if pivot is None:
            return 0
        if pivot != col:
            m[col], m[pivot] = m[pivot], m[col]
            det = -det
        det *= m[col][col]
        for r in range(col + 1, n):
            factor = m[r][col] / m[col][col]
            if factor:
                for c in range(col, n):
                    m[r][c] -= factor * m[col][c]
    return int(det)


def generates_integer_lattice(directions: T.Iterable[DirectionLike], dim: int) -> bool:
    """True if the integer combinations of ``directions`` are all of Z^d (gcd of the d x d minors is 1)."""
    vectors = [as_direction(i, dim) for i in directions]
    vectors = [i for i in vectors if not is_zero(i)]
    g = 0
    for rows in itertools.combinations(vectors, dim):
        g = math.gcd(g, abs(_integer_det(rows)))
        if g == 1:
            return True
    return False


@dataclass(frozen=True, eq=False)
class GridFunction:
    """
    A real field on a lattice. Values are stored row-major with axis 0 slowest and are read-only.
    """

    lattice: Lattice
    values: np.ndarray

    __array_ufunc__ = None

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.size != self.lattice.size:
            raise LatticeMismatchError(
                f"Expected {self.lattice.size} values for {self.lattice}, got {values.size}"
            )
        values = values.reshape(self.lattice.shape)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, lattice: Lattice) -> "GridFunction":
        return cls(lattice, np.zeros(lattice.shape))

    @classmethod
    def constant(cls, lattice: Lattice, value: float) -> "GridFunction":
        return cls(lattice, np.full(lattice.shape, float(value)))

    @classmethod
    def sample(cls, lattice: Lattice, fn: T.Callable[..., np.ndarray]) -> "GridFunction":
        """Sample ``fn(x1, ..., xd)`` at the lattice nodes."""
        values = np.broadcast_to(fn(*lattice.coordinates()), lattice.shape)
        return cls(lattice, values)

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.values).all())

    def _operand(self, other: T.Any) -> T.Any:
        if isinstance(other, GridFunction):
            if other.lattice != self.lattice:
                raise LatticeMismatchError(f"Lattice mismatch: {self.lattice} != {other.lattice}")
            return other.values
        return other

    def __add__(self, other: T.Any) -> "GridFunction":
        return GridFunction(self.lattice, self.values + self._operand(other))

    __radd__ = __add__

    def __sub__(self, other: T.Any) -> "GridFunction":
        return GridFunction(self.lattice, self.values - self._operand(other))

    def __rsub__(self, other: T.Any) -> "GridFunction":
        return GridFunction(self.lattice, self._operand(other) - self.values)

    def __mul__(self, other: T.Any) -> "GridFunction":
        return GridFunction(self.lattice, self.values * self._operand(other))

    __rmul__ = __mul__

    def __truediv__(self, other: T.Any) -> "GridFunction":
        return GridFunction(self.lattice, self.values / self._operand(other))

    def __neg__(self) -> "GridFunction":
        return GridFunction(self.lattice, -self.values)

    def to_csv(self, path: str) -> None:
        lines = [str(self.lattice.dim), str(self.lattice.points_per_axis)]
        lines.append(f"{self.lattice.spacing:.17g}")
        lines.extend(f"{v:.17g}" for v in self.flat)
        fs.File(path).write("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path: str) -> "GridFunction":
        lines = fs.File(path).read().split()
        lattice = Lattice(int(lines[0]), int(lines[1]), float(lines[2]))
        return cls(lattice, np.array([float(i) for i in lines[3:]]))

    def to_binary(self, path: str) -> None:
        header = [self.lattice.dim, self.lattice.points_per_axis, self.lattice.spacing]
        np.concatenate([header, self.flat]).astype("<f8").tofile(path)

    @classmethod
    def from_binary(cls, path: str) -> "GridFunction":
        data = np.fromfile(path, dtype="<f8")
        lattice = Lattice(int(data[0]), int(data[1]), float(data[2]))
        return cls(lattice, data[3:])


def _check_sign(sign: int) -> None:
    if sign not in (1, -1):
        raise ValueError(f"sign must be +1 or -1, got {sign}")


def _roll(values: np.ndarray, direction: Direction, sign: int) -> np.ndarray:
    # result(x) = values(x + sign*h*direction)
    shifts = tuple(-sign * c for c in direction)
    return np.roll(values, shifts, axis=tuple(range(len(direction))))


def shift(f: GridFunction, direction: DirectionLike, sign: int = 1) -> GridFunction:
    """T_{h,sign*lambda}: ``result(x) = f(x + sign*h*lambda)`` with periodic wrap."""
    _check_sign(sign)
    lam = as_direction(direction, f.lattice.dim)
    if is_zero(lam):
        return f
    return GridFunction(f.lattice, _roll(f.values, lam, sign))


def forward_diff(f: GridFunction, direction: DirectionLike, sign: int = 1) -> GridFunction:
    """delta_{sign*h,lambda}. The zero direction is the identity."""
    _check_sign(sign)
    lam = as_direction(direction, f.lattice.dim)
    if is_zero(lam):
        return f
    h = f.lattice.spacing
    return GridFunction(f.lattice, (_roll(f.values, lam, sign) - f.values) / (sign * h))


def symmetric_diff(f: GridFunction, direction: DirectionLike) -> GridFunction:
    """delta^h_lambda = (f(x+h*lambda) - f(x-h*lambda)) / 2h. The zero direction is the identity."""
    lam = as_direction(direction, f.lattice.dim)
    if is_zero(lam):
        return f
    h = f.lattice.spacing
    return GridFunction(f.lattice, (_roll(f.values, lam, 1) - _roll(f.values, lam, -1)) / (2 * h))


def second_diff(f: GridFunction, direction: DirectionLike) -> GridFunction:
    """Delta^h_lambda = (T_{h,lambda} - 2I + T_{h,-lambda}) / h^2."""
    lam = as_direction(direction, f.lattice.dim)
    if is_zero(lam):
        return GridFunction.zeros(f.lattice)
    h = f.lattice.spacing
    v = f.values
    return GridFunction(f.lattice, (_roll(v, lam, 1) - 2 * v + _roll(v, lam, -1)) / h**2)


def mean_op(f: GridFunction, direction: DirectionLike) -> GridFunction:
    """I^h_lambda = (T_{h,lambda} + T_{h,-lambda}) / 2."""
    lam = as_direction(direction, f.lattice.dim)
    if is_zero(lam):
        return f
    return GridFunction(f.lattice, (_roll(f.values, lam, 1) + _roll(f.values, lam, -1)) / 2)


def odd_part(f: GridFunction, direction: DirectionLike) -> GridFunction:
    """R_lambda = (T_{h,lambda} - T_{h,-lambda}) / 2."""
    lam = as_direction(direction, f.lattice.dim)
    if is_zero(lam):
        return GridFunction.zeros(f.lattice)
    return GridFunction(f.lattice, (_roll(f.values, lam, 1) - _roll(f.values, lam, -1)) / 2)


def p_op(f: GridFunction, direction: DirectionLike) -> GridFunction:
    """P_lambda = (delta_{h,lambda} - delta_{-h,lambda}) / 2."""
    lam = as_direction(direction, f.lattice.dim)
    if is_zero(lam):
        return GridFunction.zeros(f.lattice)
    h = f.lattice.spacing
    v = f.values
    return GridFunction(f.lattice, (_roll(v, lam, 1) - 2 * v + _roll(v, lam, -1)) / (2 * h))


def multi_diff(f: GridFunction, alpha: T.Sequence[DirectionLike]) -> GridFunction:
    """delta_alpha = delta_{alpha_1} ... delta_{alpha_n}; the empty sequence is the identity."""
    return reduce(symmetric_diff, reversed(list(alpha)), f)


def multi_mean(f: GridFunction, alpha: T.Sequence[DirectionLike]) -> GridFunction:
    """I_alpha = I_{alpha_1} ... I_{alpha_n}; the empty sequence is the identity."""
    return reduce(mean_op, reversed(list(alpha)), f)


def sup_norm(f: GridFunction) -> float:
    return float(np.max(np.abs(f.values)))


def l2h_norm(f: GridFunction) -> float:
    return math.sqrt(float(np.sum(f.values**2)) * f.lattice.spacing**f.lattice.dim)


def inner(f: GridFunction, g: GridFunction) -> float:
    if f.lattice != g.lattice:
        raise LatticeMismatchError(f"Lattice mismatch: {f.lattice} != {g.lattice}")
    return float(np.sum(f.values * g.values)) * f.lattice.spacing**f.lattice.dim


def discrete_sobolev_norm(
    f: GridFunction, m: int, directions: T.Sequence[DirectionLike]
) -> float:
    """Square root of the sum of l2h_norm(delta_alpha f)^2 over all alpha in Lambda^j, j <= m."""
    if m < 0:
        raise ValueError(f"Sobolev order must be nonnegative, got {m}")
    lams = [as_direction(i, f.lattice.dim) for i in directions]
    total = 0.0
    for order in range(m + 1):
        for alpha in itertools.product(lams, repeat=order):
            total += l2h_norm(multi_diff(f, alpha)) ** 2
    return math.sqrt(total)


def sample_field(lattice: Lattice, fn: T.Callable[..., np.ndarray]) -> GridFunction:
    return GridFunction.sample(lattice, fn)


def restrict(f: GridFunction, coarse: Lattice) -> GridFunction:
    """Exact restriction to the nodes of a coarser nested lattice."""
    ratio = f.lattice.refinement_ratio(coarse)
    index = (slice(None, None, ratio),) * f.lattice.dim
    return GridFunction(coarse, f.values[index])


__all__ = [
    "Direction",
    "Lattice",
    "GridFunction",
    "periodic_ladder",
    "as_direction",
    "zero_direction",
    "unit_direction",
    "is_zero",
    "generates_integer_lattice",
    "shift",
    "forward_diff",
    "symmetric_diff",
    "second_diff",
    "mean_op",
    "odd_part",
    "p_op",
    "multi_diff",
    "multi_mean",
    "sup_norm",
    "l2h_norm",
    "inner",
    "discrete_sobolev_norm",
    "sample_field",
    "restrict",
]
