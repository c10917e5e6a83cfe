"""
Finite difference schemes: the data (Lambda_1, a, p, q, b) defining L^h and M^{h,r}, the target
PDE they approximate, and executable consistency and parabolicity checks.
"""

import itertools
import math
import typing as T
from dataclasses import dataclass

import numpy as np

from stochastic_fd.errors import AdmissibilityError, CoefficientError, LatticeMismatchError
from stochastic_fd.fields import CoefficientField, as_field
from stochastic_fd.grid import (
    Direction,
    DirectionLike,
    GridFunction,
    Lattice,
    as_direction,
    discrete_sobolev_norm,
    forward_diff,
    generates_integer_lattice,
    is_zero,
    l2h_norm,
    symmetric_diff,
    unit_direction,
    zero_direction,
)
from stochastic_fd.spectral import derivative
from stochastic_fd.stats import OrderFit, fit_order

EXACT_RESIDUAL = 1e-14

K = T.TypeVar("K")


def _mirror(
    entries: T.Mapping[tuple[K, K], CoefficientField], name: str
) -> dict[tuple[K, K], CoefficientField]:
    """Store both orders of every off-diagonal pair. Conflicting explicit orders are rejected."""
    result = dict(entries)
    for (lam, mu), field in entries.items():
        if lam == mu:
            continue
        other = entries.get((mu, lam))
        if other is None:
            result[(mu, lam)] = field
        elif other is not field and not (
            field.is_constant and other.is_constant and field.constant_value == other.constant_value
        ):
            raise ValueError(
                f"{name}({lam}, {mu}) and {name}({mu}, {lam}) differ; {name} must be symmetric"
            )
    return result


def _channels(value: T.Any, driver_count: int, dim: int, where: str) -> tuple[CoefficientField, ...]:
    if isinstance(value, (list, tuple)):
        if len(value) != driver_count:
            raise ValueError(f"{where} has {len(value)} channels, expected {driver_count}")
        return tuple(as_field(i, dim) for i in value)
    if driver_count != 1:
        raise ValueError(f"{where} needs a list of {driver_count} channels")
    return (as_field(value, dim),)


def _at(field: CoefficientField | None, t: float, x: T.Sequence[float]) -> float:
    return 0.0 if field is None else field.at(t, x)


@dataclass(frozen=True, eq=False)
class StencilSpec:
    """
    Scheme data. ``a`` holds both orders of every pair, ``p``/``q`` live on nonzero directions and
    ``b`` maps a direction to one field per driver. Missing entries are zero.
    """

    dim: int
    directions: tuple[Direction, ...]
    a: dict[tuple[Direction, Direction], CoefficientField]
    p: dict[Direction, CoefficientField]
    q: dict[Direction, CoefficientField]
    b: dict[Direction, tuple[CoefficientField, ...]]
    driver_count: int = 1

    @classmethod
    def build(
        cls,
        dim: int,
        directions: T.Iterable[DirectionLike] | None = None,
        a: T.Mapping[tuple[DirectionLike, DirectionLike], T.Any] | None = None,
        p: T.Mapping[DirectionLike, T.Any] | None = None,
        q: T.Mapping[DirectionLike, T.Any] | None = None,
        b: T.Mapping[DirectionLike, T.Any] | None = None,
        driver_count: int = 1,
        check_generates: bool = True,
    ) -> "StencilSpec":
        """
        Assemble a scheme from plain values.

        Coefficients may be numbers, field expressions or CoefficientFields. A value given for
        a(lambda, mu) also sets a(mu, lambda). Directions not listed explicitly are collected
        from the coefficient keys together with the unit directions, and the zero direction is
        always present.
        """
        if driver_count < 0:
            raise ValueError(f"driver_count must be nonnegative, got {driver_count}")
        zero = zero_direction(dim)

        a_fields = {}
        for (lam, mu), value in (a or {}).items():
            key = (as_direction(lam, dim), as_direction(mu, dim))
            if key in a_fields:
                raise ValueError(f"a{key} given twice")
            a_fields[key] = as_field(value, dim)
        a_fields = _mirror(a_fields, "a")

        one_sided = {}
        for name, entries in (("p", p), ("q", q)):
            one_sided[name] = {}
            for gamma, value in (entries or {}).items():
                key = as_direction(gamma, dim)
                if is_zero(key):
                    raise ValueError(f"{name} is defined only on nonzero directions")
                one_sided[name][key] = as_field(value, dim)

        b_fields = {}
        for lam, value in (b or {}).items():
            key = as_direction(lam, dim)
            b_fields[key] = _channels(value, driver_count, dim, f"b{key}")

        used = {zero}
        used.update(i for pair in a_fields for i in pair)
        used.update(one_sided["p"], one_sided["q"], b_fields)
        if directions is None:
            used.update(unit_direction(axis, dim) for axis in range(dim))
            ordered = sorted(used, key=lambda i: (sum(abs(c) for c in i), i))
        else:
            ordered = [zero]
            for i in directions:
                lam = as_direction(i, dim)
                if lam not in ordered:
                    ordered.append(lam)
            missing = used - set(ordered)
            if missing:
                raise ValueError(f"Coefficients reference directions {sorted(missing)} outside the stencil")
        if check_generates and not generates_integer_lattice(ordered, dim):
            raise ValueError(f"Directions {ordered} do not generate the integer lattice Z^{dim}")

        return cls(
            dim=dim,
            directions=tuple(ordered),
            a=a_fields,
            p=one_sided["p"],
            q=one_sided["q"],
            b=b_fields,
            driver_count=driver_count,
        )

    @property
    def nonzero_directions(self) -> tuple[Direction, ...]:
        return tuple(i for i in self.directions if not is_zero(i))

    def a_field(self, lam: DirectionLike, mu: DirectionLike) -> CoefficientField | None:
        return self.a.get((as_direction(lam, self.dim), as_direction(mu, self.dim)))

    def p_field(self, gamma: DirectionLike) -> CoefficientField | None:
        return self.p.get(as_direction(gamma, self.dim))

    def q_field(self, gamma: DirectionLike) -> CoefficientField | None:
        return self.q.get(as_direction(gamma, self.dim))

    def b_field(self, lam: DirectionLike, r: int) -> CoefficientField | None:
        channels = self.b.get(as_direction(lam, self.dim))
        return None if channels is None else channels[r]

    def all_fields(self) -> T.Iterator[CoefficientField]:
        yield from self.a.values()
        yield from self.p.values()
        yield from self.q.values()
        for channels in self.b.values():
            yield from channels

    @property
    def is_constant(self) -> bool:
        return all(i.is_constant for i in self.all_fields())

    @property
    def is_symmetric(self) -> bool:
        """True when there are no one-sided terms (p = q = 0)."""
        return all(
            i.is_constant and i.constant_value == 0
            for i in itertools.chain(self.p.values(), self.q.values())
        )

    def max_abs_a(self, t: float, lattice: Lattice) -> float:
        values = [np.max(np.abs(i.values(t, lattice))) for i in self.a.values()]
        return float(max(values, default=0.0))


@dataclass(frozen=True, eq=False)
class TargetPDE:
    """Coefficients a^{alpha beta} and b^{alpha, r}, alpha = 0..d, with D_0 the identity."""

    dim: int
    a: dict[tuple[int, int], CoefficientField]
    b: dict[int, tuple[CoefficientField, ...]]
    driver_count: int = 1

    @classmethod
    def build(
        cls,
        dim: int,
        a: T.Mapping[tuple[int, int], T.Any] | None = None,
        b: T.Mapping[int, T.Any] | None = None,
        driver_count: int = 1,
    ) -> "TargetPDE":
        a_fields = {}
        for (alpha, beta), value in (a or {}).items():
            for i in (alpha, beta):
                if not 0 <= i <= dim:
                    raise ValueError(f"PDE index {i} outside 0..{dim}")
            a_fields[(int(alpha), int(beta))] = as_field(value, dim)
        b_fields = {}
        for alpha, value in (b or {}).items():
            if not 0 <= alpha <= dim:
                raise ValueError(f"PDE index {alpha} outside 0..{dim}")
            b_fields[int(alpha)] = _channels(value, driver_count, dim, f"b[{alpha}]")
        return cls(dim, _mirror(a_fields, "a"), b_fields, driver_count)

    def a_field(self, alpha: int, beta: int) -> CoefficientField | None:
        return self.a.get((alpha, beta))

    def b_field(self, alpha: int, r: int) -> CoefficientField | None:
        channels = self.b.get(alpha)
        return None if channels is None else channels[r]

    def direction(self, alpha: int) -> Direction:
        return zero_direction(self.dim) if alpha == 0 else unit_direction(alpha - 1, self.dim)


@dataclass(frozen=True, eq=False)
class ProblemData:
    """
    Initial value, free terms and horizon of one problem on one lattice.

    Args:
        psi (GridFunction): Initial value.
        horizon (float): Final time T.
        f (Callable[[float], GridFunction], optional): Drift free term. None means zero.
        g (Callable[[float, int], GridFunction], optional): Noise free term per driver. None means zero.
        driver_count (int): Number of drivers m.
    """

    psi: GridFunction
    horizon: float
    f: T.Callable[[float], GridFunction] | None = None
    g: T.Callable[[float, int], GridFunction] | None = None
    driver_count: int = 1

    def __post_init__(self) -> None:
        if not self.horizon > 0:
            raise ValueError(f"Horizon must be positive, got {self.horizon}")

    @property
    def lattice(self) -> Lattice:
        return self.psi.lattice

    def source(self, t: float) -> GridFunction | None:
        if self.f is None:
            return None
        return self._checked(self.f(t), "f")

    def noise(self, t: float, r: int) -> GridFunction | None:
        if self.g is None:
            return None
        return self._checked(self.g(t, r), "g")

    def _checked(self, value: GridFunction, name: str) -> GridFunction:
        if value.lattice != self.lattice:
            raise LatticeMismatchError(f"{name} lives on {value.lattice}, problem on {self.lattice}")
        return value

    @classmethod
    def from_fields(
        cls,
        lattice: Lattice,
        psi: T.Any,
        horizon: float,
        f: T.Any = None,
        g: T.Sequence[T.Any] | None = None,
        driver_count: int = 1,
    ) -> "ProblemData":
        """Build a problem from coefficient-style values (numbers, expressions, fields) sampled on ``lattice``."""
        dim = lattice.dim
        psi_values = psi if isinstance(psi, GridFunction) else as_field(psi, dim).evaluate(0.0, lattice)
        f_func = None
        if f is not None:
            f_field = as_field(f, dim)
            f_func = lambda t: f_field.evaluate(t, lattice)
        g_func = None
        if g is not None:
            if len(g) != driver_count:
                raise ValueError(f"g has {len(g)} channels, expected {driver_count}")
            g_fields = [as_field(i, dim) for i in g]
            g_func = lambda t, r: g_fields[r].evaluate(t, lattice)
        return cls(psi_values, horizon, f_func, g_func, driver_count)


@dataclass(frozen=True)
class ParabolicityReport:
    min_eigenvalue: float
    min_pq: float
    passed: bool
    tol: float


def _check_lattice(spec_dim: int, f: GridFunction) -> None:
    if spec_dim != f.lattice.dim:
        raise LatticeMismatchError(f"Scheme dimension {spec_dim} != lattice dimension {f.lattice.dim}")


def apply_L(spec: StencilSpec, t: float, f: GridFunction) -> GridFunction:
    """L^h_t f = sum a delta_lambda delta_mu f + sum (p delta_{h,gamma} - q delta_{-h,gamma}) f."""
    _check_lattice(spec.dim, f)
    lattice = f.lattice
    out = np.zeros(lattice.shape)
    first: dict[Direction, GridFunction] = {}
    for (lam, mu), field in spec.a.items():
        c = field.values(t, lattice)
        if np.isscalar(c) and c == 0:
            continue
        if mu not in first:
            first[mu] = symmetric_diff(f, mu)
        out += c * symmetric_diff(first[mu], lam).values
    for gamma, field in spec.p.items():
        out += field.values(t, lattice) * forward_diff(f, gamma, 1).values
    for gamma, field in spec.q.items():
        out -= field.values(t, lattice) * forward_diff(f, gamma, -1).values
    return GridFunction(lattice, out)


def apply_M(spec: StencilSpec, t: float, f: GridFunction) -> list[GridFunction]:
    """M^{h,r}_t f = sum_lambda b^{lambda,r} delta_lambda f, one field per driver."""
    _check_lattice(spec.dim, f)
    lattice = f.lattice
    out = [np.zeros(lattice.shape) for _ in range(spec.driver_count)]
    for lam, channels in spec.b.items():
        diff = symmetric_diff(f, lam).values
        for r, field in enumerate(channels):
            out[r] += field.values(t, lattice) * diff
    return [GridFunction(lattice, i) for i in out]


def apply_target_L(pde: TargetPDE, t: float, f: GridFunction) -> GridFunction:
    """a^{alpha beta} D_alpha D_beta f with spectral derivatives."""
    _check_lattice(pde.dim, f)
    lattice = f.lattice
    out = np.zeros(lattice.shape)
    for (alpha, beta), field in pde.a.items():
        terms = [(pde.direction(alpha), 1), (pde.direction(beta), 1)]
        out += field.values(t, lattice) * derivative(f, terms).values
    return GridFunction(lattice, out)


def apply_target_M(pde: TargetPDE, t: float, f: GridFunction) -> list[GridFunction]:
    _check_lattice(pde.dim, f)
    lattice = f.lattice
    out = [np.zeros(lattice.shape) for _ in range(pde.driver_count)]
    for alpha, channels in pde.b.items():
        d = derivative(f, [(pde.direction(alpha), 1)]).values
        for r, field in enumerate(channels):
            out[r] += field.values(t, lattice) * d
    return [GridFunction(lattice, i) for i in out]


def _default_samples(dim: int) -> list[tuple[float, ...]]:
    return [tuple(0.0 for _ in range(dim))]


def consistency_residual(
    spec: StencilSpec,
    pde: TargetPDE,
    t: float = 0.0,
    samples: T.Sequence[T.Sequence[float]] | None = None,
) -> float:
    """Largest absolute violation of the consistency identities between the scheme and the PDE."""
    if spec.dim != pde.dim or spec.driver_count != pde.driver_count:
        raise ValueError("Scheme and PDE must share dimension and driver count")
    d, m = spec.dim, spec.driver_count
    zero = zero_direction(d)
    nonzero = spec.nonzero_directions
    worst = 0.0
    for x in samples or _default_samples(d):
        a = lambda lam, mu: _at(spec.a_field(lam, mu), t, x)
        residuals = []
        for i in range(d):
            for j in range(d):
                total = sum(a(l, mu) * l[i] * mu[j] for l in nonzero for mu in nonzero if l[i] and mu[j])
                residuals.append(_at(pde.a_field(i + 1, j + 1), t, x) - total)
            total = sum(
                (a(zero, l) + a(l, zero) + _at(spec.p_field(l), t, x) - _at(spec.q_field(l), t, x)) * l[i]
                for l in nonzero
                if l[i]
            )
            residuals.append(_at(pde.a_field(0, i + 1), t, x) + _at(pde.a_field(i + 1, 0), t, x) - total)
            for r in range(m):
                total = sum(_at(spec.b_field(l, r), t, x) * l[i] for l in nonzero if l[i])
                residuals.append(_at(pde.b_field(i + 1, r), t, x) - total)
        residuals.append(_at(pde.a_field(0, 0), t, x) - a(zero, zero))
        for r in range(m):
            residuals.append(_at(pde.b_field(0, r), t, x) - _at(spec.b_field(zero, r), t, x))
        worst = max(worst, max(abs(i) for i in residuals))
    return worst


def parabolicity_report(
    spec: StencilSpec,
    t: float = 0.0,
    samples: T.Sequence[T.Sequence[float]] | None = None,
    tol: float | None = None,
) -> ParabolicityReport:
    """
    Check that a^{lambda mu} - 1/2 sum_r b^{lambda,r} b^{mu,r} is nonnegative definite on Lambda_0 and
    that p, q are nonnegative at every sample.

    The default tolerance is 1e-10 times the largest magnitude entering the matrices.
    """
    if tol is not None and tol < 0:
        raise ValueError(f"tol must be nonnegative, got {tol}")
    nonzero = spec.nonzero_directions
    min_eig = math.inf
    min_pq = math.inf
    scale = 0.0
    for x in samples or _default_samples(spec.dim):
        a = np.array([[_at(spec.a_field(l, mu), t, x) for mu in nonzero] for l in nonzero])
        bb = np.zeros_like(a)
        for r in range(spec.driver_count):
            bv = np.array([_at(spec.b_field(l, r), t, x) for l in nonzero])
            bb += np.outer(bv, bv)
        matrix = a - 0.5 * bb
        if not np.all(np.isfinite(matrix)):
            raise CoefficientError(f"Non-finite parabolicity matrix at x={tuple(x)}, t={t}")
        if nonzero:
            scale = max(scale, float(np.max(np.abs(a))), float(np.max(np.abs(bb))))
            min_eig = min(min_eig, float(np.linalg.eigvalsh(matrix)[0]))
        for field in list(spec.p.values()) + list(spec.q.values()):
            min_pq = min(min_pq, field.at(t, x))
    if tol is None:
        tol = 1e-10 * scale
    passed = min_eig >= -tol and min_pq >= -tol
    return ParabolicityReport(min_eigenvalue=min_eig, min_pq=min_pq, passed=passed, tol=tol)


def from_pde_central(pde: TargetPDE) -> StencilSpec:
    """Lambda_1 = {0, e_1, ..., e_d} with a^{e_alpha e_beta} = a^{alpha beta}, b^{e_alpha} = b^alpha, p = q = 0."""
    d = pde.dim
    directions = [pde.direction(alpha) for alpha in range(d + 1)]
    a = {(pde.direction(alpha), pde.direction(beta)): f for (alpha, beta), f in pde.a.items()}
    b = {pde.direction(alpha): list(channels) for alpha, channels in pde.b.items()}
    return StencilSpec.build(d, directions, a=a, b=b, driver_count=pde.driver_count)


def _admissibility_samples(field: CoefficientField, dim: int, t: float, samples) -> np.ndarray:
    if field.is_constant:
        return np.array([field.constant_value])
    if samples is not None:
        return np.array([field.at(t, x) for x in samples])
    return np.ravel(field.values(t, Lattice.periodic(dim, 32)))


def from_pde_upwind(
    pde: TargetPDE,
    theta: T.Sequence[float],
    samples: T.Sequence[T.Sequence[float]] | None = None,
    t: float = 0.0,
) -> StencilSpec:
    """
    One-sided treatment of the first-order terms: p^{e_g} = a^{0g} + theta^g, q^{e_g} = -a^{g0} + theta^g,
    with a^{e_a 0} = a^{0 e_a} = 0. Requires |a^{0g}| <= theta^g and |a^{g0}| <= theta^g, checked on
    ``samples`` (or a 32-point periodic lattice for variable coefficients).

    With a^{01} = a^{10} = 0.25 and theta = 0.25 this gives p = 0.5 and q = 0. Raising a^{01} to
    0.5 with the same theta raises AdmissibilityError.
    """
    d = pde.dim
    theta = [float(i) for i in theta]
    if len(theta) != d:
        raise ValueError(f"theta needs {d} entries, got {len(theta)}")
    zero_field = CoefficientField.zero()
    p, q = {}, {}
    for gamma in range(1, d + 1):
        th = theta[gamma - 1]
        if th < 0:
            raise ValueError(f"theta^{gamma} must be nonnegative, got {th}")
        a0g = pde.a_field(0, gamma) or zero_field
        ag0 = pde.a_field(gamma, 0) or zero_field
        for field in (a0g, ag0):
            values = _admissibility_samples(field, d, t, samples)
            worst = float(np.max(np.abs(values)))
            if worst > th:
                raise AdmissibilityError(gamma, th, worst)
        p[pde.direction(gamma)] = a0g + th
        q[pde.direction(gamma)] = th - ag0

    directions = [pde.direction(alpha) for alpha in range(d + 1)]
    a = {}
    for (alpha, beta), field in pde.a.items():
        if alpha == 0 and beta == 0:
            a[(pde.direction(0), pde.direction(0))] = field
        elif alpha >= 1 and beta >= 1:
            a[(pde.direction(alpha), pde.direction(beta))] = field
    b = {pde.direction(alpha): list(channels) for alpha, channels in pde.b.items()}
    return StencilSpec.build(d, directions, a=a, p=p, q=q, b=b, driver_count=pde.driver_count)


def operator_consistency_order(
    spec: StencilSpec,
    pde: TargetPDE,
    phi: T.Callable[[Lattice], GridFunction],
    lattices: T.Sequence[Lattice],
    t: float = 0.0,
) -> OrderFit:
    """Fitted order of |L^h phi - (a D D) phi|_{l_{h,2}} over a ladder of lattices."""
    if len(lattices) < 3:
        raise ValueError("At least 3 lattices are needed for an order fit")
    pairs = []
    for lattice in lattices:
        field = phi(lattice)
        residual = apply_L(spec, t, field) - apply_target_L(pde, t, field)
        pairs.append((lattice.spacing, l2h_norm(residual)))
    return fit_order(pairs, exact_tol=EXACT_RESIDUAL)


def data_norm(
    problem: ProblemData,
    order: int,
    directions: T.Sequence[DirectionLike],
    times: T.Sequence[float],
) -> float:
    """K_m(T)^2 = int (|f_t|_m^2 + |g_t|_{m+1}^2) dt by the trapezoidal rule over ``times``."""
    times = np.asarray(times, dtype=float)
    integrand = np.zeros(times.size)
    for k, t in enumerate(times):
        f = problem.source(t)
        if f is not None:
            integrand[k] += discrete_sobolev_norm(f, order, directions) ** 2
        for r in range(problem.driver_count):
            g = problem.noise(t, r)
            if g is not None:
                integrand[k] += discrete_sobolev_norm(g, order + 1, directions) ** 2
    if times.size < 2:
        return 0.0
    return math.sqrt(float(np.sum(np.diff(times) * (integrand[1:] + integrand[:-1]) / 2)))


__all__ = [
    "StencilSpec",
    "TargetPDE",
    "ProblemData",
    "ParabolicityReport",
    "apply_L",
    "apply_M",
    "apply_target_L",
    "apply_target_M",
    "consistency_residual",
    "parabolicity_report",
    "from_pde_central",
    "from_pde_upwind",
    "operator_consistency_order",
    "data_norm",
]
