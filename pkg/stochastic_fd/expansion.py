"""
Expansion of scheme solutions in powers of h.

The operators L^(n), M^(n) collect the h^n/n! terms of the Taylor expansion of L^h and M^{h,r};
the coefficients v^(n) of u^h = sum (h^n/n!) v^(n) solve a triangular system driven by them.
All spatial derivatives are periodic Fourier derivatives on the lattice of the input.
"""

import math
import typing as T
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from loguru import logger

from stochastic_fd.errors import CoefficientError, SolverAbort
from stochastic_fd.grid import GridFunction, Lattice, l2h_norm, restrict, sup_norm, zero_direction
from stochastic_fd.integrator import Trajectory, fourier_symbol
from stochastic_fd.scheme import StencilSpec, apply_L, apply_M
from stochastic_fd.spectral import ALIASING_THRESHOLD, check_aliasing, derivative, wavenumbers
from stochastic_fd.stats import OrderFit, fit_order
from stochastic_fd.wiener import WienerPath

EXACT_RESIDUAL = 1e-14
HIERARCHY_METHODS = ("euler", "exponential")


def b_const(n: int) -> int:
    if n < 0:
        raise ValueError(f"n must be nonnegative, got {n}")
    return 1 if n % 2 == 0 else 0


def a_const(n: int, j: int) -> Fraction:
    """n! / ((j+1)! (n-j+1)!) when n and j are even, else 0."""
    if n < 0 or not 0 <= j <= n:
        raise ValueError(f"Need 0 <= j <= n, got n={n}, j={j}")
    if n % 2 or j % 2:
        return Fraction(0)
    return Fraction(math.factorial(n), math.factorial(j + 1) * math.factorial(n - j + 1))


@dataclass(frozen=True)
class ExpansionOperators:
    scheme: StencilSpec
    aliasing_threshold: float = ALIASING_THRESHOLD


def _values(field, t: float, lattice: Lattice):
    return 0.0 if field is None else field.values(t, lattice)


def apply_Ln(
    ops: ExpansionOperators, n: int, t: float, f: GridFunction, check: bool = True
) -> GridFunction:
    """L^(n)_t f. Order 0 is the limit operator sum a d_lambda d_mu + sum (p - q) d_lambda."""
    if n < 0:
        raise ValueError(f"n must be nonnegative, got {n}")
    if check:
        check_aliasing(f, ops.aliasing_threshold)
    spec = ops.scheme
    lattice = f.lattice
    out = np.zeros(lattice.shape)
    nonzero = spec.nonzero_directions

    if n == 0:
        for (lam, mu), field in spec.a.items():
            out += field.values(t, lattice) * derivative(f, [(lam, 1), (mu, 1)]).values
        for lam in nonzero:
            c = _values(spec.p_field(lam), t, lattice) - _values(spec.q_field(lam), t, lattice)
            if np.isscalar(c) and c == 0:
                continue
            out += c * derivative(f, [(lam, 1)]).values
        return GridFunction(lattice, out)

    for (lam, mu), field in spec.a.items():
        if lam not in nonzero or mu not in nonzero:
            continue
        for j in range(n + 1):
            coef = a_const(n, j)
            if coef:
                d = derivative(f, [(lam, j + 1), (mu, n - j + 1)]).values
                out += float(coef) * field.values(t, lattice) * d
    zero = zero_direction(spec.dim)
    scale = 1.0 / (n + 1)
    sign = (-1) ** (n + 1)
    for lam in nonzero:
        c = _values(spec.p_field(lam), t, lattice) + sign * _values(spec.q_field(lam), t, lattice)
        if b_const(n):
            c = c + _values(spec.a_field(lam, zero), t, lattice) + _values(spec.a_field(zero, lam), t, lattice)
        if np.isscalar(c) and c == 0:
            continue
        out += scale * c * derivative(f, [(lam, n + 1)]).values
    return GridFunction(lattice, out)


def apply_Mn(
    ops: ExpansionOperators, n: int, t: float, f: GridFunction, check: bool = True
) -> list[GridFunction]:
    """M^(n)r_t f for every driver; zero for odd n."""
    if n < 0:
        raise ValueError(f"n must be nonnegative, got {n}")
    if check:
        check_aliasing(f, ops.aliasing_threshold)
    spec = ops.scheme
    lattice = f.lattice
    out = [np.zeros(lattice.shape) for _ in range(spec.driver_count)]
    if n > 0 and not b_const(n):
        return [GridFunction(lattice, i) for i in out]
    scale = 1.0 if n == 0 else 1.0 / (n + 1)
    for lam, channels in spec.b.items():
        if n > 0 and not any(lam):
            continue
        d = derivative(f, [(lam, 1 if n == 0 else n + 1)]).values
        for r, field in enumerate(channels):
            out[r] += scale * field.values(t, lattice) * d
    return [GridFunction(lattice, i) for i in out]


def expanded_drift(
    ops: ExpansionOperators,
    t: float,
    h: float,
    coefficients: T.Sequence[GridFunction],
    grouping: str = "by_order",
) -> GridFunction:
    """
    Truncated sum_{i+j<=k} (h^j/j!)(h^i/i!) L^(i) v^(j) for k = len(coefficients) - 1, summed either
    by total order n = i + j with binomial weights or field by field.
    """
    k = len(coefficients) - 1
    lattice = coefficients[0].lattice
    out = GridFunction.zeros(lattice)
    if grouping == "by_order":
        for n in range(k + 1):
            inner = GridFunction.zeros(lattice)
            for l in range(n + 1):
                inner = inner + math.comb(n, l) * apply_Ln(ops, l, t, coefficients[n - l], check=False)
            out = out + (h**n / math.factorial(n)) * inner
    elif grouping == "by_field":
        for j in range(k + 1):
            inner = GridFunction.zeros(lattice)
            for i in range(k - j + 1):
                inner = inner + (h**i / math.factorial(i)) * apply_Ln(ops, i, t, coefficients[j], check=False)
            out = out + (h**j / math.factorial(j)) * inner
    else:
        raise ValueError(f"Unknown grouping '{grouping}'")
    return out


@dataclass(frozen=True, eq=False)
class ExpansionHierarchy:
    """v^(0), ..., v^(k) on one lattice, path and record grid."""

    orders: tuple[Trajectory, ...]

    @property
    def max_order(self) -> int:
        return len(self.orders) - 1

    @property
    def lattice(self) -> Lattice:
        return self.orders[0].lattice

    @property
    def record_times(self) -> tuple[float, ...]:
        return self.orders[0].record_times

    def order(self, n: int) -> Trajectory:
        return self.orders[n]

    def combine(self, h: float, upto: int | None = None) -> Trajectory:
        """sum_{j <= upto} (h^j / j!) v^(j)."""
        upto = self.max_order if upto is None else upto
        states = []
        for k in range(len(self.record_times)):
            acc = GridFunction.zeros(self.lattice)
            for j in range(upto + 1):
                acc = acc + (h**j / math.factorial(j)) * self.orders[j].states[k]
            states.append(acc)
        return Trajectory(self.lattice, self.record_times, states, self.orders[0].path_ref)

    def to_csv(self, directory: str) -> list[str]:
        written = []
        for n, trajectory in enumerate(self.orders):
            written.extend(trajectory.to_csv(directory, prefix=f"order{n}"))
        return written


def _sources(
    ops: ExpansionOperators, n: int, t: float, v: T.Sequence[GridFunction], check: bool
) -> tuple[np.ndarray, list[np.ndarray]]:
    lattice = v[0].lattice
    drift = np.zeros(lattice.shape)
    noise = [np.zeros(lattice.shape) for _ in range(ops.scheme.driver_count)]
    for l in range(1, n + 1):
        c = math.comb(n, l)
        drift += c * apply_Ln(ops, l, t, v[n - l], check=check).values
        for r, m in enumerate(apply_Mn(ops, l, t, v[n - l], check=check)):
            noise[r] += c * m.values
    return drift, noise


def _homogeneous_symbols(spec: StencilSpec, lattice: Lattice) -> tuple[np.ndarray, np.ndarray]:
    """Continuum drift symbol and diffusion symbols (m, N) on the FFT grid of a 1-d lattice."""
    kappa = wavenumbers(lattice)[0]
    drift = np.zeros(kappa.size, dtype=complex)
    diffusion = np.zeros((spec.driver_count, kappa.size), dtype=complex)
    for i, k in enumerate(kappa):
        l, m = fourier_symbol(spec, float(k), None)
        drift[i] = l
        diffusion[:, i] = m
    return drift, diffusion


def solve_hierarchy(
    ops: ExpansionOperators,
    k: int,
    v0: Trajectory | T.Callable[[float], GridFunction],
    path: WienerPath,
    record_times: T.Sequence[float],
    method: str = "euler",
) -> ExpansionHierarchy:
    """
    Integrate dv^(n) = (L^(0) v^(n) + sum_l C(n,l) L^(l) v^(n-l)) dt
                      + sum_r (M^(0)r v^(n) + sum_l C(n,l) M^(l)r v^(n-l)) dw^r,  v^(n)_0 = 0,
    for n = 1..k on the path grid, all orders advanced together from left-point values.

    Args:
        v0: v^(0) at every path node up to the last record time, as a callable or a trajectory
            recorded on the path grid.
        method (str): "euler" (Euler-Maruyama) or "exponential" (homogeneous part integrated exactly
            per Fourier mode; constant-coefficient 1-d schemes only).
    """
    if k < 0:
        raise ValueError(f"k must be nonnegative, got {k}")
    if method not in HIERARCHY_METHODS:
        raise ValueError(f"Unknown hierarchy method '{method}', expected one of {HIERARCHY_METHODS}")
    spec = ops.scheme
    if path.driver_count < spec.driver_count:
        raise ValueError(f"Path has {path.driver_count} drivers, scheme needs {spec.driver_count}")
    source = v0.at if isinstance(v0, Trajectory) else v0
    record_times = [float(i) for i in record_times]
    indices = [path.index_of(t) for t in record_times]
    end = max(indices, default=0)
    first = source(float(path.times[0]))
    lattice = first.lattice
    zero = GridFunction.zeros(lattice)
    check_aliasing(first, ops.aliasing_threshold)

    if method == "exponential":
        if lattice.dim != 1 or not spec.is_constant:
            raise CoefficientError("The exponential hierarchy stepper needs a constant-coefficient 1-d scheme")
        ell, mu = _homogeneous_symbols(spec, lattice)
        ito = ell - 0.5 * np.sum(mu**2, axis=0)

    v = [first] + [zero] * k
    wanted = set(indices)
    recorded: dict[int, list[GridFunction]] = {}
    dw = path.increments
    for step in range(end + 1):
        t = float(path.times[step])
        if k == 0 and step not in wanted:
            continue
        v[0] = source(t)
        if step in wanted:
            recorded[step] = list(v)
        if step == end or k == 0:
            continue
        dt = float(path.times[step + 1] - t)
        updated = []
        for n in range(1, k + 1):
            s, rs = _sources(ops, n, t, v, check=False)
            if method == "euler":
                du = (apply_Ln(ops, 0, t, v[n], check=False).values + s) * dt
                m0 = apply_Mn(ops, 0, t, v[n], check=False)
                for r in range(spec.driver_count):
                    du = du + (m0[r].values + rs[r]) * dw[r, step]
                new = v[n].values + du
            else:
                kick = np.fft.fft(v[n].values) + np.fft.fft(s) * dt
                growth = ito * dt
                for r in range(spec.driver_count):
                    r_hat = np.fft.fft(rs[r])
                    kick = kick - mu[r] * r_hat * dt + r_hat * dw[r, step]
                    growth = growth + mu[r] * dw[r, step]
                new = np.fft.ifft(np.exp(growth) * kick).real
            if not np.all(np.isfinite(new)):
                raise SolverAbort(step + 1, float(path.times[step + 1]), reason=f"non-finite v^({n})")
            updated.append(GridFunction(lattice, new))
        v = [v[0]] + updated

    for step in indices:
        for state in recorded[step]:
            check_aliasing(state, ops.aliasing_threshold)
    orders = []
    for n in range(k + 1):
        states = [recorded[i][n] for i in indices]
        orders.append(Trajectory(lattice, record_times, states, (path.seed, path.level)))
    logger.debug(f"Solved expansion hierarchy up to order {k} with the {method} stepper")
    return ExpansionHierarchy(tuple(orders))


def remainder_order_check(
    ops: ExpansionOperators,
    n: int,
    phi: T.Callable[[Lattice], GridFunction],
    lattices: T.Sequence[Lattice],
    t: float = 0.0,
) -> tuple[OrderFit, OrderFit]:
    """
    Fitted orders of |(L^h - sum_{i<=n} (h^i/i!) L^(i)) phi|_{l_{h,2}} and of the matching M residual
    (l_2 over drivers) across the lattices.
    """
    if len(lattices) < 3:
        raise ValueError("At least 3 lattices are needed for an order fit")
    spec = ops.scheme
    l_pairs, m_pairs = [], []
    for lattice in lattices:
        h = lattice.spacing
        field = phi(lattice)
        check_aliasing(field, ops.aliasing_threshold)
        residual = apply_L(spec, t, field)
        m_residual = apply_M(spec, t, field)
        for i in range(n + 1):
            w = h**i / math.factorial(i)
            residual = residual - w * apply_Ln(ops, i, t, field, check=False)
            m_residual = [
                a - w * b for a, b in zip(m_residual, apply_Mn(ops, i, t, field, check=False))
            ]
        l_pairs.append((h, l2h_norm(residual)))
        m_pairs.append((h, math.sqrt(sum(l2h_norm(i) ** 2 for i in m_residual))))
    return fit_order(l_pairs, exact_tol=EXACT_RESIDUAL), fit_order(m_pairs, exact_tol=EXACT_RESIDUAL)


def expansion_residual_order(
    solutions: T.Sequence[Trajectory], hierarchy: ExpansionHierarchy, norm: str = "sup"
) -> OrderFit:
    """Fitted order of |u^h - sum_j (h^j/j!) v^(j)| over a ladder of solutions."""
    pairs = []
    for u in solutions:
        h = u.lattice.spacing
        expansion = hierarchy.combine(h)
        worst = 0.0
        for t, state in zip(u.record_times, u.states):
            diff = state - restrict(expansion.at(t), u.lattice)
            worst = max(worst, sup_norm(diff) if norm == "sup" else l2h_norm(diff))
        pairs.append((h, worst))
    return fit_order(pairs, exact_tol=EXACT_RESIDUAL)


__all__ = [
    "b_const",
    "a_const",
    "ExpansionOperators",
    "ExpansionHierarchy",
    "apply_Ln",
    "apply_Mn",
    "expanded_drift",
    "solve_hierarchy",
    "remainder_order_check",
    "expansion_residual_order",
    "HIERARCHY_METHODS",
]
