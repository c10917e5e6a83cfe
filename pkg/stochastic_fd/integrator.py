import cmath
import math
import typing as T
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from loguru import logger
from stdl import fs

from stochastic_fd.errors import CoefficientError, LatticeMismatchError, SolverAbort
from stochastic_fd.grid import GridFunction, Lattice, is_zero, l2h_norm, restrict, sup_norm
from stochastic_fd.scheme import ProblemData, StencilSpec, apply_L, apply_M
from stochastic_fd.wiener import WienerPath


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    States of a grid solution at a list of record times.

    Args:
        lattice (Lattice): Lattice of every state.
        record_times (tuple[float, ...]): Increasing record times.
        states (tuple[GridFunction, ...]): One state per record time.
        path_ref (tuple[int, int], optional): (seed, level) of the driving path.
    """

    lattice: Lattice
    record_times: tuple[float, ...]
    states: tuple[GridFunction, ...]
    path_ref: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "record_times", tuple(float(i) for i in self.record_times))
        object.__setattr__(self, "states", tuple(self.states))
        if len(self.record_times) != len(self.states):
            raise ValueError(f"{len(self.record_times)} record times for {len(self.states)} states")
        for state in self.states:
            if state.lattice != self.lattice:
                raise LatticeMismatchError(f"State on {state.lattice}, trajectory on {self.lattice}")

    def at(self, t: float) -> GridFunction:
        for time, state in zip(self.record_times, self.states):
            if math.isclose(time, t, rel_tol=1e-12, abs_tol=1e-12):
                return state
        raise KeyError(f"t={t} is not a record time")

    @property
    def values(self) -> np.ndarray:
        return np.stack([i.values for i in self.states])

    def is_finite(self) -> bool:
        return all(i.is_finite() for i in self.states)

    def map(self, fn: T.Callable[[GridFunction], GridFunction]) -> "Trajectory":
        return Trajectory(self.lattice, self.record_times, [fn(i) for i in self.states], self.path_ref)

    def restrict(self, coarse: Lattice) -> "Trajectory":
        return Trajectory(coarse, self.record_times, [restrict(i, coarse) for i in self.states], self.path_ref)

    def to_csv(self, directory: str, prefix: str = "state") -> list[str]:
        """One file per record time with rows ``x1,...,xd,value``."""
        Path(directory).mkdir(parents=True, exist_ok=True)
        coords = [i.ravel() for i in self.lattice.coordinates()]
        lattice = self.lattice
        written = []
        for k, (t, state) in enumerate(zip(self.record_times, self.states)):
            lines = [f"# d={lattice.dim} N={lattice.points_per_axis} h={lattice.spacing:.17g} t={t:.17g}"]
            for j, v in enumerate(state.flat):
                lines.append(",".join([f"{c[j]:.17g}" for c in coords] + [f"{v:.17g}"]))
            path = str(Path(directory) / f"{prefix}_{k:04d}.csv")
            fs.File(path).write("\n".join(lines) + "\n")
            written.append(path)
        return written

    @classmethod
    def from_csv(cls, directory: str, prefix: str = "state") -> "Trajectory":
        files = sorted(Path(directory).glob(f"{prefix}_*.csv"))
        if not files:
            raise FileNotFoundError(f"No '{prefix}_*.csv' files in {directory}")
        times, states, lattice = [], [], None
        for file in files:
            lines = fs.File(str(file)).read().splitlines()
            header = dict(i.split("=") for i in lines[0].lstrip("#").split())
            lattice = Lattice(int(header["d"]), int(header["N"]), float(header["h"]))
            values = [float(i.rsplit(",", 1)[1]) for i in lines[1:] if i.strip()]
            times.append(float(header["t"]))
            states.append(GridFunction(lattice, np.array(values)))
        return cls(lattice, times, states)

    def to_binary(self, path: str) -> None:
        lattice = self.lattice
        seed, level = self.path_ref or (-1, -1)
        with open(path, "wb") as fh:
            header = [lattice.dim, lattice.points_per_axis, len(self.record_times), seed, level]
            np.array(header, dtype="<i8").tofile(fh)
            np.array([lattice.spacing, *self.record_times], dtype="<f8").tofile(fh)
            self.values.astype("<f8").tofile(fh)

    @classmethod
    def from_binary(cls, path: str) -> "Trajectory":
        with open(path, "rb") as fh:
            dim, n, count, seed, level = (int(i) for i in np.fromfile(fh, dtype="<i8", count=5))
            head = np.fromfile(fh, dtype="<f8", count=count + 1)
            payload = np.fromfile(fh, dtype="<f8")
        lattice = Lattice(dim, n, float(head[0]))
        states = [GridFunction(lattice, i) for i in payload.reshape(count, lattice.size)]
        path_ref = None if seed < 0 else (seed, level)
        return cls(lattice, head[1:], states, path_ref)


@dataclass(frozen=True)
class ModeState:
    """Amplitude of exp(i k x). ``k`` is an angular wavenumber (an integer for 2pi-periodic data)."""

    k: float
    amplitude: complex

    def __post_init__(self) -> None:
        if not cmath.isfinite(self.amplitude):
            raise ValueError(f"Mode amplitude must be finite, got {self.amplitude}")


def _record_indices(path: WienerPath, record_times: T.Sequence[float]) -> list[int]:
    indices = [path.index_of(t) for t in record_times]
    if indices != sorted(indices):
        raise ValueError("Record times must be increasing")
    return indices


def stability_limit(spec: StencilSpec, lattice: Lattice, t: float = 0.0) -> float:
    """h^2 / (2 max|a| max|lambda|^2 |Lambda_0|^2), the explicit stepping heuristic."""
    nonzero = spec.nonzero_directions
    max_a = spec.max_abs_a(t, lattice)
    if max_a == 0 or not nonzero:
        return math.inf
    max_lam2 = max(sum(c * c for c in i) for i in nonzero)
    return lattice.spacing**2 / (2 * max_a * max_lam2 * len(nonzero) ** 2)


def em_solve(
    spec: StencilSpec,
    problem: ProblemData,
    path: WienerPath,
    record_times: T.Sequence[float] | None = None,
) -> Trajectory:
    """
    Explicit Euler-Maruyama for du = (L^h u + f) dt + sum_r (M^{h,r} u + g^r) dw^r on the path grid,
    with left-point evaluation of all coefficients.

    Raises:
        SolverAbort: A state became non-finite.
    """
    lattice = problem.lattice
    if path.driver_count < spec.driver_count or path.driver_count < problem.driver_count:
        raise ValueError(
            f"Path has {path.driver_count} drivers, scheme needs {spec.driver_count}, "
            f"problem {problem.driver_count}"
        )
    record_times = list(record_times) if record_times is not None else [0.0, problem.horizon]
    end = path.index_of(problem.horizon)
    indices = _record_indices(path, record_times)
    if indices and indices[-1] > end:
        raise ValueError(f"Record time {record_times[-1]} exceeds the horizon {problem.horizon}")

    dt_max = float(np.max(np.diff(path.times[: end + 1])))
    limit = stability_limit(spec, lattice)
    if dt_max > limit:
        logger.warning(
            f"dt={dt_max:.3e} exceeds the explicit stability heuristic {limit:.3e} on h={lattice.spacing:.4g}"
        )
    logger.debug(f"Euler-Maruyama: {end} steps on {lattice}, seed={path.seed}, level={path.level}")

    wanted = {}
    for t, k in zip(record_times, indices):
        wanted.setdefault(k, []).append(t)
    recorded: dict[float, GridFunction] = {}
    dw = path.increments
    u = problem.psi
    for k in range(end + 1):
        for t in wanted.get(k, []):
            recorded[t] = u
        if k == end:
            break
        t = float(path.times[k])
        dt = float(path.times[k + 1] - path.times[k])
        du = apply_L(spec, t, u).values
        f = problem.source(t)
        if f is not None:
            du = du + f.values
        du = du * dt
        noise = apply_M(spec, t, u)
        for r in range(max(spec.driver_count, problem.driver_count)):
            term = noise[r].values if r < spec.driver_count else 0.0
            g = problem.noise(t, r)
            if g is not None:
                term = term + g.values
            du = du + term * dw[r, k]
        u = GridFunction(lattice, u.values + du)
        if not u.is_finite():
            raise SolverAbort(k + 1, float(path.times[k + 1]))
    return Trajectory(lattice, record_times, [recorded[t] for t in record_times], (path.seed, path.level))


def _require_fourier(spec: StencilSpec) -> None:
    if spec.dim != 1:
        raise CoefficientError("Fourier symbols are available for one-dimensional schemes only")
    if not spec.is_constant:
        raise CoefficientError("Fourier symbols need constant coefficients")


def fourier_symbol(
    spec: StencilSpec, k: float, spacing: float | None = None
) -> tuple[complex, list[complex]]:
    """
    Drift and per-driver diffusion symbols of the scheme on exp(i k x).

    With ``spacing=None`` the continuum symbols (h -> 0) are returned.
    """
    _require_fourier(spec)

    def s(lam: tuple[int, ...]) -> complex:
        if is_zero(lam):
            return 1.0
        if spacing is None:
            return 1j * k * lam[0]
        return 1j * math.sin(k * spacing * lam[0]) / spacing

    def one_sided(gamma: tuple[int, ...], sign: int) -> complex:
        if spacing is None:
            return 1j * k * gamma[0]
        return (cmath.exp(sign * 1j * k * spacing * gamma[0]) - 1) / (sign * spacing)

    drift = 0j
    for (lam, mu), field in spec.a.items():
        drift += field.constant_value * s(lam) * s(mu)
    for gamma, field in spec.p.items():
        drift += field.constant_value * one_sided(gamma, 1)
    for gamma, field in spec.q.items():
        drift -= field.constant_value * one_sided(gamma, -1)
    diffusion = [0j] * spec.driver_count
    for lam, channels in spec.b.items():
        for r, field in enumerate(channels):
            diffusion[r] += field.constant_value * s(lam)
    return drift, diffusion


def evolve_modes(
    spec: StencilSpec,
    modes: T.Sequence[ModeState],
    path: WienerPath,
    t: float,
    spacing: float | None = None,
) -> list[ModeState]:
    """A(t) = A(0) exp((l - 1/2 sum m_r^2) t + sum m_r w^r_t) for every mode."""
    if path.driver_count < spec.driver_count:
        raise ValueError(f"Path has {path.driver_count} drivers, scheme needs {spec.driver_count}")
    w = [path.value_at(r, t) for r in range(spec.driver_count)]
    result = []
    for mode in modes:
        drift, diffusion = fourier_symbol(spec, mode.k, spacing)
        exponent = (drift - 0.5 * sum(m * m for m in diffusion)) * t
        exponent += sum(m * wr for m, wr in zip(diffusion, w))
        result.append(ModeState(mode.k, mode.amplitude * cmath.exp(exponent)))
    return result


def synthesize(modes: T.Sequence[ModeState], lattice: Lattice) -> np.ndarray:
    """Complex values of sum A_k exp(i k x_j) at the nodes x_j = j h."""
    if lattice.dim != 1:
        raise LatticeMismatchError("Mode synthesis is one-dimensional")
    x = lattice.coordinates()[0]
    out = np.zeros(lattice.shape, dtype=complex)
    for mode in modes:
        out += mode.amplitude * np.exp(1j * mode.k * x)
    return out


def fourier_exact_solve(
    spec: StencilSpec,
    modes: T.Sequence[ModeState],
    path: WienerPath,
    record_times: T.Sequence[float],
    lattice: Lattice,
    continuum: bool = False,
) -> Trajectory:
    """
    Exact-in-time solution of the constant-coefficient 1-d scheme (or of its continuum limit when
    ``continuum`` is set), sampled on ``lattice`` at the record times.
    """
    _require_fourier(spec)
    spacing = None if continuum else lattice.spacing
    states = []
    for t in record_times:
        evolved = evolve_modes(spec, modes, path, t, spacing)
        states.append(GridFunction(lattice, synthesize(evolved, lattice).real))
    return Trajectory(lattice, record_times, states, (path.seed, path.level))


def modes_from_field(f: GridFunction, tol: float = 1e-14) -> list[ModeState]:
    """Fourier modes of a 1-d field whose period is the lattice period."""
    lattice = f.lattice
    if lattice.dim != 1:
        raise LatticeMismatchError("Mode decomposition is one-dimensional")
    coefficients = np.fft.fft(f.values) / lattice.points_per_axis
    k = 2 * np.pi * np.fft.fftfreq(lattice.points_per_axis, d=lattice.spacing)
    cutoff = tol * max(float(np.max(np.abs(coefficients))), 1.0)
    return [ModeState(float(ki), complex(c)) for ki, c in zip(k, coefficients) if abs(c) > cutoff]


def trajectory_errors(trajectory: Trajectory, reference: Trajectory) -> tuple[float, float]:
    """
    Distance to a reference living on the same or a finer nested lattice.

    Returns:
        tuple[float, float]: (sup over record times and nodes, sup over record times of the l_{h,2} norm)
    """
    sup_err, l2_err = 0.0, 0.0
    for t, state in zip(trajectory.record_times, trajectory.states):
        diff = state - restrict(reference.at(t), trajectory.lattice)
        sup_err = max(sup_err, sup_norm(diff))
        l2_err = max(l2_err, l2h_norm(diff))
    return sup_err, l2_err


def positive_part(trajectory: Trajectory) -> Trajectory:
    """(v)^+ applied to every state."""
    return trajectory.map(lambda s: GridFunction(s.lattice, np.maximum(s.values, 0.0)))


__all__ = [
    "Trajectory",
    "ModeState",
    "stability_limit",
    "em_solve",
    "fourier_symbol",
    "evolve_modes",
    "synthesize",
    "fourier_exact_solve",
    "modes_from_field",
    "trajectory_errors",
    "positive_part",
]
