"""
Convergence studies over lattice ladders and Monte Carlo seeds.

Every (seed, level) cell is solved on the same realization of the driving noise and compared with a
reference trajectory: the continuum Fourier solution when one exists, else the same scheme two
levels finer on the refined path.
"""

import time
import typing as T
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from loguru import logger
from pydantic import BaseModel

from stochastic_fd.config import (
    ExperimentConfig,
    build_ladder,
    build_problem,
    build_scheme,
    time_grid,
)
from stochastic_fd.errors import ConfigError, MissingReferenceError, SolverAbort
from stochastic_fd.grid import GridFunction, Lattice, restrict
from stochastic_fd.integrator import (
    ModeState,
    Trajectory,
    em_solve,
    evolve_modes,
    fourier_exact_solve,
    modes_from_field,
    positive_part,
    synthesize,
    trajectory_errors,
)
from stochastic_fd.richardson import extrapolate, order_boost, weights
from stochastic_fd.scheme import StencilSpec, data_norm
from stochastic_fd.stats import MomentEstimate, OrderFit, fit_order, moment_estimate
from stochastic_fd.wiener import WienerPath, refine_to, sample

FINE_REFERENCE_LEVELS = 2


class ErrorRow(BaseModel):
    h: float
    level: int
    seed: int
    method: str
    norm: str
    value: float


class FitRow(BaseModel):
    method: str
    norm: str
    seed: int | None = None
    fit: OrderFit


class MomentRow(BaseModel):
    h: float
    method: str
    norm: str
    p: float
    estimate: MomentEstimate


class ConvergenceReport(BaseModel):
    name: str
    reference: str
    seeds: list[int]
    spacings: list[float]
    errors: list[ErrorRow] = []
    fits: list[FitRow] = []
    moments: list[MomentRow] = []
    weights: str | None = None
    data_norm: float | None = None
    clip_check: bool | None = None
    metadata: dict[str, T.Any] = {}

    def deterministic_dump(self) -> str:
        """JSON of everything except the runtime metadata."""
        return self.model_dump_json(exclude={"metadata"})

    def fit(self, method: str, norm: str, seed: int | None = None) -> OrderFit:
        for row in self.fits:
            if row.method == method and row.norm == norm and row.seed == seed:
                return row.fit
        raise KeyError(f"No fit for method={method}, norm={norm}, seed={seed}")

    def error_values(self, method: str, norm: str, seed: int) -> list[float]:
        return [
            i.value for i in self.errors if i.method == method and i.norm == norm and i.seed == seed
        ]


@dataclass(frozen=True)
class _Study:
    config: ExperimentConfig
    spec: StencilSpec
    ladder: list[Lattice]
    record_times: list[float]
    paths: dict[int, WienerPath]
    reference_kind: str
    modes: list[ModeState] | None

    def path_for(self, seed: int, level: int) -> WienerPath:
        base = self.paths[seed]
        if self.config.time.policy == "halve":
            return refine_to(base, level)
        return base

    def solve(self, seed: int, level: int) -> Trajectory:
        lattice = self.ladder[level]
        path = self.path_for(seed, level)
        try:
            if self.config.time.solver == "exact":
                return fourier_exact_solve(self.spec, self.modes, path, self.record_times, lattice)
            problem = build_problem(self.config, lattice)
            return em_solve(self.spec, problem, path, self.record_times)
        except SolverAbort as e:
            aborted = e.with_context(lattice.spacing, seed)
            logger.error(str(aborted))
            raise aborted from e

    def reference(self, seed: int) -> Trajectory:
        finest = self.ladder[-1]
        path = self.path_for(seed, len(self.ladder) - 1)
        if self.reference_kind == "exact":
            return fourier_exact_solve(
                self.spec, self.modes, path, self.record_times, finest, continuum=True
            )
        lattice = finest
        for _ in range(FINE_REFERENCE_LEVELS):
            lattice = lattice.refine()
        fine_path = refine_to(path, path.level + FINE_REFERENCE_LEVELS)
        try:
            return em_solve(self.spec, build_problem(self.config, lattice), fine_path, self.record_times)
        except SolverAbort as e:
            aborted = e.with_context(lattice.spacing, seed)
            logger.error(str(aborted))
            raise aborted from e


def _has_fourier_oracle(config: ExperimentConfig, spec: StencilSpec) -> bool:
    problem = config.problem
    return spec.dim == 1 and spec.is_constant and problem.f is None and problem.g is None


def resolve_reference(config: ExperimentConfig, spec: StencilSpec) -> str:
    """
    Raises:
        MissingReferenceError: An exact reference was requested for a problem without one.
    """
    wanted = config.output.reference
    oracle = _has_fourier_oracle(config, spec)
    if config.time.solver == "exact" and not oracle:
        raise MissingReferenceError(
            "The exact solver needs a constant-coefficient 1-d scheme without free terms"
        )
    if wanted == "exact" and not oracle:
        raise MissingReferenceError(
            "No exact reference: the Fourier oracle needs a constant-coefficient 1-d scheme "
            "without free terms"
        )
    if wanted == "fine" and config.time.solver == "exact":
        raise MissingReferenceError("A fine-grid reference needs the Euler-Maruyama solver")
    if wanted == "auto":
        return "exact" if oracle else "fine"
    return wanted


def _run_cells(fn: T.Callable, cells: list, threads: int) -> list:
    if threads <= 1:
        return [fn(*i) for i in cells]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda i: fn(*i), cells))


def continuum_source(
    spec: StencilSpec, modes: T.Sequence[ModeState], path: WienerPath, lattice: Lattice
) -> T.Callable[[float], GridFunction]:
    """The continuum Fourier solution at any node of ``path``, sampled on ``lattice``."""

    def source(t: float) -> GridFunction:
        evolved = evolve_modes(spec, modes, path, t, None)
        return GridFunction(lattice, synthesize(evolved, lattice).real)

    return source


def _clip_holds(solution: Trajectory, reference: Trajectory) -> bool:
    """Pointwise |ref - u^+| <= |ref - u| at every record time."""
    clipped = positive_part(solution)
    for t, raw, cut in zip(solution.record_times, solution.states, clipped.states):
        ref = restrict(reference.at(t), raw.lattice).values
        if np.any(np.abs(ref - cut.values) > np.abs(ref - raw.values) + 1e-15):
            return False
    return True


def _build_study(config: ExperimentConfig, seeds: T.Sequence[int]) -> _Study:
    spec = build_scheme(config)
    ladder = build_ladder(config)
    steps, record_times = time_grid(config)
    reference_kind = resolve_reference(config, spec)
    modes = None
    if reference_kind == "exact" or config.time.solver == "exact":
        modes = modes_from_field(build_problem(config, ladder[-1]).psi)
    paths = {
        seed: sample(config.problem.drivers, steps, config.problem.horizon, seed) for seed in seeds
    }
    return _Study(config, spec, ladder, record_times, paths, reference_kind, modes)


def solve_level(config: ExperimentConfig, seed: int, level: int) -> tuple[Trajectory, Trajectory]:
    """The solution of one ladder level and its reference, driven by the realization of ``seed``."""
    study = _build_study(config, [seed])
    if not 0 <= level < len(study.ladder):
        raise ValueError(f"level must be in 0..{len(study.ladder) - 1}, got {level}")
    return study.solve(seed, level), study.reference(seed)


def run_convergence(
    config: ExperimentConfig,
    threads: int = 1,
) -> ConvergenceReport:
    """
    Solve every (seed, level) cell of the study, measure both error norms against the reference,
    optionally extrapolate, and fit orders and moments.

    Args:
        config (ExperimentConfig): The experiment.
        threads (int): Worker threads for the cell matrix. The report does not depend on it.

    Raises:
        MissingReferenceError: No usable reference solution.
        SolverAbort: A cell produced non-finite values; carries (h, seed, step).
    """
    started = time.perf_counter()
    seeds = config.monte_carlo.seed_list()
    study = _build_study(config, seeds)
    spec, ladder, record_times = study.spec, study.ladder, study.record_times
    steps = study.paths[seeds[0]].steps
    reference_kind = study.reference_kind
    logger.info(
        f"{config.name}: {len(seeds)} seed(s) x {len(ladder)} level(s), reference={reference_kind}, "
        f"threads={threads}"
    )

    cells = [(seed, level) for seed in seeds for level in range(len(ladder))]
    solved = _run_cells(study.solve, cells, threads)
    references = _run_cells(study.reference, [(seed,) for seed in seeds], threads)
    solutions = {cell: traj for cell, traj in zip(cells, solved)}
    reference_of = dict(zip(seeds, references))

    norms = config.output.norms
    rows: list[ErrorRow] = []
    clip_check = None

    def add_rows(method: str, seed: int, level: int, h: float, errors: tuple[float, float]) -> None:
        values = {"sup": errors[0], "l2h": errors[1]}
        for norm in norms:
            rows.append(
                ErrorRow(h=h, level=level, seed=seed, method=method, norm=norm, value=values[norm])
            )

    for seed, level in cells:
        u = solutions[(seed, level)]
        ref = reference_of[seed]
        add_rows("plain", seed, level, u.lattice.spacing, trajectory_errors(u, ref))
        if config.output.clip:
            add_rows("clipped", seed, level, u.lattice.spacing, trajectory_errors(positive_part(u), ref))
            if min(float(np.min(i.values)) for i in ref.states) >= 0:
                holds = _clip_holds(u, ref)
                clip_check = holds if clip_check is None else clip_check and holds
                if not holds:
                    logger.error(f"Positive part increased the error at h={u.lattice.spacing:g}, seed={seed}")

    w = None
    if config.extrapolation.enabled:
        w = weights(config.extrapolation.order, config.extrapolation.power_step)
        n = w.order + 1
        if len(ladder) < n:
            raise ConfigError(
                [f"extrapolation.order: order {w.order} needs {n} grid levels, got {len(ladder)}"]
            )
        for seed in seeds:
            ladder_solutions = [solutions[(seed, level)] for level in range(len(ladder))]
            boosted = order_boost(ladder_solutions, w, reference_of[seed])
            for level, (h, errors) in enumerate(boosted):
                add_rows("extrapolated", seed, level, h, errors)

    methods = list(dict.fromkeys(i.method for i in rows))
    fits: list[FitRow] = []
    moments: list[MomentRow] = []
    for method in methods:
        for norm in norms:
            selected = [i for i in rows if i.method == method and i.norm == norm]
            spacings = list(dict.fromkeys(i.h for i in selected))
            by_h = {h: [i.value for i in selected if i.h == h] for h in spacings}
            fits.append(
                FitRow(method=method, norm=norm, fit=fit_order((h, float(np.mean(v))) for h, v in by_h.items()))
            )
            if len(seeds) > 1:
                for seed in seeds:
                    pairs = [(i.h, i.value) for i in selected if i.seed == seed]
                    fits.append(FitRow(method=method, norm=norm, seed=seed, fit=fit_order(pairs)))
            for h, values in by_h.items():
                for p in config.monte_carlo.moments:
                    estimate = moment_estimate(values, p, seed=config.monte_carlo.base_seed)
                    moments.append(MomentRow(h=h, method=method, norm=norm, p=p, estimate=estimate))

    finest_problem = build_problem(config, ladder[-1])
    diagnostic = data_norm(
        finest_problem, config.output.sobolev_order, spec.nonzero_directions, record_times
    )

    report = ConvergenceReport(
        name=config.name,
        reference=reference_kind,
        seeds=seeds,
        spacings=[i.spacing for i in ladder],
        errors=rows,
        fits=fits,
        moments=moments,
        weights=str(w) if w is not None else None,
        data_norm=diagnostic,
        clip_check=clip_check,
        metadata={
            "runtime_seconds": time.perf_counter() - started,
            "threads": threads,
            "numpy": np.__version__,
            "steps": steps,
        },
    )
    for row in fits:
        if row.seed is None and row.fit.fitted:
            logger.info(f"{row.method}/{row.norm}: order {row.fit.slope:.3f} (R^2={row.fit.r_squared:.4f})")
    return report


EXAMPLE_2_4_SPACING = 0.1
EXAMPLE_2_4_VALUES = {
    "u(0)": -0.4161468365,
    "u^h(0)": -0.4131150562,
    "u^{h/2}(0)": -0.415389039,
    "v~^h(0)": -0.4161470333,
}


class ReproductionRow(BaseModel):
    label: str
    computed: float
    expected: float

    @property
    def difference(self) -> float:
        return abs(self.computed - self.expected)


def example_2_4_scheme() -> StencilSpec:
    """du = 2 D^2 u dt + 2 D u dw on the central lattice {0, 1}."""
    return StencilSpec.build(1, [(0,), (1,)], a={((1,), (1,)): 2.0}, b={(1,): 2.0})


def reproduce_example_2_4() -> list[ReproductionRow]:
    """
    u_1(0) and its approximations for psi = cos on the path conditioned on w_1 = 1, all from the
    exact Fourier integrator.
    """
    spec = example_2_4_scheme()
    path = WienerPath.from_values([0.0, 1.0], [[0.0, 1.0]])
    modes = [ModeState(1.0, 0.5), ModeState(-1.0, 0.5)]
    times = [0.0, 1.0]
    coarse = Lattice(1, 64, EXAMPLE_2_4_SPACING)
    fine = coarse.refine()

    exact = fourier_exact_solve(spec, modes, path, times, coarse, continuum=True)
    u_h = fourier_exact_solve(spec, modes, path, times, coarse)
    u_h2 = fourier_exact_solve(spec, modes, path, times, fine)
    v = extrapolate([u_h, u_h2], weights(1, 2))
    computed = {
        "u(0)": exact.at(1.0).flat[0],
        "u^h(0)": u_h.at(1.0).flat[0],
        "u^{h/2}(0)": u_h2.at(1.0).flat[0],
        "v~^h(0)": v.at(1.0).flat[0],
    }
    return [
        ReproductionRow(label=k, computed=float(computed[k]), expected=e)
        for k, e in EXAMPLE_2_4_VALUES.items()
    ]


__all__ = [
    "ErrorRow",
    "FitRow",
    "MomentRow",
    "ConvergenceReport",
    "ReproductionRow",
    "EXAMPLE_2_4_VALUES",
    "continuum_source",
    "resolve_reference",
    "run_convergence",
    "solve_level",
    "example_2_4_scheme",
    "reproduce_example_2_4",
]
