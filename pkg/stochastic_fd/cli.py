"""
Command line interface.

Subcommands are plain functions taking a :class:`Run` followed by keyword options; their flags are
built from the signatures with objinspect, and config override flags from the pydantic sections.
"""

import argparse
import os
import sys
import typing as T
from dataclasses import dataclass

import numpy as np
from loguru import logger
from objinspect import Function, Parameter

from stochastic_fd.config import (
    PRESETS,
    ExperimentConfig,
    GridConfig,
    TimeConfig,
    build_ladder,
    build_pde,
    build_scheme,
    load_config,
    load_preset,
    psi_field,
    time_grid,
)
from stochastic_fd.convergence import (
    ConvergenceReport,
    continuum_source,
    reproduce_example_2_4,
    run_convergence,
    solve_level,
)
from stochastic_fd.errors import ConfigError, StochasticFDError
from stochastic_fd.expansion import (
    HIERARCHY_METHODS,
    ExpansionOperators,
    expansion_residual_order,
    remainder_order_check,
    solve_hierarchy,
)
from stochastic_fd.grid import restrict, sup_norm
from stochastic_fd.integrator import fourier_exact_solve, modes_from_field, stability_limit
from stochastic_fd.parser import (
    get_pydantic_init_params,
    metavar_for_type,
    override_model,
    parse_value,
)
from stochastic_fd.report import REPORT_FORMATS, emit_report
from stochastic_fd.scheme import consistency_residual, parabolicity_report
from stochastic_fd.stats import OrderFit
from stochastic_fd.util import clean_variable_name, err_message_missing_param
from stochastic_fd.wiener import sample

CONSISTENCY_TOL = 1e-10
OVERRIDE_SECTIONS = {"grid": GridConfig, "time": TimeConfig}
LOG_FORMAT = "<green>{time:HH:mm:ss}</green> <level>{level: <8}</level> {message}"


@dataclass
class Run:
    config: ExperimentConfig | None
    threads: int = 1
    out: str | None = None
    format: str | None = None

    def require_config(self) -> ExperimentConfig:
        if self.config is None:
            raise ConfigError(["--config or --preset is required for this command"])
        return self.config

    @property
    def formats(self) -> list[str]:
        if self.format:
            return [self.format]
        return list(self.require_config().output.formats)

    @property
    def directory(self) -> str:
        return self.out or self.require_config().output.directory


def _print_table(header: T.Sequence[str], rows: T.Iterable[T.Sequence[T.Any]]) -> None:
    rows = [[str(i) for i in row] for row in rows]
    widths = [max([len(h)] + [len(r[i]) for r in rows]) for i, h in enumerate(header)]
    print("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    for row in rows:
        print("  ".join(c.ljust(w) for c, w in zip(row, widths)))


def _fit_cells(fit: OrderFit) -> list[str]:
    if fit.exact:
        return ["exact", "-"]
    if not fit.fitted:
        return ["-", "-"]
    return [f"{fit.slope:.4f}", f"{fit.r_squared:.6f}"]


def _print_fits(report: ConvergenceReport) -> None:
    rows = [
        [row.method, row.norm, "pooled" if row.seed is None else row.seed, *_fit_cells(row.fit)]
        for row in report.fits
    ]
    _print_table(["method", "norm", "seed", "order", "R^2"], rows)


def _emit(run: Run, report: ConvergenceReport) -> None:
    for fmt in run.formats:
        for path in emit_report(report, fmt, run.directory):
            logger.info(f"Wrote {path}")


def check(run: Run) -> int:
    """Check consistency with the target PDE and parabolicity of the scheme."""
    config = run.require_config()
    spec = build_scheme(config)
    pde = build_pde(config)
    lattice = build_ladder(config)[0]
    samples = None
    if not spec.is_constant:
        samples = list(zip(*(np.ravel(i) for i in lattice.coordinates())))
    rows = []
    consistent = True
    if pde is not None:
        residual = consistency_residual(spec, pde, samples=samples)
        consistent = residual <= CONSISTENCY_TOL
        rows.append(["consistency residual", f"{residual:.3e}", "ok" if consistent else "FAIL"])
    report = parabolicity_report(spec, samples=samples)
    status = "ok" if report.passed else "FAIL"
    rows.append(["min eigenvalue of a - bb/2", f"{report.min_eigenvalue:.6g}", status])
    rows.append(["min p, q", f"{report.min_pq:.6g}", status])
    rows.append(["stability limit on coarsest lattice", f"{stability_limit(spec, lattice):.3e}", ""])
    _print_table(["check", "value", "status"], rows)
    return 0 if consistent and report.passed else 2


def solve(run: Run, level: int = 0, binary: bool = False) -> int:
    """Solve one ladder level on the first seed and write the trajectory."""
    config = run.require_config()
    seed = config.monte_carlo.seed_list()[0]
    try:
        trajectory, reference = solve_level(config, seed, level)
    except ValueError as e:
        if isinstance(e, StochasticFDError):
            raise
        raise ConfigError([f"level: {e}"]) from e
    directory = os.path.join(run.directory, f"{config.name}_level{level}_seed{seed}")
    os.makedirs(directory, exist_ok=True)
    if binary:
        path = os.path.join(directory, "trajectory.bin")
        trajectory.to_binary(path)
        written = [path]
    else:
        written = trajectory.to_csv(directory)
    logger.info(f"Wrote {len(written)} file(s) to {directory}")
    rows = []
    for t, state in zip(trajectory.record_times, trajectory.states):
        error = state - restrict(reference.at(t), state.lattice)
        rows.append([f"{t:.6g}", f"{sup_norm(state):.6g}", f"{sup_norm(error):.3e}"])
    _print_table(["t", "sup|u^h|", f"sup error ({reference.lattice.spacing:.4g} reference)"], rows)
    return 0


def converge(run: Run) -> int:
    """Run the ladder study without extrapolation."""
    config = run.require_config()
    config = config.model_copy(
        update={"extrapolation": config.extrapolation.model_copy(update={"enabled": False})}
    )
    report = run_convergence(config, threads=run.threads)
    _print_fits(report)
    _emit(run, report)
    return 0


def extrapolate(run: Run) -> int:
    """Run the ladder study with Richardson extrapolation."""
    config = run.require_config()
    config = config.model_copy(
        update={"extrapolation": config.extrapolation.model_copy(update={"enabled": True})}
    )
    report = run_convergence(config, threads=run.threads)
    print(f"weights: {report.weights}")
    _print_fits(report)
    _emit(run, report)
    return 0


def expansion_verify(run: Run, order: int = 2, method: str = "exponential") -> int:
    """Check the expansion operators and, for constant 1-d schemes, the expansion of the solution."""
    config = run.require_config()
    if method not in HIERARCHY_METHODS:
        raise ConfigError([f"method: expected one of {HIERARCHY_METHODS}, got '{method}'"])
    spec = build_scheme(config)
    ladder = build_ladder(config)
    if len(ladder) < 3:
        raise ConfigError(["grid.levels: expansion checks need at least 3 levels"])
    ops = ExpansionOperators(spec)
    field = psi_field(config)
    phi = lambda lattice: field.evaluate(0.0, lattice)
    rows = []
    for n in range(order + 1):
        l_fit, m_fit = remainder_order_check(ops, n, phi, ladder)
        rows.append([f"L remainder n={n}", *_fit_cells(l_fit)])
        rows.append([f"M remainder n={n}", *_fit_cells(m_fit)])

    if spec.dim == 1 and spec.is_constant:
        seed = config.monte_carlo.seed_list()[0]
        steps, record_times = time_grid(config)
        path = sample(config.problem.drivers, steps, config.problem.horizon, seed)
        finest = ladder[-1]
        modes = modes_from_field(field.evaluate(0.0, finest))
        hierarchy = solve_hierarchy(
            ops, order, continuum_source(spec, modes, path, finest), path, record_times, method
        )
        solutions = [fourier_exact_solve(spec, modes, path, record_times, i) for i in ladder]
        fit = expansion_residual_order(solutions, hierarchy)
        rows.append([f"u^h - sum_(j<={order}) h^j/j! v^(j)", *_fit_cells(fit)])
    else:
        logger.info("Hierarchy check skipped: it needs a constant-coefficient 1-d scheme")
    _print_table(["quantity", "order", "R^2"], rows)
    return 0


def reproduce_example_2_4_command(run: Run) -> int:
    """Print u_1(0) and its approximations for the degenerate cosine example."""
    rows = [
        [i.label, f"{i.computed:.10f}", f"{i.expected:.10f}", f"{i.difference:.2e}"]
        for i in reproduce_example_2_4()
    ]
    _print_table(["quantity", "computed", "expected", "difference"], rows)
    return 0


COMMANDS: dict[str, T.Callable[..., int]] = {
    "check": check,
    "solve": solve,
    "converge": converge,
    "extrapolate": extrapolate,
    "expansion_verify": expansion_verify,
    "reproduce_example_2_4": reproduce_example_2_4_command,
}


def _command_params(fn: T.Callable) -> list[Parameter]:
    return [i for i in Function(fn).params if i.name != "run"]


def _override_dest(section: str, name: str) -> str:
    return f"{section}__{name}"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stochastic-fd",
        description="Finite difference schemes for degenerate stochastic parabolic equations",
    )
    parser.add_argument("--config", metavar="PATH", help="TOML experiment config")
    parser.add_argument("--preset", choices=sorted(PRESETS), help="built-in experiment config")
    parser.add_argument("--seed", metavar="N", help="run a single seed")
    parser.add_argument("--threads", metavar="N", default="1", help="worker threads")
    parser.add_argument("--out", metavar="DIR", help="output directory")
    parser.add_argument("--format", choices=REPORT_FORMATS, help="report format")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    overrides = parser.add_argument_group("config overrides")
    for section, model in OVERRIDE_SECTIONS.items():
        for name, param in get_pydantic_init_params(model).items():
            overrides.add_argument(
                f"--{clean_variable_name(name)}",
                dest=_override_dest(section, name),
                metavar=metavar_for_type(param.type),
                help=f"[{section}] {name}",
            )

    commands = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        cli_name = clean_variable_name(name.removesuffix("_command"))
        sub = commands.add_parser(cli_name, help=Function(fn).description)
        for param in _command_params(fn):
            sub.add_argument(
                f"--{clean_variable_name(param.name)}",
                dest=param.name,
                metavar=metavar_for_type(param.type),
                default=None,
                help=f"default: {param.default}" if not param.is_required else None,
            )
    return parser


def _command_for(cli_name: str) -> T.Callable[..., int]:
    for name, fn in COMMANDS.items():
        if clean_variable_name(name.removesuffix("_command")) == cli_name:
            return fn
    raise KeyError(cli_name)


def _command_kwargs(fn: T.Callable, args: argparse.Namespace) -> dict[str, T.Any]:
    kwargs = {}
    for param in _command_params(fn):
        value = getattr(args, param.name)
        if value is None:
            if param.is_required:
                raise ConfigError([err_message_missing_param(param)])
            continue
        try:
            kwargs[param.name] = parse_value(value, param.type)
        except ValueError as e:
            raise ConfigError([f"--{clean_variable_name(param.name)}: {e}"]) from e
    return kwargs


def _global_int(value: str, flag: str) -> int:
    try:
        return parse_value(value, int)
    except ValueError as e:
        raise ConfigError([f"{flag}: {e}"]) from e


def _load(args: argparse.Namespace) -> ExperimentConfig | None:
    if args.config and args.preset:
        raise ConfigError(["--config and --preset are mutually exclusive"])
    if args.config:
        config = load_config(args.config)
    elif args.preset:
        config = load_preset(args.preset)
    else:
        config = None

    updates: dict[str, dict[str, T.Any]] = {}
    for section, model in OVERRIDE_SECTIONS.items():
        for name, param in get_pydantic_init_params(model).items():
            value = getattr(args, _override_dest(section, name))
            if value is None:
                continue
            try:
                updates.setdefault(section, {})[name] = parse_value(value, param.type)
            except ValueError as e:
                raise ConfigError([f"{section}.{name}: {e}"]) from e
    if args.seed is not None:
        updates["monte_carlo"] = {"seeds": [_global_int(args.seed, "--seed")]}
    if updates and config is None:
        raise ConfigError(["config overrides need --config or --preset"])
    return override_model(config, updates) if config is not None else None


def setup_logging(verbose: bool = False) -> None:
    logger.remove()
    logger.add(sys.stderr, level="DEBUG" if verbose else "INFO", format=LOG_FORMAT)


def main(argv: T.Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose)
    try:
        run = Run(
            config=_load(args),
            threads=_global_int(args.threads, "--threads"),
            out=args.out,
            format=args.format,
        )
        fn = _command_for(args.command)
        return fn(run, **_command_kwargs(fn, args))
    except StochasticFDError as e:
        logger.error(str(e))
        return e.exit_code


__all__ = ["main", "build_parser", "Run", "COMMANDS"]


if __name__ == "__main__":
    sys.exit(main())
