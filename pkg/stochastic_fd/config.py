"""
Experiment configuration.

A config is a TOML document with the sections [problem], [scheme], [grid], [time], [monte_carlo],
[extrapolation] and [output], validated into an :class:`ExperimentConfig`. Coefficients are numbers
or field expressions such as ``"0.5*sin(x)"``.
"""

import math
import tomllib
import typing as T

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from stdl import fs

from stochastic_fd.errors import ConfigError
from stochastic_fd.fields import CoefficientField, as_field
from stochastic_fd.grid import Direction, Lattice, periodic_ladder
from stochastic_fd.scheme import (
    ProblemData,
    StencilSpec,
    TargetPDE,
    from_pde_central,
    from_pde_upwind,
)

Coefficient = T.Union[float, str]
Channels = T.Union[float, str, list[T.Union[float, str]]]


def _ints(text: str, where: str) -> tuple[int, ...]:
    try:
        return tuple(int(i) for i in text.split(","))
    except ValueError as e:
        raise ValueError(f"'{text}' in {where} is not a comma separated list of integers") from e


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PDEConfig(Section):
    """Keys of ``a`` are "alpha,beta", keys of ``b`` are "alpha", with 0 the zeroth-order index."""

    a: dict[str, Coefficient] = {}
    b: dict[str, Channels] = {}

    @field_validator("a")
    @classmethod
    def _check_a(cls, value: dict[str, Coefficient]) -> dict[str, Coefficient]:
        for key in value:
            if len(_ints(key, "pde.a")) != 2:
                raise ValueError(f"pde.a key '{key}' must be 'alpha,beta'")
        return value

    @field_validator("b")
    @classmethod
    def _check_b(cls, value: dict[str, Channels]) -> dict[str, Channels]:
        for key in value:
            if len(_ints(key, "pde.b")) != 1:
                raise ValueError(f"pde.b key '{key}' must be a single index")
        return value


class ProblemConfig(Section):
    dim: int = Field(1, ge=1)
    drivers: int = Field(1, ge=0)
    horizon: float = Field(gt=0)
    psi: Coefficient
    f: Coefficient | None = None
    g: list[Coefficient] | None = None
    pde: PDEConfig | None = None

    @model_validator(mode="after")
    def _check_channels(self) -> "ProblemConfig":
        if self.g is not None and len(self.g) != self.drivers:
            raise ValueError(f"g has {len(self.g)} channels, expected {self.drivers}")
        return self


class SchemeConfig(Section):
    """
    ``central`` and ``upwind`` derive the scheme from [problem.pde]; ``custom`` lists it directly with
    direction keys "1,0" and pair keys "1,0;0,1".
    """

    kind: T.Literal["central", "upwind", "custom"] = "central"
    theta: list[float] | None = None
    directions: list[list[int]] | None = None
    a: dict[str, Coefficient] = {}
    p: dict[str, Coefficient] = {}
    q: dict[str, Coefficient] = {}
    b: dict[str, Channels] = {}

    @model_validator(mode="after")
    def _check_kind(self) -> "SchemeConfig":
        if self.kind == "upwind" and self.theta is None:
            raise ValueError("an upwind scheme needs theta")
        if self.kind != "custom" and (self.a or self.p or self.q or self.b or self.directions):
            raise ValueError(f"coefficients are only given explicitly for kind='custom', not '{self.kind}'")
        for key in self.a:
            if len(key.split(";")) != 2:
                raise ValueError(f"scheme.a key '{key}' must be 'lambda;mu'")
        return self


class GridConfig(Section):
    n0: int = Field(32, ge=4)
    levels: int = Field(3, ge=1)
    period: float = Field(2 * math.pi, gt=0)
    h0: float | None = Field(None, gt=0)


class TimeConfig(Section):
    dt: float = Field(1e-4, gt=0)
    dt_max: float = Field(1e-2, gt=0)
    policy: T.Literal["fixed", "halve"] = "fixed"
    solver: T.Literal["em", "exact"] = "em"
    record: int = Field(10, ge=1)

    @model_validator(mode="after")
    def _check_dt(self) -> "TimeConfig":
        if self.dt > self.dt_max:
            raise ValueError(f"dt={self.dt} exceeds dt_max={self.dt_max}")
        return self


class MonteCarloConfig(Section):
    seeds: list[int] | None = None
    count: int = Field(1, ge=1)
    base_seed: int = 0
    moments: list[float] = [1.0, 2.0]

    @field_validator("moments")
    @classmethod
    def _check_moments(cls, value: list[float]) -> list[float]:
        if any(p <= 0 for p in value):
            raise ValueError("moment orders must be positive")
        return value

    def seed_list(self) -> list[int]:
        if self.seeds is not None:
            return list(self.seeds)
        return list(range(self.base_seed, self.base_seed + self.count))


class ExtrapolationConfig(Section):
    enabled: bool = False
    order: int = Field(1, ge=0)
    power_step: T.Literal[1, 2] = 2


class OutputConfig(Section):
    directory: str = "results"
    formats: list[T.Literal["csv", "json"]] = ["json"]
    norms: list[T.Literal["sup", "l2h"]] = ["sup", "l2h"]
    clip: bool = False
    reference: T.Literal["auto", "exact", "fine"] = "auto"
    sobolev_order: int = Field(1, ge=0)


class ExperimentConfig(Section):
    name: str = "experiment"
    problem: ProblemConfig
    scheme: SchemeConfig = SchemeConfig()
    grid: GridConfig = GridConfig()
    time: TimeConfig = TimeConfig()
    monte_carlo: MonteCarloConfig = MonteCarloConfig()
    extrapolation: ExtrapolationConfig = ExtrapolationConfig()
    output: OutputConfig = OutputConfig()

    @model_validator(mode="after")
    def _check_references(self) -> "ExperimentConfig":
        if self.scheme.kind != "custom" and self.problem.pde is None:
            raise ValueError(f"scheme kind '{self.scheme.kind}' needs a [problem.pde] section")
        if self.scheme.kind == "upwind" and len(self.scheme.theta or []) != self.problem.dim:
            raise ValueError(f"theta needs {self.problem.dim} entries")
        try:
            build_scheme(self)
            for value in [self.problem.psi, self.problem.f, *(self.problem.g or [])]:
                if value is not None:
                    as_field(value, self.problem.dim)
        except ValueError as e:
            raise ValueError(str(e)) from e
        return self


def _format_error(error: dict) -> str:
    location = ".".join(str(i) for i in error["loc"]) or "<root>"
    return f"{location}: {error['msg']}"


def parse_config(text: str) -> ExperimentConfig:
    """
    Raises:
        ConfigError: Listing every problem found, each prefixed by its dotted location.
    """
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError([f"toml: {e}"]) from e
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError([_format_error(i) for i in e.errors()]) from e


def load_config(path: str) -> ExperimentConfig:
    if not fs.exists(path):
        raise ConfigError([f"config file '{path}' does not exist"])
    return parse_config(fs.File(path).read())


def dump_config(config: ExperimentConfig) -> str:
    return config.model_dump_json(indent=2)


def restore_config(text: str) -> ExperimentConfig:
    return ExperimentConfig.model_validate_json(text)


PRESETS = {
    "example_2_4": """
name = "example_2_4"

[problem]
dim = 1
drivers = 1
horizon = 1.0
psi = "cos(x)"

[problem.pde]
a = { "1,1" = 2.0 }
b = { "1" = 2.0 }

[scheme]
kind = "central"

[grid]
n0 = 32
levels = 4

[time]
solver = "exact"
dt = 1e-3
record = 4

[extrapolation]
enabled = true
order = 1
power_step = 2

[output]
reference = "exact"
""",
    "heat": """
name = "heat"

[problem]
dim = 1
drivers = 1
horizon = 0.1
psi = "sin(x)"

[problem.pde]
a = { "1,1" = 1.0 }

[grid]
n0 = 16
levels = 3

[time]
solver = "em"
dt = 1e-4
record = 2

[output]
reference = "exact"
""",
    "upwind_transport": """
name = "upwind_transport"

[problem]
dim = 1
drivers = 1
horizon = 1.0
psi = "sin(x)"

[problem.pde]
a = { "0,1" = 0.5 }

[scheme]
kind = "upwind"
theta = [0.5]

[grid]
n0 = 32
levels = 3

[time]
solver = "em"
dt = 1e-3
record = 4

[extrapolation]
power_step = 1

[output]
reference = "fine"
""",
}


def load_preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError([f"unknown preset '{name}', expected one of {sorted(PRESETS)}"])
    return parse_config(PRESETS[name])


def _direction(text: str, dim: int, where: str) -> Direction:
    components = _ints(text, where)
    if len(components) != dim:
        raise ValueError(f"direction '{text}' in {where} needs {dim} components")
    return components


def build_pde(config: ExperimentConfig) -> TargetPDE | None:
    problem = config.problem
    if problem.pde is None:
        return None
    a = {_ints(k, "pde.a"): v for k, v in problem.pde.a.items()}
    b = {_ints(k, "pde.b")[0]: v for k, v in problem.pde.b.items()}
    return TargetPDE.build(problem.dim, a=a, b=b, driver_count=problem.drivers)


def build_scheme(config: ExperimentConfig) -> StencilSpec:
    scheme = config.scheme
    dim = config.problem.dim
    if scheme.kind == "central":
        return from_pde_central(build_pde(config))
    if scheme.kind == "upwind":
        return from_pde_upwind(build_pde(config), scheme.theta)
    a = {}
    for key, value in scheme.a.items():
        lam, mu = key.split(";")
        a[(_direction(lam, dim, "scheme.a"), _direction(mu, dim, "scheme.a"))] = value
    return StencilSpec.build(
        dim,
        directions=[tuple(i) for i in scheme.directions] if scheme.directions else None,
        a=a,
        p={_direction(k, dim, "scheme.p"): v for k, v in scheme.p.items()},
        q={_direction(k, dim, "scheme.q"): v for k, v in scheme.q.items()},
        b={_direction(k, dim, "scheme.b"): v for k, v in scheme.b.items()},
        driver_count=config.problem.drivers,
    )


def build_ladder(config: ExperimentConfig) -> list[Lattice]:
    grid = config.grid
    dim = config.problem.dim
    if grid.h0 is None:
        return periodic_ladder(dim, grid.n0, grid.levels, grid.period)
    ladder = [Lattice(dim, grid.n0, grid.h0)]
    for _ in range(grid.levels - 1):
        ladder.append(ladder[-1].refine())
    return ladder


def build_problem(config: ExperimentConfig, lattice: Lattice) -> ProblemData:
    problem = config.problem
    return ProblemData.from_fields(
        lattice,
        problem.psi,
        problem.horizon,
        f=problem.f,
        g=problem.g,
        driver_count=problem.drivers,
    )


def psi_field(config: ExperimentConfig) -> CoefficientField:
    return as_field(config.problem.psi, config.problem.dim)


def time_grid(config: ExperimentConfig) -> tuple[int, list[float]]:
    """
    Number of base path steps (dt rounded down so the record grid falls on path nodes) and the
    record times.
    """
    horizon = config.problem.horizon
    record = config.time.record
    per_record = max(1, math.ceil(horizon / (config.time.dt * record) - 1e-9))
    steps = per_record * record
    times = [horizon * i / record for i in range(record + 1)]
    return steps, times


__all__ = [
    "ExperimentConfig",
    "ProblemConfig",
    "PDEConfig",
    "SchemeConfig",
    "GridConfig",
    "TimeConfig",
    "MonteCarloConfig",
    "ExtrapolationConfig",
    "OutputConfig",
    "PRESETS",
    "parse_config",
    "load_config",
    "load_preset",
    "dump_config",
    "restore_config",
    "build_pde",
    "build_scheme",
    "build_ladder",
    "build_problem",
    "psi_field",
    "time_grid",
]
