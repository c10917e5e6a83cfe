import math
import typing as T
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import sympy as sp
from sympy.parsing.sympy_parser import parse_expr, standard_transformations

from stochastic_fd.errors import CoefficientError
from stochastic_fd.grid import GridFunction, Lattice

Evaluator = T.Callable[..., T.Any]

FIELD_FUNCTIONS = {"sin": sp.sin, "cos": sp.cos, "exp": sp.exp}
TIME = sp.Symbol("t", real=True)


@lru_cache()
def field_atoms(dim: int) -> dict[str, sp.Basic]:
    """Names a field expression may use on a ``dim``-dimensional lattice."""
    atoms: dict[str, sp.Basic] = {"t": TIME, "pi": sp.pi}
    for i in range(1, dim + 1):
        atoms[f"x{i}"] = sp.Symbol(f"x{i}", real=True)
    atoms["x"] = atoms["x1"]
    atoms.update(FIELD_FUNCTIONS)
    return atoms


_PARSER_GLOBALS = {
    "__builtins__": {},
    "Integer": sp.Integer,
    "Float": sp.Float,
    "Rational": sp.Rational,
    "Symbol": sp.Symbol,
    "Function": sp.Function,
}


def _check_finite(values: T.Any, description: str) -> None:
    if not np.all(np.isfinite(values)):
        raise CoefficientError(f"Coefficient {description} produced a non-finite value")


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """
    A deterministic coefficient (t, x) -> real.

    Args:
        evaluator (Callable): Called as ``evaluator(t, x1, ..., xd)`` with numpy coordinate arrays.
        constant_value (float, optional): Set for constant fields, which never call the evaluator.
        expression (str): Human readable form, used in reports.
    """

    evaluator: Evaluator | None = None
    constant_value: float | None = None
    expression: str = ""

    @classmethod
    def constant(cls, value: float) -> "CoefficientField":
        value = float(value)
        if not math.isfinite(value):
            raise CoefficientError(f"Constant coefficient must be finite, got {value}")
        return cls(None, value, repr(value))

    @classmethod
    def zero(cls) -> "CoefficientField":
        return cls.constant(0.0)

    @classmethod
    def from_expression(cls, text: str, dim: int = 1) -> "CoefficientField":
        atoms = field_atoms(dim)
        try:
            expr = parse_expr(
                text,
                local_dict=dict(atoms),
                global_dict=dict(_PARSER_GLOBALS),
                transformations=standard_transformations,
            )
        except Exception as e:
            raise CoefficientError(f"Cannot parse field expression '{text}': {e}") from e
        if not isinstance(expr, sp.Expr):
            raise CoefficientError(f"Field expression '{text}' is not a scalar expression")
        allowed_symbols = {v for v in atoms.values() if isinstance(v, sp.Symbol)}
        unknown = sorted(str(i) for i in expr.free_symbols - allowed_symbols)
        if unknown:
            raise CoefficientError(
                f"Unknown names {unknown} in field expression '{text}'. "
                f"Allowed: {sorted(atoms)}"
            )
        for func in expr.atoms(sp.Function):
            if func.func not in FIELD_FUNCTIONS.values():
                raise CoefficientError(
                    f"Unsupported function '{func.func}' in field expression '{text}'"
                )
        if not expr.free_symbols:
            try:
                value = float(expr)
            except TypeError as e:
                raise CoefficientError(f"Field expression '{text}' is not a finite real number") from e
            field = cls.constant(value)
            return cls(None, field.constant_value, text)
        args = [TIME] + [atoms[f"x{i}"] for i in range(1, dim + 1)]
        return cls(sp.lambdify(args, expr, modules="numpy"), None, text)

    @property
    def is_constant(self) -> bool:
        return self.constant_value is not None

    def values(self, t: float, lattice: Lattice) -> float | np.ndarray:
        """Scalar for constant fields, else an array of ``lattice.shape``."""
        if self.constant_value is not None:
            return self.constant_value
        result = np.broadcast_to(
            np.asarray(self.evaluator(t, *lattice.coordinates()), dtype=float), lattice.shape
        )
        _check_finite(result, f"'{self.expression}' at t={t}")
        return result

    def evaluate(self, t: float, lattice: Lattice) -> GridFunction:
        values = self.values(t, lattice)
        if np.isscalar(values):
            return GridFunction.constant(lattice, values)
        return GridFunction(lattice, values)

    def at(self, t: float, point: T.Sequence[float]) -> float:
        if self.constant_value is not None:
            return self.constant_value
        value = float(np.asarray(self.evaluator(t, *[float(i) for i in point]), dtype=float))
        _check_finite(value, f"'{self.expression}' at t={t}, x={tuple(point)}")
        return value

    def _combine(self, other: T.Any, op: T.Callable, symbol: str) -> "CoefficientField":
        other = as_field(other)
        if self.is_constant and other.is_constant:
            return CoefficientField.constant(op(self.constant_value, other.constant_value))
        left, right = self, other

        def evaluator(t, *x):
            return op(left._raw(t, x), right._raw(t, x))

        return CoefficientField(evaluator, None, f"({left.expression}) {symbol} ({right.expression})")

    def _raw(self, t: float, x: tuple) -> T.Any:
        if self.constant_value is not None:
            return self.constant_value
        return self.evaluator(t, *x)

    def __add__(self, other: T.Any) -> "CoefficientField":
        return self._combine(other, lambda a, b: a + b, "+")

    __radd__ = __add__

    def __sub__(self, other: T.Any) -> "CoefficientField":
        return self._combine(other, lambda a, b: a - b, "-")

    def __rsub__(self, other: T.Any) -> "CoefficientField":
        return as_field(other) - self

    def __mul__(self, other: T.Any) -> "CoefficientField":
        return self._combine(other, lambda a, b: a * b, "*")

    __rmul__ = __mul__

    def __neg__(self) -> "CoefficientField":
        return self * -1.0

    def __repr__(self) -> str:
        return f"CoefficientField({self.expression})"


def as_field(value: T.Any, dim: int = 1) -> CoefficientField:
    if isinstance(value, CoefficientField):
        return value
    if isinstance(value, str):
        return CoefficientField.from_expression(value, dim)
    if isinstance(value, (int, float, np.integer, np.floating)):
        return CoefficientField.constant(float(value))
    raise TypeError(f"Cannot interpret {value!r} as a coefficient field")


__all__ = ["CoefficientField", "as_field", "field_atoms", "FIELD_FUNCTIONS"]
