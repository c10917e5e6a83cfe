import typing as T
from fractions import Fraction

from objinspect import Parameter
from objinspect.util import type_to_str
from stdl import st


def err_message_missing_param(param: Parameter) -> str:
    return f"Missing required argument '{param.name}' with type '{type_to_str(param.type)}'"


def clean_variable_name(name: str) -> str:
    """Python identifier to a CLI name: ``expansion_verify`` -> ``expansion-verify``."""
    return st.snake_case(name).replace("_", "-")


def format_fraction(value: Fraction) -> str:
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


def format_fractions(values: T.Iterable[Fraction]) -> str:
    return ", ".join(format_fraction(i) for i in values)


__all__ = [
    "err_message_missing_param",
    "clean_variable_name",
    "format_fraction",
    "format_fractions",
]
