import types
import typing as T
from functools import lru_cache

from objinspect import Parameter
from objinspect.constants import EMPTY
from objinspect.parameter import ParameterKind
from pydantic import BaseModel, ValidationError
from strto import get_parser

from stochastic_fd.errors import ConfigError

METAVARS = {
    int: "N",
    float: "X",
    str: "TEXT",
    bool: "BOOL",
    list: "A,B,...",
}

NONE_STRINGS = ("none", "null", "")

STR_PARSER = get_parser()


def _without_none(t: T.Any) -> tuple[T.Any, ...]:
    return tuple(i for i in T.get_args(t) if i is not type(None))


def _is_union(t: T.Any) -> bool:
    return T.get_origin(t) in (T.Union, types.UnionType)


@lru_cache()
def metavar_for_type(t: T.Any) -> str:
    if t in METAVARS:
        return METAVARS[t]
    origin = T.get_origin(t)
    if origin is T.Literal:
        return "{" + ",".join(str(i) for i in T.get_args(t)) + "}"
    if origin in METAVARS:
        return METAVARS[origin]
    if args := T.get_args(t):
        for i in args:
            if i in METAVARS:
                return METAVARS[i]
            if T.get_origin(i) in METAVARS:
                return METAVARS[T.get_origin(i)]
    raise ValueError(f"No metavar for type {t}")


def parse_value(value: str, t: T.Any) -> T.Any:
    """Convert a command line string to ``t``."""
    if _is_union(t):
        if type(None) in T.get_args(t) and value.strip().lower() in NONE_STRINGS:
            return None
        options = _without_none(t)
        if len(options) == 1:
            return parse_value(value, options[0])
        return STR_PARSER.parse(value, t)
    if T.get_origin(t) is T.Literal:
        for option in T.get_args(t):
            if str(option) == value:
                return option
        raise ValueError(f"'{value}' is not one of {list(T.get_args(t))}")
    return STR_PARSER.parse(value, t)


def get_pydantic_init_params(model: T.Type[BaseModel]) -> dict[str, Parameter]:
    """
    Args:
        model: Type of the Pydantic model.

    Returns:
        Field names mapped to parameters carrying the field annotation and default.
    """
    params = {}
    for name, field in model.model_fields.items():
        param = Parameter(
            name=name,
            kind=ParameterKind.POSITIONAL_OR_KEYWORD,
            type=field.annotation,
            default=field.default if not field.is_required() else EMPTY,
            description=field.description,
            infer_type=False,
        )
        params[name] = param
    return params


ModelT = T.TypeVar("ModelT", bound=BaseModel)


def override_model(model: ModelT, updates: dict[str, dict[str, T.Any]]) -> ModelT:
    """
    Revalidate ``model`` with section-level field replacements.

    Raises:
        ConfigError: The updated values do not validate.
    """
    if not updates:
        return model
    data = model.model_dump()
    for section, values in updates.items():
        data.setdefault(section, {}).update(values)
    try:
        return type(model).model_validate(data)
    except ValidationError as e:
        problems = [".".join(str(i) for i in err["loc"]) + f": {err['msg']}" for err in e.errors()]
        raise ConfigError(problems) from e


__all__ = [
    "STR_PARSER",
    "metavar_for_type",
    "parse_value",
    "get_pydantic_init_params",
    "override_model",
]
