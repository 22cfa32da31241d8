"""Arrow notation for structural models.

A model is plain text, one term per line.  One-headed arrows declare
regression paths and two-headed arrows declare (co)variances:

    X -> Y, b1          # path X to Y with coefficient named b1
    X <-> X, sigma_x    # standard deviation of X

The time-series dialect adds a lag field after the arrow clause:

    X -> X, 1, rho      # X at time t-1 affects X at time t
    X <-> X, 0, sigma_x

A parameter field of ``NA`` marks the value as fixed, in which case the
trailing start value is required.  Repeating a parameter name across lines
shares one parameter.  Every variable is given a default lag-0 variance
term unless one is written explicitly.
"""

from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass

from .errors import NotationError

__all__ = ["PathTerm", "RamModel", "parse_sem", "parse_dsem", "format_ram"]

_NAME_RE = re.compile(r"^[^\s,<>-]+$")

_DEFAULT_PATH_START = 0.01
_DEFAULT_SD_START = 1.0


@dataclass(frozen=True)
class PathTerm:
    """One arrow line: src -> dst (heads=1) or src <-> dst (heads=2).

    ``param`` is None for fixed terms.  ``value`` holds the fixed value or
    the parameter's resolved starting value; it is always finite.
    """

    src: str
    dst: str
    heads: int
    lag: int
    param: str | None
    value: float

    @property
    def fixed(self) -> bool:
        return self.param is None


@dataclass(frozen=True)
class RamModel:
    """A parsed structural model.

    ``params`` lists (name, start) pairs in first-appearance order; the
    positions define the parameter vector accepted by the assembler.
    """

    terms: tuple[PathTerm, ...]
    variables: tuple[str, ...]
    params: tuple[tuple[str, float], ...]
    max_lag: int

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.params)

    @property
    def param_starts(self) -> tuple[float, ...]:
        return tuple(start for _, start in self.params)

    def param_index(self) -> dict[str, int]:
        return {name: i for i, (name, _) in enumerate(self.params)}

    def is_sd_param(self, name: str) -> bool:
        """True if the parameter appears on a lag-0 variance term."""
        return any(
            t.param == name and t.heads == 2 and t.src == t.dst and t.lag == 0
            for t in self.terms
        )

    @property
    def rank_deficient(self) -> bool:
        """True if any variable has its lag-0 variance fixed at zero."""
        return any(
            t.heads == 2
            and t.src == t.dst
            and t.lag == 0
            and t.fixed
            and t.value == 0.0
            for t in self.terms
        )


def _check_name(token: str, lineno: int) -> str:
    if not _NAME_RE.match(token):
        raise NotationError(f"line {lineno}: invalid variable name {token!r}")
    return token


def _split_clause(clause: str, lineno: int) -> tuple[str, str, int]:
    if "<->" in clause:
        left, _, right = clause.partition("<->")
        heads = 2
    elif "->" in clause:
        left, _, right = clause.partition("->")
        heads = 1
    else:
        raise NotationError(
            f"line {lineno}: expected an arrow ('->' or '<->') in {clause!r}"
        )
    src = _check_name(left.strip(), lineno)
    dst = _check_name(right.strip(), lineno)
    return src, dst, heads


def _parse_start(token: str, lineno: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise NotationError(
            f"line {lineno}: starting value {token!r} is not a number"
        ) from None
    if not math.isfinite(value):
        raise NotationError(f"line {lineno}: starting value must be finite")
    return value


def _parse(text: str, variables, with_lag: bool) -> RamModel:
    variables = tuple(str(v) for v in variables)
    if len(set(variables)) != len(variables):
        raise NotationError("variable names must be unique")
    if not variables:
        raise NotationError("at least one variable is required")
    var_set = set(variables)

    raw_terms: list[tuple[str, str, int, int, str | None, float | None]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split(",")]
        if len(fields) > 1 and fields[-1] == "":
            fields.pop()  # tolerate one trailing comma
        src, dst, heads = _split_clause(fields[0], lineno)
        for name in (src, dst):
            if name not in var_set:
                raise NotationError(
                    f"line {lineno}: unknown variable {name!r} "
                    f"(declared: {', '.join(variables)})"
                )
        rest = fields[1:]
        if with_lag:
            if not rest:
                raise NotationError(f"line {lineno}: missing lag field")
            lag_tok, rest = rest[0], rest[1:]
            try:
                lag = int(lag_tok)
            except ValueError:
                raise NotationError(
                    f"line {lineno}: lag {lag_tok!r} is not an integer"
                ) from None
            if lag < 0:
                raise NotationError(f"line {lineno}: lag must be nonnegative")
        else:
            lag = 0
        if not rest:
            raise NotationError(f"line {lineno}: missing parameter field")
        if len(rest) > 2:
            raise NotationError(f"line {lineno}: too many fields")
        param_tok = rest[0]
        start = _parse_start(rest[1], lineno) if len(rest) == 2 else None
        if param_tok == "NA":
            if start is None:
                raise NotationError(
                    f"line {lineno}: fixed terms (NA) require a value"
                )
            param = None
        else:
            if not _NAME_RE.match(param_tok):
                raise NotationError(
                    f"line {lineno}: invalid parameter name {param_tok!r}"
                )
            param = param_tok
        if heads == 2 and lag == 0 and src != dst and src > dst:
            src, dst = dst, src  # canonical order for symmetric lag-0 terms
        if heads == 2 and lag > 0 and src != dst:
            warnings.warn(
                f"line {lineno}: two-headed term between {src} and {dst} at "
                f"lag {lag} has no standard interpretation; compiling as a "
                "lagged covariance",
                stacklevel=2,
            )
        raw_terms.append((src, dst, heads, lag, param, start))

    seen_self_var: set[str] = set()
    for src, dst, heads, lag, _, _ in raw_terms:
        if heads == 2 and lag == 0 and src == dst:
            if src in seen_self_var:
                raise NotationError(
                    f"duplicate variance term for variable {src!r}"
                )
            seen_self_var.add(src)
    for v in variables:
        if v not in seen_self_var:
            raw_terms.append((v, v, 2, 0, f"sd_{v}", None))

    # Resolve shared parameters: first explicit start wins, otherwise a
    # default chosen by what the parameter controls.
    order: list[str] = []
    explicit: dict[str, float | None] = {}
    is_sd: dict[str, bool] = {}
    for src, dst, heads, lag, param, start in raw_terms:
        if param is None:
            continue
        if param not in explicit:
            order.append(param)
            explicit[param] = None
            is_sd[param] = False
        if heads == 2 and lag == 0 and src == dst:
            is_sd[param] = True
        if start is not None and explicit[param] is None:
            explicit[param] = start
    starts: dict[str, float] = {}
    for name in order:
        if explicit[name] is not None:
            starts[name] = explicit[name]
        else:
            starts[name] = _DEFAULT_SD_START if is_sd[name] else _DEFAULT_PATH_START

    terms = []
    for src, dst, heads, lag, param, start in raw_terms:
        value = start if param is None else starts[param]
        terms.append(PathTerm(src, dst, heads, lag, param, float(value)))

    max_lag = max((t.lag for t in terms), default=0)
    params = tuple((name, starts[name]) for name in order)
    return RamModel(tuple(terms), variables, params, max_lag)


def parse_sem(text: str, variables) -> RamModel:
    """Parse lag-free arrow notation.

    Parameters
    ----------
    text : str
        Lines of the form ``src -> dst, param[, start]`` or
        ``src <-> dst, param[, start]``; ``param`` may be ``NA`` with a
        mandatory fixed value.  Blank lines and lines starting with ``#``
        are skipped.
    variables : sequence of str
        The declared variable names; arrows may only reference these.
    """
    return _parse(text, variables, with_lag=False)


def parse_dsem(text: str, variables) -> RamModel:
    """Parse arrow-and-lag notation: ``src -> dst, lag, param[, start]``."""
    return _parse(text, variables, with_lag=True)


def format_ram(ram: RamModel) -> str:
    """Render a model back to notation text.

    The output always uses the lagged four-field form and carries explicit
    starting values, so ``parse_dsem(format_ram(m), m.variables)`` returns
    a model equal to ``m``.
    """
    lines = []
    for t in ram.terms:
        arrow = "<->" if t.heads == 2 else "->"
        param = "NA" if t.param is None else t.param
        lines.append(f"{t.src} {arrow} {t.dst}, {t.lag}, {param}, {t.value!r}")
    return "\n".join(lines) + "\n"
