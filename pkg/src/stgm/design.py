"""Formula-driven design matrices and penalized spline smoothers.

The formula grammar is deliberately small:

    response ~ term + term + ...

with terms ``1`` (explicit intercept), ``0`` (suppress the intercept),
a bare column name (numeric linear effect), ``factor(col)`` (dummy
coding, first level dropped when an intercept is present), ``poly(col, k)``
(orthogonal polynomial), ``s(col, k)`` (penalized cubic regression spline
with k basis columns), and ``offset(col)``.  The intercept is implicit
unless ``0`` appears.

Each ``s()`` term contributes a block of penalized columns with a
second-difference penalty of rank k - 2 whose null space (constant and
linear trends) is left unpenalized.  Basis columns are centered on the
training data, which removes the constant that would otherwise alias the
intercept; the remaining exact null direction (the all-ones coefficient
vector) is reported with the block so estimation can constrain it out.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.interpolate import BSpline
from scipy.linalg import null_space

from .errors import DesignError

__all__ = [
    "SmoothBlock",
    "DesignBlocks",
    "build_design",
    "smoother_logpdf",
    "validate_table",
]

_LOG_2PI = float(np.log(2.0 * np.pi))
_CALL_RE = re.compile(r"^(\w+)\(([^)]*)\)$")


def _require_numeric(df: pd.DataFrame, col: str, context: str) -> np.ndarray:
    if col not in df.columns:
        raise DesignError(f"{context}: column {col!r} not found in data")
    values = df[col]
    if not pd.api.types.is_numeric_dtype(values):
        raise DesignError(f"{context}: column {col!r} is not numeric")
    arr = values.to_numpy(dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DesignError(f"{context}: column {col!r} has missing values")
    return arr


class _Intercept:
    names = ("(Intercept)",)

    def fit(self, df: pd.DataFrame) -> np.ndarray:
        return np.ones((len(df), 1))

    def transform(self, df: pd.DataFrame) -> np.ndarray:
        return np.ones((len(df), 1))


class _Linear:
    def __init__(self, col: str):
        self.col = col
        self.names = (col,)

    def fit(self, df: pd.DataFrame) -> np.ndarray:
        return self.transform(df)

    def transform(self, df: pd.DataFrame) -> np.ndarray:
        return _require_numeric(df, self.col, self.col)[:, None]


class _Factor:
    def __init__(self, col: str, drop_first: bool):
        self.col = col
        self.drop_first = drop_first
        self.levels_: tuple = ()

    def fit(self, df: pd.DataFrame) -> np.ndarray:
        if self.col not in df.columns:
            raise DesignError(f"factor({self.col}): column not found in data")
        series = df[self.col]
        if series.isna().any():
            raise DesignError(f"factor({self.col}): column has missing values")
        self.levels_ = tuple(sorted(series.unique(), key=str))
        kept = self.levels_[1:] if self.drop_first else self.levels_
        self.names = tuple(f"factor({self.col}){lv}" for lv in kept)
        return self.transform(df)

    def transform(self, df: pd.DataFrame) -> np.ndarray:
        series = df[self.col]
        unknown = set(series.unique()) - set(self.levels_)
        if unknown:
            raise DesignError(
                f"factor({self.col}): unseen level(s) {sorted(map(str, unknown))}"
            )
        kept = self.levels_[1:] if self.drop_first else self.levels_
        out = np.zeros((len(df), len(kept)))
        for j, lv in enumerate(kept):
            out[:, j] = (series == lv).to_numpy(dtype=float)
        return out


class _Poly:
    """Orthogonal polynomial basis, reproducible on new data.

    Fit builds the basis by QR on the training data and stores the
    coefficient matrix, so transform evaluates the same polynomial
    functions elsewhere.
    """

    def __init__(self, col: str, degree: int):
        if degree < 1:
            raise DesignError(f"poly({col}, {degree}): degree must be >= 1")
        self.col = col
        self.degree = degree
        self.names = tuple(f"poly({col},{degree}){j}" for j in range(1, degree + 1))

    def fit(self, df: pd.DataFrame) -> np.ndarray:
        x = _require_numeric(df, self.col, f"poly({self.col},{self.degree})")
        if len(np.unique(x)) <= self.degree:
            raise DesignError(
                f"poly({self.col},{self.degree}): needs more than "
                f"{self.degree} distinct values"
            )
        self.center_ = float(x.mean())
        spread = float(x.std())
        self.scale_ = spread if spread > 0 else 1.0
        z = (x - self.center_) / self.scale_
        raw = np.vander(z, self.degree + 1, increasing=True)
        q, r = np.linalg.qr(raw)
        # Columns of raw @ inv(r) reproduce the orthonormal basis on new data.
        self.coef_ = np.linalg.solve(r, np.eye(self.degree + 1))
        return q[:, 1:]

    def transform(self, df: pd.DataFrame) -> np.ndarray:
        x = _require_numeric(df, self.col, f"poly({self.col},{self.degree})")
        z = (x - self.center_) / self.scale_
        raw = np.vander(z, self.degree + 1, increasing=True)
        return (raw @ self.coef_)[:, 1:]


class _Spline:
    """Centered cubic B-spline basis over the training range of a column."""

    def __init__(self, col: str, k: int):
        if k < 3:
            raise DesignError(f"s({col},{k}): needs at least 3 basis columns")
        self.col = col
        self.k = k
        self.degree = min(3, k - 1)
        self.names = tuple(f"s({col},{k})[{j}]" for j in range(k))

    def fit(self, df: pd.DataFrame) -> np.ndarray:
        x = _require_numeric(df, self.col, f"s({self.col},{self.k})")
        lo, hi = float(x.min()), float(x.max())
        if hi <= lo:
            raise DesignError(f"s({self.col},{self.k}): column is constant")
        self.lo_, self.hi_ = lo, hi
        deg = self.degree
        n_interior = self.k - deg - 1
        interior = np.linspace(lo, hi, n_interior + 2)[1:-1]
        self.knots_ = np.concatenate(
            [np.full(deg + 1, lo), interior, np.full(deg + 1, hi)]
        )
        basis = self._raw(x)
        self.colmeans_ = basis.mean(axis=0)
        return basis - self.colmeans_

    def _raw(self, x: np.ndarray) -> np.ndarray:
        # Evaluation is clamped to the training range (constant beyond it).
        xc = np.clip(x, self.lo_, self.hi_)
        dm = BSpline.design_matrix(xc, self.knots_, self.degree)
        return dm.toarray()

    def transform(self, df: pd.DataFrame) -> np.ndarray:
        x = _require_numeric(df, self.col, f"s({self.col},{self.k})")
        return self._raw(x) - self.colmeans_


class _Offset:
    def __init__(self, col: str):
        self.col = col

    def fit(self, df: pd.DataFrame) -> np.ndarray:
        return self.transform(df)

    def transform(self, df: pd.DataFrame) -> np.ndarray:
        return _require_numeric(df, self.col, f"offset({self.col})")


@dataclass
class SmoothBlock:
    """One penalized smoother: its columns in Z and its penalty."""

    name: str
    start: int
    size: int
    penalty: np.ndarray
    rank: int
    logdet_plus: float
    null_basis: np.ndarray  # orthonormal basis of the penalized-problem null direction
    range_basis: np.ndarray  # orthonormal complement used for estimation

    @property
    def stop(self) -> int:
        return self.start + self.size


@dataclass
class DesignBlocks:
    """Design matrices split into fixed, penalized, and offset parts."""

    x: np.ndarray
    x_names: tuple[str, ...]
    z: np.ndarray
    z_names: tuple[str, ...]
    smooths: list[SmoothBlock]
    offset: np.ndarray
    response: str
    intercept: bool
    _x_terms: list = field(default_factory=list, repr=False)
    _z_terms: list = field(default_factory=list, repr=False)
    _offset_terms: list = field(default_factory=list, repr=False)

    def transform(self, df: pd.DataFrame):
        """Rebuild (x, z, offset) for new rows with the fitted bases."""
        n = len(df)
        x_cols = [t.transform(df) for t in self._x_terms]
        x = np.hstack(x_cols) if x_cols else np.zeros((n, 0))
        z_cols = [t.transform(df) for t in self._z_terms]
        z = np.hstack(z_cols) if z_cols else np.zeros((n, 0))
        offset = np.zeros(n)
        for t in self._offset_terms:
            offset += t.transform(df)
        return x, z, offset


def _second_difference_penalty(k: int) -> np.ndarray:
    d2 = np.zeros((k - 2, k))
    for i in range(k - 2):
        d2[i, i : i + 3] = (1.0, -2.0, 1.0)
    return d2.T @ d2


def _parse_terms(formula: str):
    if formula.count("~") != 1:
        raise DesignError(f"formula must contain exactly one '~': {formula!r}")
    lhs, rhs = (part.strip() for part in formula.split("~"))
    if not lhs:
        raise DesignError("formula has no response")
    terms = [t.strip() for t in rhs.split("+")] if rhs.strip() else []
    terms = [t for t in terms if t]
    if not terms:
        raise DesignError("formula has no right-hand side terms")
    return lhs, terms


def build_design(formula: str, df: pd.DataFrame) -> DesignBlocks:
    """Build design matrices for a formula on a data table.

    Returns a DesignBlocks whose ``x`` holds unpenalized columns, ``z``
    penalized smoother columns (described by ``smooths``), and ``offset``
    the summed offset columns.  The fitted term builders are retained so
    the same bases can be evaluated on new data.
    """
    response, term_strs = _parse_terms(formula)
    if response not in df.columns:
        raise DesignError(f"response column {response!r} not found in data")

    intercept = True
    parsed = []
    for t in term_strs:
        if t == "0":
            intercept = False
        else:
            parsed.append(t)

    x_terms: list = []
    z_terms: list[_Spline] = []
    offset_terms: list[_Offset] = []
    if intercept:
        x_terms.append(_Intercept())
    for t in parsed:
        if t == "1":
            continue  # intercept already present unless suppressed
        m = _CALL_RE.match(t)
        if m:
            func, argstr = m.group(1), m.group(2)
            args = [a.strip() for a in argstr.split(",")] if argstr.strip() else []
            if func == "factor":
                if len(args) != 1:
                    raise DesignError(f"factor() takes one column: {t!r}")
                x_terms.append(_Factor(args[0], drop_first=intercept))
            elif func == "poly":
                if len(args) != 2:
                    raise DesignError(f"poly() takes (column, degree): {t!r}")
                x_terms.append(_Poly(args[0], _parse_int(args[1], t)))
            elif func == "s":
                if len(args) != 2:
                    raise DesignError(f"s() takes (column, k): {t!r}")
                z_terms.append(_Spline(args[0], _parse_int(args[1], t)))
            elif func == "offset":
                if len(args) != 1:
                    raise DesignError(f"offset() takes one column: {t!r}")
                offset_terms.append(_Offset(args[0]))
            else:
                raise DesignError(f"unknown term {t!r}")
        else:
            if not re.match(r"^\w+$", t):
                raise DesignError(f"cannot parse term {t!r}")
            x_terms.append(_Linear(t))

    x_cols = [term.fit(df) for term in x_terms]
    x = np.hstack(x_cols) if x_cols else np.zeros((len(df), 0))
    x_names = tuple(name for term in x_terms for name in term.names)

    smooths: list[SmoothBlock] = []
    z_cols = []
    z_names: list[str] = []
    start = 0
    for term in z_terms:
        basis = term.fit(df)
        k = term.k
        penalty = _second_difference_penalty(k)
        eigvals = np.linalg.eigvalsh(penalty)
        positive = eigvals[eigvals > 1e-10 * max(eigvals.max(), 1.0)]
        ones = np.ones((1, k))
        nmat = null_space(ones)  # orthonormal, k x (k-1)
        smooths.append(
            SmoothBlock(
                name=f"s({term.col},{k})",
                start=start,
                size=k,
                penalty=penalty,
                rank=k - 2,
                logdet_plus=float(np.sum(np.log(positive))),
                null_basis=(ones / np.sqrt(k)).T,
                range_basis=nmat,
            )
        )
        z_cols.append(basis)
        z_names.extend(term.names)
        start += k
    z = np.hstack(z_cols) if z_cols else np.zeros((len(df), 0))

    offset = np.zeros(len(df))
    for term in offset_terms:
        offset += term.fit(df)

    if x.shape[1] and np.linalg.matrix_rank(x) < x.shape[1]:
        warnings.warn(
            "fixed-effect design is rank deficient; estimates of aliased "
            "columns are not identified",
            stacklevel=2,
        )

    return DesignBlocks(
        x=x,
        x_names=x_names,
        z=z,
        z_names=tuple(z_names),
        smooths=smooths,
        offset=offset,
        response=response,
        intercept=intercept,
        _x_terms=x_terms,
        _z_terms=z_terms,
        _offset_terms=offset_terms,
    )


def _parse_int(token: str, context: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise DesignError(f"{context!r}: {token!r} is not an integer") from None


def smoother_logpdf(block: SmoothBlock, gamma: np.ndarray, lam: float) -> float:
    """Improper Gaussian log-density of a smoother coefficient block.

    Only the rank(penalty) penalized directions carry density:
    0.5 rank log(lam) - 0.5 lam g'Qg + 0.5 logdet+(Q) - rank/2 log(2 pi).
    """
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape[0] != block.size:
        raise ValueError(f"gamma has length {gamma.shape[0]}, expected {block.size}")
    if lam <= 0:
        raise ValueError("lambda must be positive")
    quad = float(gamma @ block.penalty @ gamma)
    return (
        0.5 * block.rank * np.log(lam)
        - 0.5 * lam * quad
        + 0.5 * block.logdet_plus
        - 0.5 * block.rank * _LOG_2PI
    )


def validate_table(
    df: pd.DataFrame,
    variables,
    variable_column: str | None,
    times=None,
    time_column: str | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Check the long-format layout and return (variable, time) index arrays.

    Every row must name a declared variable; when times are declared the
    time column must exist and every value must be a declared time.
    Returns integer positions into the declared orderings (time indices
    are zero when no times are declared).
    """
    n = len(df)
    variables = list(variables)
    if variable_column is None:
        if len(variables) > 1:
            raise DesignError("a variable column is required with several variables")
        var_idx = np.zeros(n, dtype=int)
    else:
        if variable_column not in df.columns:
            raise DesignError(f"variable column {variable_column!r} not found")
        mapping = {v: i for i, v in enumerate(variables)}
        labels = df[variable_column].astype(str)
        bad = sorted(set(labels) - set(mapping))
        if bad:
            raise DesignError(f"unknown variable label(s) in data: {bad}")
        var_idx = labels.map(mapping).to_numpy(dtype=int)
    if times is None:
        return var_idx, np.zeros(n, dtype=int)
    times = list(times)
    if time_column is None:
        raise DesignError("a time column is required when times are declared")
    if time_column not in df.columns:
        raise DesignError(f"time column {time_column!r} not found")
    tmap = {t: i for i, t in enumerate(times)}
    tvals = df[time_column]
    time_idx = np.empty(n, dtype=int)
    for i, value in enumerate(tvals):
        if value not in tmap:
            raise DesignError(f"row {i}: time {value!r} is not a declared time")
        time_idx[i] = tmap[value]
    return var_idx, time_idx
