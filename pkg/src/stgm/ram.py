"""Assembly of structural models into sparse matrices.

A parsed model becomes a pair of sparse matrices over the model variables
(optionally unrolled across time steps): ``P`` collects one-headed path
coefficients with P[to, from] = value, and ``G`` collects two-headed
(co)variance entries.  With full-rank G the implied precision is

    Q = (I - P)^T G^{-T} G^{-1} (I - P)

so that the implied covariance is (I - P)^{-1} G G^T (I - P)^{-T}.  When
some variances are fixed at zero (factor-analysis style models) Q does not
exist; those models are compiled through the projection B = (I - P)^{-1} G
applied to full-rank white coordinates instead.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import MatrixRankWarning, splu, spsolve

from .errors import RankDeficientError, SingularModelError
from .notation import RamModel
from .sparse import SparseSymMatrix

__all__ = [
    "RamMatrices",
    "assemble_ram",
    "precision_from_ram",
    "projection_matrix",
    "project_rank_deficient",
]


@dataclass
class RamMatrices:
    """Sparse path matrix P and exogenous matrix G on a C*T grid.

    The flat index of variable c at time t is ``t * n_vars + c``; edges
    that would reach before the first time step are dropped.
    """

    p_mat: sp.csc_matrix
    g_mat: sp.csc_matrix
    n: int
    n_vars: int
    n_times: int
    rank_deficient: bool


def assemble_ram(ram: RamModel, theta, n_times: int = 1) -> RamMatrices:
    """Fill P and G from a model and a parameter vector.

    Parameters
    ----------
    ram : RamModel
        Parsed model; fixed terms use their stored value, parameterized
        terms take values from `theta` in ``ram.params`` order.
    theta : array-like
        One value per entry of ``ram.params``.
    n_times : int
        Number of time steps to unroll.  Must be at least ``max_lag + 1``
        when the model has lagged terms.

    Raises
    ------
    ValueError
        On a theta length mismatch or too few time steps.
    SingularModelError
        If I - P is singular at these parameter values.
    """
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.shape[0] != len(ram.params):
        raise ValueError(
            f"expected {len(ram.params)} parameter values, got {theta.shape[0]}"
        )
    if n_times < 1:
        raise ValueError("n_times must be at least 1")
    if ram.max_lag > 0 and n_times < ram.max_lag + 1:
        raise ValueError(
            f"model has lag {ram.max_lag}; needs at least {ram.max_lag + 1} "
            f"time steps, got {n_times}"
        )
    c_vars = len(ram.variables)
    n = c_vars * n_times
    vidx = {v: i for i, v in enumerate(ram.variables)}
    pidx = ram.param_index()

    p_rows: list[int] = []
    p_cols: list[int] = []
    p_vals: list[float] = []
    g_rows: list[int] = []
    g_cols: list[int] = []
    g_vals: list[float] = []
    for term in ram.terms:
        value = term.value if term.fixed else float(theta[pidx[term.param]])
        i_to = vidx[term.dst]
        i_from = vidx[term.src]
        for t in range(term.lag, n_times):
            r = t * c_vars + i_to
            c = (t - term.lag) * c_vars + i_from
            if term.heads == 1:
                p_rows.append(r)
                p_cols.append(c)
                p_vals.append(value)
            else:
                g_rows.append(r)
                g_cols.append(c)
                g_vals.append(value)
                if r != c:
                    g_rows.append(c)
                    g_cols.append(r)
                    g_vals.append(value)

    p_mat = sp.csc_matrix((p_vals, (p_rows, p_cols)), shape=(n, n))
    g_mat = sp.csc_matrix((g_vals, (g_rows, g_cols)), shape=(n, n))
    _validate_imp(p_mat, n)
    return RamMatrices(
        p_mat=p_mat,
        g_mat=g_mat,
        n=n,
        n_vars=c_vars,
        n_times=n_times,
        rank_deficient=ram.rank_deficient,
    )


def _imp(m: RamMatrices) -> sp.csc_matrix:
    return (sp.identity(m.n, format="csc") - m.p_mat).tocsc()


def _validate_imp(p_mat: sp.csc_matrix, n: int) -> None:
    imp = (sp.identity(n, format="csc") - p_mat).tocsc()
    try:
        lu = splu(imp)
    except RuntimeError as exc:
        raise SingularModelError(f"I - P is singular: {exc}") from exc
    diag = lu.U.diagonal()
    if not np.all(np.isfinite(diag)) or np.any(diag == 0.0):
        raise SingularModelError("I - P is singular")


def precision_from_ram(m: RamMatrices) -> SparseSymMatrix:
    """Implied sparse precision Q = (I-P)^T G^{-T} G^{-1} (I-P).

    Raises
    ------
    RankDeficientError
        If the model was flagged rank deficient (use the projection path).
    SingularModelError
        If G is not invertible at these values.
    """
    if m.rank_deficient:
        raise RankDeficientError(
            "model has a variance fixed at zero; its precision does not "
            "exist, use project_rank_deficient instead"
        )
    imp = _imp(m)
    g = m.g_mat
    diag = g.diagonal()
    if g.nnz == np.count_nonzero(diag):
        # G is diagonal: scale rows of (I - P) directly.
        if np.any(diag == 0.0):
            raise SingularModelError("G has a zero diagonal entry")
        m_inv = sp.diags(1.0 / diag).tocsc() @ imp
    else:
        m_inv = sp.csc_matrix(_spsolve_checked(g.tocsc(), imp, "G"))
    q = (m_inv.T @ m_inv).tocsc()
    return SparseSymMatrix(q)


def _spsolve_checked(a: sp.csc_matrix, b: sp.csc_matrix, name: str):
    """spsolve that raises SingularModelError instead of warning with NaNs."""
    with np.errstate(all="ignore"), warnings.catch_warnings():
        warnings.simplefilter("error", MatrixRankWarning)
        try:
            x = spsolve(a, b)
        except (MatrixRankWarning, RuntimeError) as exc:
            raise SingularModelError(f"{name} is not invertible") from exc
    data = x.data if sp.issparse(x) else np.asarray(x)
    if not np.all(np.isfinite(data)):
        raise SingularModelError(f"{name} is not invertible")
    return x


def projection_matrix(m: RamMatrices) -> sp.csc_matrix:
    """The map B = (I - P)^{-1} G from white coordinates to model scale."""
    b = sp.csc_matrix(_spsolve_checked(_imp(m), m.g_mat.tocsc(), "I - P"))
    if b.shape != (m.n, m.n):
        b = b.reshape(m.n, m.n)
    return b


def project_rank_deficient(m: RamMatrices, white: np.ndarray) -> np.ndarray:
    """Map white-coordinate values through B = (I - P)^{-1} G.

    `white` has the model dimension along its first axis; additional axes
    are carried through unchanged.
    """
    white = np.asarray(white, dtype=float)
    if white.shape[0] != m.n:
        raise ValueError(
            f"white coordinates have leading dimension {white.shape[0]}, "
            f"expected {m.n}"
        )
    try:
        lu = splu(_imp(m))
    except RuntimeError as exc:
        raise SingularModelError(f"I - P is singular: {exc}") from exc
    return lu.solve(m.g_mat @ white)
