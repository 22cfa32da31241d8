"""Model assembly and maximum likelihood estimation.

A model couples a fixed-effect design with up to two latent Gaussian
fields (a time-invariant one and a time-unrolled one, each separable over
sites and structural coordinates) plus penalized smoothers.  All latent
coordinates are stacked into one vector u with block-diagonal sparse
precision; the marginal likelihood of the outer parameters integrates u
out with a Laplace approximation:

    -log L(theta) ~= f(u_hat) + 0.5 logdet H(u_hat) - dim(u)/2 log(2 pi)

where f is the joint negative log-density and H its Hessian in u.  The
inner mode u_hat is found by damped Newton iteration; the outer surface is
minimized by BFGS with central finite-difference gradients, warm-starting
every inner solve from the mode at the gradient's base point so the
differenced surface stays smooth.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.optimize import minimize

from .design import DesignBlocks, SmoothBlock, build_design, validate_table
from .errors import (
    ConfigError,
    DesignError,
    FitError,
    NotPositiveDefiniteError,
    SingularModelError,
)
from .families import Family, make_family
from .gmrf import gmrf_sample
from .notation import RamModel, parse_dsem, parse_sem
from .ram import assemble_ram, precision_from_ram, projection_matrix
from .sparse import SparseCholesky, SparseSymMatrix
from .spatial import SingleSiteDomain, make_projector

__all__ = [
    "ModelSpec",
    "FitSettings",
    "FitResult",
    "make_spec",
    "laplace_marginal",
    "fit",
    "evaluate_fit",
    "predict",
    "residuals",
    "integrate_output",
    "simulate_response",
]

_LOG_2PI = float(np.log(2.0 * np.pi))
_BARRIER = 1.0e12

_TRANSFORMS = ("identity", "log", "logit11")


def _to_unconstrained(value: float, transform: str) -> float:
    if transform == "identity":
        return float(value)
    if transform == "log":
        if value <= 0:
            raise ConfigError(f"value {value!r} must be positive for log transform")
        return float(np.log(value))
    if abs(value) >= 1:
        raise ConfigError(f"value {value!r} must lie in (-1, 1)")
    return float(np.arctanh(value))


def _from_unconstrained(x: float, transform: str) -> float:
    if transform == "identity":
        return float(x)
    if transform == "log":
        return float(np.exp(x))
    return float(np.tanh(x))


def _dnatural_dx(x: float, transform: str) -> float:
    if transform == "identity":
        return 1.0
    if transform == "log":
        return float(np.exp(x))
    t = np.tanh(x)
    return float(1.0 - t * t)


@dataclass
class ParamInfo:
    """One outer parameter: naming, transform, start, optional fixing."""

    name: str
    block: str
    transform: str
    start: float
    fixed_value: float | None = None

    @property
    def free(self) -> bool:
        return self.fixed_value is None


class _EvalFailed(Exception):
    """Inner estimation failed at this theta; outer sees a barrier."""


class ModelSpec:
    """A fully validated model bound to a data table.

    Use :func:`make_spec` to construct one.  The spec owns the design
    matrices, the latent-block layout, and the outer parameter table; it
    is immutable during fitting.
    """

    def __init__(
        self,
        data: pd.DataFrame,
        design: DesignBlocks,
        variables: tuple[str, ...],
        times,
        families: tuple[Family, ...],
        domain,
        sem_ram: RamModel | None,
        dsem_ram: RamModel | None,
        var_idx: np.ndarray,
        time_idx: np.ndarray,
        a_mat: sp.csr_matrix,
        sem_projected: bool,
        dsem_projected: bool,
        variable_column: str | None,
        time_column: str | None,
        space_columns: tuple[str, ...] | None,
    ):
        self.data = data
        self.design = design
        self.variables = variables
        self.times = times
        self.families = families
        self.domain = domain
        self.sem_ram = sem_ram
        self.dsem_ram = dsem_ram
        self.var_idx = var_idx
        self.time_idx = time_idx
        self.a_mat = a_mat
        self.sem_projected = sem_projected
        self.dsem_projected = dsem_projected
        self.variable_column = variable_column
        self.time_column = time_column
        self.space_columns = space_columns

        self.y = np.asarray(
            data[design.response].to_numpy(dtype=float), dtype=float
        )
        self.n_obs = len(data)
        self.n_vars = len(variables)
        self.n_times = len(times) if times is not None else 1
        self.n_sites = domain.n_sites if domain is not None else 0
        self.row_groups = [
            np.nonzero(var_idx == v)[0] for v in range(self.n_vars)
        ]
        for v, rows in enumerate(self.row_groups):
            families[v].validate_response(
                self.y[rows], context=f"variable {variables[v]!r}"
            )

        # Reduced smoother coordinates: gamma = N xi with N spanning the
        # complement of the all-ones direction that centering zeroed out.
        self.z_tilde_blocks = []
        self.reduced_penalties = []
        for blk in design.smooths:
            zb = design.z[:, blk.start : blk.stop]
            self.z_tilde_blocks.append(zb @ blk.range_basis)
            self.reduced_penalties.append(
                blk.range_basis.T @ blk.penalty @ blk.range_basis
            )

        # Latent layout: [omega, epsilon, xi_1, ...]
        self.u_blocks: list[tuple[str, slice, int]] = []
        pos = 0
        if sem_ram is not None:
            m = self.n_vars
            self.u_blocks.append(("omega", slice(pos, pos + m * self.n_sites), m))
            pos += m * self.n_sites
        if dsem_ram is not None:
            m = self.n_vars * self.n_times
            self.u_blocks.append(("eps", slice(pos, pos + m * self.n_sites), m))
            pos += m * self.n_sites
        for bi, blk in enumerate(design.smooths):
            size = blk.size - 1
            self.u_blocks.append((f"xi{bi}", slice(pos, pos + size), size))
            pos += size
        self.n_latent = pos

        self.params: list[ParamInfo] = []
        self._param_pos: dict[str, int] = {}
        self._build_param_table()

    # -- parameter table -------------------------------------------------

    def _add_param(self, info: ParamInfo) -> None:
        if info.name in self._param_pos:
            raise ConfigError(f"duplicate parameter name {info.name!r}")
        self._param_pos[info.name] = len(self.params)
        self.params.append(info)

    def _build_param_table(self) -> None:
        if self.sem_ram is not None:
            for name, start in self.sem_ram.params:
                transform = "log" if self.sem_ram.is_sd_param(name) else "identity"
                self._add_param(ParamInfo(f"sem:{name}", "sem", transform, start))
        if self.dsem_ram is not None:
            for name, start in self.dsem_ram.params:
                transform = (
                    "log" if self.dsem_ram.is_sd_param(name) else "identity"
                )
                self._add_param(ParamInfo(f"dsem:{name}", "dsem", transform, start))
        if (
            self.domain is not None
            and (self.sem_ram is not None or self.dsem_ram is not None)
            and self.domain.param_name is not None
        ):
            self._add_param(
                ParamInfo(
                    f"spatial:{self.domain.param_name}",
                    "spatial",
                    self.domain.param_transform,
                    self.domain.param_start,
                )
            )
        for v, fam in enumerate(self.families):
            if fam.has_dispersion:
                self._add_param(
                    ParamInfo(f"disp:{self.variables[v]}", "disp", "log", 1.0)
                )
        for blk in self.design.smooths:
            self._add_param(ParamInfo(f"lambda:{blk.name}", "lambda", "log", 1.0))
        alpha_start = self._moment_alpha()
        for j, name in enumerate(self.design.x_names):
            self._add_param(
                ParamInfo(f"alpha:{name}", "alpha", "identity", alpha_start[j])
            )

    def _moment_alpha(self) -> np.ndarray:
        x = self.design.x
        if x.shape[1] == 0:
            return np.zeros(0)
        eta0 = np.zeros(self.n_obs)
        for v, rows in enumerate(self.row_groups):
            if rows.size:
                eta0[rows] = self.families[v].init_eta(self.y[rows])
        target = eta0 - self.design.offset
        coef, *_ = np.linalg.lstsq(x, target, rcond=None)
        return np.where(np.isfinite(coef), coef, 0.0)

    # -- parameter vector helpers ----------------------------------------

    @property
    def param_names(self) -> list[str]:
        return [p.name for p in self.params]

    @property
    def free_params(self) -> list[ParamInfo]:
        return [p for p in self.params if p.free]

    @property
    def n_free(self) -> int:
        return sum(1 for p in self.params if p.free)

    def param_position(self, name: str) -> int:
        if name not in self._param_pos:
            raise ConfigError(
                f"unknown parameter {name!r} (known: {', '.join(self._param_pos)})"
            )
        return self._param_pos[name]

    def start_vector(self) -> np.ndarray:
        """Unconstrained starting point over the free parameters."""
        out = []
        for p in self.params:
            if p.free:
                out.append(_to_unconstrained(p.start, p.transform))
        return np.array(out)

    def natural_from_free(self, x: np.ndarray) -> np.ndarray:
        """Full natural-scale parameter vector from free unconstrained values."""
        theta = np.empty(len(self.params))
        k = 0
        for i, p in enumerate(self.params):
            if p.free:
                theta[i] = _from_unconstrained(x[k], p.transform)
                k += 1
            else:
                theta[i] = p.fixed_value
        return theta

    def theta_from_mapping(self, values: dict[str, float]) -> np.ndarray:
        """Natural parameter vector from defaults overridden by name."""
        theta = np.array(
            [p.start if p.free else p.fixed_value for p in self.params]
        )
        for name, value in values.items():
            theta[self.param_position(name)] = float(value)
        return theta

    def _positions(self, block: str) -> list[int]:
        return [i for i, p in enumerate(self.params) if p.block == block]

    # -- coordinates ------------------------------------------------------

    def sample_sites(self, df: pd.DataFrame):
        """Extract domain query coordinates (or ids) from data rows."""
        if self.domain is None or isinstance(self.domain, SingleSiteDomain):
            return np.zeros(len(df), dtype=int)
        if self.domain.kind == "mesh":
            cols = self.space_columns
            missing = [c for c in cols if c not in df.columns]
            if missing:
                raise DesignError(f"missing coordinate column(s) {missing}")
            return df[list(cols)].to_numpy(dtype=float)
        col = self.space_columns[0]
        if col not in df.columns:
            raise DesignError(f"missing site column {col!r}")
        return df[col].to_numpy()


@dataclass
class _State:
    """Everything that depends on the outer parameters."""

    theta: np.ndarray
    eta0: np.ndarray
    dmat: sp.csr_matrix | None
    q_prior: sp.csc_matrix | None
    prior_const: float
    disp: np.ndarray  # per-variable dispersion (1.0 placeholder when absent)
    q_spatial: SparseSymMatrix | None = None
    sem_inner: SparseSymMatrix | None = None
    dsem_inner: SparseSymMatrix | None = None
    b_sem: sp.csc_matrix | None = None
    b_dsem: sp.csc_matrix | None = None


def _rows_to_csr(rows, n_sites: int) -> sp.csr_matrix:
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for row in rows:
        for node, weight in row.entries:
            indices.append(node)
            data.append(weight)
        indptr.append(len(indices))
    return sp.csr_matrix(
        (data, indices, indptr), shape=(len(rows), n_sites)
    )


def _field_design(
    a_mat: sp.csr_matrix,
    inner_idx: np.ndarray,
    n_sites: int,
    n_inner: int,
    b_map: sp.spmatrix | None,
) -> sp.csr_matrix:
    """Rows map latent vec(S x m, site-fastest) to observations.

    Without a projection, row i touches the inner coordinate of that
    observation only; with one, row i spreads over inner coordinates with
    weights from the corresponding row of B.
    """
    n_rows = a_mat.shape[0]
    if b_map is None:
        nnz = np.diff(a_mat.indptr)
        rows = np.repeat(np.arange(n_rows), nnz)
        cols = np.repeat(inner_idx, nnz) * n_sites + a_mat.indices
        return sp.csr_matrix(
            (a_mat.data, (rows, cols)), shape=(n_rows, n_inner * n_sites)
        )
    b_csr = sp.csr_matrix(b_map)
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    for i in range(n_rows):
        a_lo, a_hi = a_mat.indptr[i], a_mat.indptr[i + 1]
        a_ind = a_mat.indices[a_lo:a_hi]
        a_val = a_mat.data[a_lo:a_hi]
        k = inner_idx[i]
        b_lo, b_hi = b_csr.indptr[k], b_csr.indptr[k + 1]
        b_ind = b_csr.indices[b_lo:b_hi]
        b_val = b_csr.data[b_lo:b_hi]
        cc = (b_ind[:, None] * n_sites + a_ind[None, :]).ravel()
        vv = (b_val[:, None] * a_val[None, :]).ravel()
        rows.extend([i] * len(cc))
        cols.extend(cc.tolist())
        vals.extend(vv.tolist())
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_rows, n_inner * n_sites))


def _build_state(spec: ModelSpec, theta: np.ndarray) -> _State:
    """Assemble per-theta quantities, raising _EvalFailed when invalid."""
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise _EvalFailed("non-finite parameter value")

    alpha_pos = spec._positions("alpha")
    alpha = theta[alpha_pos]
    eta0 = spec.design.offset + (
        spec.design.x @ alpha if alpha.size else 0.0
    )

    disp = np.ones(spec.n_vars)
    for i in spec._positions("disp"):
        name = spec.params[i].name.split(":", 1)[1]
        v = spec.variables.index(name)
        if theta[i] <= 0:
            raise _EvalFailed("dispersion must be positive")
        disp[v] = theta[i]

    q_blocks: list[sp.spmatrix] = []
    d_parts: list[sp.spmatrix] = []
    prior_const = 0.0
    state = _State(
        theta=theta,
        eta0=np.asarray(eta0, dtype=float),
        dmat=None,
        q_prior=None,
        prior_const=0.0,
        disp=disp,
    )

    needs_spatial = spec.sem_ram is not None or spec.dsem_ram is not None
    if needs_spatial:
        spatial_pos = spec._positions("spatial")
        try:
            if spatial_pos:
                q_s = spec.domain.precision(theta[spatial_pos[0]])
            else:
                q_s = spec.domain.precision()
            ld_s = q_s.logdet()
        except Exception as exc:
            raise _EvalFailed(f"spatial precision failed: {exc}") from exc
        state.q_spatial = q_s
        s_sites = spec.n_sites

        def add_field(ram, positions, projected, inner_idx, n_times):
            nonlocal prior_const
            try:
                mats = assemble_ram(ram, theta[positions], n_times=n_times)
            except (SingularModelError, ValueError) as exc:
                raise _EvalFailed(f"structural assembly failed: {exc}") from exc
            m = mats.n
            if projected:
                try:
                    b_map = projection_matrix(mats)
                except SingularModelError as exc:
                    raise _EvalFailed(str(exc)) from exc
                q_i = SparseSymMatrix(sp.identity(m, format="csc"))
                ld_i = 0.0
            else:
                try:
                    q_i = precision_from_ram(mats)
                    ld_i = q_i.logdet()
                except (SingularModelError, NotPositiveDefiniteError) as exc:
                    raise _EvalFailed(str(exc)) from exc
                b_map = None
            q_blocks.append(sp.kron(q_i.csc, q_s.csc, format="csc"))
            d_parts.append(
                _field_design(spec.a_mat, inner_idx, s_sites, m, b_map)
            )
            prior_const += 0.5 * s_sites * m * _LOG_2PI
            prior_const -= 0.5 * (m * ld_s + s_sites * ld_i)
            return q_i, b_map

        if spec.sem_ram is not None:
            q_i, b_map = add_field(
                spec.sem_ram,
                spec._positions("sem"),
                spec.sem_projected,
                spec.var_idx,
                1,
            )
            state.sem_inner = q_i
            state.b_sem = b_map
        if spec.dsem_ram is not None:
            inner_idx = spec.time_idx * spec.n_vars + spec.var_idx
            q_i, b_map = add_field(
                spec.dsem_ram,
                spec._positions("dsem"),
                spec.dsem_projected,
                inner_idx,
                spec.n_times,
            )
            state.dsem_inner = q_i
            state.b_dsem = b_map

    lambda_pos = spec._positions("lambda")
    for bi, blk in enumerate(spec.design.smooths):
        lam = theta[lambda_pos[bi]]
        if lam <= 0:
            raise _EvalFailed("lambda must be positive")
        q_blocks.append(sp.csc_matrix(lam * spec.reduced_penalties[bi]))
        d_parts.append(sp.csr_matrix(spec.z_tilde_blocks[bi]))
        prior_const += (
            -0.5 * blk.rank * np.log(lam)
            - 0.5 * blk.logdet_plus
            + 0.5 * blk.rank * _LOG_2PI
        )

    if q_blocks:
        state.q_prior = sp.block_diag(q_blocks, format="csc")
        state.dmat = sp.hstack(d_parts, format="csr")
    state.prior_const = prior_const
    return state


def _data_nll(spec: ModelSpec, state: _State, eta: np.ndarray) -> float:
    total = 0.0
    with np.errstate(all="ignore"):
        for v, rows in enumerate(spec.row_groups):
            if rows.size == 0:
                continue
            vals = spec.families[v].nll(spec.y[rows], eta[rows], state.disp[v])
            total += float(np.sum(vals))
    return total


def _data_derivs(spec: ModelSpec, state: _State, eta: np.ndarray):
    r = np.zeros(spec.n_obs)
    w = np.zeros(spec.n_obs)
    with np.errstate(all="ignore"):
        for v, rows in enumerate(spec.row_groups):
            if rows.size == 0:
                continue
            fam = spec.families[v]
            r[rows] = fam.d1(spec.y[rows], eta[rows], state.disp[v])
            w[rows] = fam.d2(spec.y[rows], eta[rows], state.disp[v])
    return r, w


def _joint_nll(spec: ModelSpec, state: _State, u: np.ndarray) -> float:
    eta = state.eta0 if state.dmat is None else state.eta0 + state.dmat @ u
    value = _data_nll(spec, state, eta)
    if state.q_prior is not None:
        value += 0.5 * float(u @ (state.q_prior @ u)) + state.prior_const
    return value


def _inner_hessian(spec, state, u):
    eta = state.eta0 + state.dmat @ u
    r, w = _data_derivs(spec, state, eta)
    wd = state.dmat.multiply(w[:, None])
    h = (state.dmat.T @ wd + state.q_prior).tocsc()
    g = state.dmat.T @ r + state.q_prior @ u
    return g, h


def _inner_newton(
    spec: ModelSpec,
    state: _State,
    u0: np.ndarray | None,
    tol: float = 1.0e-8,
    max_iter: int = 100,
):
    """Find the joint mode in u by Newton iteration with diagonal damping.

    Convergence is judged by the Newton decrement relative to the current
    objective value, so inner tolerance is met even when prior precisions
    are enormous.  A step that fails to decrease the objective escalates
    diagonal damping before giving up.  Returns (u, f, Hessian factor at
    the undamped mode).
    """
    n_u = spec.n_latent
    u = np.zeros(n_u)
    if u0 is not None and u0.shape == (n_u,) and np.all(np.isfinite(u0)):
        u = u0.copy()
    f = _joint_nll(spec, state, u)
    if not np.isfinite(f):
        u = np.zeros(n_u)
        f = _joint_nll(spec, state, u)
        if not np.isfinite(f):
            raise _EvalFailed("joint objective is not finite at the origin")

    near_mode = False
    for _ in range(max_iter):
        g, h = _inner_hessian(spec, state, u)
        if not np.all(np.isfinite(g)):
            raise _EvalFailed("non-finite gradient in inner optimization")
        diag = h.diagonal()
        step = None
        try:
            fac = SparseCholesky(h)
            step = fac.solve(-g)
        except NotPositiveDefiniteError:
            pass
        if step is not None:
            # Newton decrement g'H^{-1}g: twice the remaining quadratic
            # drop.  Measuring convergence in objective units keeps the
            # test meaningful when the prior precision is huge.
            decrement = float(-(g @ step))
            if not np.isfinite(decrement):
                raise _EvalFailed("non-finite Newton step")
            if decrement <= 2.0 * tol * (1.0 + abs(f)):
                near_mode = True
            if decrement <= 1.0e-13 * (1.0 + abs(f)):
                break  # numerically at the mode already
            cand = u + step
            f_cand = _joint_nll(spec, state, cand)
            if np.isfinite(f_cand) and f_cand <= f + 1.0e-12 * (1.0 + abs(f)):
                progress = f - f_cand
                if f_cand < f:
                    u, f = cand, f_cand
                if near_mode and progress <= 1.0e-14 * (1.0 + abs(f)):
                    break  # no measurable progress left
                if near_mode or progress > 1.0e-14 * (1.0 + abs(f)):
                    continue
        if near_mode:
            break
        # The plain step failed or made no progress: escalate damping,
        # multiplying the Hessian diagonal by (1 + 10^k).
        took = False
        for k in range(7):
            hd = (h + sp.diags(diag * 10.0**k)).tocsc()
            try:
                fac_d = SparseCholesky(hd)
            except NotPositiveDefiniteError:
                continue
            cand = u + fac_d.solve(-g)
            f_cand = _joint_nll(spec, state, cand)
            if np.isfinite(f_cand) and f_cand < f - 1.0e-14 * (1.0 + abs(f)):
                u, f = cand, f_cand
                took = True
                break
        if not took:
            raise _EvalFailed(
                "inner Newton found no descent step after damping escalation"
            )
    else:
        if not near_mode:
            raise _EvalFailed("inner Newton did not converge")

    g, h = _inner_hessian(spec, state, u)
    try:
        hfac = SparseCholesky(h)
    except NotPositiveDefiniteError as exc:
        raise _EvalFailed(
            f"joint Hessian not positive definite at the mode: {exc}"
        ) from exc
    return u, _joint_nll(spec, state, u), hfac


@dataclass
class _LaplaceInfo:
    state: _State
    mode: np.ndarray
    hfac: SparseCholesky | None
    joint_nll: float


def laplace_marginal(
    spec: ModelSpec,
    theta,
    warm: np.ndarray | None = None,
    inner_tol: float = 1.0e-8,
    inner_max_iter: int = 100,
):
    """Laplace-approximated negative marginal log-likelihood at theta.

    Returns (nll, info); on invalid parameters or inner failure the nll is
    a large barrier value and info is None.  `theta` is on the natural
    scale and covers every parameter (fixed ones included).
    """
    try:
        state = _build_state(spec, np.asarray(theta, dtype=float))
    except _EvalFailed:
        return _BARRIER, None
    if spec.n_latent == 0:
        value = _joint_nll(spec, state, np.zeros(0))
        if not np.isfinite(value):
            return _BARRIER, None
        return value, _LaplaceInfo(state, np.zeros(0), None, value)
    try:
        u, f, hfac = _inner_newton(
            spec, state, warm, tol=inner_tol, max_iter=inner_max_iter
        )
    except _EvalFailed:
        return _BARRIER, None
    nll = f + 0.5 * hfac.logdet - 0.5 * spec.n_latent * _LOG_2PI
    if not np.isfinite(nll):
        return _BARRIER, None
    return nll, _LaplaceInfo(state, u, hfac, f)


@dataclass
class FitSettings:
    """Outer optimization controls."""

    max_iter: int = 200
    gtol: float = 1.0e-3
    fd_step: float = 1.0e-5
    hess_step: float = 1.0e-4
    se: bool = True
    inner_tol: float = 1.0e-8
    inner_max_iter: int = 100
    threads: int = 1


class _Objective:
    """Laplace objective with warm starts and best-point tracking."""

    def __init__(self, spec: ModelSpec, settings: FitSettings):
        self.spec = spec
        self.settings = settings
        self.base_mode: np.ndarray | None = None
        self.best_value = np.inf
        self.best_x: np.ndarray | None = None
        self.n_evals = 0

    def evaluate(self, x: np.ndarray, warm: np.ndarray | None):
        theta = self.spec.natural_from_free(x)
        nll, info = laplace_marginal(
            self.spec,
            theta,
            warm=warm,
            inner_tol=self.settings.inner_tol,
            inner_max_iter=self.settings.inner_max_iter,
        )
        self.n_evals += 1
        if nll < self.best_value:
            self.best_value = nll
            self.best_x = x.copy()
        return nll, info

    def value(self, x: np.ndarray) -> float:
        nll, info = self.evaluate(x, self.base_mode)
        if info is not None:
            self.base_mode = info.mode.copy()
        return nll

    def gradient(self, x: np.ndarray) -> np.ndarray:
        # Anchor every difference at the base-point mode so the inner
        # solves do not inject noise into the differences.
        nll, info = self.evaluate(x, self.base_mode)
        if info is not None:
            self.base_mode = info.mode.copy()
        base = None if info is None else info.mode.copy()
        p = x.shape[0]
        steps = self.settings.fd_step * np.maximum(1.0, np.abs(x))

        def one_sided(args):
            j, sign = args
            xp = x.copy()
            xp[j] += sign * steps[j]
            return self.evaluate(xp, base)[0]

        tasks = [(j, s) for j in range(p) for s in (+1.0, -1.0)]
        if self.settings.threads > 1 and p > 1:
            with ThreadPoolExecutor(max_workers=self.settings.threads) as pool:
                values = list(pool.map(one_sided, tasks))
        else:
            values = [one_sided(t) for t in tasks]
        grad = np.empty(p)
        for j in range(p):
            grad[j] = (values[2 * j] - values[2 * j + 1]) / (2.0 * steps[j])
        return grad


def _fd_hessian(obj: _Objective, x: np.ndarray, f0: float) -> np.ndarray:
    """Central finite-difference Hessian of the Laplace objective."""
    p = x.shape[0]
    base = obj.base_mode
    h = obj.settings.hess_step * np.maximum(1.0, np.abs(x))

    def val(delta):
        return obj.evaluate(x + delta, base)[0]

    hess = np.empty((p, p))
    for i in range(p):
        ei = np.zeros(p)
        ei[i] = h[i]
        fp = val(ei)
        fm = val(-ei)
        hess[i, i] = (fp - 2.0 * f0 + fm) / (h[i] * h[i])
        for j in range(i + 1, p):
            ej = np.zeros(p)
            ej[j] = h[j]
            fpp = val(ei + ej)
            fpm = val(ei - ej)
            fmp = val(-ei + ej)
            fmm = val(-ei - ej)
            hess[i, j] = hess[j, i] = (fpp - fpm - fmp + fmm) / (
                4.0 * h[i] * h[j]
            )
    return hess


@dataclass
class FitResult:
    """Estimates, uncertainty, and decoded latent states."""

    spec: ModelSpec
    names: list[str]
    estimates: np.ndarray
    ses: np.ndarray
    fixed_mask: np.ndarray
    loglik: float
    aic: float
    convergence: dict
    theta: np.ndarray
    x_free: np.ndarray
    cov_free: np.ndarray | None
    mode: np.ndarray
    omega: np.ndarray | None
    omega_white: np.ndarray | None
    epsilon: np.ndarray | None
    epsilon_white: np.ndarray | None
    gammas: list[np.ndarray]
    _info: _LaplaceInfo = dc_field(repr=False, default=None)

    def param_table(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "parameter": self.names,
                "estimate": self.estimates,
                "se": self.ses,
                "fixed": self.fixed_mask.astype(bool),
            }
        )


def _decode_modes(spec: ModelSpec, info: _LaplaceInfo):
    omega = omega_white = eps = eps_white = None
    gammas: list[np.ndarray] = []
    for name, sl, m in spec.u_blocks:
        block = info.mode[sl]
        if name == "omega":
            omega_white = block.reshape(spec.n_sites, m, order="F")
            if spec.sem_projected:
                omega = omega_white @ info.state.b_sem.T.toarray()
            else:
                omega = omega_white
        elif name == "eps":
            eps_white = block.reshape(spec.n_sites, m, order="F")
            if spec.dsem_projected:
                eps = eps_white @ info.state.b_dsem.T.toarray()
            else:
                eps = eps_white
        else:
            bi = int(name[2:])
            gammas.append(spec.design.smooths[bi].range_basis @ block)
    return omega, omega_white, eps, eps_white, gammas


def fit(spec: ModelSpec, settings: FitSettings | None = None) -> FitResult:
    """Maximize the Laplace-approximated likelihood.

    Free parameters are optimized by BFGS on unconstrained scales with
    central finite-difference gradients.  Standard errors come from the
    finite-difference Hessian at the optimum mapped through the
    transforms (delta method); entries that cannot be computed are NaN.
    """
    settings = settings or FitSettings()
    obj = _Objective(spec, settings)
    x0 = spec.start_vector()
    p = x0.shape[0]

    message = "evaluated at fixed parameters"
    iterations = 0
    if p > 0 and settings.max_iter > 0:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = minimize(
                obj.value,
                x0,
                jac=obj.gradient,
                method="BFGS",
                options={
                    "gtol": settings.gtol,
                    "maxiter": settings.max_iter,
                    "norm": np.inf,
                },
            )
        xhat = obj.best_x if obj.best_x is not None else res.x
        message = str(res.message)
        iterations = int(res.nit)
    else:
        xhat = x0

    # Final evaluation from a cold start: the reported likelihood must be
    # reproducible by re-evaluating the stored estimates, with no trace of
    # the optimization history in the inner solve.
    nll, info = laplace_marginal(
        spec,
        spec.natural_from_free(xhat),
        warm=None,
        inner_tol=settings.inner_tol,
        inner_max_iter=settings.inner_max_iter,
    )
    if info is None:
        raise FitError("estimation ended in an invalid parameter region")
    obj.base_mode = info.mode.copy()

    grad_norm = float("nan")
    if p > 0:
        grad = obj.gradient(xhat)
        grad_norm = float(np.max(np.abs(grad)))
    converged = (p == 0) or (grad_norm < settings.gtol)

    theta = spec.natural_from_free(xhat)
    cov_free = None
    ses = np.full(len(spec.params), np.nan)
    if settings.se and p > 0:
        hess = _fd_hessian(obj, xhat, nll)
        cov_free = _safe_inverse(hess)
        if cov_free is not None:
            k = 0
            for i, prm in enumerate(spec.params):
                if not prm.free:
                    continue
                var = cov_free[k, k]
                if var > 0:
                    scale = _dnatural_dx(xhat[k], prm.transform)
                    ses[i] = float(np.sqrt(var) * abs(scale))
                k += 1

    omega, omega_white, eps, eps_white, gammas = _decode_modes(spec, info)
    aic = 2.0 * nll + 2.0 * p
    return FitResult(
        spec=spec,
        names=spec.param_names,
        estimates=theta.copy(),
        ses=ses,
        fixed_mask=np.array([not prm.free for prm in spec.params]),
        loglik=-nll,
        aic=aic,
        convergence={
            "converged": bool(converged),
            "iterations": iterations,
            "grad_norm": grad_norm,
            "n_evals": obj.n_evals,
            "message": message,
        },
        theta=theta,
        x_free=np.asarray(xhat, dtype=float),
        cov_free=cov_free,
        mode=info.mode,
        omega=omega,
        omega_white=omega_white,
        epsilon=eps,
        epsilon_white=eps_white,
        gammas=gammas,
        _info=info,
    )


def evaluate_fit(
    spec: ModelSpec, theta=None, settings: FitSettings | None = None
) -> FitResult:
    """Evaluate the model at fixed parameter values without optimizing.

    ``theta`` is a full natural-scale vector (defaults to the starting
    values).  The result carries the Laplace log-likelihood, AIC with the
    free-parameter count, and decoded latent modes; standard errors are
    not computed.
    """
    settings = settings or FitSettings(se=False)
    if theta is None:
        theta = spec.natural_from_free(spec.start_vector())
    theta = np.asarray(theta, dtype=float)
    x = [
        _to_unconstrained(theta[i], prm.transform)
        for i, prm in enumerate(spec.params)
        if prm.free
    ]
    xhat = np.array(x)
    nll, info = laplace_marginal(
        spec,
        theta,
        inner_tol=settings.inner_tol,
        inner_max_iter=settings.inner_max_iter,
    )
    if info is None:
        raise FitError("model evaluation failed at the given parameters")
    omega, omega_white, eps, eps_white, gammas = _decode_modes(spec, info)
    p = xhat.shape[0]
    return FitResult(
        spec=spec,
        names=spec.param_names,
        estimates=theta.copy(),
        ses=np.full(len(spec.params), np.nan),
        fixed_mask=np.array([not prm.free for prm in spec.params]),
        loglik=-nll,
        aic=2.0 * nll + 2.0 * p,
        convergence={
            "converged": True,
            "iterations": 0,
            "grad_norm": float("nan"),
            "n_evals": 1,
            "message": "evaluated at fixed parameters",
        },
        theta=theta.copy(),
        x_free=xhat,
        cov_free=None,
        mode=info.mode,
        omega=omega,
        omega_white=omega_white,
        epsilon=eps,
        epsilon_white=eps_white,
        gammas=gammas,
        _info=info,
    )


def _safe_inverse(hess: np.ndarray) -> np.ndarray | None:
    if not np.all(np.isfinite(hess)):
        return None
    try:
        return np.linalg.inv(0.5 * (hess + hess.T))
    except np.linalg.LinAlgError:
        return None


# -- prediction and derived quantities -----------------------------------


def _new_row_design(spec: ModelSpec, state: _State, df: pd.DataFrame):
    """Design pieces for new rows under the fitted bases and theta."""
    x, z, offset = spec.design.transform(df)
    var_idx, time_idx = validate_table(
        df,
        spec.variables,
        spec.variable_column,
        spec.times,
        spec.time_column,
    )
    d_parts: list[sp.spmatrix] = []
    if spec.sem_ram is not None or spec.dsem_ram is not None:
        rows = make_projector(spec.domain, spec.sample_sites(df))
        a_new = _rows_to_csr(rows, spec.n_sites)
        if spec.sem_ram is not None:
            d_parts.append(
                _field_design(
                    a_new, var_idx, spec.n_sites, spec.n_vars, state.b_sem
                )
            )
        if spec.dsem_ram is not None:
            inner = time_idx * spec.n_vars + var_idx
            d_parts.append(
                _field_design(
                    a_new,
                    inner,
                    spec.n_sites,
                    spec.n_vars * spec.n_times,
                    state.b_dsem,
                )
            )
    for bi, blk in enumerate(spec.design.smooths):
        zb = z[:, blk.start : blk.stop]
        d_parts.append(sp.csr_matrix(zb @ blk.range_basis))
    dmat = sp.hstack(d_parts, format="csr") if d_parts else None
    return x, z, offset, var_idx, time_idx, dmat


def predict(
    fit_result: FitResult, new_data: pd.DataFrame | None = None, scale: str = "link"
) -> pd.DataFrame:
    """Model predictions for new rows (training rows by default).

    ``scale`` is ``link``, ``response``, or ``component``; the component
    form returns the additive pieces of the linear predictor (fixed
    effects, smoothers, each latent field, offset) alongside both scales.
    """
    if scale not in ("link", "response", "component"):
        raise ValueError(f"unknown prediction scale {scale!r}")
    spec = fit_result.spec
    info = fit_result._info
    df = spec.data if new_data is None else new_data
    x, z, offset, var_idx, time_idx, dmat = _new_row_design(spec, info.state, df)

    alpha = fit_result.theta[spec._positions("alpha")]
    comp_fixed = x @ alpha if alpha.size else np.zeros(len(df))
    comp = {
        "fixed": np.asarray(comp_fixed, dtype=float),
        "smooth": np.zeros(len(df)),
        "omega": np.zeros(len(df)),
        "epsilon": np.zeros(len(df)),
        "offset": np.asarray(offset, dtype=float),
    }
    if dmat is not None:
        pieces = []
        if spec.sem_ram is not None:
            pieces.append(("omega", spec.n_vars * spec.n_sites))
        if spec.dsem_ram is not None:
            pieces.append(("eps", spec.n_vars * spec.n_times * spec.n_sites))
        for bi, blk in enumerate(spec.design.smooths):
            pieces.append((f"xi{bi}", blk.size - 1))
        for (name, _), part in zip(pieces, _split_columns(dmat, pieces)):
            ub = _block_mode(spec, fit_result.mode, name)
            contrib = part @ ub
            if name == "omega":
                comp["omega"] = contrib
            elif name == "eps":
                comp["epsilon"] = contrib
            else:
                comp["smooth"] += contrib
    link = (
        comp["fixed"]
        + comp["smooth"]
        + comp["omega"]
        + comp["epsilon"]
        + comp["offset"]
    )
    response = np.empty(len(df))
    for v in range(spec.n_vars):
        rows = np.nonzero(var_idx == v)[0]
        if rows.size:
            response[rows] = spec.families[v].mean(link[rows])

    out = pd.DataFrame(index=df.index)
    if scale == "link":
        out["estimate"] = link
    elif scale == "response":
        out["estimate"] = response
    else:
        out["link"] = link
        out["response"] = response
        for key, values in comp.items():
            out[key] = values
    return out


def _split_columns(dmat: sp.csr_matrix, pieces):
    parts = []
    start = 0
    csc = dmat.tocsc()
    for _, size in pieces:
        parts.append(csc[:, start : start + size].tocsr())
        start += size
    return parts


def _block_mode(spec: ModelSpec, mode: np.ndarray, name: str) -> np.ndarray:
    for bname, sl, _ in spec.u_blocks:
        if bname == name:
            return mode[sl]
    raise KeyError(name)


def residuals(fit_result: FitResult, kind: str = "deviance") -> np.ndarray:
    """Training-row residuals: ``response`` (y - mu) or ``deviance``."""
    if kind not in ("deviance", "response"):
        raise ValueError(f"unknown residual kind {kind!r}")
    spec = fit_result.spec
    info = fit_result._info
    eta = info.state.eta0
    if info.state.dmat is not None:
        eta = eta + info.state.dmat @ fit_result.mode
    out = np.empty(spec.n_obs)
    for v, rows in enumerate(spec.row_groups):
        if rows.size == 0:
            continue
        fam = spec.families[v]
        mu = fam.mean(eta[rows])
        if kind == "response":
            out[rows] = spec.y[rows] - mu
        else:
            out[rows] = fam.deviance_residuals(
                spec.y[rows], mu, info.state.disp[v]
            )
    return out


@dataclass
class IntegrateResult:
    estimate: float
    se: float
    bias_correction: str = "none"


def integrate_output(
    fit_result: FitResult, grid: pd.DataFrame, weights
) -> IntegrateResult:
    """Area-weighted total of response-scale predictions over grid rows.

    The variance combines the latent-field uncertainty at the mode (via
    the joint Hessian) with the outer-parameter uncertainty propagated by
    finite differences.  No epsilon bias correction is applied; the
    result is flagged accordingly.
    """
    spec = fit_result.spec
    weights = np.asarray(weights, dtype=float)
    if weights.shape[0] != len(grid):
        raise ValueError("weights must align with grid rows")
    if not np.all(np.isfinite(weights)):
        raise ValueError("weights must be finite")

    info = fit_result._info

    def total_for(x_free: np.ndarray, warm: np.ndarray | None):
        theta = spec.natural_from_free(x_free)
        try:
            state = _build_state(spec, theta)
        except _EvalFailed as exc:
            raise FitError(f"integration failed at perturbed theta: {exc}") from exc
        if spec.n_latent:
            u, _, _ = _inner_newton(spec, state, warm)
        else:
            u = np.zeros(0)
        x, _, offset, var_idx, _, dmat = _new_row_design(spec, state, grid)
        alpha = theta[spec._positions("alpha")]
        eta = offset + (x @ alpha if alpha.size else 0.0)
        if dmat is not None:
            eta = eta + dmat @ u
        mu = np.empty(len(grid))
        dmu = np.empty(len(grid))
        for v in range(spec.n_vars):
            rows = np.nonzero(var_idx == v)[0]
            if rows.size:
                fam = spec.families[v]
                mu[rows] = fam.mean(eta[rows])
                dmu[rows] = fam.dmean(eta[rows])
        return float(weights @ mu), dmu, dmat

    estimate, dmu, dmat = total_for(fit_result.x_free, fit_result.mode)

    var_u = 0.0
    if spec.n_latent and dmat is not None:
        a_u = dmat.T @ (weights * dmu)
        var_u = float(a_u @ fit_result._info.hfac.solve(a_u))

    var_theta = 0.0
    p = fit_result.x_free.shape[0]
    if p > 0:
        cov = fit_result.cov_free
        if cov is None:
            settings = FitSettings()
            obj = _Objective(spec, settings)
            obj.base_mode = fit_result.mode.copy()
            f0, _ = obj.evaluate(fit_result.x_free, obj.base_mode)
            cov = _safe_inverse(_fd_hessian(obj, fit_result.x_free, f0))
        if cov is not None:
            step = 1.0e-5 * np.maximum(1.0, np.abs(fit_result.x_free))
            jac = np.empty(p)
            for j in range(p):
                xp = fit_result.x_free.copy()
                xm = fit_result.x_free.copy()
                xp[j] += step[j]
                xm[j] -= step[j]
                tp, _, _ = total_for(xp, fit_result.mode)
                tm, _, _ = total_for(xm, fit_result.mode)
                jac[j] = (tp - tm) / (2.0 * step[j])
            var_theta = float(jac @ cov @ jac)
    se = float(np.sqrt(max(var_u + var_theta, 0.0)))
    return IntegrateResult(estimate=estimate, se=se)


# -- simulation -----------------------------------------------------------


def simulate_response(spec: ModelSpec, theta, rng):
    """Draw latent fields and responses at the given parameters.

    Returns (y, details) where details holds the simulated latent pieces.
    Smoother coefficients are drawn from the penalized directions of the
    improper prior; the unpenalized trend direction is left at zero.
    """
    rng = np.random.default_rng(rng)
    theta = np.asarray(theta, dtype=float)
    try:
        state = _build_state(spec, theta)
    except _EvalFailed as exc:
        raise FitError(f"cannot simulate at these parameters: {exc}") from exc

    u = np.zeros(spec.n_latent)
    details: dict[str, np.ndarray] = {}
    lambda_pos = spec._positions("lambda")
    for name, sl, m in spec.u_blocks:
        if name == "omega":
            values = gmrf_sample(state.sem_inner, state.q_spatial, rng)
            u[sl] = values.ravel(order="F")
            details["omega_white"] = values
        elif name == "eps":
            values = gmrf_sample(state.dsem_inner, state.q_spatial, rng)
            u[sl] = values.ravel(order="F")
            details["epsilon_white"] = values
        else:
            bi = int(name[2:])
            lam = theta[lambda_pos[bi]]
            pen = spec.reduced_penalties[bi]
            evals, evecs = np.linalg.eigh(pen)
            keep = evals > 1.0e-10 * max(float(evals.max()), 1.0)
            z = rng.standard_normal(int(keep.sum()))
            xi = evecs[:, keep] @ (z / np.sqrt(lam * evals[keep]))
            u[sl] = xi
            details[f"gamma:{spec.design.smooths[bi].name}"] = (
                spec.design.smooths[bi].range_basis @ xi
            )

    eta = state.eta0 if state.dmat is None else state.eta0 + state.dmat @ u
    y = np.empty(spec.n_obs)
    for v, rows in enumerate(spec.row_groups):
        if rows.size == 0:
            continue
        fam = spec.families[v]
        y[rows] = fam.sample(rng, eta[rows], state.disp[v])
    details["eta"] = eta
    details["u"] = u
    return y, details


# -- spec construction ----------------------------------------------------


def _normalize_family(value) -> Family:
    if isinstance(value, Family):
        return value
    if isinstance(value, str):
        return make_family(value)
    if isinstance(value, dict):
        return make_family(value.get("distribution"), value.get("link"))
    raise ConfigError(f"cannot interpret family specification {value!r}")


def make_spec(
    data: pd.DataFrame,
    formula: str,
    variables=None,
    times=None,
    family="gaussian",
    sem: str | RamModel | None = None,
    dsem: str | RamModel | None = None,
    domain=None,
    variable_column: str | None = None,
    time_column: str | None = None,
    space_columns=None,
    transforms: dict[str, str] | None = None,
    fixed: dict[str, float] | None = None,
    projection: dict[str, bool] | None = None,
) -> ModelSpec:
    """Validate and bind a model description to a data table.

    Parameters
    ----------
    data : pandas.DataFrame
        Long-format observations: one response row per variable, site,
        and time.
    formula : str
        Fixed-effect formula, e.g. ``"y ~ 1 + factor(var) + s(x, 9)"``.
    variables, times : sequences
        Declared structural variable names and (optionally) the ordered
        time values.  Defaults to a single variable named after the
        response, and no time dimension.
    family : str, Family, or dict
        One family for every variable or a mapping from variable name to
        family (string, Family, or {distribution, link} dict).
    sem, dsem : str or RamModel
        Structural model text (or an already parsed model); ``sem`` is
        time invariant, ``dsem`` uses arrow-and-lag notation across the
        declared times.
    domain : spatial domain, optional
        Required with sem/dsem unless the model is single-site.
    transforms, fixed : dict, optional
        Per-parameter overrides: transform kind, or a fixed natural value.
    projection : dict, optional
        Force (or forbid) the rank-deficient projection per block, e.g.
        ``{"sem": True}``.  By default projection is used exactly when the
        structural model has a variance fixed at zero.
    """
    if not isinstance(data, pd.DataFrame):
        raise ConfigError("data must be a pandas DataFrame")
    design = build_design(formula, data)

    if variables is None:
        variables = (design.response,)
    variables = tuple(str(v) for v in variables)
    times_t = tuple(times) if times is not None else None

    var_idx, time_idx = validate_table(
        data, variables, variable_column, times_t, time_column
    )

    if isinstance(family, dict) and set(family) & set(variables):
        fams = []
        for v in variables:
            if v not in family:
                raise ConfigError(f"no family given for variable {v!r}")
            fams.append(_normalize_family(family[v]))
        families = tuple(fams)
    else:
        one = _normalize_family(family)
        families = tuple(one for _ in variables)

    sem_ram = parse_sem(sem, variables) if isinstance(sem, str) else sem
    dsem_ram = parse_dsem(dsem, variables) if isinstance(dsem, str) else dsem
    if sem_ram is not None and tuple(sem_ram.variables) != variables:
        raise ConfigError("sem variables do not match the declared variables")
    if dsem_ram is not None and tuple(dsem_ram.variables) != variables:
        raise ConfigError("dsem variables do not match the declared variables")
    if dsem_ram is not None:
        if times_t is None:
            raise ConfigError("dsem needs declared times")
        if len(times_t) < dsem_ram.max_lag + 1:
            raise ConfigError(
                f"dsem has lag {dsem_ram.max_lag}; needs at least "
                f"{dsem_ram.max_lag + 1} declared times"
            )

    if (sem_ram is not None or dsem_ram is not None) and domain is None:
        domain = SingleSiteDomain()
    if domain is not None and sem_ram is None and dsem_ram is None:
        raise ConfigError(
            "a spatial domain requires a structural model; pass sem=\"\" "
            "for independent unit-variance fields"
        )

    space_cols: tuple[str, ...] | None = None
    if domain is not None and not isinstance(domain, SingleSiteDomain):
        if domain.kind == "mesh":
            if space_columns is None or len(space_columns) != 2:
                raise ConfigError("a mesh domain needs two coordinate columns")
        else:
            if space_columns is None or len(space_columns) != 1:
                raise ConfigError(
                    f"a {domain.kind} domain needs one site id column"
                )
        space_cols = tuple(space_columns)
    elif space_columns:
        space_cols = tuple(space_columns)

    spec = ModelSpec(
        data=data,
        design=design,
        variables=variables,
        times=times_t,
        families=families,
        domain=domain,
        sem_ram=sem_ram,
        dsem_ram=dsem_ram,
        var_idx=var_idx,
        time_idx=time_idx,
        a_mat=sp.csr_matrix((len(data), domain.n_sites if domain else 0)),
        sem_projected=False,
        dsem_projected=False,
        variable_column=variable_column,
        time_column=time_column,
        space_columns=space_cols,
    )

    if domain is not None:
        rows = make_projector(domain, spec.sample_sites(data))
        spec.a_mat = _rows_to_csr(rows, domain.n_sites)

    proj = dict(projection or {})
    unknown = set(proj) - {"sem", "dsem"}
    if unknown:
        raise ConfigError(f"unknown projection key(s) {sorted(unknown)}")
    spec.sem_projected = bool(
        proj.get("sem", sem_ram.rank_deficient if sem_ram else False)
    )
    spec.dsem_projected = bool(
        proj.get("dsem", dsem_ram.rank_deficient if dsem_ram else False)
    )
    if sem_ram is not None and sem_ram.rank_deficient and not spec.sem_projected:
        raise ConfigError(
            "sem is rank deficient; projection cannot be disabled for it"
        )
    if (
        dsem_ram is not None
        and dsem_ram.rank_deficient
        and not spec.dsem_projected
    ):
        raise ConfigError(
            "dsem is rank deficient; projection cannot be disabled for it"
        )

    for name, kind in (transforms or {}).items():
        if kind not in _TRANSFORMS:
            raise ConfigError(
                f"unknown transform {kind!r} (choose from {_TRANSFORMS})"
            )
        spec.params[spec.param_position(name)].transform = kind
    for name, value in (fixed or {}).items():
        info = spec.params[spec.param_position(name)]
        info.fixed_value = float(value)

    # Transform domains must contain the starting (and fixed) values.
    for prm in spec.params:
        value = prm.fixed_value if prm.fixed_value is not None else prm.start
        _to_unconstrained(value, prm.transform)

    return spec
