"""Separable field identities checked against dense Kronecker algebra.

The joint precision of a field with values V (sites by inner index) is
kron(Q_inner, Q_spatial) acting on vec(V) with the site index fastest.
"""

import numpy as np
import scipy.sparse as sp

from helpers import chain_graph, grid_mesh
from stgm import (
    ProjectorRow,
    SeparableField,
    SparseSymMatrix,
    assemble_ram,
    build_sar_precision,
    field_values,
    gmrf_logpdf,
    gmrf_sample,
    parse_dsem,
    precision_from_ram,
    projection_matrix,
    read_field,
)


def _inner_precision(n_vars, n_times, seed):
    rng = np.random.default_rng(seed)
    variables = [f"v{i}" for i in range(n_vars)]
    lines = []
    if n_times > 1:
        for i in range(n_vars):
            lines.append(f"v{i} -> v{i}, 1, r{i}")
    if n_vars > 1:
        lines.append("v0 -> v1, 0, b01")
    ram = parse_dsem("\n".join(lines) + "\n", variables)
    theta = [
        rng.uniform(0.6, 1.4) if ram.is_sd_param(p) else rng.uniform(-0.4, 0.4)
        for p in ram.param_names
    ]
    return precision_from_ram(assemble_ram(ram, theta, n_times=n_times))


def _spatial_precision(s, seed):
    if s == 1:
        return SparseSymMatrix(sp.identity(1, format="csc"))
    return build_sar_precision(chain_graph(s), 0.4 + 0.01 * seed)


def test_logpdf_matches_dense_all_small_shapes():
    rng = np.random.default_rng(3)
    for s in (1, 2, 4):
        for c in (1, 2):
            for t in (1, 2):
                qs = _spatial_precision(s, s)
                qi = _inner_precision(c, t, 10 * c + t)
                m = c * t
                v = rng.standard_normal((s, m))
                fld = SeparableField(qi, qs, v, False, None, c)
                got = gmrf_logpdf(fld)
                q_dense = np.kron(qi.toarray(), qs.toarray())
                x = v.ravel(order="F")
                sign, ld = np.linalg.slogdet(q_dense)
                assert sign > 0
                expect = 0.5 * (
                    ld - x @ q_dense @ x - s * m * np.log(2.0 * np.pi)
                )
                assert abs(got - expect) < 1e-8


def test_logdet_identity():
    qs = _spatial_precision(5, 2)
    qi = _inner_precision(2, 3, 9)
    ld_joint = 6 * qs.logdet() + 5 * qi.logdet()
    dense = np.kron(qi.toarray(), qs.toarray())
    _, ld_expect = np.linalg.slogdet(dense)
    assert abs(ld_joint - ld_expect) < 1e-9


def test_sample_map_reproduces_covariance_exactly():
    # Feeding unit vectors through the two-factor unwhitening (the map used
    # by gmrf_sample) gives a square root of the joint covariance; no Monte
    # Carlo needed.
    qs = _spatial_precision(3, 1)
    qi = _inner_precision(2, 2, 4)
    s, m = 3, 4
    cols = []
    for k in range(s * m):
        z = np.zeros((s, m))
        z[k % s, k // s] = 1.0  # vec with site fastest
        x = qi.unwhiten(qs.unwhiten(z).T).T
        cols.append(x.ravel(order="F"))
    b = np.column_stack(cols)
    cov = b @ b.T
    expect = np.linalg.inv(np.kron(qi.toarray(), qs.toarray()))
    assert np.max(np.abs(cov - expect)) < 1e-10


def test_sample_seed_reproducible():
    qs = _spatial_precision(3, 1)
    qi = _inner_precision(2, 1, 4)
    a = gmrf_sample(qi, qs, 123)
    b = gmrf_sample(qi, qs, np.random.default_rng(123))
    np.testing.assert_array_equal(a, b)
    assert a.shape == (3, 2)


def test_sample_moments():
    qs = _spatial_precision(2, 1)
    qi = _inner_precision(1, 1, 5)
    rng = np.random.default_rng(11)
    draws = np.stack(
        [gmrf_sample(qi, qs, rng).ravel(order="F") for _ in range(4000)]
    )
    cov = np.cov(draws.T)
    expect = np.linalg.inv(np.kron(qi.toarray(), qs.toarray()))
    assert np.max(np.abs(cov - expect)) < 0.15


def test_projected_field_values():
    ram = parse_dsem(
        "F -> X, 0, NA, 1\nF -> X, 1, rho\nX <-> X, 0, NA, 0\n", ["F", "X"]
    )
    m = assemble_ram(ram, [0.5, 1.0], n_times=2)
    b = projection_matrix(m)
    qs = _spatial_precision(3, 1)
    qi = SparseSymMatrix(sp.identity(m.n, format="csc"))
    white = np.arange(12.0).reshape(3, 4)
    fld = SeparableField(qi, qs, white, True, b, 2)
    vals = field_values(fld)
    np.testing.assert_allclose(vals, white @ b.toarray().T, atol=1e-12)
    # read_field addresses the projected value by (variable, time).
    row = ProjectorRow(entries=((1, 0.5), (2, 0.5)))
    got = read_field(fld, (1, 1), row)
    expect = 0.5 * vals[1, 1 * 2 + 1] + 0.5 * vals[2, 1 * 2 + 1]
    assert abs(got - expect) < 1e-12


def test_read_field_plain_indexing():
    qs = _spatial_precision(2, 1)
    qi = _inner_precision(2, 1, 6)
    v = np.array([[1.0, 2.0], [3.0, 4.0]])
    fld = SeparableField(qi, qs, v, False, None, 2)
    row = ProjectorRow(entries=((1, 1.0),))
    assert read_field(fld, (0, 0), row) == 3.0
    assert read_field(fld, 1, row) == 4.0


def test_mesh_spatial_factor_round_trip():
    # Unwhitening with identity inner precision must invert the spatial factor.
    mesh = grid_mesh(3, 3)
    qs = mesh.precision(1.2)
    z = np.random.default_rng(0).standard_normal((9, 2))
    x = qs.unwhiten(z)
    fac = qs.factor()
    # x has covariance Q^{-1} per column when z is white.
    b = np.column_stack([qs.unwhiten(col[:, None]).ravel() for col in np.eye(9)])
    np.testing.assert_allclose(
        b @ b.T, np.linalg.inv(qs.toarray()), atol=1e-10
    )
    assert x.shape == (9, 2) and fac.n == 9
