"""Spatial domain oracles: finite elements, SAR, stream trees, projection."""

import numpy as np
import pytest
import scipy.sparse as sp

from helpers import grid_mesh
from stgm import (
    ArealDomain,
    DomainError,
    MeshDomain,
    SingleSiteDomain,
    StreamDomain,
    build_mesh_precision,
    build_sar_precision,
    build_stream_precision,
    make_projector,
    read_areal,
    read_mesh,
    read_stream,
)


def test_single_triangle_fem_oracle():
    # Unit right triangle: area 1/2, lumped mass 1/6 per vertex, stiffness
    # from the linear basis gradients.
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    tris = np.array([[0, 1, 2]])
    mesh = MeshDomain(pts, tris)
    k_expect = np.array([[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]])
    np.testing.assert_allclose(mesh._mass, np.full(3, 1.0 / 6.0), atol=1e-15)
    np.testing.assert_allclose(mesh._stiff.toarray(), k_expect, atol=1e-15)
    # With C diagonal, K C^{-1} K = 6 K K here (kappa = 1).
    q = build_mesh_precision(mesh, 1.0).toarray()
    expect = np.diag(mesh._mass) + 2.0 * k_expect + 6.0 * (k_expect @ k_expect)
    np.testing.assert_allclose(q, expect, atol=1e-14)


def test_mesh_precision_is_spd_and_kappa_monotone():
    mesh = grid_mesh(4, 4)
    for kappa in (0.3, 1.0, 2.5):
        q = build_mesh_precision(mesh, kappa).toarray()
        np.testing.assert_allclose(q, q.T, atol=1e-12)
        assert np.linalg.eigvalsh(q).min() > 0
    # Larger kappa means shorter range: variance at a node drops.
    v_small = np.linalg.inv(build_mesh_precision(mesh, 0.5).toarray())[5, 5]
    v_large = np.linalg.inv(build_mesh_precision(mesh, 3.0).toarray())[5, 5]
    assert v_large < v_small


def test_mesh_rejects_degenerate_and_orphan():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    with pytest.raises(DomainError, match="degenerate"):
        MeshDomain(pts, np.array([[0, 1, 2]]))
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [5.0, 5.0]])
    with pytest.raises(DomainError, match="no triangle"):
        MeshDomain(pts, np.array([[0, 1, 2]]))


def test_sar_two_node_oracle():
    adj = sp.coo_matrix((np.ones(1), ([0], [1])), shape=(2, 2))
    dom = ArealDomain(adj)
    q = build_sar_precision(dom, 0.5).toarray()
    np.testing.assert_allclose(q, [[1.25, -1.0], [-1.0, 1.25]], atol=1e-14)


def test_sar_rho_bounds_and_sd():
    dom = ArealDomain(sp.coo_matrix((np.ones(1), ([0], [1])), shape=(2, 2)))
    with pytest.raises(DomainError, match="rho"):
        build_sar_precision(dom, 1.0)
    q1 = build_sar_precision(dom, 0.3).toarray()
    q2 = build_sar_precision(dom, 0.3, sd=2.0).toarray()
    np.testing.assert_allclose(q2, q1 / 4.0, atol=1e-14)


def test_areal_adjacency_is_symmetrized_and_row_normalized():
    # A one-way edge list still yields symmetric neighbourhood weights.
    adj = sp.coo_matrix(
        (np.ones(2), ([0, 1], [1, 2])), shape=(3, 3)
    )
    dom = ArealDomain(adj)
    w = dom.weights.toarray()
    np.testing.assert_allclose(w.sum(axis=1), [1.0, 1.0, 1.0])
    assert w[1, 0] == w[1, 2] == 0.5


def test_stream_chain_oracle():
    # Three-node chain with exp(-theta d) = 1/2 per edge.
    dom = StreamDomain(
        parent=np.array([-1, 0, 1]), distance=np.array([0.0, 1.0, 1.0])
    )
    theta = np.log(2.0)
    q = build_stream_precision(dom, theta).toarray()
    expect = np.array(
        [
            [4.0 / 3.0, -2.0 / 3.0, 0.0],
            [-2.0 / 3.0, 5.0 / 3.0, -2.0 / 3.0],
            [0.0, -2.0 / 3.0, 4.0 / 3.0],
        ]
    )
    np.testing.assert_allclose(q, expect, atol=1e-12)
    cov = np.linalg.inv(q)
    # Stationary unit variance with correlation halving per edge.
    np.testing.assert_allclose(np.diag(cov), [1.0, 1.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(cov[0, 1], 0.5, atol=1e-12)
    np.testing.assert_allclose(cov[0, 2], 0.25, atol=1e-12)


def test_stream_rejects_cycles_and_bad_edges():
    with pytest.raises(DomainError, match="root"):
        StreamDomain(np.array([1, 0]), np.array([1.0, 1.0]))
    with pytest.raises(DomainError, match="cycle"):
        StreamDomain(np.array([-1, 2, 1]), np.array([0.0, 1.0, 1.0]))
    with pytest.raises(DomainError, match="own parent"):
        StreamDomain(np.array([-1, 1]), np.array([0.0, 1.0]))
    with pytest.raises(DomainError, match="positive"):
        StreamDomain(np.array([-1, 0]), np.array([0.0, 0.0]))


def test_single_site_domain():
    dom = SingleSiteDomain()
    assert dom.n_sites == 1
    np.testing.assert_allclose(dom.precision().toarray(), [[1.0]])


def test_mesh_projector_barycentric():
    mesh = grid_mesh(3, 3)
    rows = make_projector(mesh, np.array([[1.0, 1.0], [0.5, 0.25]]))
    # A vertex query collapses to a single unit weight.
    assert rows[0].entries == ((4, 1.0),)
    entries = dict(rows[1].entries)
    assert abs(sum(entries.values()) - 1.0) < 1e-12
    # Interpolation of the coordinate functions must reproduce the point.
    x = sum(w * mesh.points[n, 0] for n, w in entries.items())
    y = sum(w * mesh.points[n, 1] for n, w in entries.items())
    assert abs(x - 0.5) < 1e-12 and abs(y - 0.25) < 1e-12


def test_mesh_projector_outside_raises():
    mesh = grid_mesh(3, 3)
    with pytest.raises(DomainError, match="outside the mesh"):
        make_projector(mesh, np.array([[10.0, 10.0]]))


def test_id_projector_validation():
    dom = StreamDomain(np.array([-1, 0]), np.array([0.0, 1.0]))
    rows = make_projector(dom, np.array([1, 0, 1]))
    assert rows[0].entries == ((1, 1.0),)
    with pytest.raises(DomainError, match="out of range"):
        make_projector(dom, np.array([2]))
    with pytest.raises(DomainError, match="integers"):
        make_projector(dom, np.array([0.5]))


def test_read_mesh_round_trip(tmp_path):
    mesh = grid_mesh(3, 2)
    path = tmp_path / "mesh.txt"
    lines = [f"{mesh.n_sites} {len(mesh.triangles)}"]
    lines += [f"{x} {y}" for x, y in mesh.points]
    lines += [f"{a} {b} {c}" for a, b, c in mesh.triangles]
    path.write_text("\n".join(lines) + "\n")
    loaded = read_mesh(path)
    np.testing.assert_allclose(loaded.points, mesh.points)
    q1 = build_mesh_precision(loaded, 1.3).toarray()
    q2 = build_mesh_precision(mesh, 1.3).toarray()
    np.testing.assert_allclose(q1, q2, atol=1e-14)


def test_read_mesh_token_count_checked(tmp_path):
    path = tmp_path / "mesh.txt"
    path.write_text("2 1\n0 0\n1 0\n")
    with pytest.raises(DomainError, match="expected"):
        read_mesh(path)


def test_read_areal(tmp_path):
    path = tmp_path / "graph.txt"
    path.write_text("# chain\n0 1\n1 2\n")
    dom = read_areal(path)
    assert dom.n_sites == 3
    with pytest.raises(DomainError, match="self edge"):
        (tmp_path / "bad.txt").write_text("0 0\n")
        read_areal(tmp_path / "bad.txt")


def test_read_stream(tmp_path):
    path = tmp_path / "net.txt"
    path.write_text("0 -1 0\n1 0 2.5\n2 0 1.0\n")
    dom = read_stream(path)
    assert dom.n_sites == 3 and dom.parent[0] == -1
    bad = tmp_path / "gap.txt"
    bad.write_text("0 -1 0\n2 0 1.0\n")
    with pytest.raises(DomainError, match="node ids"):
        read_stream(bad)
