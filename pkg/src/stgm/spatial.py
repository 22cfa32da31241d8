"""Spatial correlation domains and their sparse precision builders.

Four kinds of domain are supported:

* triangle mesh: a Matern-like field built from finite element matrices,
  with precision kappa^4 C + 2 kappa^2 K + K C^{-1} K (C the lumped mass
  matrix, K the stiffness matrix);
* areal graph: a simultaneous autoregression on a symmetrized,
  row-normalized adjacency, with precision (I - rho W)^T (I - rho W);
* stream network: an exponential-decay process on a rooted tree, where a
  child is Gaussian around exp(-theta d) times its parent with stationary
  unit marginal variance;
* single site: the trivial one-node domain with precision [[1]].

Each domain exposes ``n_sites``, a ``precision(value)`` builder taking its
natural-scale decorrelation parameter, and enough metadata for estimation
(parameter name, transform to an unconstrained scale, starting value).
Interpolation from sample coordinates to nodes goes through projector rows
of (node, weight) pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DomainError
from .sparse import SparseSymMatrix

__all__ = [
    "ProjectorRow",
    "MeshDomain",
    "ArealDomain",
    "StreamDomain",
    "SingleSiteDomain",
    "read_mesh",
    "read_areal",
    "read_stream",
    "build_mesh_precision",
    "build_sar_precision",
    "build_stream_precision",
    "make_projector",
]


@dataclass(frozen=True)
class ProjectorRow:
    """Sparse interpolation weights: ((node, weight), ...)."""

    entries: tuple[tuple[int, float], ...]


class MeshDomain:
    """Triangulated 2-d domain with precomputed finite element matrices."""

    kind = "mesh"
    param_name = "kappa"
    param_transform = "log"
    param_start = 1.0

    def __init__(self, points: np.ndarray, triangles: np.ndarray):
        points = np.asarray(points, dtype=float)
        triangles = np.asarray(triangles, dtype=int)
        if points.ndim != 2 or points.shape[1] != 2:
            raise DomainError("mesh points must be an (V, 2) array")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise DomainError("mesh triangles must be an (M, 3) array")
        n = points.shape[0]
        if triangles.size and (triangles.min() < 0 or triangles.max() >= n):
            raise DomainError("triangle vertex index out of range")
        self.points = points
        self.triangles = triangles
        self._mass, self._stiff = _fem_matrices(points, triangles)
        inv_c = sp.diags(1.0 / self._mass)
        self._kq = (self._stiff @ inv_c @ self._stiff).tocsc()

    @property
    def n_sites(self) -> int:
        return self.points.shape[0]

    def precision(self, kappa: float) -> SparseSymMatrix:
        return build_mesh_precision(self, kappa)

    def node_frame_columns(self) -> dict[str, np.ndarray]:
        return {"x": self.points[:, 0].copy(), "y": self.points[:, 1].copy()}


class ArealDomain:
    """Neighbourhood graph with a row-normalized adjacency matrix."""

    kind = "areal"
    param_name = "rho"
    param_transform = "logit11"
    param_start = 0.0

    def __init__(self, adjacency: sp.spmatrix):
        adjacency = sp.csr_matrix(adjacency)
        if adjacency.shape[0] != adjacency.shape[1]:
            raise DomainError("adjacency must be square")
        adjacency = ((adjacency + adjacency.T) > 0).astype(float)
        adjacency.setdiag(0.0)
        adjacency.eliminate_zeros()
        degree = np.asarray(adjacency.sum(axis=1)).ravel()
        scale = np.divide(1.0, degree, out=np.zeros_like(degree), where=degree > 0)
        self.weights = (sp.diags(scale) @ adjacency).tocsr()

    @property
    def n_sites(self) -> int:
        return self.weights.shape[0]

    def precision(self, rho: float) -> SparseSymMatrix:
        return build_sar_precision(self, rho)

    def node_frame_columns(self) -> dict[str, np.ndarray]:
        return {"site": np.arange(self.n_sites)}


class StreamDomain:
    """Rooted tree with downstream distances on edges."""

    kind = "stream"
    param_name = "theta"
    param_transform = "log"
    param_start = 1.0

    def __init__(self, parent: np.ndarray, distance: np.ndarray):
        parent = np.asarray(parent, dtype=int)
        distance = np.asarray(distance, dtype=float)
        n = parent.shape[0]
        if distance.shape[0] != n:
            raise DomainError("parent and distance must have equal length")
        roots = parent < 0
        if not roots.any():
            raise DomainError("stream network has no root node")
        if np.any(parent >= n):
            raise DomainError("parent index out of range")
        if np.any(parent == np.arange(n)):
            raise DomainError("a node cannot be its own parent")
        if np.any(distance[~roots] <= 0):
            raise DomainError("edge distances must be positive")
        # Walk up from every node; revisiting a node on one walk is a cycle.
        state = np.zeros(n, dtype=int)  # 0 unseen, 1 on path, 2 done
        for start in range(n):
            path = []
            node = start
            while node >= 0 and state[node] == 0:
                state[node] = 1
                path.append(node)
                node = parent[node]
            if node >= 0 and state[node] == 1:
                raise DomainError(f"stream network has a cycle through node {node}")
            for visited in path:
                state[visited] = 2
        self.parent = parent
        self.distance = distance

    @property
    def n_sites(self) -> int:
        return self.parent.shape[0]

    def precision(self, theta: float) -> SparseSymMatrix:
        return build_stream_precision(self, theta)

    def node_frame_columns(self) -> dict[str, np.ndarray]:
        return {"site": np.arange(self.n_sites)}


class SingleSiteDomain:
    """Degenerate one-node domain used for purely temporal models."""

    kind = "single"
    param_name = None
    param_transform = None
    param_start = None

    @property
    def n_sites(self) -> int:
        return 1

    def precision(self, value: float = 1.0) -> SparseSymMatrix:
        return SparseSymMatrix(sp.identity(1, format="csc"))

    def node_frame_columns(self) -> dict[str, np.ndarray]:
        return {"site": np.zeros(1, dtype=int)}


def _fem_matrices(points: np.ndarray, triangles: np.ndarray):
    """Lumped mass vector and stiffness matrix of a linear FEM basis."""
    n = points.shape[0]
    mass = np.zeros(n)
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    for t, tri in enumerate(triangles):
        p = points[tri]
        d1 = p[1] - p[0]
        d2 = p[2] - p[0]
        area = 0.5 * abs(d1[0] * d2[1] - d1[1] * d2[0])
        if area < 1e-12:
            raise DomainError(f"triangle {t} is degenerate (area {area:.3e})")
        mass[tri] += area / 3.0
        # Gradient coefficients of the linear basis on this triangle.
        b = np.array([p[1, 1] - p[2, 1], p[2, 1] - p[0, 1], p[0, 1] - p[1, 1]])
        c = np.array([p[2, 0] - p[1, 0], p[0, 0] - p[2, 0], p[1, 0] - p[0, 0]])
        local = (np.outer(b, b) + np.outer(c, c)) / (4.0 * area)
        for a in range(3):
            for bb in range(3):
                rows.append(tri[a])
                cols.append(tri[bb])
                vals.append(local[a, bb])
    if np.any(mass <= 0):
        orphan = int(np.argmin(mass))
        raise DomainError(f"vertex {orphan} belongs to no triangle")
    stiff = sp.csc_matrix((vals, (rows, cols)), shape=(n, n))
    return mass, stiff


def build_mesh_precision(mesh: MeshDomain, kappa: float) -> SparseSymMatrix:
    """SPDE-style precision kappa^4 C + 2 kappa^2 K + K C^{-1} K."""
    if not np.isfinite(kappa) or kappa <= 0:
        raise DomainError(f"kappa must be positive, got {kappa!r}")
    k2 = kappa * kappa
    q = (
        sp.diags(k2 * k2 * mesh._mass)
        + 2.0 * k2 * mesh._stiff
        + mesh._kq
    ).tocsc()
    return SparseSymMatrix(q)


def build_sar_precision(
    domain: ArealDomain, rho: float, sd: float = 1.0
) -> SparseSymMatrix:
    """Simultaneous autoregression precision (I - rho W)^T (I - rho W) / sd^2."""
    if not np.isfinite(rho) or abs(rho) >= 1.0:
        raise DomainError(f"rho must lie in (-1, 1), got {rho!r}")
    if sd <= 0:
        raise DomainError("sd must be positive")
    n = domain.n_sites
    b = (sp.identity(n, format="csr") - rho * domain.weights).tocsc()
    return SparseSymMatrix((b.T @ b).tocsc() / (sd * sd))


def build_stream_precision(domain: StreamDomain, theta: float) -> SparseSymMatrix:
    """Precision of the unit-variance decay process on a rooted tree.

    Conditional on its parent, node i is Gaussian with mean
    exp(-theta d_i) parent and variance 1 - exp(-2 theta d_i); roots are
    standard normal.
    """
    if not np.isfinite(theta) or theta <= 0:
        raise DomainError(f"theta must be positive, got {theta!r}")
    n = domain.n_sites
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []

    def add(i: int, j: int, v: float) -> None:
        rows.append(i)
        cols.append(j)
        vals.append(v)

    for i in range(n):
        p = domain.parent[i]
        if p < 0:
            add(i, i, 1.0)
            continue
        a = np.exp(-theta * domain.distance[i])
        v = 1.0 - a * a
        if v <= 0:
            raise DomainError("decay parameter too small for edge distance")
        add(i, i, 1.0 / v)
        add(i, p, -a / v)
        add(p, i, -a / v)
        add(p, p, a * a / v)
    q = sp.csc_matrix((vals, (rows, cols)), shape=(n, n))
    return SparseSymMatrix(q)


def read_mesh(path) -> MeshDomain:
    """Read a mesh file: header `V M`, V lines `x y`, M lines `i j k`."""
    with open(path) as fh:
        tokens = fh.read().split()
    if len(tokens) < 2:
        raise DomainError(f"{path}: truncated mesh file")
    try:
        n_pts, n_tri = int(tokens[0]), int(tokens[1])
        need = 2 + 2 * n_pts + 3 * n_tri
        if len(tokens) != need:
            raise DomainError(
                f"{path}: expected {need} numbers, found {len(tokens)}"
            )
        flat = np.array(tokens[2 : 2 + 2 * n_pts], dtype=float)
        points = flat.reshape(n_pts, 2)
        tri = np.array(tokens[2 + 2 * n_pts :], dtype=int).reshape(n_tri, 3)
    except ValueError as exc:
        raise DomainError(f"{path}: malformed mesh file ({exc})") from exc
    return MeshDomain(points, tri)


def read_areal(path) -> ArealDomain:
    """Read an areal edge list, one `i j` pair per line (0-based)."""
    edges = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DomainError(f"{path}:{lineno}: expected `i j`")
            try:
                i, j = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise DomainError(f"{path}:{lineno}: bad node index") from exc
            if i < 0 or j < 0:
                raise DomainError(f"{path}:{lineno}: negative node index")
            if i == j:
                raise DomainError(f"{path}:{lineno}: self edge {i}")
            edges.append((i, j))
    if not edges:
        raise DomainError(f"{path}: no edges")
    n = max(max(i, j) for i, j in edges) + 1
    rows = [e[0] for e in edges]
    cols = [e[1] for e in edges]
    adj = sp.csr_matrix((np.ones(len(edges)), (rows, cols)), shape=(n, n))
    return ArealDomain(adj)


def read_stream(path) -> StreamDomain:
    """Read a stream network: one `node parent distance` triple per line."""
    entries = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise DomainError(
                    f"{path}:{lineno}: expected `node parent distance`"
                )
            try:
                node, parent = int(parts[0]), int(parts[1])
                dist = float(parts[2])
            except ValueError as exc:
                raise DomainError(f"{path}:{lineno}: malformed entry") from exc
            if node in entries:
                raise DomainError(f"{path}:{lineno}: duplicate node {node}")
            entries[node] = (parent, dist)
    if not entries:
        raise DomainError(f"{path}: empty stream file")
    n = len(entries)
    if set(entries) != set(range(n)):
        raise DomainError(f"{path}: node ids must be 0..{n - 1}")
    parent = np.array([entries[i][0] for i in range(n)], dtype=int)
    dist = np.array([entries[i][1] for i in range(n)], dtype=float)
    return StreamDomain(parent, dist)


def _locate_in_mesh(mesh: MeshDomain, xy: np.ndarray, label: str) -> ProjectorRow:
    tri = mesh.triangles
    p0 = mesh.points[tri[:, 0]]
    p1 = mesh.points[tri[:, 1]]
    p2 = mesh.points[tri[:, 2]]
    d = (p1[:, 1] - p2[:, 1]) * (p0[:, 0] - p2[:, 0]) + (
        p2[:, 0] - p1[:, 0]
    ) * (p0[:, 1] - p2[:, 1])
    l1 = (
        (p1[:, 1] - p2[:, 1]) * (xy[0] - p2[:, 0])
        + (p2[:, 0] - p1[:, 0]) * (xy[1] - p2[:, 1])
    ) / d
    l2 = (
        (p2[:, 1] - p0[:, 1]) * (xy[0] - p2[:, 0])
        + (p0[:, 0] - p2[:, 0]) * (xy[1] - p2[:, 1])
    ) / d
    l3 = 1.0 - l1 - l2
    eps = 1e-9
    inside = (l1 >= -eps) & (l2 >= -eps) & (l3 >= -eps)
    hits = np.nonzero(inside)[0]
    if hits.size == 0:
        raise DomainError(
            f"{label}: point ({xy[0]:g}, {xy[1]:g}) is outside the mesh"
        )
    t = int(hits[0])
    w = np.clip(np.array([l1[t], l2[t], l3[t]]), 0.0, None)
    w = w / w.sum()
    entries = tuple(
        (int(node), float(weight))
        for node, weight in zip(tri[t], w)
        if weight > 1e-12
    )
    return ProjectorRow(entries=entries)


def make_projector(domain, samples) -> list[ProjectorRow]:
    """Build one projector row per sample.

    For a mesh, `samples` is an (I, 2) coordinate array and each row holds
    barycentric weights of the enclosing triangle (a query at a vertex
    yields that single node with weight 1).  For areal and stream domains,
    `samples` is a vector of integer node ids.  A single-site domain maps
    every sample to node 0.
    """
    if isinstance(domain, SingleSiteDomain):
        n = len(samples)
        return [ProjectorRow(entries=((0, 1.0),)) for _ in range(n)]
    if isinstance(domain, MeshDomain):
        pts = np.asarray(samples, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise DomainError("mesh samples must be an (I, 2) coordinate array")
        return [
            _locate_in_mesh(domain, pts[i], f"sample {i}")
            for i in range(pts.shape[0])
        ]
    ids = np.asarray(samples)
    if ids.ndim != 1:
        raise DomainError("samples must be a vector of node ids")
    if not np.issubdtype(ids.dtype, np.number):
        raise DomainError("samples must be integer node ids")
    as_int = ids.astype(int)
    if np.any(as_int != ids):
        raise DomainError("site ids must be integers")
    rows = []
    for i, node in enumerate(as_int):
        if node < 0 or node >= domain.n_sites:
            raise DomainError(
                f"sample {i}: site id {node} out of range 0..{domain.n_sites - 1}"
            )
        rows.append(ProjectorRow(entries=((int(node), 1.0),)))
    return rows
