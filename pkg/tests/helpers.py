"""Small builders shared across test modules."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from stgm import ArealDomain, MeshDomain


def grid_mesh(nx: int, ny: int, spacing: float = 1.0) -> MeshDomain:
    """Regular triangulated grid with nx*ny vertices, two triangles per cell."""
    xs, ys = np.meshgrid(np.arange(nx, dtype=float), np.arange(ny, dtype=float))
    points = np.column_stack([xs.ravel() * spacing, ys.ravel() * spacing])
    tris = []
    for j in range(ny - 1):
        for i in range(nx - 1):
            v00 = j * nx + i
            v10 = v00 + 1
            v01 = v00 + nx
            v11 = v01 + 1
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    return MeshDomain(points, np.asarray(tris, dtype=int))


def chain_graph(n: int) -> ArealDomain:
    rows = np.arange(n - 1)
    cols = rows + 1
    adj = sp.coo_matrix((np.ones(n - 1), (rows, cols)), shape=(n, n))
    return ArealDomain(adj)


def lattice_graph(nx: int, ny: int) -> ArealDomain:
    """4-neighbour lattice with nx*ny nodes."""
    rows = []
    cols = []
    for j in range(ny):
        for i in range(nx):
            node = j * nx + i
            if i + 1 < nx:
                rows.append(node)
                cols.append(node + 1)
            if j + 1 < ny:
                rows.append(node)
                cols.append(node + nx)
    adj = sp.coo_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(nx * ny, nx * ny)
    )
    return ArealDomain(adj)


def dense_ram_matrices(ram, theta, n_times):
    """Dense P and G built directly from the term list, bypassing assemble_ram."""
    c = len(ram.variables)
    n = c * n_times
    idx = {v: i for i, v in enumerate(ram.variables)}
    values = dict(zip(ram.param_names, theta))
    p = np.zeros((n, n))
    g = np.zeros((n, n))
    for t in ram.terms:
        val = t.value if t.fixed else values[t.param]
        for time in range(n_times):
            src_time = time - t.lag
            if src_time < 0:
                continue
            r = time * c + idx[t.dst]
            col = src_time * c + idx[t.src]
            if t.heads == 1:
                p[r, col] += val
            else:
                g[r, col] += val
                if r != col:
                    g[col, r] += val
    return p, g
