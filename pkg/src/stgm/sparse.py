"""Sparse symmetric matrices and a Cholesky-style factorization.

scipy ships no sparse Cholesky, so factorization is done with SuperLU in
symmetric mode (diagonal pivoting, fill-reducing symmetric ordering).  For
a symmetric positive definite matrix this produces P A P^T = L U with
U = D L^T and D > 0, i.e. an LDL^T factorization up to a permutation.
That is enough for everything the rest of the package needs: determinants,
solves, positive-definiteness detection, and the inverse square root used
to sample from a Gaussian with precision A.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu, spsolve_triangular

from .errors import NotPositiveDefiniteError

__all__ = ["SparseSymMatrix", "SparseCholesky"]


class SparseCholesky:
    """LDL^T-style factor of a sparse symmetric positive definite matrix.

    Parameters
    ----------
    mat : scipy.sparse.csc_matrix
        The matrix to factor.  Assumed symmetric; positive definiteness
        is established by the factorization itself.

    Raises
    ------
    NotPositiveDefiniteError
        If the matrix is singular, indefinite, or the symmetric pivoting
        broke down (off-diagonal pivots were required).
    """

    def __init__(self, mat: sp.csc_matrix):
        n = mat.shape[0]
        try:
            lu = splu(
                mat,
                diag_pivot_thresh=0.0,
                permc_spec="MMD_AT_PLUS_A",
                options=dict(SymmetricMode=True),
            )
        except RuntimeError as exc:  # "Factor is exactly singular"
            raise NotPositiveDefiniteError(str(exc)) from exc
        d = lu.U.diagonal()
        if not np.all(np.isfinite(d)) or np.any(d <= 0.0):
            raise NotPositiveDefiniteError(
                "matrix is not positive definite (nonpositive pivot)"
            )
        if np.any(lu.perm_r != lu.perm_c):
            # Diagonal pivoting fell back to row pivoting, so the result is
            # no longer a symmetric factorization; treat as not SPD.
            raise NotPositiveDefiniteError(
                "symmetric factorization broke down (row pivoting occurred)"
            )
        self._lu = lu
        self._d = d
        self._n = n
        self._lt_csr = None

    @property
    def n(self) -> int:
        return self._n

    @property
    def logdet(self) -> float:
        """Log-determinant of the factored matrix."""
        return float(np.sum(np.log(self._d)))

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve A x = b for one or more right-hand sides."""
        return self._lu.solve(np.asarray(b, dtype=float))

    def unwhiten(self, z: np.ndarray) -> np.ndarray:
        """Map iid standard normal draws to draws with covariance A^{-1}.

        Each column of `z` is transformed independently: with the
        factorization A[p,:][:,p] = L D L^T the returned x satisfies
        cov(x) = A^{-1} exactly when z is standard normal.
        """
        z = np.asarray(z, dtype=float)
        one_d = z.ndim == 1
        if one_d:
            z = z[:, None]
        if self._lt_csr is None:
            self._lt_csr = self._lu.L.T.tocsr()
        y = spsolve_triangular(
            self._lt_csr, z / np.sqrt(self._d)[:, None], lower=False
        )
        x = y[self._lu.perm_c]
        return x[:, 0] if one_d else x


class SparseSymMatrix:
    """Sparse symmetric matrix with a cached factorization.

    Values are stored in compressed sparse column layout.  The constructor
    validates symmetry to a relative tolerance and then symmetrizes exactly
    so downstream identities hold to machine precision.  The factor is
    computed lazily and invalidated whenever values change.
    """

    def __init__(self, mat, tol: float = 1e-12):
        mat = sp.csc_matrix(mat)
        if mat.shape[0] != mat.shape[1]:
            raise ValueError(f"matrix is not square: shape {mat.shape}")
        asym = abs(mat - mat.T)
        scale = max(1.0, abs(mat).max() if mat.nnz else 0.0)
        if asym.nnz and asym.max() > tol * scale:
            raise ValueError(
                f"matrix is not symmetric (max asymmetry {asym.max():.3e})"
            )
        mat = (mat + mat.T) * 0.5
        mat.sum_duplicates()
        mat.sort_indices()
        self._mat = mat
        self._factor: SparseCholesky | None = None

    @property
    def n(self) -> int:
        return self._mat.shape[0]

    @property
    def nnz(self) -> int:
        return self._mat.nnz

    @property
    def csc(self) -> sp.csc_matrix:
        """The underlying csc matrix.  Treat as read-only."""
        return self._mat

    def toarray(self) -> np.ndarray:
        return self._mat.toarray()

    def diagonal(self) -> np.ndarray:
        return self._mat.diagonal()

    def set_values(self, values: np.ndarray) -> None:
        """Replace the stored values keeping the sparsity pattern.

        The factorization cache is dropped.
        """
        values = np.asarray(values, dtype=float)
        if values.shape != self._mat.data.shape:
            raise ValueError(
                f"expected {self._mat.data.shape[0]} values, got {values.shape}"
            )
        self._mat.data[:] = values
        self._factor = None

    def factor(self) -> SparseCholesky:
        """Factorize (cached), raising NotPositiveDefiniteError if not SPD."""
        if self._factor is None:
            self._factor = SparseCholesky(self._mat)
        return self._factor

    def logdet(self) -> float:
        return self.factor().logdet

    def solve(self, b: np.ndarray) -> np.ndarray:
        return self.factor().solve(b)

    def unwhiten(self, z: np.ndarray) -> np.ndarray:
        return self.factor().unwhiten(z)

    def to_matrix_market(self, path) -> None:
        """Write the lower triangle in MatrixMarket symmetric coordinate format."""
        coo = sp.tril(self._mat).tocoo()
        with open(path, "w") as fh:
            fh.write("%%MatrixMarket matrix coordinate real symmetric\n")
            fh.write(f"{self.n} {self.n} {coo.nnz}\n")
            for i, j, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{i + 1} {j + 1} {v:.17g}\n")

    def __repr__(self) -> str:
        return f"SparseSymMatrix(n={self.n}, nnz={self.nnz})"
