"""Small dense linear-algebra kernel.

Arrays are plain float64 numpy arrays. ``vec`` uses the column-stacking
convention so that ``kron(U, V) @ vec(X) == vec(V @ X @ U.T)``.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


@dataclass(frozen=True)
class SymEig:
    eigenvalues: np.ndarray  # ascending
    eigenvectors: np.ndarray  # columns are orthonormal

    def reconstruct(self):
        q = self.eigenvectors
        return (q * self.eigenvalues) @ q.T


def as_matrix(x):
    m = np.asarray(x, dtype=np.float64)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise ShapeError(f"expected a matrix, got array of shape {m.shape}")
    return m


def matmul(a, b):
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    return a @ b


def kron(u, v):
    """Block matrix whose ``(i, j)`` block is ``u[i, j] * v``."""
    return np.kron(as_matrix(u), as_matrix(v))


def vec(m):
    """Stack the columns of ``m`` into a single vector."""
    return np.asarray(m, dtype=np.float64).reshape(-1, order="F")


def unvec(v, rows, cols):
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size != rows * cols:
        raise ShapeError(f"cannot unvec length {v.size} into {rows}x{cols}")
    return v.reshape(rows, cols, order="F")


def is_symmetric(m, rtol=1e-10):
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        return False
    scale = np.max(np.abs(m)) if m.size else 0.0
    return np.max(np.abs(m - m.T), initial=0.0) <= rtol * max(scale, np.finfo(float).tiny)


def sym_eig(m):
    """Eigen-decomposition of a symmetric matrix, eigenvalues ascending.

    Raises ``ShapeError`` for non-square or non-symmetric input and
    ``np.linalg.LinAlgError`` if LAPACK fails to converge.
    """
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise ShapeError(f"sym_eig needs a square matrix, got {m.shape}")
    if not is_symmetric(m):
        raise ShapeError("sym_eig input is not symmetric")
    w, q = np.linalg.eigh(m)
    return SymEig(w, q)


def spectral_norm_sym(m):
    """Largest absolute eigenvalue of a symmetric matrix."""
    w = np.linalg.eigvalsh(0.5 * (m + m.T))
    return float(np.max(np.abs(w)))


def solve_spd(m, rhs):
    """Solve ``m @ x = rhs`` for symmetric positive definite ``m`` (Cholesky).

    A failed factorization raises ``np.linalg.LinAlgError``; there is no
    pivoted fallback because callers regularize ``m`` beforehand.
    """
    m = as_matrix(m)
    rhs = np.asarray(rhs, dtype=np.float64)
    if m.shape[0] != m.shape[1] or m.shape[0] != rhs.shape[0]:
        raise ShapeError(f"solve_spd shapes incompatible: {m.shape}, {rhs.shape}")
    try:
        factor = linalg.cho_factor(m, lower=True, check_finite=True)
    except linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"matrix is not positive definite: {exc}") from exc
    return linalg.cho_solve(factor, rhs)


def inv_spd(m):
    m = as_matrix(m)
    out = solve_spd(m, np.eye(m.shape[0]))
    return 0.5 * (out + out.T)
