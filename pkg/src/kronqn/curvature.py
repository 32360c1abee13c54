"""Quasi-Newton inverse updates, damping and spectral bound formulas.

``H`` always denotes an approximation of an *inverse* curvature matrix.
Dense inverses are plain symmetric arrays; limited-memory inverses are
:class:`LbfgsStore` objects using the compact (non-loop) representation.
"""

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular


class SkippedUpdate(ArithmeticError):
    """The curvature pair is too close to ``s^T y <= 0`` to be used."""


@dataclass
class CurvaturePair:
    s: np.ndarray
    y: np.ndarray

    @property
    def sy(self):
        return float(self.s @ self.y)


def _curvature_ok(s, y, rtol=1e-12):
    sy = float(s @ y)
    return sy > rtol * np.linalg.norm(s) * np.linalg.norm(y) and sy > 0.0


def bfgs_update(H, s, y):
    """BFGS update of an inverse approximation.

    ``H+ = (I - rho s y^T) H (I - rho y s^T) + rho s s^T`` with
    ``rho = 1 / y^T s``.  Raises :class:`SkippedUpdate` if
    ``s^T y <= 1e-12 |s| |y|``.
    """
    s = np.asarray(s, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not _curvature_ok(s, y):
        raise SkippedUpdate(f"s^T y = {float(s @ y):.3e} too small")
    rho = 1.0 / float(y @ s)
    Hy = H @ y
    yHy = float(y @ Hy)
    # expanded form of the product; avoids two dense n^3 multiplies
    out = (
        H
        - rho * (np.outer(s, Hy) + np.outer(Hy, s))
        + (rho * rho * yHy + rho) * np.outer(s, s)
    )
    return 0.5 * (out + out.T)


def bfgs_update_direct(H, s, y):
    """Product-form BFGS update, kept as a reference for tests."""
    rho = 1.0 / float(y @ s)
    E = np.eye(H.shape[0]) - rho * np.outer(s, y)
    return E @ H @ E.T + rho * np.outer(s, s)


class LbfgsStore:
    """Limited-memory BFGS inverse with initial matrix ``gamma0 * I``.

    Holds at most ``capacity`` pairs (FIFO).  :meth:`apply` evaluates
    ``H @ rhs`` for a vector or a matrix of right-hand sides through the
    compact representation::

        H = g I + [S, gY] [[R^-T (D + g Y^T Y) R^-1, -R^-T], [-R^-1, 0]] [S^T; g Y^T]

    where ``R`` is the upper triangle of ``S^T Y`` and ``D`` its diagonal.
    """

    def __init__(self, dim, capacity=100, gamma0=1.0):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.dim = dim
        self.capacity = capacity
        self.gamma0 = float(gamma0)
        self.pairs = deque(maxlen=capacity)
        self._cache = None

    def __len__(self):
        return len(self.pairs)

    def push(self, s, y):
        s = np.asarray(s, dtype=np.float64).copy()
        y = np.asarray(y, dtype=np.float64).copy()
        if s.shape != (self.dim,) or y.shape != (self.dim,):
            raise ValueError(f"pair shapes {s.shape}, {y.shape} != ({self.dim},)")
        if not _curvature_ok(s, y):
            raise SkippedUpdate(f"s^T y = {float(s @ y):.3e} too small")
        self.pairs.append((s, y))
        self._rebuild()

    def _rebuild(self):
        S = np.stack([p[0] for p in self.pairs], axis=1)
        Y = np.stack([p[1] for p in self.pairs], axis=1)
        SY = S.T @ Y
        R = np.triu(SY)
        D = np.diag(np.diag(SY))
        YY = Y.T @ Y
        self._cache = (S, Y, R, D + self.gamma0 * YY)

    def apply(self, rhs):
        rhs = np.asarray(rhs, dtype=np.float64)
        g = self.gamma0
        if not self.pairs:
            return g * rhs
        S, Y, R, mid = self._cache
        vec_in = rhs.ndim == 1
        X = rhs[:, None] if vec_in else rhs
        StX = S.T @ X
        YtX = Y.T @ X
        # p1 = R^-T (D + g Y^T Y) R^-1 S^T X - g R^-T Y^T X ;  p2 = -R^-1 S^T X
        Rinv_StX = solve_triangular(R, StX, lower=False)
        p1 = solve_triangular(R, mid @ Rinv_StX - g * YtX, trans="T", lower=False)
        p2 = -Rinv_StX
        out = g * X + S @ p1 + g * (Y @ p2)
        return out[:, 0] if vec_in else out

    def dense(self):
        """Materialize ``H`` (tests and bound checks only)."""
        H = self.apply(np.eye(self.dim))
        return 0.5 * (H + H.T)


def lbfgs_two_loop(pairs, gamma0, v):
    """Classical two-loop recursion; reference implementation for tests."""
    q = np.array(v, dtype=np.float64)
    alphas = []
    for s, y in reversed(pairs):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        q -= a * y
        alphas.append((a, rho))
    r = gamma0 * q
    for (s, y), (a, rho) in zip(pairs, reversed(alphas)):
        b = rho * (y @ r)
        r += (a - b) * s
    return r


def apply_inverse(H, v):
    if isinstance(H, LbfgsStore):
        return H.apply(v)
    return H @ v


def dp_dlm(s, y, H, mu1=0.2, mu2=1.0):
    """Powell damping on ``H`` followed by Levenberg-Marquardt damping on ``H^-1``.

    Returns ``(s~, y~)`` with ``s~^T y >= mu1 y^T H y`` and
    ``s~^T y~ >= mu2 |s~|^2``.  ``H`` is a dense matrix or an
    :class:`LbfgsStore`.
    """
    if not 0.0 < mu1 < 1.0 or mu2 <= 0.0:
        raise ValueError(f"need 0 < mu1 < 1 and mu2 > 0, got {mu1}, {mu2}")
    s = np.asarray(s, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    Hy = apply_inverse(H, y)
    yHy = float(y @ Hy)
    if not yHy > 0.0:
        raise ValueError(f"y^T H y = {yHy:.3e}; H must be positive definite and y nonzero")
    sy = float(s @ y)
    if sy < mu1 * yHy:
        theta = (1.0 - mu1) * yHy / (yHy - sy)
    else:
        theta = 1.0
    s_t = theta * s + (1.0 - theta) * Hy
    return s_t, y + mu2 * s_t


def dpi_dlm(s, y, mu1=0.2, mu2=1.0):
    """:func:`dp_dlm` with ``H`` replaced by ``I / mu2``."""
    if not 0.0 < mu1 < 1.0 or mu2 <= 0.0:
        raise ValueError(f"need 0 < mu1 < 1 and mu2 > 0, got {mu1}, {mu2}")
    s = np.asarray(s, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    yy = float(y @ y)
    if yy == 0.0:
        raise ValueError("y is zero")
    yHy = yy / mu2
    sy = float(s @ y)
    theta = (1.0 - mu1) * yHy / (yHy - sy) if sy < mu1 * yHy else 1.0
    s_t = theta * s + (1.0 - theta) * y / mu2
    return s_t, y + mu2 * s_t


def mu3(mu1, mu2):
    """Constant bounding ``y~^T y~ / s~^T y~ <= 1/mu3`` after :func:`dpi_dlm`."""
    return mu1 / (mu2 * (1.0 + 2.0 * mu1))


def hessian_action_pair(H_A, patches, batch_size, lambda_A, a_hat=None, A=None):
    """Pair ``s = H_A a_hat``, ``y = A s + lambda_A s`` for updating ``H_A``.

    By default ``A s`` is evaluated from the minibatch patch matrix without
    forming ``A``: ``patches @ (patches^T s) / m``.  Passing ``A``
    explicitly uses that matrix instead (moving-average mode).
    """
    if a_hat is None:
        a_hat = patches.mean(axis=1)
    s = H_A @ a_hat
    if not np.any(s):
        raise SkippedUpdate("s_A is zero")
    As = A @ s if A is not None else patches @ (patches.T @ s) / batch_size
    return CurvaturePair(s, As + lambda_A * s)


def damping_split(lam, spatial_size=1, conv=True):
    """Split the overall damping ``lam`` into ``(lambda_A, lambda_G)``.

    Conv layers use ``(sqrt(|T|) sqrt(lam), sqrt(lam) / sqrt(|T|))``;
    dense layers use ``sqrt(lam)`` for both.  The product is always ``lam``.
    """
    if lam <= 0 or spatial_size < 1:
        raise ValueError("need lam > 0 and spatial_size >= 1")
    r = np.sqrt(lam)
    if not conv:
        return r, r
    t = np.sqrt(spatial_size)
    return t * r, r / t


def lbfgs_eig_bounds(mu1, mu2, lambda_G, p):
    """Eigenvalue interval ``(low, high)`` for an L-BFGS ``H_G`` built from ``p``
    pairs damped by :func:`dpi_dlm`, starting from ``I / lambda_G``."""
    m3 = mu3(mu1, mu2)
    low = 1.0 / (lambda_G + p / m3)
    mu_hat = (1.0 + 1.0 / np.sqrt(mu2 * m3)) ** 2
    high = mu_hat ** p / lambda_G + (mu_hat ** p - 1.0) / (mu_hat - 1.0) / mu2
    return low, high


def ha_eig_bounds(in_channels, n_offsets, spatial_size, phi, lambda_A):
    """Eigenvalue interval for ``(A_hat + lambda_A I)^-1`` when inputs obey ``|a| <= phi``."""
    upper_A = (in_channels * n_offsets * phi ** 2 + 1.0) * spatial_size
    return 1.0 / (upper_A + lambda_A), 1.0 / lambda_A


def bfgs_norm_bounds(H, mu2_, mu3_):
    """Right-hand sides of the one-step norm recursions for ``B = H^-1`` and ``H``."""
    w = np.linalg.eigvalsh(H)
    normH = float(w[-1])
    normB = float(1.0 / w[0])
    return normB + 1.0 / mu3_, (1.0 + 1.0 / np.sqrt(mu2_ * mu3_)) ** 2 * normH + 1.0 / mu2_
