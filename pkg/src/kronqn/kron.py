"""Kronecker structure of a layer's gradient and Hessian.

For one data point the gradient of a layer is a sum of ``|T|`` Kronecker
products and its Hessian a sum of ``|T|^2`` of them.  This module builds
both sides explicitly, together with finite-difference oracles that do
not rely on that structure, and the single-Kronecker factor estimates the
optimizers use.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import kron, vec


@dataclass
class KronHessianTerms:
    """``A_terms[t, t2] = a_t a_t2^T`` and ``G_terms[t, t2] = d2f / dh_t dh_t2``.

    Stored as dense 4-D arrays indexed ``[t, t2]``.
    """

    A_terms: np.ndarray  # (T, T, D, D)
    G_terms: np.ndarray  # (T, T, I, I)

    @property
    def spatial_size(self):
        return self.A_terms.shape[0]


def gradient_kron_sum(a, dh):
    """``sum_t kron(a_t, dh_t)`` for the columns of one data point."""
    a = np.asarray(a, dtype=np.float64)
    dh = np.asarray(dh, dtype=np.float64)
    out = np.zeros(a.shape[0] * dh.shape[0])
    for t in range(a.shape[1]):
        out += np.kron(a[:, t], dh[:, t])
    return out


def estimate_A(patches, batch_size):
    """``(1/m) sum_n sum_t a_t(n) a_t(n)^T``."""
    return patches @ patches.T / batch_size


def estimate_G_pairs(h, h_new, dh, dh_new):
    """Spatially and batch averaged ``(s, y)`` pair for the ``G`` factor."""
    return h_new.mean(axis=1) - h.mean(axis=1), dh_new.mean(axis=1) - dh.mean(axis=1)


def kron_of_averages(us, vs):
    """``kron(mean(us), mean(vs))``; an approximation of the mean of krons."""
    if len(us) == 0 or len(us) != len(vs):
        raise ValueError("need two non-empty lists of equal length")
    return kron(np.mean(us, axis=0), np.mean(vs, axis=0))


def assemble_hessian(terms):
    """``sum_{t, t2} kron(A[t, t2], G[t, t2])``."""
    A, G = terms.A_terms, terms.G_terms
    if A.shape[:2] != G.shape[:2]:
        raise ValueError(f"term grids differ: {A.shape[:2]} vs {G.shape[:2]}")
    D, I = A.shape[2], G.shape[2]
    out = np.zeros((D * I, D * I))
    T = A.shape[0]
    for t in range(T):
        for t2 in range(T):
            out += np.kron(A[t, t2], G[t, t2])
    return out


def _check_finite(m, what):
    if not np.all(np.isfinite(m)):
        raise FloatingPointError(f"non-finite entries in {what}")
    return m


def brute_force_hessian_W(net, layer, x, y, step=1e-5):
    """Hessian of the loss in ``vec(W_layer)`` by central differences of the gradient.

    ``x``, ``y`` hold a single data point (leading batch axis of size 1).
    The result is symmetrized.
    """
    W0 = net.params[layer]
    rows, cols = W0.shape
    dim = W0.size
    H = np.zeros((dim, dim))
    params = list(net.params)
    for k in range(dim):
        c, r = divmod(k, rows)  # column-stacking index
        grads = []
        for sign in (1.0, -1.0):
            W = W0.copy()
            W[r, c] += sign * step
            params[layer] = W
            _, caches = net.forward_backward(x, y, params=params)
            grads.append(vec(caches[layer].dW))
        H[:, k] = (grads[0] - grads[1]) / (2.0 * step)
    return _check_finite(0.5 * (H + H.T), "finite-difference Hessian")


def downstream_hessian(net, layer, x, y, step=1e-5):
    """Hessian of the loss in the full pre-activation field ``h`` of ``layer``.

    Index ``t * I + i`` addresses ``h_{i,t}``.  Built from central
    differences of the analytic ``df/dh``.
    """
    _, caches = net.forward_backward(x, y)
    h0 = caches[layer].h
    I, T = h0.shape
    H = np.zeros((I * T, I * T))
    for t in range(T):
        for i in range(I):
            cols = []
            for sign in (1.0, -1.0):
                h = h0.copy()
                h[i, t] += sign * step
                _, dh = net.tail(layer, h, y)
                cols.append(dh.reshape(-1, order="F"))
            H[:, t * I + i] = (cols[0] - cols[1]) / (2.0 * step)
    return _check_finite(H, "downstream Hessian")


def brute_force_G(net, layer, x, y, t, t2, step=1e-5, full=None):
    """``G_{t,t2} = d2f / dh_t dh_t2`` (an ``I x I`` block)."""
    if full is None:
        full = downstream_hessian(net, layer, x, y, step)
    I = net.layers[layer].param_shape[0]
    return full[t * I:(t + 1) * I, t2 * I:(t2 + 1) * I].copy()


def hessian_terms(net, layer, x, y, step=1e-5):
    """All ``A_{t,t2}`` (exact) and ``G_{t,t2}`` (finite differences) for one data point."""
    _, caches = net.forward_backward(x, y)
    a = caches[layer].a
    T = a.shape[1]
    I = caches[layer].h.shape[0]
    full = downstream_hessian(net, layer, x, y, step)
    full = 0.5 * (full + full.T)
    A = np.einsum("it,ju->tuij", a, a)
    G = full.reshape(T, I, T, I).transpose(0, 2, 1, 3).copy()
    return KronHessianTerms(A, G)


def single_kron_approximation(terms):
    """``(sum_t A_tt) kron (mean_t G_tt)``: the diagonal-in-t, factor-averaged Hessian."""
    T = terms.spatial_size
    A = sum(terms.A_terms[t, t] for t in range(T))
    G = sum(terms.G_terms[t, t] for t in range(T)) / T
    return np.kron(A, G)
