"""Layer-wise optimizers sharing one ``step(x, y, k)`` interface.

All optimizers act in place on ``net.params``.  ``k`` is the 1-based
iteration counter; curvature refreshes happen when ``k % T == 0``.
Weight decay follows the decoupled form ``W -= lr * (p + gamma * W)``.
"""

from dataclasses import dataclass, field
import logging

import numpy as np

from .curvature import (
    LbfgsStore,
    SkippedUpdate,
    apply_inverse,
    bfgs_update,
    damping_split,
    dp_dlm,
    dpi_dlm,
    hessian_action_pair,
)
from .kron import estimate_A
from .nn import DivergedError
from .tensor import inv_spd

log = logging.getLogger(__name__)

ZERO_Y_TOL = 1e-12


@dataclass
class LRSchedule:
    """Constant rate, optionally multiplied by ``factor`` every ``decay_epochs``."""

    base: float
    decay_epochs: int = 0
    factor: float = 0.1

    def __call__(self, epoch=0):
        if self.decay_epochs and self.decay_epochs > 0:
            return self.base * self.factor ** (epoch // self.decay_epochs)
        return self.base


def _schedule(lr):
    return lr if isinstance(lr, LRSchedule) else LRSchedule(float(lr))


class Optimizer:
    name = "base"

    def __init__(self, net, lr, weight_decay=0.0):
        self.net = net
        self.lr = _schedule(lr)
        if self.lr.base <= 0:
            raise ValueError("learning rate must be positive")
        self.weight_decay = float(weight_decay)
        self.skipped = 0

    def warm_start(self, x, y=None, batch_size=1000):
        pass

    def step(self, x, y, k, epoch=0):
        raise NotImplementedError

    def _apply(self, l, p, lr):
        if not np.all(np.isfinite(p)):
            raise DivergedError(f"non-finite direction in layer {l}")
        W = self.net.params[l]
        if self.weight_decay:
            p = p + self.weight_decay * W
        self.net.params[l] = W - lr * p


def _finite(M, what):
    if not np.all(np.isfinite(M)):
        raise DivergedError(f"non-finite {what}")
    return M


def _batches(n, batch_size):
    for start in range(0, n, batch_size):
        yield slice(start, min(start + batch_size, n))


def full_A(net, x, batch_size=1000):
    """``A_l = E_n[sum_t a_t a_t^T]`` over a whole dataset, streamed."""
    n = x.shape[0]
    sums = [np.zeros((spec.param_shape[1],) * 2) for spec in net.layers]
    for sl in _batches(n, batch_size):
        _, trace = net._forward(np.asarray(x[sl], dtype=np.float64), net.params)
        for l, a in enumerate(trace.a):
            sums[l] += a @ a.T
    return [s / n for s in sums]


# ----------------------------------------------------------------------------
# first-order baselines


class SGDM(Optimizer):
    """SGD with un-normalized momentum ``g_hat = beta * g_hat + g``."""

    name = "sgdm"

    def __init__(self, net, lr, beta=0.9, weight_decay=0.0):
        super().__init__(net, lr, weight_decay)
        self.beta = beta
        self.momentum = [np.zeros_like(p) for p in net.params]

    def update(self, grads, k, epoch=0):
        lr = self.lr(epoch)
        for l, g in enumerate(grads):
            self.momentum[l] = self.beta * self.momentum[l] + g
            self._apply(l, self.momentum[l], lr)

    def step(self, x, y, k, epoch=0):
        loss, caches = self.net.forward_backward(x, y)
        self.update([c.dW for c in caches], k, epoch)
        return loss


class Adam(Optimizer):
    """Bias-corrected Adam; ``eps`` plays the role of the damping value."""

    name = "adam"

    def __init__(self, net, lr, eps=1e-8, beta1=0.9, beta2=0.999, weight_decay=0.0):
        super().__init__(net, lr, weight_decay)
        self.eps, self.beta1, self.beta2 = eps, beta1, beta2
        self.m = [np.zeros_like(p) for p in net.params]
        self.v = [np.zeros_like(p) for p in net.params]

    def update(self, grads, k, epoch=0):
        lr = self.lr(epoch)
        b1, b2 = self.beta1, self.beta2
        for l, g in enumerate(grads):
            self.m[l] = b1 * self.m[l] + (1 - b1) * g
            self.v[l] = b2 * self.v[l] + (1 - b2) * g * g
            m_hat = self.m[l] / (1 - b1 ** k)
            v_hat = self.v[l] / (1 - b2 ** k)
            self._apply(l, m_hat / (np.sqrt(v_hat) + self.eps), lr)

    def step(self, x, y, k, epoch=0):
        loss, caches = self.net.forward_backward(x, y)
        self.update([c.dW for c in caches], k, epoch)
        return loss


# ----------------------------------------------------------------------------
# K-BFGS / K-BFGS(L)


@dataclass
class KbfgsLayerState:
    H_A: np.ndarray
    H_G: object  # dense ndarray or LbfgsStore
    s_G: np.ndarray
    y_G: np.ndarray
    momentum: np.ndarray
    lambda_A: float
    lambda_G: float
    A_ema: np.ndarray = None

    def apply_G(self, M):
        return apply_inverse(self.H_G, M)

    def direction(self, M):
        """``H_G @ M @ H_A``, i.e. ``unvec((H_A kron H_G) vec(M))``."""
        return self.apply_G(M) @ self.H_A


class KBFGS(Optimizer):
    """Kronecker-factored BFGS for dense and conv layers.

    ``hg_mode`` selects a dense BFGS (``"bfgs"``) or limited-memory
    (``"lbfgs"``) inverse for the output-side factor ``H_G``.
    ``hessian_action`` is ``"minibatched"`` (``A s`` from the current
    minibatch only) or ``"moving-average"`` (``A s`` from an exponential
    average of minibatch ``A`` estimates).
    """

    name = "kbfgs"

    def __init__(self, net, lr, damping, beta=0.9, mu1=0.2, update_freq=1, hg_mode="bfgs",
                 lbfgs_memory=100, hessian_action="minibatched", weight_decay=0.0):
        super().__init__(net, lr, weight_decay)
        if damping <= 0:
            raise ValueError("damping must be positive")
        if update_freq < 1:
            raise ValueError("update_freq must be >= 1")
        if hg_mode not in ("bfgs", "lbfgs"):
            raise ValueError(f"unknown hg_mode {hg_mode!r}")
        if hessian_action not in ("minibatched", "moving-average"):
            raise ValueError(f"unknown hessian_action {hessian_action!r}")
        self.damping = float(damping)
        self.beta = beta
        self.mu1 = mu1
        self.update_freq = update_freq
        self.hg_mode = hg_mode
        self.lbfgs_memory = lbfgs_memory
        self.hessian_action = hessian_action
        self.state = None
        self.curvature_updates = 0

    def _splits(self):
        return [damping_split(self.damping, spec.spatial_size, conv=spec.kind == "conv")
                for spec in self.net.layers]

    def init_state(self, A_list):
        self.state = []
        for spec, A, (lam_A, lam_G) in zip(self.net.layers, A_list, self._splits()):
            I = spec.param_shape[0]
            if self.hg_mode == "bfgs":
                H_G = np.eye(I) / lam_G
            else:
                H_G = LbfgsStore(I, self.lbfgs_memory, gamma0=1.0 / lam_G)
            self.state.append(KbfgsLayerState(
                H_A=inv_spd(A + lam_A * np.eye(A.shape[0])),
                H_G=H_G,
                s_G=np.zeros(I),
                y_G=np.zeros(I),
                momentum=np.zeros(spec.param_shape),
                lambda_A=lam_A,
                lambda_G=lam_G,
                A_ema=A.copy() if self.hessian_action == "moving-average" else None,
            ))
        return self.state

    def warm_start(self, x, y=None, batch_size=1000):
        """Estimate every ``A_l`` over the full dataset and initialize ``H_A``, ``H_G``."""
        return self.init_state(full_A(self.net, x, batch_size))

    def _ensure_state(self, x):
        if self.state is None:
            log.warning("%s used without warm start; initializing from the first minibatch", self.name)
            self.warm_start(x, batch_size=x.shape[0])

    def _gradient_estimate(self, st, dW):
        st.momentum = self.beta * st.momentum + dW
        return st.momentum

    def step(self, x, y, k, epoch=0):
        self._ensure_state(x)
        loss, caches = self.net.forward_backward(x, y)
        lr = self.lr(epoch)
        for l, (st, c) in enumerate(zip(self.state, caches)):
            M = self._gradient_estimate(st, c.dW)
            self._apply(l, st.direction(M), lr)
        self.curvature_update(x, y, k, caches)
        return loss

    def curvature_update(self, x, y, k, caches):
        """Second pass at the stepped parameters and factor updates; gated by ``k % T``."""
        if k % self.update_freq != 0:
            return False
        _, new = self.net.forward_backward(x, y)
        for st, c, cn in zip(self.state, caches, new):
            self._update_A(st, c)
            self._update_G(st, c, cn)
        self.curvature_updates += 1
        return True

    def _update_A(self, st, c):
        A = None
        if self.hessian_action == "moving-average":
            st.A_ema = self.beta * st.A_ema + (1 - self.beta) * estimate_A(c.a, c.batch_size)
            A = st.A_ema
        try:
            pair = hessian_action_pair(st.H_A, c.a, c.batch_size, st.lambda_A, A=A)
            st.H_A = _finite(bfgs_update(st.H_A, pair.s, pair.y), "H_A")
        except SkippedUpdate:
            self.skipped += 1

    def _damp(self, st):
        return dp_dlm(st.s_G, st.y_G, st.H_G, self.mu1, st.lambda_G)

    def _update_G(self, st, c, cn):
        b = self.beta
        st.s_G = b * st.s_G + (1 - b) * (cn.h.mean(axis=1) - c.h.mean(axis=1))
        st.y_G = b * st.y_G + (1 - b) * (cn.dh.mean(axis=1) - c.dh.mean(axis=1))
        if not (np.all(np.isfinite(st.s_G)) and np.all(np.isfinite(st.y_G))):
            raise DivergedError("non-finite curvature pair")
        if np.linalg.norm(st.y_G) < ZERO_Y_TOL:
            self.skipped += 1
            return
        try:
            s_t, y_t = self._damp(st)
        except ValueError as exc:  # y^T H y not positive: H_G has lost definiteness
            raise DivergedError(str(exc)) from exc
        _finite(s_t, "damped s_G")
        _finite(y_t, "damped y_G")
        try:
            if isinstance(st.H_G, LbfgsStore):
                st.H_G.push(s_t, y_t)
            else:
                st.H_G = _finite(bfgs_update(st.H_G, s_t, y_t), "H_G")
        except SkippedUpdate:
            self.skipped += 1


class KBFGSL(KBFGS):
    """K-BFGS with a limited-memory ``H_G``."""

    name = "kbfgsl"

    def __init__(self, net, lr, damping, lbfgs_memory=100, **kw):
        kw.setdefault("hg_mode", "lbfgs")
        super().__init__(net, lr, damping, lbfgs_memory=lbfgs_memory, **kw)


class KBFGSLConvergence(KBFGS):
    """Variant with provable convergence.

    Differences from :class:`KBFGS`: the damping uses ``H = I / lambda_G``
    (:func:`dpi_dlm`), ``H_A = (A_hat + lambda_A I)^-1`` is recomputed from
    the current minibatch at every curvature step, and the raw minibatch
    gradient (no momentum) is preconditioned.
    """

    name = "kbfgsl-conv"

    def __init__(self, net, lr, damping, lbfgs_memory=100, **kw):
        kw["hg_mode"] = "lbfgs"
        kw["hessian_action"] = "minibatched"
        super().__init__(net, lr, damping, lbfgs_memory=lbfgs_memory, **kw)

    def _gradient_estimate(self, st, dW):
        return dW

    def _update_A(self, st, c):
        A = estimate_A(c.a, c.batch_size)
        st.H_A = inv_spd(A + st.lambda_A * np.eye(A.shape[0]))

    def _damp(self, st):
        return dpi_dlm(st.s_G, st.y_G, self.mu1, st.lambda_G)


# ----------------------------------------------------------------------------
# KFAC


def kfac_pi(Omega, Gamma):
    """``sqrt(trace(Omega kron I_G) / trace(I_O kron Gamma))``."""
    num = np.trace(Omega) * Gamma.shape[0]
    den = Omega.shape[0] * np.trace(Gamma)
    return float(np.sqrt(num / den))


@dataclass
class KfacState:
    Omega: np.ndarray
    Gamma: np.ndarray
    H_Omega: np.ndarray = None
    H_Gamma: np.ndarray = None
    momentum: np.ndarray = field(default=None)


class KFAC(Optimizer):
    """KFAC with momentum, adaptive damping split and EMA statistics.

    Statistics passes use targets sampled from the model's predictive
    distribution.  ``stat_freq`` and ``inv_freq`` are ``T1`` and ``T2``.
    """

    name = "kfac"

    def __init__(self, net, lr, damping, beta=0.9, stat_freq=1, inv_freq=20, weight_decay=0.0, seed=0):
        super().__init__(net, lr, weight_decay)
        self.damping = float(damping)
        self.beta = beta
        self.stat_freq = stat_freq
        self.inv_freq = inv_freq
        self.rng = np.random.default_rng(seed)
        self.state = None

    def _stats(self, caches):
        out = []
        for c in caches:
            Omega = c.a @ c.a.T / c.batch_size
            Gamma = c.dh @ c.dh.T / (c.batch_size * c.spatial_size)
            out.append((Omega, Gamma))
        return out

    def warm_start(self, x, y=None, batch_size=1000):
        n = x.shape[0]
        sums = None
        for sl in _batches(n, batch_size):
            _, caches = self.net.sampled_forward_backward(x[sl], self.rng)
            w = (sl.stop - sl.start) / n
            stats = [(w * O, w * G) for O, G in self._stats(caches)]
            sums = stats if sums is None else [(a + c, b + d) for (a, b), (c, d) in zip(sums, stats)]
        self.state = [KfacState(O, G, momentum=np.zeros(spec.param_shape))
                      for (O, G), spec in zip(sums, self.net.layers)]
        self.update_inverses()
        return self.state

    def update_inverses(self):
        r = np.sqrt(self.damping)
        for st in self.state:
            pi = kfac_pi(st.Omega, st.Gamma)
            st.H_Omega = inv_spd(st.Omega + pi * r * np.eye(st.Omega.shape[0]))
            st.H_Gamma = inv_spd(st.Gamma + r / pi * np.eye(st.Gamma.shape[0]))

    def step(self, x, y, k, epoch=0):
        if self.state is None:
            log.warning("kfac used without warm start; initializing from the first minibatch")
            self.warm_start(x, batch_size=x.shape[0])
        loss, caches = self.net.forward_backward(x, y)
        lr = self.lr(epoch)
        for l, (st, c) in enumerate(zip(self.state, caches)):
            st.momentum = self.beta * st.momentum + c.dW
            self._apply(l, st.H_Gamma @ st.momentum @ st.H_Omega, lr)
        if k % self.stat_freq == 0:
            _, sampled = self.net.sampled_forward_backward(x, self.rng)
            b = self.beta
            for st, (O, G) in zip(self.state, self._stats(sampled)):
                st.Omega = b * st.Omega + (1 - b) * O
                st.Gamma = b * st.Gamma + (1 - b) * G
        if k % self.inv_freq == 0:
            self.update_inverses()
        return loss


OPTIMIZERS = {
    "kbfgs": KBFGS,
    "kbfgsl": KBFGSL,
    "kbfgsl-conv": KBFGSLConvergence,
    "kfac": KFAC,
    "adam": Adam,
    "sgdm": SGDM,
}
