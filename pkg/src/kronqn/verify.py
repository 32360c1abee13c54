"""Randomized property suites comparing the implementation against oracles.

Each suite returns a list of :class:`Check` results; ``kronqn verify``
prints them and exits nonzero on any failure.
"""

from dataclasses import dataclass

import numpy as np

from .curvature import (
    LbfgsStore,
    bfgs_norm_bounds,
    bfgs_update,
    dp_dlm,
    dpi_dlm,
    hessian_action_pair,
    lbfgs_eig_bounds,
    ha_eig_bounds,
    mu3,
)
from .data import synthetic_dataset
from .kron import assemble_hessian, brute_force_hessian_W, estimate_A, gradient_kron_sum, hessian_terms
from .nn import ConvSpec, DenseSpec, Network
from .optim import KBFGSLConvergence
from .tensor import unvec, vec

SLACK = 1e-9


@dataclass
class Check:
    name: str
    passed: bool
    measured: float
    tol: float
    detail: str = ""

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        extra = f"  ({self.detail})" if self.detail else ""
        return f"{tag}  {self.name:<42s} measured={self.measured:.3e}  tol={self.tol:.1e}{extra}"


def _rel(a, b):
    den = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / den) if den > 0 else float(np.linalg.norm(a))


def random_spd(rng, n, cond=100.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = np.exp(rng.uniform(0.0, np.log(cond), size=n))
    return (q * w) @ q.T


def random_conv_net(rng, smooth=True, head=True):
    """A random tiny net whose first layer is a conv layer (I, J <= 3, R <= 1, <= 3x3)."""
    J, I = rng.integers(1, 4, size=2)
    R = int(rng.integers(0, 2))
    H, W = rng.integers(1, 4, size=2)
    layers = [ConvSpec(int(J), int(I), R, int(H), int(W))]
    acts = [str(rng.choice(["tanh", "sigmoid"])) if smooth else "relu"]
    if head:
        layers.append(ConvSpec(int(I), int(rng.integers(1, 3)), int(rng.integers(0, 2)), int(H), int(W)))
        acts.append(str(rng.choice(["tanh", "sigmoid"])))
        layers.append(DenseSpec(layers[-1].out_channels * int(H * W), int(rng.integers(1, 4))))
        acts.append("identity")
    else:
        acts[-1] = "identity"
    loss = str(rng.choice(["mse", "bce_with_sigmoid"]))
    net = Network(layers, acts, loss).init_params(int(rng.integers(1 << 30)))
    for p in net.params:
        p[:, -1] = 0.3 * rng.standard_normal(p.shape[0])
    return net


def _point(rng, net):
    x = rng.standard_normal((1,) + net.input_shape)
    y = rng.random((1, net.output_dim))
    return x, y


# ----------------------------------------------------------------------------


def check_gradient_structure(n_cases=50, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        net = random_conv_net(rng, smooth=True, head=bool(rng.integers(0, 2)))
        x, y = _point(rng, net)
        _, caches = net.forward_backward(x, y)
        c = caches[0]
        worst = max(worst, _rel(gradient_kron_sum(c.a, c.dh), vec(c.dW)))
    return Check("gradient = sum_t a_t kron dh_t", worst <= 1e-12, worst, 1e-12, f"{n_cases} conv layers")


def check_hessian_structure(n_cases=10, seed=1, step=1e-5):
    rng = np.random.default_rng(seed)
    worst = 0.0
    approx = []
    for _ in range(n_cases):
        net = random_conv_net(rng, smooth=True, head=True)
        layer = int(rng.integers(0, 2))
        x, y = _point(rng, net)
        terms = hessian_terms(net, layer, x, y, step)
        Hk = assemble_hessian(terms)
        Hfd = brute_force_hessian_W(net, layer, x, y, step)
        worst = max(worst, _rel(Hk, Hfd))
        T = terms.spatial_size
        single = np.kron(sum(terms.A_terms[t, t] for t in range(T)), sum(terms.G_terms[t, t] for t in range(T)) / T)
        approx.append(_rel(single, Hfd))
    return Check("hessian = sum_tt' A_tt' kron G_tt'", worst <= 1e-4, worst, 1e-4,
                 f"{n_cases} nets; single-kron approx median rel err {np.median(approx):.2f} (reported only)")


def check_scaling_identity(n_cases=20, seed=2):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        T, D, I = rng.integers(1, 6), rng.integers(1, 5), rng.integers(1, 4)
        A = [np.outer(v, v) for v in rng.standard_normal((T, D))]
        G = [random_spd(rng, I) for _ in range(T)]
        lhs = T * np.kron(np.mean(A, axis=0), np.mean(G, axis=0))
        rhs = np.kron(np.sum(A, axis=0), np.mean(G, axis=0))
        worst = max(worst, _rel(lhs, rhs))
    return Check("|T| kron(mean A, mean G) = kron(sum A, mean G)", worst <= 1e-12, worst, 1e-12)


def check_A_estimate(n_cases=20, seed=3):
    rng = np.random.default_rng(seed)
    worst_eig, worst_corner = 0.0, 0.0
    for _ in range(n_cases):
        net = random_conv_net(rng, head=False)
        m = int(rng.integers(1, 5))
        x = rng.standard_normal((m,) + net.input_shape)
        _, caches = net.forward_backward(x, rng.random((m, net.output_dim)))
        A = estimate_A(caches[0].a, m)
        worst_eig = min(worst_eig, float(np.linalg.eigvalsh(A)[0]))
        worst_corner = max(worst_corner, abs(A[-1, -1] - caches[0].spatial_size))
    ok = worst_eig >= -1e-10 and worst_corner == 0.0
    return Check("A PSD and corner entry == |T|", ok, max(-worst_eig, worst_corner), 1e-10)


def check_hessian_action(n_cases=100, seed=4):
    """Implicit ``A s`` equals the explicitly formed minibatch ``A``."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        J, H, W, R = rng.integers(1, 4), rng.integers(1, 5), rng.integers(1, 5), rng.integers(0, 2)
        m = int(rng.integers(1, 9))
        from .nn import extract_patches

        patches = extract_patches(rng.standard_normal((m, J, H, W)), int(R))
        A = np.zeros((patches.shape[0],) * 2)
        for col in patches.T:
            A += np.outer(col, col)
        A /= m
        lam = float(rng.uniform(0.1, 3.0))
        H_A = random_spd(rng, patches.shape[0], cond=10.0)
        pair = hessian_action_pair(H_A, patches, m, lam)
        worst = max(worst, _rel(pair.y, A @ pair.s + lam * pair.s))
    return Check("implicit A s == explicit A s", worst <= 1e-12, worst, 1e-12, f"{n_cases} minibatches")


def check_kron_direction(n_cases=50, seed=5):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        I, D = rng.integers(1, 7), rng.integers(1, 9)
        H_A, H_G = random_spd(rng, D), random_spd(rng, I)
        M = rng.standard_normal((I, D))
        ref = unvec(np.kron(H_A, H_G) @ vec(M), I, D)
        worst = max(worst, _rel(H_G @ M @ H_A, ref))
    return Check("H_G M H_A == unvec((H_A kron H_G) vec M)", worst <= 1e-12, worst, 1e-12)


def structure_suite(seed=0):
    return [
        check_gradient_structure(seed=seed),
        check_hessian_structure(seed=seed + 1),
        check_scaling_identity(seed=seed + 2),
        check_A_estimate(seed=seed + 3),
        check_hessian_action(seed=seed + 4),
        check_kron_direction(seed=seed + 5),
    ]


# ----------------------------------------------------------------------------


def _random_pair(rng, n):
    s = rng.standard_normal(n) * np.exp(rng.uniform(-2, 2))
    y = rng.standard_normal(n) * np.exp(rng.uniform(-2, 2))
    if rng.random() < 0.3:
        y = -s * rng.uniform(0.1, 2.0) + 0.1 * y  # strongly negative curvature
    return s, y


def check_dp_dlm(n_cases=1000, seed=10, mu1=0.2):
    rng = np.random.default_rng(seed)
    worst_powell = worst_lm = -np.inf
    for _ in range(n_cases):
        n = int(rng.integers(1, 8))
        H = random_spd(rng, n)
        s, y = _random_pair(rng, n)
        mu2 = float(np.exp(rng.uniform(-3, 3)))
        st, yt = dp_dlm(s, y, H, mu1, mu2)
        worst_powell = max(worst_powell, mu1 * (y @ H @ y) - st @ y)
        worst_lm = max(worst_lm, mu2 * (st @ st) - st @ yt)
    worst = max(worst_powell, worst_lm)
    return Check("D_P D_LM: s~y >= mu1 yHy, s~y~ >= mu2|s~|^2", worst <= SLACK, worst, SLACK,
                 f"{n_cases} cases")


def check_dpi_dlm(n_cases=1000, seed=11, mu1=0.2):
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(n_cases):
        n = int(rng.integers(1, 8))
        s, y = _random_pair(rng, n)
        mu2 = float(np.exp(rng.uniform(-3, 3)))
        st, yt = dpi_dlm(s, y, mu1, mu2)
        sy = st @ yt
        worst = max(worst, (st @ st) / sy - 1 / mu2, (yt @ yt) / sy - 1 / mu3(mu1, mu2))
    return Check("D_P(I) D_LM ratio bounds", worst <= SLACK, worst, SLACK, f"{n_cases} cases")


def damping_suite(seed=0):
    return [check_dp_dlm(seed=seed + 10), check_dpi_dlm(seed=seed + 11)]


# ----------------------------------------------------------------------------


def check_lbfgs_spectrum(seed=20, mu1=0.2, max_p=10, trials=20):
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(trials):
        n = int(rng.integers(2, 8))
        lam_G = float(np.exp(rng.uniform(-2, 2)))
        store = LbfgsStore(n, capacity=max_p, gamma0=1.0 / lam_G)
        for p in range(1, max_p + 1):
            s, y = _random_pair(rng, n)
            store.push(*dpi_dlm(s, y, mu1, lam_G))
            lo, hi = lbfgs_eig_bounds(mu1, lam_G, lam_G, p)
            w = np.linalg.eigvalsh(store.dense())
            worst = max(worst, (lo - w[0]) / lo, (w[-1] - hi) / hi)
    return Check("L-BFGS H_G eigenvalues in [k_low, k_high]", worst <= SLACK, worst, SLACK,
                 f"p = 1..{max_p}, {trials} trials")


def check_bfgs_norms(n_cases=200, seed=21, mu1=0.2):
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(n_cases):
        n = int(rng.integers(1, 7))
        H = random_spd(rng, n, cond=1e3)
        mu2 = float(np.exp(rng.uniform(-2, 2)))
        s, y = dpi_dlm(*_random_pair(rng, n), mu1, mu2)
        bB, bH = bfgs_norm_bounds(H, mu2, mu3(mu1, mu2))
        Hn = bfgs_update(H, s, y)
        w = np.linalg.eigvalsh(Hn)
        worst = max(worst, 1.0 / w[0] - bB, w[-1] - bH)
    return Check("BFGS one-step norm recursions", worst <= 1e-6, worst, 1e-6, f"{n_cases} cases")


def check_convergence_variant_bounds(seed=22, phi=1.0, iters=15, lam=1.0, mu1=0.2):
    """Run the convergence variant on bounded data; ``H_A``, ``H_G`` and their
    Kronecker product stay inside the analytic eigenvalue sandwiches."""
    rng = np.random.default_rng(seed)
    ds = synthetic_dataset("tiny-images", 64, (2, 3, 3, 2), seed=seed, phi=phi)
    net = Network([ConvSpec(2, 3, 1, 3, 3), ConvSpec(3, 2, 1, 3, 3), DenseSpec(18, 2)],
                  ["tanh", "tanh", "identity"], "mse").init_params(seed)
    opt = KBFGSLConvergence(net, 0.05, lam, mu1=mu1, lbfgs_memory=5)
    opt.warm_start(ds.inputs)
    worst = -np.inf
    for k in range(1, iters + 1):
        idx = rng.choice(len(ds), 16, replace=False)
        opt.step(ds.inputs[idx], ds.targets[idx], k)
        for spec, st in zip(net.layers, opt.state):
            # every layer input is bounded by max(phi, 1): data or tanh outputs
            bound = max(phi, 1.0)
            Jd = spec.param_shape[1] - 1
            lo_A, hi_A = ha_eig_bounds(Jd, 1, spec.spatial_size, bound, st.lambda_A)
            wA = np.linalg.eigvalsh(st.H_A)
            lo_G, hi_G = lbfgs_eig_bounds(mu1, st.lambda_G, st.lambda_G, len(st.H_G))
            wG = np.linalg.eigvalsh(st.H_G.dense())
            wK = np.linalg.eigvalsh(np.kron(st.H_A, st.H_G.dense()))
            worst = max(worst, (lo_A - wA[0]) / lo_A, (wA[-1] - hi_A) / hi_A,
                        (lo_G - wG[0]) / lo_G, (wG[-1] - hi_G) / hi_G,
                        (lo_A * lo_G - wK[0]) / (lo_A * lo_G), (wK[-1] - hi_A * hi_G) / (hi_A * hi_G))
    return Check("convergence variant H_A, H_G, H_A kron H_G sandwich", worst <= SLACK, worst, SLACK,
                 f"{iters} iterations, phi={phi}")


def bounds_suite(seed=0):
    return [
        check_lbfgs_spectrum(seed=seed + 20),
        check_bfgs_norms(seed=seed + 21),
        check_convergence_variant_bounds(seed=seed + 22),
    ]


SUITES = {
    "structure": structure_suite,
    "damping": damping_suite,
    "bounds": bounds_suite,
}


def run_suite(name, seed=0):
    if name == "all":
        return [c for fn in SUITES.values() for c in fn(seed)]
    return SUITES[name](seed)
