"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The comparative runs (criteria 9 and 10) train the reduced
784-256-32-256-784 autoencoder for 20 epochs with minibatches of 1000.
They use MNIST when ``$KRONQN_DATA_DIR`` holds the IDX files and the
synthetic ``curves`` images otherwise.
"""

import filecmp
import time

import numpy as np
import pytest

from kronqn import verify
from kronqn.cli import main
from kronqn.config import RunConfig
from kronqn.data import find_mnist
from kronqn.harness import load_dataset, run_training
from kronqn.nn import DenseSpec, LayerCache, build_network
from kronqn.optim import KBFGS, kfac_pi

N_SAMPLES = 5000
SEEDS = range(5)
LRS = (0.003, 0.01, 0.03)
DAMPINGS = (0.3, 1.0, 3.0)


def timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


def test_c01_gradient_structure(record_criterion):
    check, secs = timed(verify.check_gradient_structure, n_cases=50)
    ok = check.passed and secs < 5
    record_criterion(1, "gradient = sum_t a_t kron dh_t", ok, f"max rel err {check.measured:.2e} in {secs:.2f}s")
    assert ok


def test_c02_hessian_structure(record_criterion):
    check, secs = timed(verify.check_hessian_structure, n_cases=12)
    ok = check.passed and secs < 120
    record_criterion(2, "hessian = sum A_tt' kron G_tt'", ok, f"max rel err {check.measured:.2e} in {secs:.2f}s")
    assert ok


GRADIENT_CASES = [
    (arch, act, loss)
    for arch in ("2x3x3-c2r1-c2r0-d3", "1x3x2-c3r1-c2r1-d4", "6-5-3-5-6", "4-6-3")
    for act in ("relu", "sigmoid", "tanh")
    for loss in ("mse", "bce_with_sigmoid", "softmax_ce")
]


def _fd_worst(arch, act, loss, rng, step=1e-5):
    net = build_network(arch, act, loss, middle_linear=arch == "6-5-3-5-6").init_params(int(rng.integers(1000)))
    for p in net.params:
        p[:, -1] = 0.2 * rng.standard_normal(p.shape[0])
    x = rng.standard_normal((3,) + net.input_shape)
    y = rng.integers(0, net.output_dim, 3) if loss == "softmax_ce" else rng.random((3, net.output_dim))
    _, caches = net.forward_backward(x, y)
    worst = 0.0
    for W, c in zip(net.params, caches):
        g = np.zeros_like(W)
        for idx in np.ndindex(W.shape):
            old = W[idx]
            W[idx] = old + step
            fp = net.loss(x, y)
            W[idx] = old - step
            fm = net.loss(x, y)
            W[idx] = old
            g[idx] = (fp - fm) / (2 * step)
        worst = max(worst, np.linalg.norm(c.dW - g) / np.linalg.norm(g))
    return worst


def test_c03_gradient_checks(record_criterion):
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    worst = max(_fd_worst(*case, rng) for case in GRADIENT_CASES)
    secs = time.perf_counter() - t0
    ok = worst <= 1e-6 and secs < 60
    record_criterion(3, "finite-difference gradient checks", ok,
                     f"{len(GRADIENT_CASES)} arch/activation/loss combos, max rel err {worst:.2e} in {secs:.1f}s")
    assert ok


def test_c04_damping(record_criterion):
    t0 = time.perf_counter()
    checks = [verify.check_dp_dlm(n_cases=1000), verify.check_dpi_dlm(n_cases=1000)]
    secs = time.perf_counter() - t0
    ok = all(c.passed for c in checks) and secs < 10
    record_criterion(4, "damping guarantees", ok,
                     f"worst violations {checks[0].measured:.1e}, {checks[1].measured:.1e} in {secs:.2f}s")
    assert ok


def test_c05_spectral_bounds(record_criterion):
    t0 = time.perf_counter()
    checks = verify.bounds_suite()
    secs = time.perf_counter() - t0
    ok = all(c.passed for c in checks) and secs < 30
    record_criterion(5, "spectral bounds", ok,
                     "; ".join(f"{c.name}: {c.measured:.1e}" for c in checks) + f" in {secs:.2f}s")
    assert ok


def test_c06_implicit_hessian_action(record_criterion):
    check, secs = timed(verify.check_hessian_action, n_cases=100)
    ok = check.passed and secs < 5
    record_criterion(6, "implicit A s", ok, f"max rel err {check.measured:.2e} in {secs:.2f}s")
    assert ok


def test_c07_kron_direction(record_criterion):
    check, secs = timed(verify.check_kron_direction, n_cases=200)
    ok = check.passed and secs < 5
    record_criterion(7, "Kronecker direction identity", ok, f"max rel err {check.measured:.2e} in {secs:.2f}s")
    assert ok


class QuadraticLayer:
    """``f(W) = 1/2 tr((W - W*) A (W - W*)^T G)``; Hessian ``kron(A, G)`` in vec(W)."""

    def __init__(self, A, G, W_star):
        self.A, self.G, self.W_star = A, G, W_star
        self.layers = [DenseSpec(A.shape[0] - 1, G.shape[0])]
        self.params = [np.zeros_like(W_star)]

    def forward_backward(self, x, y, params=None):
        D = self.params[0] - self.W_star
        loss = 0.5 * np.trace(D @ self.A @ D.T @ self.G)
        return loss, [LayerCache(None, None, None, self.G @ D @ self.A, 1, 1)]


def test_c08_newton_exactness(record_criterion):
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(10):
        I, D = int(rng.integers(1, 6)), int(rng.integers(2, 8))
        A, G = verify.random_spd(rng, D, 50.0), verify.random_spd(rng, I, 50.0)
        net = QuadraticLayer(A, G, rng.standard_normal((I, D)))
        opt = KBFGS(net, 1.0, 1.0, beta=0.0, update_freq=10 ** 9)
        opt.init_state([A])
        opt.state[0].H_A = np.linalg.inv(A)
        opt.state[0].H_G = np.linalg.inv(G)
        opt.step(None, None, 1)
        worst = max(worst, float(np.abs(net.params[0] - net.W_star).max()))
    ok = worst <= 1e-8
    record_criterion(8, "one Newton step on a Kronecker quadratic", ok, f"max residual {worst:.2e}")
    assert ok


# ----------------------------------------------------------------------------
# comparative runs


def _base_config():
    cfg = RunConfig()
    cfg.model.arch = "784-256-32-256-784"
    cfg.model.hidden_activation = "relu"
    cfg.model.loss = "bce_with_sigmoid"
    cfg.model.middle_linear = True
    mnist = find_mnist()
    if mnist:
        cfg.data.source, cfg.data.path = "mnist", mnist
    else:
        cfg.data.source, cfg.data.dims = "curves", "28"
    cfg.data.n_samples = N_SAMPLES
    cfg.run.epochs = 20
    cfg.run.batch_size = 1000
    return cfg


def _median_at(cfg, ds, first_loss, **over):
    losses = [first_loss]
    for seed in list(SEEDS)[1:]:
        losses.append(run_training(cfg.replace(run__seed=seed, **over), ds).final_loss)
    return float(np.median(losses)), losses


@pytest.fixture(scope="module")
def comparative():
    t0 = time.perf_counter()
    cfg = _base_config()
    ds = load_dataset(cfg)
    grids = {
        "kbfgs": [(lr, d) for lr in LRS for d in DAMPINGS],
        "kbfgsl": [(lr, d) for lr in LRS for d in DAMPINGS],
        "sgdm": [(lr, 1.0) for lr in LRS],
    }
    out = {"data": ds.name}
    for name, cells in grids.items():
        # the grid is searched on seed 0; the best cell is then rerun on the other seeds
        scores = []
        for lr, d in cells:
            loss = run_training(cfg.replace(optimizer__name=name, optimizer__lr=lr, optimizer__damping=d,
                                            run__seed=0), ds).final_loss
            scores.append((np.inf if np.isnan(loss) else loss, lr, d))
        best_loss, lr, d = min(scores)
        med, losses = _median_at(cfg, ds, best_loss, optimizer__name=name, optimizer__lr=lr, optimizer__damping=d)
        out[name] = {"lr": lr, "damping": d, "median": med, "losses": losses}
    out["seconds_9"] = time.perf_counter() - t0
    kb = out["kbfgs"]
    ma_first = run_training(cfg.replace(optimizer__name="kbfgs", optimizer__lr=kb["lr"],
                                        optimizer__damping=kb["damping"], optimizer__hessian_action="moving-average",
                                        run__seed=0), ds).final_loss
    med, losses = _median_at(cfg, ds, ma_first, optimizer__name="kbfgs", optimizer__lr=kb["lr"],
                             optimizer__damping=kb["damping"], optimizer__hessian_action="moving-average")
    out["moving-average"] = {"median": med, "losses": losses}
    out["seconds"] = time.perf_counter() - t0
    return out


def _fmt(res):
    return f"median {res['median']:.2f} at lr={res['lr']}, damping={res['damping']}"


@pytest.mark.slow
def test_c09_comparative_training(comparative, record_criterion):
    c = comparative
    sg = c["sgdm"]["median"]
    ok = c["kbfgs"]["median"] <= sg and c["kbfgsl"]["median"] <= sg and c["seconds_9"] < 1800
    detail = (f"[{c['data']}] K-BFGS {_fmt(c['kbfgs'])}; K-BFGS(L) {_fmt(c['kbfgsl'])}; "
              f"SGD-m median {sg:.2f} at lr={c['sgdm']['lr']}; {c['seconds_9']:.0f}s")
    record_criterion(9, "K-BFGS and K-BFGS(L) <= best SGD-m", ok, detail)
    assert ok


@pytest.mark.slow
def test_c10_hessian_action_ablation(comparative, record_criterion):
    mb, ma = comparative["kbfgs"]["median"], comparative["moving-average"]["median"]
    ok = mb <= ma * 1.02 and comparative["seconds"] < 1800
    record_criterion(10, "minibatched <= moving-average + 2%", ok,
                     f"minibatched median {mb:.2f}, moving-average median {ma:.2f} "
                     f"(ratio {mb / ma:.4f}); total {comparative['seconds']:.0f}s")
    assert ok


def test_c11_deterministic_replay(tmp_path, record_criterion):
    cfg = RunConfig()
    cfg.model.arch = "64-16-4-16-64"
    cfg.data.dims = "8"
    cfg.data.n_samples = 300
    cfg.run.epochs = 3
    cfg.run.batch_size = 100
    cfg.optimizer.lr = 0.01
    cfg.optimizer.damping = 1.0
    cfg.save(tmp_path / "run.ini")
    codes = [main(["train", "--config", str(tmp_path / "run.ini"), "--seed", "11", "--out", str(tmp_path / d)])
             for d in ("first", "second")]
    same = filecmp.cmp(tmp_path / "first" / "run.csv", tmp_path / "second" / "run.csv", shallow=False)
    ok = codes == [0, 0] and same
    record_criterion(11, "byte-identical CSVs on replay", ok, f"exit codes {codes}, identical={same}")
    assert ok


def test_c12_kfac_pi(record_criterion):
    rng = np.random.default_rng(12)
    worst = 0.0
    for _ in range(50):
        no, ng = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        Om, Ga = verify.random_spd(rng, no), verify.random_spd(rng, ng)
        explicit = np.sqrt(np.trace(np.kron(Om, np.eye(ng))) / np.trace(np.kron(np.eye(no), Ga)))
        worst = max(worst, abs(kfac_pi(Om, Ga) - explicit) / explicit)
    M = verify.random_spd(rng, 4)
    S = verify.random_spd(rng, 4)
    S *= np.trace(M) / np.trace(S)
    unit = [kfac_pi(M, M), kfac_pi(M, S)]
    ok = worst <= 1e-12 and all(abs(u - 1.0) <= 1e-12 for u in unit)
    record_criterion(12, "KFAC pi split", ok, f"max rel err {worst:.1e}; equal-trace pi {unit}")
    assert ok
