"""Training runs, CSV run logs and hyperparameter grids."""

from concurrent.futures import ProcessPoolExecutor
import configparser
import csv
from dataclasses import dataclass, field
import itertools
import logging
import os
import time

import numpy as np

from .config import ConfigError, RunConfig
from .data import BatchSampler, find_mnist, load_mnist_idx, synthetic_dataset
from .nn import DivergedError, build_network
from .optim import KFAC, OPTIMIZERS, LRSchedule

log = logging.getLogger(__name__)

CSV_HEADER = ["k", "epoch", "seconds", "train_loss", "val_metric", "skipped_updates", "status"]
TERMINAL = ("completed", "diverged", "aborted")


@dataclass
class LogRow:
    k: int
    epoch: int
    seconds: float | None
    train_loss: float
    val_metric: float | None
    skipped_updates: int
    status: str


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _opt_float(s):
    return float(s) if s != "" else None


@dataclass
class RunLog:
    rows: list = field(default_factory=list)

    @property
    def status(self):
        return self.rows[-1].status if self.rows else "aborted"

    @property
    def final_loss(self):
        """Last full-dataset evaluation, or NaN if the run diverged."""
        if self.status != "completed":
            return float("nan")
        for row in reversed(self.rows):
            if row.val_metric is not None:
                return row.val_metric
        return float("nan")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in self.rows:
                w.writerow([_fmt(getattr(r, name)) for name in CSV_HEADER])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            header = next(rd)
            if header != CSV_HEADER:
                raise ValueError(f"unexpected CSV header {header}")
            rows = [
                LogRow(int(k), int(ep), _opt_float(sec), float(loss), _opt_float(val), int(sk), st)
                for k, ep, sec, loss, val, sk, st in rd
            ]
        return cls(rows)


# ----------------------------------------------------------------------------


def load_dataset(cfg):
    d = cfg.data
    dims = tuple(int(v) for v in d.dims.replace("x", ",").split(",") if v.strip())
    if d.source == "mnist":
        path = d.path or None
        images = find_mnist(path) if (path is None or os.path.isdir(path)) else path
        if images is None:
            raise ConfigError("MNIST files not found; set data.path or $KRONQN_DATA_DIR")
        ds = load_mnist_idx(images, mode="autoencoder")
    elif d.source in ("curves", "bounded-regression", "tiny-images"):
        n = d.n_samples or 10000
        ds = synthetic_dataset(d.source, n, dims, seed=d.seed, phi=d.phi)
    else:
        raise ConfigError(f"unknown data source {d.source!r}")
    if d.n_samples and len(ds) > d.n_samples:
        ds = ds.subset(d.n_samples)
    return ds


def make_network(cfg):
    m = cfg.model
    return build_network(m.arch, m.hidden_activation, m.loss, m.middle_linear).init_params(cfg.run.seed)


def make_optimizer(cfg, net):
    o = cfg.optimizer
    if o.name not in OPTIMIZERS:
        raise ConfigError(f"unknown optimizer {o.name!r}; choose from {sorted(OPTIMIZERS)}")
    lr = LRSchedule(o.lr, o.lr_decay_epochs, o.lr_decay_factor)
    if o.name == "sgdm":
        return OPTIMIZERS["sgdm"](net, lr, beta=o.beta, weight_decay=o.weight_decay)
    if o.name == "adam":
        return OPTIMIZERS["adam"](net, lr, eps=o.damping, weight_decay=o.weight_decay)
    if o.name == "kfac":
        return KFAC(net, lr, o.damping, beta=o.beta, stat_freq=o.stat_freq, inv_freq=o.inv_freq,
                    weight_decay=o.weight_decay, seed=cfg.run.seed + 7919)
    kw = dict(beta=o.beta, mu1=o.mu1, update_freq=o.update_freq, weight_decay=o.weight_decay,
              lbfgs_memory=o.lbfgs_memory)
    if o.name != "kbfgsl-conv":
        kw["hessian_action"] = o.hessian_action
    return OPTIMIZERS[o.name](net, lr, o.damping, **kw)


def full_loss(net, ds, batch_size=1000):
    total = 0.0
    for start in range(0, len(ds), batch_size):
        sl = slice(start, start + batch_size)
        total += net.loss(ds.inputs[sl], ds.targets[sl]) * (min(start + batch_size, len(ds)) - start)
    return total / len(ds)


def run_training(cfg, dataset=None, csv_path=None):
    """Train according to ``cfg``; returns the :class:`RunLog` (and writes CSV if asked)."""
    # overflow on a diverging run surfaces as a non-finite loss; no need for warnings
    with np.errstate(over="ignore", invalid="ignore"):
        return _run_training(cfg, dataset, csv_path)


def _run_training(cfg, dataset, csv_path):
    ds = load_dataset(cfg) if dataset is None else dataset
    net = make_network(cfg)
    opt = make_optimizer(cfg, net)
    r = cfg.run
    t0 = time.perf_counter()

    def clock():
        return time.perf_counter() - t0 if r.log_wallclock else None

    runlog = RunLog()
    status = "completed"
    try:
        opt.warm_start(ds.inputs, ds.targets, batch_size=r.batch_size)
        sampler = BatchSampler(len(ds), r.batch_size, seed=r.seed, drop_last=r.drop_last)
        k = 0
        for epoch in range(r.epochs):
            for idx in sampler.epoch_indices():
                k += 1
                loss = opt.step(ds.inputs[idx], ds.targets[idx], k, epoch)
                val = None
                if r.eval_every and k % r.eval_every == 0:
                    val = full_loss(net, ds, r.batch_size)
                runlog.rows.append(LogRow(k, epoch, clock(), loss, val, opt.skipped, "running"))
            if not r.eval_every and runlog.rows:
                runlog.rows[-1].val_metric = full_loss(net, ds, r.batch_size)
        last = runlog.rows[-1] if runlog.rows else None
        if last is not None and last.val_metric is None:
            last.val_metric = full_loss(net, ds, r.batch_size)
        if last is not None and not np.isfinite(last.val_metric):
            status = "diverged"
    except (DivergedError, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.info("run diverged: %s", exc)
        status = "diverged"
        k_last = runlog.rows[-1].k + 1 if runlog.rows else 1
        runlog.rows.append(LogRow(k_last, runlog.rows[-1].epoch if runlog.rows else 0, clock(),
                                  float("nan"), None, opt.skipped, status))
    if runlog.rows:
        runlog.rows[-1].status = status
    else:
        runlog.rows.append(LogRow(0, 0, clock(), float("nan"), None, 0, "aborted"))
    if csv_path:
        runlog.to_csv(csv_path)
    return runlog


# ----------------------------------------------------------------------------
# grid search


def parse_grid(text):
    """``[grid]`` section mapping ``section.key`` to comma-separated values."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    cp.read_string(text)
    if "grid" not in cp:
        raise ConfigError("grid file needs a [grid] section")
    axes = {}
    for key, raw in cp["grid"].items():
        RunConfig().set(key, raw.split(",")[0].strip())  # validates the key
        axes[key] = [v.strip() for v in raw.split(",") if v.strip()]
    return axes


def cell_seed(base_seed, index):
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0] % (2 ** 31))


def grid_cells(base, axes, derive_seeds=True):
    keys = list(axes)
    for idx, combo in enumerate(itertools.product(*(axes[k] for k in keys))):
        cfg = base.replace()
        for k, v in zip(keys, combo):
            cfg.set(k, v)
        if derive_seeds:
            cfg.run.seed = cell_seed(base.run.seed, idx)
        yield idx, dict(zip(keys, combo)), cfg


def _run_cell(args):
    idx, cfg, csv_path = args
    rl = run_training(cfg, csv_path=csv_path)
    return idx, rl.final_loss, rl.status


def run_grid(base, axes, out_dir, parallel=1, derive_seeds=True):
    """Run every grid cell; write per-cell CSVs and ``summary.csv``.

    Returns ``(summary_rows, best_row)``; diverged cells never win.
    """
    os.makedirs(out_dir, exist_ok=True)
    cells = list(grid_cells(base, axes, derive_seeds))
    jobs = [(idx, cfg, os.path.join(out_dir, f"cell_{idx:03d}.csv")) for idx, _, cfg in cells]
    if parallel > 1:
        with ProcessPoolExecutor(parallel) as ex:
            results = sorted(ex.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    rows = []
    for (idx, values, cfg), (_, loss, status) in zip(cells, results):
        rows.append({"cell": idx, "seed": cfg.run.seed, **values, "final_loss": loss, "status": status,
                     "csv": f"cell_{idx:03d}.csv"})
    best = select_best(rows)
    with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(v) for k, v in row.items()})
    return rows, best


def select_best(rows):
    ok = [r for r in rows if r["status"] == "completed" and np.isfinite(r["final_loss"])]
    return min(ok, key=lambda r: (r["final_loss"], r["cell"])) if ok else None
