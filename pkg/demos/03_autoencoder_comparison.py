"""K-BFGS, K-BFGS(L), KFAC, Adam and SGD-m on a small autoencoder.

A scaled-down version of the MLP autoencoder protocol: synthetic 28x28
stroke images (or MNIST if $KRONQN_DATA_DIR has it), a
784-256-32-256-784 network with a linear code layer, binary
cross-entropy, minibatches of 1000.  Hyperparameters are taken from
small grid searches on the synthetic data.
"""

import sys
import time

from kronqn.config import RunConfig
from kronqn.data import find_mnist
from kronqn.harness import load_dataset, run_training

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 5

cfg = RunConfig()
cfg.model.arch = "784-256-32-256-784"
cfg.data.n_samples = 3000
cfg.run.epochs = epochs
if find_mnist():
    cfg.data.source, cfg.data.path = "mnist", find_mnist()
ds = load_dataset(cfg)
print(f"{len(ds)} samples from {ds.name}, {epochs} epochs\n")

settings = [
    ("kbfgs", 0.01, 0.3),
    ("kbfgsl", 0.01, 0.3),
    ("kfac", 0.3, 10.0),
    ("adam", 1e-3, 1e-8),
    ("sgdm", 0.01, 1.0),
]
for name, lr, damping in settings:
    t0 = time.perf_counter()
    log = run_training(cfg.replace(optimizer__name=name, optimizer__lr=lr, optimizer__damping=damping), ds)
    curve = [f"{r.val_metric:.1f}" for r in log.rows if r.val_metric is not None]
    print(f"{name:7s} lr={lr:<6g} damping={damping:<6g} {log.status:9s} "
          f"loss by epoch: {' '.join(curve)}  ({time.perf_counter() - t0:.0f}s)")
