"""K-BFGS on a small convolutional network.

Conv layers get a split damping (lambda_A = sqrt(|T| lambda),
lambda_G = sqrt(lambda / |T|)) and their H_A is updated from the patch
matrix without ever forming A.  Trained here on random 3x6x6 images with
a smooth regression target, next to KFAC and SGD-m.
"""

import numpy as np

from kronqn.data import BatchSampler, synthetic_dataset
from kronqn.nn import build_network
from kronqn.optim import KBFGS, KFAC, SGDM, KBFGSLConvergence

ds = synthetic_dataset("tiny-images", 512, (3, 6, 6, 4), seed=0)


def train(make_opt, epochs=15, seed=0):
    net = build_network("3x6x6-c8r1-c8r1-d4", "tanh", "mse").init_params(seed)
    opt = make_opt(net)
    opt.warm_start(ds.inputs, ds.targets, batch_size=128)
    sampler = BatchSampler(len(ds), 64, seed=seed)
    k = 0
    for _ in range(epochs):
        for idx in sampler.epoch_indices():
            k += 1
            opt.step(ds.inputs[idx], ds.targets[idx], k)
    return net.loss(ds.inputs, ds.targets)


net0 = build_network("3x6x6-c8r1-c8r1-d4", "tanh", "mse").init_params(0)
print(f"initial loss {net0.loss(ds.inputs, ds.targets):.4f}")
for name, make in [
    ("K-BFGS", lambda n: KBFGS(n, 0.03, 0.3)),
    ("K-BFGS(L) convergent variant", lambda n: KBFGSLConvergence(n, 0.03, 1.0, lbfgs_memory=10)),
    ("KFAC", lambda n: KFAC(n, 0.03, 0.3)),
    ("SGD-m", lambda n: SGDM(n, 0.01)),
]:
    print(f"{name:30s} final loss {train(make):.4f}")
