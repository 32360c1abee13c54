"""Damped curvature pairs and the eigenvalue bounds they imply.

Quasi-Newton updates need s^T y > 0, which a non-convex loss does not
provide.  Powell damping mixes s toward H y and Levenberg-Marquardt
damping adds mu2 * s to y.  With H replaced by I / mu2 the damped pairs
keep every L-BFGS inverse inside a closed-form eigenvalue interval.
"""

import numpy as np

from kronqn.curvature import LbfgsStore, dp_dlm, dpi_dlm, lbfgs_eig_bounds, mu3

s, y = np.array([1.0, 0.0]), np.array([-1.0, 0.0])  # negative curvature
s_t, y_t = dp_dlm(s, y, np.eye(2), mu1=0.2, mu2=1.0)
print(f"raw s^T y = {s @ y:+.2f}; damped s~ = {s_t}, y~ = {y_t}, s~^T y~ = {s_t @ y_t:.2f}")
print(f"mu3 for mu1=0.2, mu2=1: {mu3(0.2, 1.0):.7f}")

rng = np.random.default_rng(1)
lam_G = 0.5
store = LbfgsStore(6, capacity=10, gamma0=1 / lam_G)
print("\n p   min eig   lower bound    max eig   upper bound")
for p in range(1, 11):
    store.push(*dpi_dlm(rng.standard_normal(6), rng.standard_normal(6), 0.2, lam_G))
    w = np.linalg.eigvalsh(store.dense())
    lo, hi = lbfgs_eig_bounds(0.2, lam_G, lam_G, p)
    print(f"{p:2d}  {w[0]:9.4f}  {lo:11.4f}  {w[-1]:9.3f}  {hi:12.4g}")
