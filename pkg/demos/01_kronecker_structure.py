"""Kronecker structure of a conv layer's gradient and Hessian.

For a single data point, a convolutional layer's gradient is a sum of
|T| Kronecker products and its Hessian a sum of |T|^2 of them.  This
script checks both against backprop / finite differences on a tiny
network, then measures how much is lost by the single-Kronecker
approximation the optimizers rely on.
"""

import numpy as np

from kronqn.kron import assemble_hessian, brute_force_hessian_W, gradient_kron_sum, hessian_terms
from kronqn.nn import ConvSpec, DenseSpec, Network
from kronqn.tensor import vec

rng = np.random.default_rng(0)
net = Network([ConvSpec(2, 3, 1, 3, 3), DenseSpec(27, 2)], ["tanh", "identity"], "mse").init_params(0)
x = rng.standard_normal((1, 2, 3, 3))
y = rng.random((1, 2))

_, caches = net.forward_backward(x, y)
c = caches[0]
print(f"conv layer: W is {c.dW.shape}, patches a are {c.a.shape} (|T| = {c.spatial_size})")

g_sum = gradient_kron_sum(c.a, c.dh)
err = np.linalg.norm(g_sum - vec(c.dW)) / np.linalg.norm(g_sum)
print(f"gradient as a sum of kron(a_t, dh_t): rel err vs backprop {err:.1e}")

terms = hessian_terms(net, 0, x, y)
H_sum = assemble_hessian(terms)
H_fd = brute_force_hessian_W(net, 0, x, y)
print(f"Hessian as sum of kron(A_tt', G_tt'): rel err vs finite differences "
      f"{np.linalg.norm(H_sum - H_fd) / np.linalg.norm(H_fd):.1e}")

# the optimizers keep one Kronecker product: (sum_t A_tt) kron (mean_t G_tt)
T = terms.spatial_size
approx = np.kron(sum(terms.A_terms[t, t] for t in range(T)), sum(terms.G_terms[t, t] for t in range(T)) / T)
print(f"single-Kronecker approximation: rel err {np.linalg.norm(approx - H_fd) / np.linalg.norm(H_fd):.2f}")
