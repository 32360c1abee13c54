"""Feed-forward networks of dense and stride-1 convolutional layers.

Every trainable layer stores its parameters as one matrix ``W`` whose last
column is the bias.  Forward/backward passes expose, per layer, the
homogeneous inputs ``a`` (one column per sample and spatial location),
the pre-activations ``h`` and the per-sample gradients ``dh = df(n)/dh``.
The minibatch loss is the mean of the per-sample losses, so the parameter
gradient is ``dW = dh @ a.T / m``.

Column ordering of ``a``/``h``/``dh`` is sample-major: column
``n * |T| + t`` with ``t = row * width + col``.  Rows of a conv ``a`` are
channel-major: ``j * |Δ| + offset_index`` followed by the constant 1.
"""

from dataclasses import dataclass, field
import re

import numpy as np
from scipy.special import expit

ACTIVATIONS = ("relu", "sigmoid", "tanh", "identity")
LOSSES = ("mse", "bce_with_sigmoid", "softmax_ce")


class DivergedError(FloatingPointError):
    """A loss or update direction became non-finite."""


@dataclass(frozen=True)
class DenseSpec:
    in_dim: int
    out_dim: int

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError(f"dense dims must be positive, got {self.in_dim}->{self.out_dim}")

    kind = "dense"
    spatial_size = 1

    @property
    def param_shape(self):
        return (self.out_dim, self.in_dim + 1)

    @property
    def input_shape(self):
        return (self.in_dim,)

    @property
    def output_shape(self):
        return (self.out_dim,)

    @property
    def fan(self):
        return self.in_dim, self.out_dim


@dataclass(frozen=True)
class ConvSpec:
    """2-D convolution, stride 1, zero padding ``radius``; spatial extent preserved."""

    in_channels: int
    out_channels: int
    radius: int
    height: int
    width: int

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.height, self.width) < 1 or self.radius < 0:
            raise ValueError(f"invalid conv spec {self}")

    kind = "conv"

    @property
    def n_offsets(self):
        return (2 * self.radius + 1) ** 2

    @property
    def spatial_size(self):
        return self.height * self.width

    @property
    def param_shape(self):
        return (self.out_channels, self.in_channels * self.n_offsets + 1)

    @property
    def input_shape(self):
        return (self.in_channels, self.height, self.width)

    @property
    def output_shape(self):
        return (self.out_channels, self.height, self.width)

    @property
    def fan(self):
        return self.in_channels * self.n_offsets, self.out_channels * self.n_offsets


@dataclass
class LayerCache:
    a: np.ndarray
    h: np.ndarray
    dh: np.ndarray
    dW: np.ndarray
    batch_size: int
    spatial_size: int


# ----------------------------------------------------------------------------
# convolution kernels


def _offsets(radius):
    r = range(-radius, radius + 1)
    return [(dy, dx) for dy in r for dx in r]


def extract_patches(x, radius):
    """Patch matrix of shape ``(J*|Δ| + 1, m*H*W)``; padding reads as zero.

    ``x`` is ``(J, H, W)`` for one sample or ``(m, J, H, W)`` for a batch.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4:
        raise ValueError(f"expected (m, J, H, W) input, got shape {x.shape}")
    m, J, H, W = x.shape
    R = radius
    xp = np.pad(x, ((0, 0), (0, 0), (R, R), (R, R)))
    offs = _offsets(R)
    cols = np.empty((J, len(offs), m, H, W))
    for k, (dy, dx) in enumerate(offs):
        cols[:, k] = xp[:, :, R + dy:R + dy + H, R + dx:R + dx + W].transpose(1, 0, 2, 3)
    cols = cols.reshape(J * len(offs), m * H * W)
    return np.vstack([cols, np.ones((1, m * H * W))])


def fold_patches(dcols, shape, radius):
    """Adjoint of :func:`extract_patches` (without the homogeneous row)."""
    m, J, H, W = shape
    R = radius
    offs = _offsets(R)
    dcols = dcols.reshape(J, len(offs), m, H, W)
    dxp = np.zeros((m, J, H + 2 * R, W + 2 * R))
    for k, (dy, dx) in enumerate(offs):
        dxp[:, :, R + dy:R + dy + H, R + dx:R + dx + W] += dcols[:, k].transpose(1, 0, 2, 3)
    return dxp[:, :, R:R + H, R:R + W]


def conv_weight_tensor(W, spec):
    """Split ``W`` into the ``(I, J, 2R+1, 2R+1)`` filter bank and bias."""
    k = 2 * spec.radius + 1
    return W[:, :-1].reshape(spec.out_channels, spec.in_channels, k, k), W[:, -1].copy()


def conv_params(weights, bias):
    weights = np.asarray(weights, dtype=np.float64)
    return np.hstack([weights.reshape(weights.shape[0], -1), np.asarray(bias, dtype=np.float64)[:, None]])


def conv_forward(W, x, radius):
    """Return ``(h, patches)`` with ``h = W @ patches`` of shape ``(I, m*|T|)``."""
    patches = extract_patches(x, radius)
    if W.shape[1] != patches.shape[0]:
        raise ValueError(f"weight columns {W.shape[1]} do not match patch rows {patches.shape[0]}")
    return W @ patches, patches


def conv_backward(W, patches, dh, x_shape, radius):
    """Return ``(dW, dx)`` for per-sample ``dh``; ``dW`` is the minibatch mean."""
    m = x_shape[0]
    if patches.shape[1] != dh.shape[1]:
        raise ValueError("stale cache: patch and gradient column counts differ")
    dW = dh @ patches.T / m
    dx = fold_patches(W[:, :-1].T @ dh, x_shape, radius)
    return dW, dx


def spatial_average(values, spatial_size=None):
    """Mean over spatial columns.

    With ``spatial_size`` the columns are grouped per sample and a
    ``(rows, m)`` array is returned; otherwise all columns are averaged.
    """
    values = np.asarray(values, dtype=np.float64)
    if spatial_size is None:
        return values.mean(axis=-1)
    rows, cols = values.shape
    return values.reshape(rows, cols // spatial_size, spatial_size).mean(axis=-1)


# ----------------------------------------------------------------------------
# activations and losses


def activate(kind, h):
    if kind == "relu":
        return np.maximum(h, 0.0)
    if kind == "sigmoid":
        return _sigmoid(h)
    if kind == "tanh":
        return np.tanh(h)
    if kind == "identity":
        return h
    raise ValueError(f"unknown activation {kind!r}")


def activation_grad(kind, h, out, upstream):
    if kind == "relu":
        return upstream * (h > 0)
    if kind == "sigmoid":
        return upstream * out * (1.0 - out)
    if kind == "tanh":
        return upstream * (1.0 - out * out)
    if kind == "identity":
        return upstream
    raise ValueError(f"unknown activation {kind!r}")


def _sigmoid(z):
    return expit(z)


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _as_targets(kind, y, k):
    y = np.asarray(y)
    if kind == "softmax_ce" and y.ndim == 1:
        onehot = np.zeros((y.shape[0], k))
        onehot[np.arange(y.shape[0]), y.astype(int)] = 1.0
        return onehot
    return y.reshape(y.shape[0], -1).astype(np.float64)


def loss_and_grad(kind, z, y):
    """Per-sample losses ``(m,)`` and per-sample gradients ``df(n)/dz``."""
    if kind == "mse":
        r = z - y
        return 0.5 * np.sum(r * r, axis=1), r
    if kind == "bce_with_sigmoid":
        # one exp serves both the stable log-loss and the sigmoid
        e = np.exp(-np.abs(z))
        f = np.maximum(z, 0.0) - y * z + np.log1p(e)
        r = 1.0 / (1.0 + e)
        return f.sum(axis=1), np.where(z >= 0, r, e * r) - y
    if kind == "softmax_ce":
        logp = _log_softmax(z)
        return -np.sum(y * logp, axis=1), np.exp(logp) * y.sum(axis=1, keepdims=True) - y
    raise ValueError(f"unknown loss {kind!r}")


def sample_targets(kind, z, rng):
    """Draw targets from the model's predictive distribution at logits ``z``."""
    if kind == "mse":
        return z + rng.standard_normal(z.shape)
    if kind == "bce_with_sigmoid":
        return (rng.random(z.shape) < _sigmoid(z)).astype(np.float64)
    if kind == "softmax_ce":
        p = np.exp(_log_softmax(z))
        u = rng.random((z.shape[0], 1))
        idx = np.minimum((p.cumsum(axis=1) < u).sum(axis=1), z.shape[1] - 1)
        out = np.zeros_like(z)
        out[np.arange(z.shape[0]), idx] = 1.0
        return out
    raise ValueError(f"unknown loss {kind!r}")


# ----------------------------------------------------------------------------
# network


@dataclass
class _Trace:
    inputs: list = field(default_factory=list)  # layer input tensors (sample-major)
    a: list = field(default_factory=list)
    h: list = field(default_factory=list)
    out: list = field(default_factory=list)  # activation outputs in tensor layout


class Network:
    """Ordered dense/conv layers with an activation after each layer.

    ``params[l]`` is the ``W`` matrix of layer ``l``.  The activation of the
    last layer is normally ``identity`` since the loss owns its link
    function.
    """

    def __init__(self, layers, activations, loss, params=None):
        if len(layers) != len(activations):
            raise ValueError("need one activation per layer")
        for act in activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        if loss not in LOSSES:
            raise ValueError(f"unknown loss {loss!r}")
        for prev, nxt in zip(layers, layers[1:]):
            if int(np.prod(prev.output_shape)) != int(np.prod(nxt.input_shape)):
                raise ValueError(f"incompatible layers: {prev} -> {nxt}")
            if nxt.kind == "conv" and prev.output_shape != nxt.input_shape:
                raise ValueError(f"conv layer input {nxt.input_shape} != {prev.output_shape}")
        self.layers = list(layers)
        self.activations = list(activations)
        self.loss_kind = loss
        if params is None:
            params = [np.zeros(spec.param_shape) for spec in self.layers]
        self.params = [np.asarray(p, dtype=np.float64) for p in params]

    @classmethod
    def mlp(cls, widths, hidden="relu", loss="mse", middle_linear=False):
        layers = [DenseSpec(a, b) for a, b in zip(widths[:-1], widths[1:])]
        acts = [hidden] * (len(layers) - 1) + ["identity"]
        if middle_linear and len(widths) % 2 == 1 and len(layers) > 1:
            acts[len(widths) // 2 - 1] = "identity"
        return cls(layers, acts, loss)

    def __len__(self):
        return len(self.layers)

    @property
    def input_shape(self):
        return self.layers[0].input_shape

    @property
    def output_dim(self):
        return int(np.prod(self.layers[-1].output_shape))

    def num_params(self):
        return sum(p.size for p in self.params)

    def copy(self):
        return Network(self.layers, self.activations, self.loss_kind, [p.copy() for p in self.params])

    def init_params(self, seed):
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        for l, spec in enumerate(self.layers):
            fan_in, fan_out = spec.fan
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            W = np.zeros(spec.param_shape)
            W[:, :-1] = rng.uniform(-bound, bound, size=(spec.param_shape[0], spec.param_shape[1] - 1))
            self.params[l] = W
        return self

    # -- layout helpers -----------------------------------------------------

    def _to_h(self, l, tensor):
        spec = self.layers[l]
        if spec.kind == "conv":
            m = tensor.shape[0]
            return tensor.transpose(1, 0, 2, 3).reshape(spec.out_channels, m * spec.spatial_size)
        return tensor.T

    def _from_h(self, l, h):
        spec = self.layers[l]
        if spec.kind == "conv":
            m = h.shape[1] // spec.spatial_size
            return h.reshape(spec.out_channels, m, spec.height, spec.width).transpose(1, 0, 2, 3)
        return h.T

    def _layer_input(self, l, x):
        spec = self.layers[l]
        m = x.shape[0]
        return x.reshape((m,) + spec.input_shape)

    # -- passes ---------------------------------------------------------------

    def _forward(self, x, params, start=0, h_start=None):
        trace = _Trace()
        out = None
        for l in range(start, len(self.layers)):
            spec, W = self.layers[l], params[l]
            if l == start and h_start is not None:
                h, a, xin = h_start, None, None
            else:
                xin = self._layer_input(l, x if out is None else out)
                if spec.kind == "conv":
                    h, a = conv_forward(W, xin, spec.radius)
                else:
                    a = np.vstack([xin.T, np.ones((1, xin.shape[0]))])
                    h = W @ a
            out = activate(self.activations[l], self._from_h(l, h))
            trace.inputs.append(xin)
            trace.a.append(a)
            trace.h.append(h)
            trace.out.append(out)
        z = out.reshape(out.shape[0], -1)
        return z, trace

    def _backward(self, dz, params, trace, start=0, need_dW=True):
        """Return per-layer ``(dh, dW)`` lists, indexed from ``start``."""
        n = len(self.layers) - start
        dhs, dWs = [None] * n, [None] * n
        up = dz
        m = dz.shape[0]
        for i in range(n - 1, -1, -1):
            l = start + i
            spec = self.layers[l]
            up = up.reshape(trace.out[i].shape)
            g = activation_grad(self.activations[l], self._from_h(l, trace.h[i]), trace.out[i], up)
            dh = self._to_h(l, g)
            dhs[i] = dh
            if need_dW and trace.a[i] is not None:
                dWs[i] = dh @ trace.a[i].T / m
            if i == 0:
                break
            W = params[l]
            if spec.kind == "conv":
                up = fold_patches(W[:, :-1].T @ dh, trace.inputs[i].shape, spec.radius)
            else:
                up = (W[:, :-1].T @ dh).T
        return dhs, dWs

    def predict(self, x, params=None):
        z, _ = self._forward(np.asarray(x, dtype=np.float64), self.params if params is None else params)
        return z

    def loss(self, x, y, params=None):
        z = self.predict(x, params)
        f, _ = loss_and_grad(self.loss_kind, z, _as_targets(self.loss_kind, y, z.shape[1]))
        return float(f.mean())

    def forward_backward(self, x, y, params=None):
        """Mean minibatch loss and one :class:`LayerCache` per layer."""
        params = self.params if params is None else params
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] == 0:
            raise ValueError("empty minibatch")
        z, trace = self._forward(x, params)
        y = _as_targets(self.loss_kind, y, z.shape[1])
        if y.shape != z.shape:
            raise ValueError(f"targets shape {y.shape} does not match outputs {z.shape}")
        f, dz = loss_and_grad(self.loss_kind, z, y)
        loss = float(f.mean())
        if not np.isfinite(loss):
            raise DivergedError(f"non-finite loss {loss}")
        dhs, dWs = self._backward(dz, params, trace)
        m = x.shape[0]
        caches = [
            LayerCache(trace.a[l], trace.h[l], dhs[l], dWs[l], m, self.layers[l].spatial_size)
            for l in range(len(self.layers))
        ]
        return loss, caches

    def sampled_forward_backward(self, x, rng, params=None):
        """Like :meth:`forward_backward` but with targets drawn from the model."""
        params = self.params if params is None else params
        x = np.asarray(x, dtype=np.float64)
        z, trace = self._forward(x, params)
        y = sample_targets(self.loss_kind, z, rng)
        f, dz = loss_and_grad(self.loss_kind, z, y)
        dhs, dWs = self._backward(dz, params, trace)
        m = x.shape[0]
        return float(f.mean()), [
            LayerCache(trace.a[l], trace.h[l], dhs[l], dWs[l], m, self.layers[l].spatial_size)
            for l in range(len(self.layers))
        ]

    def tail(self, l, h, y, params=None):
        """Loss and ``df/dh`` when layer ``l``'s pre-activations are set to ``h``.

        Everything upstream of layer ``l`` is bypassed, so this is the
        downstream map whose Hessian in ``h`` defines ``G``.
        """
        params = self.params if params is None else params
        z, trace = self._forward(None, params, start=l, h_start=np.asarray(h, dtype=np.float64))
        y = _as_targets(self.loss_kind, y, z.shape[1])
        f, dz = loss_and_grad(self.loss_kind, z, y)
        dhs, _ = self._backward(dz, params, trace, start=l, need_dW=False)
        return float(f.mean()), dhs[0]


# ----------------------------------------------------------------------------
# architecture strings

_CONV_TOKEN = re.compile(r"^c(\d+)r(\d+)$")
_DENSE_TOKEN = re.compile(r"^d?(\d+)$")
_SHAPE_TOKEN = re.compile(r"^(\d+)x(\d+)x(\d+)$")

PRESET_ARCHS = {
    "mnist": ("784-1000-500-250-30-250-500-1000-784", "bce_with_sigmoid"),
    "faces": ("625-2000-1000-500-30-500-1000-2000-625", "mse"),
    "curves": ("784-400-200-100-50-25-6-25-50-100-200-400-784", "bce_with_sigmoid"),
}


def build_network(arch, hidden="relu", loss="mse", middle_linear=False):
    """Build a network from an architecture string.

    ``"784-256-32-256-784"`` is an MLP.  A leading ``CxHxW`` token declares
    an image input, ``cIrR`` adds a conv layer with ``I`` output channels
    and filter radius ``R``, and ``dN`` (or ``N``) adds a dense layer.
    Preset names from :data:`PRESET_ARCHS` are accepted as well.
    """
    if arch in PRESET_ARCHS:
        arch, loss = PRESET_ARCHS[arch]
    tokens = [t.strip() for t in arch.split("-") if t.strip()]
    if len(tokens) < 2:
        raise ValueError(f"architecture {arch!r} needs an input and at least one layer")
    shape_m = _SHAPE_TOKEN.match(tokens[0])
    if shape_m:
        cur = tuple(int(v) for v in shape_m.groups())
    elif tokens[0].isdigit():
        cur = (int(tokens[0]),)
    else:
        raise ValueError(f"bad input token {tokens[0]!r}")
    layers = []
    for tok in tokens[1:]:
        cm = _CONV_TOKEN.match(tok)
        dm = _DENSE_TOKEN.match(tok)
        if cm:
            if len(cur) != 3:
                raise ValueError(f"conv layer {tok!r} needs an image input, got {cur}")
            spec = ConvSpec(cur[0], int(cm.group(1)), int(cm.group(2)), cur[1], cur[2])
        elif dm:
            spec = DenseSpec(int(np.prod(cur)), int(dm.group(1)))
        else:
            raise ValueError(f"bad layer token {tok!r}")
        layers.append(spec)
        cur = spec.output_shape
    acts = [hidden] * (len(layers) - 1) + ["identity"]
    if middle_linear and len(layers) > 1 and len(layers) % 2 == 0:
        acts[len(layers) // 2 - 1] = "identity"
    return Network(layers, acts, loss)
