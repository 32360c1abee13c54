"""Datasets, IDX (MNIST) files, synthetic generators and minibatch sampling."""

from dataclasses import dataclass, field
import gzip
import os
import struct

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
DATA_DIR_ENV = "KRONQN_DATA_DIR"


class IdxFormatError(ValueError):
    """An IDX file is malformed; the message names the offending field."""


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    name: str = "dataset"
    normalization: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.inputs.shape[0] < 1:
            raise ValueError("dataset is empty")
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError(f"{self.inputs.shape[0]} inputs vs {self.targets.shape[0]} targets")
        if not (np.all(np.isfinite(self.inputs)) and np.all(np.isfinite(self.targets))):
            raise ValueError("dataset contains non-finite entries")

    def __len__(self):
        return self.inputs.shape[0]

    def subset(self, n):
        return Dataset(self.inputs[:n], self.targets[:n], self.name, dict(self.normalization))


# ----------------------------------------------------------------------------
# IDX


def _open(path):
    path = os.fspath(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def read_idx(path, expected_magic=None):
    """Read an unsigned-byte IDX file into a numpy array."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: magic: file shorter than 4 bytes")
    (magic,) = struct.unpack(">I", raw[:4])
    if expected_magic is not None and magic != expected_magic:
        raise IdxFormatError(f"{path}: magic: expected 0x{expected_magic:08x}, got 0x{magic:08x}")
    if magic >> 8 != 0x08:
        raise IdxFormatError(f"{path}: magic: data type 0x{(magic >> 8) & 0xff:02x} is not unsigned byte")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"{path}: dims: header truncated")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header != count:
        raise IdxFormatError(
            f"{path}: payload: expected {count} bytes for dims {dims}, found {len(raw) - header}"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def write_idx(path, array):
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


def load_mnist_idx(images_path, labels_path=None, mode="autoencoder"):
    """Load MNIST-format IDX files, pixels scaled to ``[0, 1]``.

    ``mode="autoencoder"`` sets targets equal to the flattened inputs;
    ``mode="classify"`` reads the labels file and returns integer classes.
    """
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    norm = {"scale": 1.0 / 255.0}
    if mode == "autoencoder":
        return Dataset(x, x, "mnist", norm)
    if mode != "classify":
        raise ValueError(f"unknown mode {mode!r}")
    if labels_path is None:
        raise ValueError("classify mode needs a labels file")
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if labels.ndim != 1:
        raise IdxFormatError(f"{labels_path}: dims: labels must be 1-D, got {labels.shape}")
    if labels.shape[0] != images.shape[0]:
        raise IdxFormatError(
            f"{labels_path}: count: {labels.shape[0]} labels for {images.shape[0]} images"
        )
    return Dataset(x, labels.astype(np.float64)[:, None], "mnist", norm)


def find_mnist(data_dir=None):
    """Return the MNIST training image path under ``data_dir`` or ``$KRONQN_DATA_DIR``, else None."""
    data_dir = data_dir or os.environ.get(DATA_DIR_ENV)
    if not data_dir:
        return None
    for name in ("train-images-idx3-ubyte", "train-images-idx3-ubyte.gz",
                 "mnist/train-images-idx3-ubyte", "mnist/train-images-idx3-ubyte.gz"):
        p = os.path.join(data_dir, name)
        if os.path.exists(p):
            return p
    return None


# ----------------------------------------------------------------------------
# synthetic data


def synthetic_dataset(kind, n, dims, seed=0, phi=1.0):
    """Deterministic synthetic problems.

    ``bounded-regression``: inputs uniform in ``[-phi, phi]^d``, targets a
    fixed smooth map of the inputs; ``dims`` is ``(d_in, d_out)``.

    ``tiny-images``: ``(J, H, W)`` images uniform in ``[-phi, phi]`` with
    ``k``-dim regression targets; ``dims`` is ``(J, H, W, k)``.

    ``curves``: ``side x side`` grayscale images of random smooth strokes in
    ``[0, phi]`` with targets equal to inputs (autoencoder); ``dims`` is
    ``(side,)``.
    """
    rng = np.random.default_rng(seed)
    if kind == "bounded-regression":
        d_in, d_out = dims
        x = rng.uniform(-phi, phi, size=(n, d_in))
        M = rng.standard_normal((d_in, d_out)) / np.sqrt(d_in)
        y = np.tanh(x @ M) + 0.1 * np.sin(3.0 * x[:, :1])
        return Dataset(x, y, kind, {"phi": phi})
    if kind == "tiny-images":
        J, H, W, k = dims
        x = rng.uniform(-phi, phi, size=(n, J, H, W))
        M = rng.standard_normal((J * H * W, k)) / np.sqrt(J * H * W)
        y = np.tanh(x.reshape(n, -1) @ M)
        return Dataset(x, y, kind, {"phi": phi})
    if kind == "curves":
        (side,) = dims
        x = _curve_images(rng, n, side) * phi
        return Dataset(x, x.copy(), kind, {"phi": phi})
    raise ValueError(f"unknown synthetic kind {kind!r}")


def _curve_images(rng, n, side, chunk=512):
    """Anti-aliased quadratic Bezier strokes through three random control points."""
    grid = (np.arange(side) + 0.5) / side
    gy, gx = np.meshgrid(grid, grid, indexing="ij")
    pix = np.stack([gy.ravel(), gx.ravel()], axis=1)  # (P, 2)
    ts = np.linspace(0.0, 1.0, 24)
    basis = np.stack([(1 - ts) ** 2, 2 * ts * (1 - ts), ts ** 2], axis=1)  # (S, 3)
    out = np.empty((n, side * side))
    width = 1.2 / side
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        ctrl = rng.uniform(0.1, 0.9, size=(stop - start, 3, 2))
        pts = np.einsum("sk,nkd->nsd", basis, ctrl)  # (b, S, 2)
        d2 = ((pix[None, None] - pts[:, :, None]) ** 2).sum(-1)  # (b, S, P)
        out[start:stop] = np.exp(-d2.min(axis=1) / (2 * width ** 2))
    return out


# ----------------------------------------------------------------------------
# sampling


class BatchSampler:
    """Seeded minibatch sampler; each epoch is a fresh permutation of all indices."""

    def __init__(self, n, batch_size, seed=0, drop_last=False, shuffle=True):
        if batch_size < 1:
            raise ValueError("batch_size must be positive")
        self.n = n
        self.batch_size = batch_size
        self.drop_last = drop_last
        self.shuffle = shuffle
        self.rng = np.random.default_rng(seed)
        self.epoch = 0

    def batches_per_epoch(self):
        full, rest = divmod(self.n, self.batch_size)
        return full if (self.drop_last or rest == 0) else full + 1

    def epoch_indices(self):
        """Index arrays for the next epoch, in order."""
        order = self.rng.permutation(self.n) if self.shuffle else np.arange(self.n)
        self.epoch += 1
        out = []
        for start in range(0, self.n, self.batch_size):
            idx = order[start:start + self.batch_size]
            if self.drop_last and idx.size < self.batch_size:
                break
            out.append(idx)
        return out

    def __iter__(self):
        while True:
            yield from self.epoch_indices()


def next_batch(indices, dataset):
    return dataset.inputs[indices], dataset.targets[indices]
