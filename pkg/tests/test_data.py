import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_array_equal

from kronqn.data import (
    BatchSampler,
    Dataset,
    IdxFormatError,
    find_mnist,
    load_mnist_idx,
    next_batch,
    read_idx,
    synthetic_dataset,
    write_idx,
)


@pytest.fixture
def idx_pair(tmp_path):
    images = np.arange(2 * 28 * 28, dtype=np.uint8).reshape(2, 28, 28)
    labels = np.array([3, 7], dtype=np.uint8)
    ip, lp = tmp_path / "img", tmp_path / "lbl"
    write_idx(ip, images)
    write_idx(lp, labels)
    return ip, lp, images, labels


def test_idx_header_layout(idx_pair):
    ip, lp, images, _ = idx_pair
    raw = ip.read_bytes()
    assert raw[:4] == bytes([0, 0, 8, 3])
    assert struct.unpack(">3I", raw[4:16]) == (2, 28, 28)
    assert lp.read_bytes()[:4] == bytes([0, 0, 8, 1])


def test_idx_round_trip(idx_pair, tmp_path):
    ip, lp, images, labels = idx_pair
    assert_array_equal(read_idx(ip), images)
    ds = load_mnist_idx(ip, mode="autoencoder")
    assert ds.inputs.shape == (2, 784)
    assert_array_equal(ds.targets, ds.inputs)
    assert_array_equal(np.round(ds.inputs * 255).astype(np.uint8).reshape(2, 28, 28), images)
    assert ds.inputs.max() <= 1.0
    cls = load_mnist_idx(ip, lp, mode="classify")
    assert_array_equal(cls.targets[:, 0], [3, 7])
    gz = tmp_path / "img.gz"
    gz.write_bytes(gzip.compress(ip.read_bytes()))
    assert_array_equal(read_idx(gz), images)


def test_idx_rejects_corruption(idx_pair, tmp_path):
    ip, lp, _, _ = idx_pair
    raw = ip.read_bytes()
    bad = tmp_path / "bad"
    bad.write_bytes(b"\x00\x00\x08\x02" + raw[4:])
    with pytest.raises(IdxFormatError, match="magic"):
        load_mnist_idx(bad)
    bad.write_bytes(raw[:-5])
    with pytest.raises(IdxFormatError, match="payload"):
        read_idx(bad)
    bad.write_bytes(raw[:10])
    with pytest.raises(IdxFormatError, match="dims"):
        read_idx(bad)
    bad.write_bytes(b"\x00\x00")
    with pytest.raises(IdxFormatError, match="magic"):
        read_idx(bad)
    short_labels = tmp_path / "lbl3"
    write_idx(short_labels, np.array([1, 2, 3], dtype=np.uint8))
    with pytest.raises(IdxFormatError, match="count"):
        load_mnist_idx(ip, short_labels, mode="classify")


def test_find_mnist(tmp_path, monkeypatch, idx_pair):
    monkeypatch.delenv("KRONQN_DATA_DIR", raising=False)
    assert find_mnist() is None
    (tmp_path / "train-images-idx3-ubyte").write_bytes(idx_pair[0].read_bytes())
    monkeypatch.setenv("KRONQN_DATA_DIR", str(tmp_path))
    assert find_mnist().endswith("train-images-idx3-ubyte")


def test_synthetic_properties():
    ds = synthetic_dataset("bounded-regression", 10, (3, 2), seed=0, phi=0.0)
    assert_array_equal(ds.inputs, 0)
    a = synthetic_dataset("tiny-images", 20, (2, 3, 3, 2), seed=5)
    b = synthetic_dataset("tiny-images", 20, (2, 3, 3, 2), seed=5)
    assert_array_equal(a.inputs, b.inputs)
    assert_array_equal(a.targets, b.targets)
    big = synthetic_dataset("bounded-regression", 10 ** 5, (1, 1), seed=1, phi=0.7)
    assert np.abs(big.inputs).max() <= 0.7
    c = synthetic_dataset("curves", 50, (12,), seed=2, phi=0.5)
    assert c.inputs.shape == (50, 144) and 0 <= c.inputs.min() and c.inputs.max() <= 0.5
    with pytest.raises(ValueError):
        synthetic_dataset("nope", 3, (1,))


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        Dataset(np.full((1, 1), np.nan), np.zeros((1, 1)))


def test_sampler_full_batch_in_order():
    ds = synthetic_dataset("bounded-regression", 7, (2, 1), seed=0)
    s = BatchSampler(7, 7, shuffle=False)
    (idx,) = s.epoch_indices()
    x, y = next_batch(idx, ds)
    assert_array_equal(x, ds.inputs)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 60), st.integers(1, 20), st.integers(0, 1000), st.booleans())
def test_sampler_epoch_coverage(n, m, seed, drop_last):
    s = BatchSampler(n, m, seed=seed, drop_last=drop_last)
    for _ in range(2):
        batches = s.epoch_indices()
        assert len(batches) == s.batches_per_epoch()
        allidx = np.concatenate(batches) if batches else np.array([], int)
        if drop_last:
            assert len(allidx) == (n // m) * m and len(set(allidx)) == len(allidx)
        else:
            assert_array_equal(np.sort(allidx), np.arange(n))


def test_sampler_replay():
    a, b = BatchSampler(50, 8, seed=3), BatchSampler(50, 8, seed=3)
    for _ in range(3):
        for x, y in zip(a.epoch_indices(), b.epoch_indices()):
            assert_array_equal(x, y)
    with pytest.raises(ValueError):
        BatchSampler(5, 0)
