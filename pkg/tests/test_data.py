import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pefl import data


def idx_bytes(arr, code=0x08):
    head = struct.pack(">HBB", 0, code, arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape)
    return head + arr.astype(data.IDX_DTYPES[code]).tobytes()


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 5), min_size=1, max_size=3), st.sampled_from([0x08, 0x0B, 0x0C, 0x0E]))
def test_idx_roundtrip(dims, code):
    arr = np.arange(int(np.prod(dims))).reshape(dims) % 100
    out = data.parse_idx(idx_bytes(arr, code))
    assert out.shape == tuple(dims)
    assert np.array_equal(out, arr)


def test_idx_rejects_corrupt_files(tmp_path):
    good = idx_bytes(np.zeros((2, 3)))
    for bad in (good[:3], b"\x01" + good[1:], good[:6], good[:-1], good + b"\x00"):
        with pytest.raises(data.DataError):
            data.parse_idx(bad)
    (tmp_path / "x.idx").write_bytes(good)
    assert data.load_idx(tmp_path / "x.idx").shape == (2, 3)


def test_resize_preserves_mean_and_constant_images():
    img = np.full((28, 28), 255.0)
    assert np.allclose(data.resize_to_8x8(img), 1.0)
    rng = np.random.default_rng(0)
    batch = rng.integers(0, 256, (4, 28, 28))
    out = data.resize_to_8x8(batch)
    assert out.shape == (4, 8, 8)
    assert np.allclose(out.mean(axis=(1, 2)), batch.mean(axis=(1, 2)) / 255.0)
    with pytest.raises(data.DataError):
        data.resize_to_8x8(np.zeros((27, 28)))


def test_resize_block_oracle():
    # a 7x7 block of ones covers exactly two target cells in each direction
    img = np.zeros((28, 28))
    img[:7, :7] = 255
    out = data.resize_to_8x8(img)
    assert np.allclose(out[:2, :2], 1.0)
    assert np.allclose(out[2:, :], 0.0) and np.allclose(out[:, 2:], 0.0)


def test_idx_mnist_path(tmp_path):
    imgs = np.random.default_rng(1).integers(0, 256, (5, 28, 28))
    labels = np.array([0, 1, 2, 3, 9])
    (tmp_path / "i").write_bytes(idx_bytes(imgs))
    (tmp_path / "l").write_bytes(idx_bytes(labels))
    ds = data.mnist_8x8(tmp_path / "i", tmp_path / "l")
    assert ds.x.shape == (5, 64) and list(ds.labels) == list(labels)


def test_digits_stand_in():
    ds = data.load_digits_8x8()
    assert ds.x.shape == (1797, 64) and ds.classes == 10
    assert 0.0 <= ds.x.min() and ds.x.max() <= 1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 60), st.integers(1, 7), st.integers(0, 1000))
def test_partition_is_disjoint_and_balanced(size, parties, seed):
    ds = data.Dataset(np.arange(size, dtype=float)[:, None], np.ones((size, 1)), 1)
    shares = data.partition(ds, parties, seed)
    rows = np.concatenate([s.x[:, 0] for s in shares])
    assert sorted(rows) == list(range(size))
    sizes = [len(s) for s in shares]
    assert max(sizes) - min(sizes) <= 1


def test_split_and_subsample():
    ds = data.load_digits_8x8()
    a, b = data.split(ds, [100, 50], seed=3)
    assert len(a) == 100 and len(b) == 50
    assert len(data.subsample(ds, 10, 0)) == 10
    with pytest.raises(data.DataError):
        data.split(ds, [2000], 0)
    with pytest.raises(data.DataError):
        data.subsample(ds, 5000, 0)


def test_synthetic_property_shift():
    ds, prop = data.synth_dataset(4, 16, 3.0, 0.1, 400, seed=0, property_shift=2.0)
    assert prop.any() and (~prop).any()
    gap = ds.x[prop, :4].mean() - ds.x[~prop, :4].mean()
    assert 1.5 < gap < 2.5


def test_tabular_csv(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,b,label\n1,0,2\n0,1,0\n")
    ds = data.load_tabular_csv(p, ["a", "b"], "label")
    assert ds.classes == 3 and ds.x.tolist() == [[1, 0], [0, 1]]
    p.write_text("a,b,label\n1,x,2\n")
    with pytest.raises(data.DataError, match="row 2"):
        data.load_tabular_csv(p, ["a", "b"], "label")
    p.write_text("a,label\n1,2\n")
    with pytest.raises(data.DataError, match="missing"):
        data.load_tabular_csv(p, ["a", "b"], "label")
    p.write_text("")
    with pytest.raises(data.DataError):
        data.load_tabular_csv(p, ["a"], "label")
