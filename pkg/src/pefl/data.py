"""Dataset loading, synthetic generators and party partitioning."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .nn import one_hot

IDX_DTYPES = {
    0x08: np.uint8, 0x09: np.int8, 0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"), 0x0D: np.dtype(">f4"), 0x0E: np.dtype(">f8"),
}


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray                # one-hot
    classes: int
    provenance: str = ""

    def __post_init__(self):
        if len(self.x) != len(self.y):
            raise DataError("feature and label row counts differ")
        if self.y.ndim != 2 or self.y.shape[1] != self.classes:
            raise DataError("labels must be one-hot with one column per class")

    def __len__(self) -> int:
        return len(self.x)

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.y, axis=1)

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.x[idx], self.y[idx], self.classes, self.provenance)


# ---------------------------------------------------------------- IDX

def parse_idx(buf: bytes) -> np.ndarray:
    """Parse an IDX file (magic 0x0000TTDD, big-endian u32 dims, payload)."""
    if len(buf) < 4:
        raise DataError("IDX header truncated")
    zero, dtype_code, ndim = struct.unpack(">HBB", buf[:4])
    if zero != 0 or dtype_code not in IDX_DTYPES or ndim == 0:
        raise DataError(f"bad IDX magic 0x{int.from_bytes(buf[:4], 'big'):08x}")
    head = 4 + 4 * ndim
    if len(buf) < head:
        raise DataError("IDX dimension table truncated")
    dims = struct.unpack(f">{ndim}I", buf[4:head])
    dt = np.dtype(IDX_DTYPES[dtype_code])
    count = int(np.prod(dims, dtype=np.int64))
    need = head + count * dt.itemsize
    if len(buf) < need:
        raise DataError(f"IDX payload truncated: {len(buf) - head} of {need - head} bytes")
    if len(buf) > need:
        raise DataError("IDX file has trailing bytes")
    return np.frombuffer(buf, dtype=dt, count=count, offset=head).reshape(dims).astype(dt.newbyteorder("="))


def load_idx(path) -> np.ndarray:
    with open(path, "rb") as f:
        return parse_idx(f.read())


def resize_to_8x8(images: np.ndarray) -> np.ndarray:
    """Exact area-weighted averaging from 28x28 (values 0..255) to 8x8 in [0, 1]."""
    images = np.asarray(images, dtype=np.float64)
    single = images.ndim == 2
    if single:
        images = images[None]
    if images.shape[1:] != (28, 28):
        raise DataError(f"expected 28x28 images, got {images.shape[1:]}")
    # weight of source pixel p in target cell c: overlap of [p, p+1) and [3.5c, 3.5c+3.5)
    edges = np.arange(9) * 3.5
    p = np.arange(28)
    overlap = np.clip(np.minimum(p[None, :] + 1, edges[1:, None]) - np.maximum(p[None, :], edges[:-1, None]), 0, None)
    A = overlap / 3.5
    out = np.einsum("ip,npq,jq->nij", A, images, A) / 255.0
    return out[0] if single else out


# ---------------------------------------------------------------- bundled digits

def load_digits_8x8() -> Dataset:
    """8x8 handwritten digits (1797 images) scaled to [0, 1]."""
    from sklearn.datasets import load_digits
    d = load_digits()
    return Dataset(d.data / 16.0, one_hot(d.target, 10), 10, "sklearn-digits-8x8")


def mnist_8x8(images_path=None, labels_path=None) -> Dataset:
    """MNIST resized to 8x8 from IDX files, or the bundled 8x8 digits when no paths are given."""
    if images_path is None:
        return load_digits_8x8()
    imgs = resize_to_8x8(load_idx(images_path))
    labels = load_idx(labels_path)
    return Dataset(imgs.reshape(len(imgs), 64), one_hot(labels, 10), 10, f"idx:{images_path}")


# ---------------------------------------------------------------- splitting

def subsample(ds: Dataset, k: int, seed: int) -> Dataset:
    if k > len(ds):
        raise DataError(f"cannot draw {k} examples from {len(ds)}")
    idx = np.random.default_rng(seed).permutation(len(ds))[:k]
    return ds.take(np.sort(idx))


def split(ds: Dataset, sizes, seed: int) -> list[Dataset]:
    """Disjoint random subsets with the given sizes."""
    if sum(sizes) > len(ds):
        raise DataError(f"requested {sum(sizes)} examples from {len(ds)}")
    perm = np.random.default_rng(seed).permutation(len(ds))
    out, start = [], 0
    for s in sizes:
        out.append(ds.take(perm[start:start + s]))
        start += s
    return out


def partition(ds: Dataset, n_parties: int, seed: int) -> list[Dataset]:
    """Disjoint near-equal shares (sizes differ by at most one)."""
    if n_parties < 1:
        raise DataError("need at least one party")
    perm = np.random.default_rng(seed).permutation(len(ds))
    return [ds.take(np.sort(chunk)) for chunk in np.array_split(perm, n_parties)]


# ---------------------------------------------------------------- synthetic

def orthogonal_prototypes(classes: int, dims: int, rng: np.random.Generator) -> np.ndarray:
    if dims < classes:
        raise DataError("orthogonal prototypes need dims >= classes")
    q, _ = np.linalg.qr(rng.normal(size=(dims, classes)))
    return q.T


def synth_dataset(classes: int, dims: int, separation: float, noise: float, size: int,
                  seed: int, property_shift: float = 0.0, property_coords=None,
                  property_rate: float = 0.5) -> tuple[Dataset, np.ndarray]:
    """Gaussian blobs around orthogonal prototypes scaled by `separation`.

    Returns the dataset and a boolean property flag per row; flagged rows have
    `property_shift` added to the chosen coordinates.
    """
    rng = np.random.default_rng(seed)
    protos = orthogonal_prototypes(classes, dims, rng) * separation
    labels = rng.integers(0, classes, size=size)
    x = protos[labels] + noise * rng.normal(size=(size, dims))
    prop = rng.random(size) < property_rate
    if property_shift:
        coords = np.arange(min(4, dims)) if property_coords is None else np.asarray(property_coords)
        x[np.ix_(prop, coords)] += property_shift
    ds = Dataset(x, one_hot(labels, classes), classes, f"synthetic(c={classes},d={dims},sep={separation})")
    return ds, prop


# ---------------------------------------------------------------- tabular

def load_tabular_csv(path, feature_columns, label_column: str, classes: int | None = None) -> Dataset:
    """CSV with a header; binary/numeric features and an integer label column."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        missing = [c for c in list(feature_columns) + [label_column] if c not in header]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        fi = [header.index(c) for c in feature_columns]
        li = header.index(label_column)
        xs, ys = [], []
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                if len(row) != len(header):
                    raise ValueError(f"{len(row)} fields, expected {len(header)}")
                xs.append([float(row[i]) for i in fi])
                ys.append(int(row[li]))
            except ValueError as exc:
                raise DataError(f"{path}: malformed row {row_no}: {exc}") from None
    if not xs:
        raise DataError(f"{path}: no data rows")
    ys = np.array(ys)
    classes = classes or int(ys.max()) + 1
    return Dataset(np.array(xs), one_hot(ys, classes), classes, f"csv:{path}")
