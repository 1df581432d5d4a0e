"""Dataset readers, standardisation and train/test splits."""
from __future__ import annotations

import csv
import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..numerics import DTYPE, RngStream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataError(ValueError):
    pass


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def load_csv_regression(path):
    """Read a numeric CSV whose last column is the regression target.

    A header row is detected when its cells do not parse as numbers.
    Returns ``(X, y)`` as float64 arrays.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    start = 0
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        start = 1
    data = []
    width = len(rows[start]) if len(rows) > start else 0
    for i, row in enumerate(rows[start:], start=start + 1):
        if len(row) != width:
            raise DataError(f"{path}: row {i} has {len(row)} columns, expected {width}")
        vals = []
        for j, cell in enumerate(row, start=1):
            try:
                vals.append(float(cell))
            except ValueError:
                raise DataError(f"{path}: non-numeric cell {cell!r} at row {i}, column {j}") from None
        data.append(vals)
    if not data:
        raise DataError(f"{path}: no data rows")
    arr = np.asarray(data, dtype=DTYPE)
    if arr.shape[1] < 2:
        raise DataError(f"{path}: need at least one feature and a target column")
    return arr[:, :-1], arr[:, -1]


def load_idx_images(images_path, labels_path):
    """Read an IDX image/label pair; pixels are scaled to ``[0, 1]``."""
    with _open(images_path) as fh:
        head = fh.read(16)
        if len(head) < 16:
            raise DataError(f"{images_path}: truncated header")
        magic, n, rows, cols = struct.unpack(">IIII", head)
        if magic != IDX_IMAGES_MAGIC:
            raise DataError(f"{images_path}: bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")
        raw = fh.read()
    if len(raw) != n * rows * cols:
        raise DataError(f"{images_path}: expected {n * rows * cols} pixel bytes, found {len(raw)}")
    with _open(labels_path) as fh:
        head = fh.read(8)
        if len(head) < 8:
            raise DataError(f"{labels_path}: truncated header")
        magic, n_lab = struct.unpack(">II", head)
        if magic != IDX_LABELS_MAGIC:
            raise DataError(f"{labels_path}: bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")
        lab = fh.read()
    if len(lab) != n_lab:
        raise DataError(f"{labels_path}: expected {n_lab} labels, found {len(lab)}")
    if n_lab != n:
        raise DataError(f"image count {n} does not match label count {n_lab}")
    X = np.frombuffer(raw, dtype=np.uint8).reshape(n, rows * cols).astype(DTYPE) / 255.0
    y = np.frombuffer(lab, dtype=np.uint8).astype(np.int64)
    return X, y


def write_idx_images(path, images_uint8: np.ndarray, rows: int = 28, cols: int = 28) -> None:
    images_uint8 = np.asarray(images_uint8, dtype=np.uint8).reshape(-1, rows * cols)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, images_uint8.shape[0], rows, cols))
        fh.write(images_uint8.tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


@dataclass
class Standardiser:
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float = 0.0
    y_std: float = 1.0

    @classmethod
    def fit(cls, X, y=None) -> "Standardiser":
        x_std = X.std(axis=0)
        x_std = np.where(x_std > 0, x_std, 1.0)
        if y is None:
            return cls(X.mean(axis=0), x_std)
        y_std = float(y.std())
        return cls(X.mean(axis=0), x_std, float(y.mean()), y_std if y_std > 0 else 1.0)

    def x(self, X):
        return (X - self.x_mean) / self.x_std

    def y(self, y):
        return (y - self.y_mean) / self.y_std

    def y_inverse(self, y):
        return y * self.y_std + self.y_mean


def random_split(n: int, test_fraction: float, seed: int):
    """Random train/test index split; a pure function of ``(seed, n)``.

    The permutation comes from ``RngStream(seed)``; the first
    ``round(test_fraction * n)`` permuted indices form the test set.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    perm = RngStream(seed).permutation(n)
    n_test = max(1, int(round(test_fraction * n)))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def data_dir() -> Path:
    return Path(os.environ.get("ALPHABOX_DATA", Path.cwd() / "data"))


def export_bundled_datasets(out_dir=None, mnist_test: int = 1000, seed: int = 0) -> dict:
    """Write the datasets shipped inside ``mlxtend`` as CSV / IDX files.

    Produces ``boston.csv`` (506 x 13 plus target) and a stratified split of
    mlxtend's 5000-image MNIST sample into IDX files
    ``mnist5k-{train,test}-{images-idx3,labels-idx1}-ubyte``.
    """
    from mlxtend.data import boston_housing_data, mnist_data

    out = Path(out_dir) if out_dir is not None else data_dir()
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    Xb, yb = boston_housing_data()
    p = out / "boston.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(Xb.shape[1])] + ["y"])
        for row, t in zip(Xb, yb):
            w.writerow([repr(float(v)) for v in row] + [repr(float(t))])
    paths["boston"] = p

    Xm, ym = mnist_data()
    rng = RngStream(seed)
    test_idx = []
    per_class = mnist_test // 10
    for c in range(10):
        idx = np.flatnonzero(ym == c)
        test_idx.extend(idx[rng.permutation(idx.size)[:per_class]])
    test_mask = np.zeros(ym.size, dtype=bool)
    test_mask[test_idx] = True
    for name, sel in (("train", ~test_mask), ("test", test_mask)):
        ip = out / f"mnist5k-{name}-images-idx3-ubyte"
        lp = out / f"mnist5k-{name}-labels-idx1-ubyte"
        write_idx_images(ip, Xm[sel].astype(np.uint8))
        write_idx_labels(lp, ym[sel])
        paths[f"mnist_{name}_images"] = ip
        paths[f"mnist_{name}_labels"] = lp
    return paths
