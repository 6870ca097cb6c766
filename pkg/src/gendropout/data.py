"""Datasets: MNIST IDX files, stratified subsets and synthetic Gaussian blobs."""

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ContractError, GenDropoutError

__all__ = [
    "Dataset",
    "IDXError",
    "BadMagicError",
    "TruncatedFileError",
    "CountMismatchError",
    "IMAGE_MAGIC",
    "LABEL_MAGIC",
    "load_idx",
    "write_idx",
    "load_mnist",
    "subset",
    "synthetic_blobs",
    "DEFAULT_MNIST_DIR",
]

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

# repo checkout layout: <root>/src/gendropout/data.py -> <root>/data/mnist
DEFAULT_MNIST_DIR = Path(os.environ.get(
    "GENDROPOUT_MNIST_DIR", Path(__file__).resolve().parents[2] / "data" / "mnist"))


class IDXError(GenDropoutError, ValueError):
    def __init__(self, message, path=None, offset=None):
        super().__init__(f"{path}: {message} (offset {offset})" if path else message)
        self.path = path
        self.offset = offset


class BadMagicError(IDXError):
    pass


class TruncatedFileError(IDXError):
    pass


class CountMismatchError(IDXError):
    pass


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # N x C x H x W or N x D, float64 in [0, 1]
    labels: np.ndarray  # N int64
    name: str = ""
    num_classes: int = 10

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ContractError(
                f"dataset '{self.name}': {len(self.images)} images but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    def take(self, idx, name=None) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.images[idx], self.labels[idx], name or self.name, self.num_classes)

    def flat(self) -> "Dataset":
        return Dataset(self.images.reshape(len(self), -1), self.labels, self.name, self.num_classes)


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _header(raw, path, magic, ndims):
    need = 4 + 4 * ndims
    if len(raw) < 4:
        raise TruncatedFileError("file shorter than the magic number", path, len(raw))
    (found,) = struct.unpack_from(">I", raw, 0)
    if found != magic:
        raise BadMagicError(f"bad magic 0x{found:08x}, expected 0x{magic:08x}", path, 0)
    if len(raw) < need:
        raise TruncatedFileError("header truncated", path, len(raw))
    return struct.unpack_from(f">{ndims}I", raw, 4), need


def load_idx(images_path, labels_path, name: str = "mnist") -> Dataset:
    """Parse an IDX image/label pair (optionally gzipped); pixels are scaled by 1/255."""
    raw = _read_bytes(images_path)
    (n, h, w), off = _header(raw, images_path, IMAGE_MAGIC, 3)
    if len(raw) < off + n * h * w:
        raise TruncatedFileError(
            f"expected {n * h * w} pixel bytes, found {len(raw) - off}", images_path, len(raw))
    pix = np.frombuffer(raw, dtype=np.uint8, count=n * h * w, offset=off)

    lraw = _read_bytes(labels_path)
    (nl,), loff = _header(lraw, labels_path, LABEL_MAGIC, 1)
    if nl != n:
        raise CountMismatchError(f"{nl} labels but {n} images", labels_path, 4)
    if len(lraw) < loff + nl:
        raise TruncatedFileError(
            f"expected {nl} label bytes, found {len(lraw) - loff}", labels_path, len(lraw))
    labels = np.frombuffer(lraw, dtype=np.uint8, count=nl, offset=loff).astype(np.int64)

    images = pix.reshape(n, 1, h, w).astype(np.float64) / 255.0
    return Dataset(images, labels, name, num_classes=max(10, int(labels.max(initial=0)) + 1))


def write_idx(images_path, labels_path, images, labels, compress: Optional[bool] = None) -> None:
    """Write ``uint8`` images (N x H x W) and labels as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, h, w = images.shape
    payloads = {
        images_path: struct.pack(">IIII", IMAGE_MAGIC, n, h, w) + images.tobytes(),
        labels_path: struct.pack(">II", LABEL_MAGIC, len(labels)) + labels.tobytes(),
    }
    for path, data in payloads.items():
        gz = str(path).endswith(".gz") if compress is None else compress
        with (gzip.GzipFile(path, "wb", mtime=0) if gz else open(path, "wb")) as fh:
            fh.write(data)


def load_mnist(directory=None, split: str = "train") -> Dataset:
    """Load ``{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]`` from ``directory``."""
    d = Path(directory) if directory is not None else DEFAULT_MNIST_DIR
    for suffix in (".gz", ""):
        img = d / f"{split}-images-idx3-ubyte{suffix}"
        lab = d / f"{split}-labels-idx1-ubyte{suffix}"
        if img.exists() and lab.exists():
            return load_idx(img, lab, name=f"mnist-{split}")
    raise FileNotFoundError(f"no MNIST '{split}' IDX files in {d}")


def _quotas(counts: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Per-class sample sizes: as equal as possible, capped by availability."""
    quota = np.zeros_like(counts)
    remaining = n
    open_ = counts > 0
    while remaining > 0:
        k = int(open_.sum())
        base, extra = divmod(remaining, k)
        add = np.where(open_, base, 0)
        if extra:
            lucky = rng.permutation(np.flatnonzero(open_))[:extra]
            add[lucky] += 1
        add = np.minimum(add, counts - quota)
        quota += add
        remaining -= int(add.sum())
        open_ = quota < counts
    return quota


def subset(ds: Dataset, n: int, seed=0) -> Dataset:
    """Class-stratified sample of ``n`` examples, shuffled, deterministic in ``seed``.

    Per-class counts differ by at most one from ``n / num_classes`` whenever
    every class has enough examples; scarce classes are exhausted and the
    shortfall spread over the rest.
    """
    if not 1 <= n <= len(ds):
        raise ContractError(f"subset: n={n} outside [1, {len(ds)}]")
    rng = np.random.default_rng(seed)
    classes = np.arange(max(ds.num_classes, int(ds.labels.max()) + 1))
    counts = np.array([(ds.labels == c).sum() for c in classes])
    quota = _quotas(counts, n, rng)
    chosen = []
    for c, q in zip(classes, quota):
        if q:
            members = np.flatnonzero(ds.labels == c)
            chosen.append(rng.permutation(members)[:q])
    idx = rng.permutation(np.concatenate(chosen))
    return ds.take(idx, name=f"{ds.name}[{n}]")


def synthetic_blobs(n: int, classes: int = 2, dim: int = 2, separation: float = 10.0,
                    seed=0, name: str = "blobs") -> Dataset:
    """Unit-variance Gaussian blobs whose centers are pairwise ``separation`` apart.

    With ``classes <= dim`` the centers are scaled basis vectors (a regular
    simplex); otherwise they sit on a circle in the first two coordinates with
    neighbouring centers ``separation`` apart.
    """
    if n < classes or dim < 2 or classes < 2:
        raise ContractError(f"synthetic_blobs: need n >= classes >= 2 and dim >= 2 (n={n}, classes={classes}, dim={dim})")
    rng = np.random.default_rng(seed)
    centers = np.zeros((classes, dim))
    if classes <= dim:
        centers[np.arange(classes), np.arange(classes)] = separation / np.sqrt(2.0)
    else:
        radius = separation / (2.0 * np.sin(np.pi / classes))
        ang = 2.0 * np.pi * np.arange(classes) / classes
        centers[:, 0], centers[:, 1] = radius * np.cos(ang), radius * np.sin(ang)
    labels = rng.permutation(np.arange(n) % classes).astype(np.int64)
    x = centers[labels] + rng.standard_normal((n, dim))
    return Dataset(x, labels, name, num_classes=classes)
