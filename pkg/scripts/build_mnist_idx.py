"""Rebuild MNIST IDX files from the digits bundled in the npm ``mnist`` package.

The sandbox has no route to the usual MNIST mirrors, but the npm package
``mnist@1.1.0`` ships 10,000 genuine MNIST digits as JSON (pixel/255 rounded
to three decimals, which is lossless: round(v * 255) recovers the byte).

Usage::

    python scripts/build_mnist_idx.py            # runs `npm pack mnist@1.1.0`
    python scripts/build_mnist_idx.py --package-dir path/to/extracted/package

Writes gzipped IDX files (train: 8,000, test: 2,000; fixed permutation seed 0)
into ``data/mnist/``.
"""

import argparse
import gzip
import json
import struct
import subprocess
import tarfile
import tempfile
from pathlib import Path

import numpy as np

N_TRAIN = 8000


def _npm_package_dir(workdir):
    subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=workdir, check=True,
                   capture_output=True)
    tgz = next(Path(workdir).glob("mnist-*.tgz"))
    with tarfile.open(tgz) as tf:
        tf.extractall(workdir)
    return Path(workdir) / "package"


def load_digits(package_dir):
    images, labels = [], []
    for digit in range(10):
        with open(Path(package_dir) / "src" / "digits" / f"{digit}.json") as fh:
            flat = np.asarray(json.load(fh)["data"], dtype=np.float64)
        pix = np.rint(flat * 255.0)
        assert np.all((pix >= 0) & (pix <= 255))
        assert np.max(np.abs(pix / 255.0 - flat)) <= 0.0005 + 1e-12
        pix = pix.astype(np.uint8).reshape(-1, 28, 28)
        images.append(pix)
        labels.append(np.full(len(pix), digit, dtype=np.uint8))
    return np.concatenate(images), np.concatenate(labels)


def write_idx_images(path, images):
    n, h, w = images.shape
    with gzip.GzipFile(path, "wb", mtime=0) as fh:
        fh.write(struct.pack(">IIII", 0x803, n, h, w))
        fh.write(images.tobytes())


def write_idx_labels(path, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as fh:
        fh.write(struct.pack(">II", 0x801, len(labels)))
        fh.write(labels.tobytes())


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--package-dir", type=Path)
    parser.add_argument("--out", type=Path,
                        default=Path(__file__).resolve().parent.parent / "data" / "mnist")
    args = parser.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        pkg = args.package_dir or _npm_package_dir(tmp)
        images, labels = load_digits(pkg)

    order = np.random.default_rng(0).permutation(len(labels))
    images, labels = images[order], labels[order]
    args.out.mkdir(parents=True, exist_ok=True)
    splits = {"train": slice(0, N_TRAIN), "t10k": slice(N_TRAIN, None)}
    for name, sl in splits.items():
        write_idx_images(args.out / f"{name}-images-idx3-ubyte.gz", images[sl])
        write_idx_labels(args.out / f"{name}-labels-idx1-ubyte.gz", labels[sl])
        print(name, len(labels[sl]), np.bincount(labels[sl], minlength=10))


if __name__ == "__main__":
    main()
