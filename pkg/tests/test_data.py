import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gendropout.data import (BadMagicError, CountMismatchError, Dataset, TruncatedFileError, load_idx,
                             load_mnist, subset, synthetic_blobs, write_idx)
from gendropout.errors import ContractError
from gendropout.network import mlp_spec, build
from gendropout.train import TrainConfig, evaluate, train

# two 2x2 images: [[0, 255], [128, 1]] and [[255, 255], [0, 51]]
IMAGES = bytes([0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 0, 255, 128, 1, 255, 255, 0, 51])
LABELS = bytes([0, 0, 8, 1, 0, 0, 0, 2, 7, 3])


@pytest.fixture
def fixture_paths(tmp_path):
    img, lab = tmp_path / "img.idx", tmp_path / "lab.idx"
    img.write_bytes(IMAGES)
    lab.write_bytes(LABELS)
    return img, lab


class TestLoadIdx:
    def test_fixture(self, fixture_paths):
        ds = load_idx(*fixture_paths)
        assert ds.images.shape == (2, 1, 2, 2)
        np.testing.assert_array_equal(ds.images[0, 0], [[0.0, 1.0], [128 / 255, 1 / 255]])
        np.testing.assert_array_equal(ds.images[1, 0], [[1.0, 1.0], [0.0, 0.2]])
        np.testing.assert_array_equal(ds.labels, [7, 3])

    def test_gzip(self, tmp_path):
        img, lab = tmp_path / "i.gz", tmp_path / "l.gz"
        img.write_bytes(gzip.compress(IMAGES))
        lab.write_bytes(gzip.compress(LABELS))
        np.testing.assert_array_equal(load_idx(img, lab).labels, [7, 3])

    def test_label_magic_in_image_slot(self, tmp_path, fixture_paths):
        img = tmp_path / "bad.idx"
        img.write_bytes(bytes([0, 0, 8, 1]) + IMAGES[4:])
        with pytest.raises(BadMagicError) as info:
            load_idx(img, fixture_paths[1])
        assert info.value.offset == 0

    def test_every_magic_mutation_rejected(self, tmp_path, fixture_paths):
        img, lab = tmp_path / "m.idx", fixture_paths[1]
        for pos in range(4):
            for value in range(256):
                if value == IMAGES[pos]:
                    continue
                raw = bytearray(IMAGES)
                raw[pos] = value
                img.write_bytes(bytes(raw))
                with pytest.raises(BadMagicError):
                    load_idx(img, lab)

    def test_label_magic_mutation(self, tmp_path, fixture_paths):
        lab = tmp_path / "l.idx"
        lab.write_bytes(bytes([0, 0, 8, 3]) + LABELS[4:])
        with pytest.raises(BadMagicError):
            load_idx(fixture_paths[0], lab)

    @pytest.mark.parametrize("cut", [2, 10, 20])
    def test_truncated_images(self, tmp_path, fixture_paths, cut):
        img = tmp_path / "t.idx"
        img.write_bytes(IMAGES[:cut])
        with pytest.raises(TruncatedFileError) as info:
            load_idx(img, fixture_paths[1])
        assert info.value.offset == cut

    def test_truncated_labels(self, tmp_path, fixture_paths):
        lab = tmp_path / "t.idx"
        lab.write_bytes(LABELS[:9])
        with pytest.raises(TruncatedFileError):
            load_idx(fixture_paths[0], lab)

    def test_count_mismatch(self, tmp_path, fixture_paths):
        lab = tmp_path / "c.idx"
        lab.write_bytes(struct.pack(">II", 0x801, 3) + bytes([1, 2, 3]))
        with pytest.raises(CountMismatchError) as info:
            load_idx(fixture_paths[0], lab)
        assert "3 labels but 2 images" in str(info.value)

    def test_write_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        pixels, labels = rng.integers(0, 256, (5, 3, 4), dtype=np.uint8), rng.integers(0, 10, 5)
        for suffix in ("", ".gz"):
            img, lab = tmp_path / f"i{suffix}", tmp_path / f"l{suffix}"
            write_idx(img, lab, pixels, labels)
            ds = load_idx(img, lab)
            np.testing.assert_array_equal(np.rint(ds.images[:, 0] * 255).astype(np.uint8), pixels)
            np.testing.assert_array_equal(ds.labels, labels)


class TestShippedMnist:
    def test_files(self):
        tr, te = load_mnist(split="train"), load_mnist(split="t10k")
        assert tr.images.shape == (8000, 1, 28, 28) and te.images.shape == (2000, 1, 28, 28)
        assert tr.images.min() == 0.0 and tr.images.max() == 1.0
        assert set(np.unique(tr.labels)) == set(range(10))

    def test_missing_dir(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_mnist(tmp_path)


def _balanced(n_per, classes=10, seed=0):
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.repeat(np.arange(classes), n_per))
    return Dataset(rng.uniform(0, 1, (len(labels), 3)), labels, "bal", classes)


class TestSubset:
    def test_stratified(self):
        sub = subset(_balanced(50), 100, seed=1)
        np.testing.assert_array_equal(np.bincount(sub.labels, minlength=10), np.full(10, 10))

    def test_full_is_permutation(self):
        ds = _balanced(5)
        sub = subset(ds, len(ds), seed=2)
        assert sorted(map(tuple, sub.images)) == sorted(map(tuple, ds.images))

    def test_deterministic(self):
        ds = _balanced(20)
        np.testing.assert_array_equal(subset(ds, 37, seed=3).images, subset(ds, 37, seed=3).images)
        assert not np.array_equal(subset(ds, 37, seed=3).images, subset(ds, 37, seed=4).images)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 200), st.integers(0, 1000))
    def test_no_duplicates_and_near_equal(self, n, seed):
        ds = _balanced(20)
        sub = subset(ds, n, seed=seed)
        assert len(sub) == n
        assert len({tuple(r) for r in sub.images}) == n
        counts = np.bincount(sub.labels, minlength=10)
        assert np.all(np.abs(counts - n / 10) < 1)

    def test_scarce_class_exhausted(self):
        labels = np.array([0] * 2 + [1] * 20 + [2] * 20)
        ds = Dataset(np.arange(42.0)[:, None], labels, "skew", 3)
        np.testing.assert_array_equal(np.bincount(subset(ds, 30, seed=0).labels), [2, 14, 14])

    def test_mnist_subset_is_exactly_balanced(self):
        sub = subset(load_mnist(split="train"), 5000, seed=0)
        np.testing.assert_array_equal(np.bincount(sub.labels), np.full(10, 500))

    @pytest.mark.parametrize("n", [0, 201])
    def test_range(self, n):
        with pytest.raises(ContractError):
            subset(_balanced(20), n)


class TestBlobs:
    def test_deterministic(self):
        a, b = synthetic_blobs(50, 3, 4, 5.0, seed=9), synthetic_blobs(50, 3, 4, 5.0, seed=9)
        np.testing.assert_array_equal(a.images, b.images)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_center_spacing(self):
        ds = synthetic_blobs(30_000, 3, 3, 6.0, seed=0)
        centers = np.array([ds.images[ds.labels == c].mean(0) for c in range(3)])
        d = np.linalg.norm(centers[:, None] - centers[None], axis=-1)[np.triu_indices(3, 1)]
        np.testing.assert_allclose(d, 6.0, atol=0.1)

    def test_many_classes_on_circle(self):
        ds = synthetic_blobs(10_000, 5, 2, 8.0, seed=0)
        centers = np.array([ds.images[ds.labels == c].mean(0) for c in range(5)])
        nxt = np.roll(centers, -1, axis=0)
        np.testing.assert_allclose(np.linalg.norm(centers - nxt, axis=1), 8.0, atol=0.25)

    def test_linear_classifier_separates(self):
        ds = synthetic_blobs(200, 2, 2, 10.0, seed=0)
        net = build(mlp_spec(2, [], 2), 0)
        train(net, ds, None, TrainConfig(epochs=30))
        assert evaluate(net, ds) == 0.0

    def test_zero_separation_is_chance(self):
        tr, te = synthetic_blobs(400, 2, 2, 0.0, seed=0), synthetic_blobs(4000, 2, 2, 0.0, seed=1)
        net = build(mlp_spec(2, [16], 2), 0)
        train(net, tr, None, TrainConfig(epochs=20))
        assert abs(evaluate(net, te) - 0.5) < 0.05

    def test_contract(self):
        with pytest.raises(ContractError):
            synthetic_blobs(1, 2)
