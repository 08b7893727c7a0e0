import gzip
import struct

import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from hypclip.harness import datasets as ds


def _idx_pair(tmp_path, images, labels, suffix=""):
    img, lab = tmp_path / f"img.idx{suffix}", tmp_path / f"lab.idx{suffix}"
    ds.write_idx_images(img, images)
    ds.write_idx_labels(lab, labels)
    return img, lab


class TestIdx:
    def test_single_image(self, tmp_path):
        image = (np.arange(784) % 256).astype(np.uint8).reshape(1, 28, 28)
        img, lab = _idx_pair(tmp_path, image, np.array([7]))
        d = ds.load_mnist_idx(img, lab)
        assert len(d) == 1 and d.X.shape == (1, 784)
        assert d.y[0] == 7
        np.testing.assert_allclose(d.X[0], image.ravel() / 255.0)

    def test_zero_pixels(self, tmp_path):
        img, lab = _idx_pair(tmp_path, np.zeros((2, 28, 28), np.uint8), np.array([0, 1]))
        np.testing.assert_array_equal(ds.load_mnist_idx(img, lab).X, 0.0)

    def test_big_endian_header(self, tmp_path):
        img, _ = _idx_pair(tmp_path, np.zeros((3, 2, 4), np.uint8), np.zeros(3))
        assert img.read_bytes()[:16] == struct.pack(">IIII", 0x803, 3, 2, 4)

    def test_gzip_round_trip(self, tmp_path):
        images = np.random.default_rng(0).integers(0, 256, (5, 28, 28)).astype(np.uint8)
        img, lab = _idx_pair(tmp_path, images, np.arange(5), suffix=".gz")
        assert img.read_bytes()[:2] == b"\x1f\x8b"
        d = ds.load_mnist_idx(img, lab)
        np.testing.assert_array_equal((d.X * 255).round().astype(np.uint8), images.reshape(5, -1))

    def test_bad_magic(self, tmp_path):
        img, lab = _idx_pair(tmp_path, np.zeros((1, 28, 28), np.uint8), np.array([0]))
        with pytest.raises(ds.BadMagicError):
            ds.load_mnist_idx(lab, lab)

    def test_truncated_payload(self, tmp_path):
        img, lab = _idx_pair(tmp_path, np.zeros((2, 28, 28), np.uint8), np.array([0, 1]))
        img.write_bytes(img.read_bytes()[:-10])
        with pytest.raises(ds.TruncatedPayloadError):
            ds.load_mnist_idx(img, lab)

    def test_count_mismatch(self, tmp_path):
        img, lab = _idx_pair(tmp_path, np.zeros((2, 28, 28), np.uint8), np.array([0, 1, 1]))
        with pytest.raises(ds.CountMismatchError):
            ds.load_mnist_idx(img, lab)

    def test_errors_are_distinct(self):
        kinds = {ds.BadMagicError, ds.TruncatedPayloadError, ds.CountMismatchError}
        assert len(kinds) == 3
        assert all(issubclass(k, ds.IdxError) for k in kinds)

    def test_find_mnist_layout(self, tmp_path):
        for split, (img_name, lab_name) in ds.MNIST_FILES.items():
            n = 3 if split == "train" else 2
            ds.write_idx_images(tmp_path / (img_name + ".gz"), np.zeros((n, 28, 28), np.uint8))
            ds.write_idx_labels(tmp_path / (lab_name + ".gz"), np.zeros(n))
        train, test = ds.load_mnist_dir(tmp_path)
        assert (len(train), len(test)) == (3, 2)

    def test_missing_directory(self, tmp_path):
        assert ds.find_mnist(tmp_path / "nowhere") is None


class TestGaussians:
    def test_deterministic_bytes(self):
        a = ds.make_gaussians(3, 5, 20, 0.5, seed=11)
        b = ds.make_gaussians(3, 5, 20, 0.5, seed=11)
        assert a.X.tobytes() == b.X.tobytes() and a.y.tobytes() == b.y.tobytes()

    def test_seed_matters(self):
        a = ds.make_gaussians(3, 5, 20, 0.5, seed=11)
        b = ds.make_gaussians(3, 5, 20, 0.5, seed=12)
        assert not np.array_equal(a.X, b.X)

    def test_shape_and_labels(self):
        d = ds.make_gaussians(4, 6, 25, 1.0, seed=0)
        assert d.X.shape == (100, 6)
        np.testing.assert_array_equal(np.bincount(d.y), [25] * 4)

    def test_centres_on_sphere(self):
        d = ds.make_gaussians(5, 4, 10, 0.0, seed=3)
        np.testing.assert_allclose(np.linalg.norm(d.X, axis=1), 3.0, rtol=1e-12)

    def test_needs_two_classes(self):
        with pytest.raises(ValueError):
            ds.make_gaussians(1, 4, 10, 0.1, seed=0)

    def test_linear_separability_floor(self):
        d = ds.make_gaussians(2, 10, 200, 0.1, seed=0)
        train, test = ds.split(d, 0.25, seed=0)
        clf = LogisticRegression().fit(train.X, train.y)
        assert clf.score(test.X, test.y) >= 0.99

    def test_hierarchical(self):
        d = ds.make_hierarchical_gaussians(3, 4, 5, 10, seed=2)
        assert d.n_classes == 12 and len(d) == 120

    def test_split_partitions(self):
        d = ds.make_gaussians(3, 2, 40, 0.3, seed=1)
        train, test = ds.split(d, 0.25, seed=5)
        assert len(test) == 30 and len(train) == 90
        rows = {r.tobytes() for r in np.concatenate([train.X, test.X])}
        assert len(rows) == 120
