"""Datasets: MNIST IDX files and seeded synthetic Gaussian mixtures."""

from __future__ import annotations

import gzip
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..rng import Xoshiro256pp

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxError(ValueError):
    pass


class BadMagicError(IdxError):
    pass


class TruncatedPayloadError(IdxError):
    pass


class CountMismatchError(IdxError):
    pass


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray  # (N, m) float64
    y: np.ndarray  # (N,) int64, 0-based
    name: str = ""
    split: str = ""

    def __post_init__(self):
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError("features and labels disagree on sample count")

    def __len__(self):
        return self.X.shape[0]

    @property
    def n_classes(self) -> int:
        return int(self.y.max()) + 1 if len(self.y) else 0

    def take(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.name, self.split)


# -- IDX --------------------------------------------------------------------


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, magic: int, ndim: int, what: str):
    if len(raw) < 4:
        raise TruncatedPayloadError(f"{what}: header truncated")
    got = struct.unpack(">I", raw[:4])[0]
    if got != magic:
        raise BadMagicError(f"{what}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    if len(raw) < 4 + 4 * ndim:
        raise TruncatedPayloadError(f"{what}: header truncated")
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    count = int(np.prod(dims))
    payload = raw[4 + 4 * ndim:]
    if len(payload) < count:
        raise TruncatedPayloadError(f"{what}: payload has {len(payload)} bytes, header promises {count}")
    return dims, np.frombuffer(payload, dtype=np.uint8, count=count)


def load_mnist_idx(images_path, labels_path, name: str = "mnist", split: str = "") -> Dataset:
    """Read an IDX image/label pair (optionally gzipped); pixels scaled to [0, 1]."""
    dims, pixels = _parse_idx(_read_bytes(images_path), IMAGES_MAGIC, 3, "images")
    (n_labels,), labels = _parse_idx(_read_bytes(labels_path), LABELS_MAGIC, 1, "labels")
    n, rows, cols = dims
    if n != n_labels:
        raise CountMismatchError(f"{n} images but {n_labels} labels")
    X = pixels.reshape(n, rows * cols).astype(np.float64) / 255.0
    return Dataset(X, labels.astype(np.int64), name, split)


def write_idx_images(path, images: np.ndarray) -> None:
    """Write uint8 images (N, rows, cols); gzip when the name ends in .gz."""
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    raw = struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols) + images.tobytes()
    _write(path, raw)


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    raw = struct.pack(">II", LABELS_MAGIC, labels.shape[0]) + labels.tobytes()
    _write(path, raw)


def _write(path, raw: bytes) -> None:
    path = Path(path)
    if path.suffix == ".gz":
        raw = gzip.compress(raw, mtime=0)
    path.write_bytes(raw)


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def find_mnist(directory) -> dict[str, tuple[Path, Path]] | None:
    """Locate the standard four MNIST files (plain or .gz) in ``directory``."""
    directory = Path(directory)
    found = {}
    for split, names in MNIST_FILES.items():
        paths = []
        for stem in names:
            for cand in (directory / stem, directory / f"{stem}.gz"):
                if cand.exists():
                    paths.append(cand)
                    break
        if len(paths) != 2:
            return None
        found[split] = tuple(paths)
    return found


def load_mnist_dir(directory) -> tuple[Dataset, Dataset]:
    files = find_mnist(directory)
    if files is None:
        raise FileNotFoundError(f"no MNIST IDX files in {directory}")
    train = load_mnist_idx(*files["train"], split="train")
    test = load_mnist_idx(*files["test"], split="test")
    return train, test


def export_mnist_subset(directory, test_size: int = 1000, seed: int = 0) -> Path:
    """Write the 5000-digit MNIST sample bundled with mlxtend as IDX files.

    The sample is split into train/test with a seeded shuffle and written
    under the standard MNIST file names, so the rest of the harness cannot
    tell it from the full set.
    """
    try:
        from mlxtend.data import mnist_data
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise FileNotFoundError(
            "full MNIST not found and mlxtend (which bundles a 5000-digit subset) is not installed"
        ) from exc
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    X, y = mnist_data()
    perm = Xoshiro256pp(seed).permutation(len(y))
    X = np.rint(X[perm]).astype(np.uint8).reshape(-1, 28, 28)
    y = y[perm].astype(np.uint8)
    parts = {"train": slice(test_size, None), "test": slice(0, test_size)}
    for split, sl in parts.items():
        img, lab = MNIST_FILES[split]
        write_idx_images(directory / f"{img}.gz", X[sl])
        write_idx_labels(directory / f"{lab}.gz", y[sl])
    return directory


def default_mnist_dir() -> Path:
    return Path(os.environ.get("HYPCLIP_MNIST_DIR", "data/mnist"))


def subset_cache_dir() -> Path:
    return Path(os.environ.get("HYPCLIP_CACHE", Path.home() / ".cache" / "hypclip")) / "mnist-subset"


def resolve_mnist(directory=None) -> tuple[Dataset, Dataset, str]:
    """Full MNIST from ``directory`` if present, otherwise the exported 5000-digit subset."""
    directory = Path(directory) if directory else default_mnist_dir()
    if find_mnist(directory) is not None:
        train, test = load_mnist_dir(directory)
        return train, test, "mnist"
    cache = subset_cache_dir()
    if find_mnist(cache) is None:
        export_mnist_subset(cache)
    train, test = load_mnist_dir(cache)
    return train, test, "mnist-subset"


# -- synthetic ----------------------------------------------------------------


def _unit_rows(rng: Xoshiro256pp, k: int, n: int) -> np.ndarray:
    d = rng.normal((k, n))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def make_gaussians(K: int, n: int, per_class: int, spread: float, seed: int,
                   radius: float = 3.0, name: str = "gaussians") -> Dataset:
    """K isotropic clusters, centres drawn uniformly on the sphere of the given radius."""
    if K < 2:
        raise ValueError("need at least two classes")
    rng = Xoshiro256pp(seed)
    centres = radius * _unit_rows(rng, K, n)
    y = np.repeat(np.arange(K, dtype=np.int64), per_class)
    X = centres[y] + spread * rng.normal((K * per_class, n))
    perm = rng.permutation(len(y))
    return Dataset(X[perm], y[perm], name)


def make_hierarchical_gaussians(groups: int, per_group: int, n: int, per_class: int,
                                seed: int, group_radius: float = 3.0, sub_radius: float = 1.0,
                                spread: float = 0.35, name: str = "hier-gaussians") -> Dataset:
    """Two-level mixture: ``groups`` super-centres, each with ``per_group`` class centres nearby."""
    rng = Xoshiro256pp(seed)
    supers = group_radius * _unit_rows(rng, groups, n)
    centres = np.concatenate([s + sub_radius * _unit_rows(rng, per_group, n) for s in supers])
    K = groups * per_group
    y = np.repeat(np.arange(K, dtype=np.int64), per_class)
    X = centres[y] + spread * rng.normal((K * per_class, n))
    perm = rng.permutation(len(y))
    return Dataset(X[perm], y[perm], name)


def split(ds: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    perm = Xoshiro256pp(seed).permutation(len(ds))
    n_test = int(math.floor(len(ds) * test_fraction))
    test = ds.take(perm[:n_test])
    train = ds.take(perm[n_test:])
    return (Dataset(train.X, train.y, ds.name, "train"), Dataset(test.X, test.y, ds.name, "test"))
