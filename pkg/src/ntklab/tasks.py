"""Dataset generators and loaders.

Every generator is seed-deterministic and records where its samples came
from in ``Dataset.provenance``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .netcore import array_fingerprint

IDX_UBYTE = 0x08
IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IDXFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: Optional[np.ndarray] = None
    provenance: dict = field(default_factory=dict)
    class_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=float)
        if X.ndim != 2:
            raise ValueError("sample matrix must be 2-D")
        if not np.all(np.isfinite(X)):
            raise ValueError("sample matrix contains non-finite entries")
        object.__setattr__(self, "X", X)
        if self.y is not None:
            y = np.asarray(self.y, dtype=float)
            if y.shape != (X.shape[0],):
                raise ValueError("label vector length does not match sample count")
            object.__setattr__(self, "y", y)
        if self.class_ids is not None:
            object.__setattr__(self, "class_ids", np.asarray(self.class_ids, dtype=int))

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def fingerprint(self) -> str:
        return array_fingerprint(self.X)

    def subset(self, idx, note: Optional[dict] = None) -> "Dataset":
        idx = np.asarray(idx)
        prov = dict(self.provenance)
        if note:
            prov.update(note)
        return Dataset(
            self.X[idx],
            None if self.y is None else self.y[idx],
            prov,
            None if self.class_ids is None else self.class_ids[idx],
        )


@dataclass(frozen=True)
class TaskSpec:
    generator: str
    params: dict = field(default_factory=dict)
    train_m: int = 0
    test_m: int = 0
    seed: int = 0


# ----------------------------------------------------------------------------
# IDX files

def read_idx(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise IDXFormatError(f"{path}: file too short for an IDX header")
    zero, dtype, ndim = struct.unpack(">HBB", data[:4])
    if zero != 0 or dtype != IDX_UBYTE or ndim == 0:
        raise IDXFormatError(f"{path}: bad magic number 0x{data[:4].hex()}")
    header = 4 + 4 * ndim
    if len(data) < header:
        raise IDXFormatError(f"{path}: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    count = int(np.prod(dims))
    if len(data) - header < count:
        raise IDXFormatError(f"{path}: expected {count} bytes of payload, found {len(data) - header}")
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=header).reshape(dims)


def read_idx_header(path) -> tuple:
    with open(path, "rb") as fh:
        head = fh.read(4)
        if len(head) < 4:
            raise IDXFormatError(f"{path}: file too short for an IDX header")
        ndim = head[3]
        raw = fh.read(4 * ndim)
    if len(raw) < 4 * ndim:
        raise IDXFormatError(f"{path}: truncated dimension header")
    return struct.unpack(">I", head)[0], struct.unpack(f">{ndim}I", raw)


def write_idx(path, array) -> None:
    a = np.asarray(array)
    if a.dtype != np.uint8:
        raise ValueError("only unsigned byte IDX files are supported")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">HBB", 0, IDX_UBYTE, a.ndim))
        fh.write(struct.pack(f">{a.ndim}I", *a.shape))
        fh.write(a.tobytes())


def average_pool(images: np.ndarray, side: int) -> np.ndarray:
    n, h, w = images.shape
    if h % side or w % side:
        raise ValueError(f"cannot pool {h}x{w} images down to {side}x{side}")
    fh, fw = h // side, w // side
    return images.reshape(n, side, fh, side, fw).mean(axis=(2, 4))


def _finish_images(pixels, labels, classes, downsample, center, source) -> Dataset:
    if downsample:
        pixels = average_pool(pixels, int(downsample))
    X = pixels.reshape(pixels.shape[0], -1)
    if classes is not None:
        keep = np.isin(labels, sorted(classes))
        X, labels = X[keep], labels[keep]
    if center:
        X = X - X.mean(axis=0)
    prov = {
        "generator": "images",
        "source": source,
        "classes": None if classes is None else sorted(int(c) for c in classes),
        "downsample": downsample,
        "centered": bool(center),
    }
    return Dataset(X, None, prov, labels.astype(int))


def load_idx_images(
    images_path,
    labels_path,
    classes: Optional[Iterable[int]] = None,
    downsample: Optional[int] = None,
    center: bool = True,
) -> Dataset:
    """Read an IDX image/label pair, scale pixels to [0, 1], pool, filter and centre.

    Labels are left unset; the original class id of each sample is kept in
    ``Dataset.class_ids``.
    """
    img_magic, _ = read_idx_header(images_path)
    lab_magic, _ = read_idx_header(labels_path)
    if img_magic != IMAGE_MAGIC:
        raise IDXFormatError(f"{images_path}: image magic 0x{img_magic:08x} != 0x{IMAGE_MAGIC:08x}")
    if lab_magic != LABEL_MAGIC:
        raise IDXFormatError(f"{labels_path}: label magic 0x{lab_magic:08x} != 0x{LABEL_MAGIC:08x}")
    pixels = read_idx(images_path).astype(float) / 255.0
    labels = read_idx(labels_path)
    if labels.shape[0] != pixels.shape[0]:
        raise IDXFormatError("image and label counts differ")
    ds = _finish_images(pixels, labels, classes, downsample, center, str(images_path))
    ds.provenance.update(images_path=str(images_path), labels_path=str(labels_path))
    return ds


def load_digits_dataset(classes: Optional[Iterable[int]] = None, center: bool = True) -> Dataset:
    """The 8x8 handwritten digits bundled with scikit-learn (1797 samples, d=64)."""
    from sklearn.datasets import load_digits

    bunch = load_digits()
    pixels = bunch.images / 16.0
    return _finish_images(pixels, bunch.target, classes, None, center, "sklearn.load_digits")


# ----------------------------------------------------------------------------
# synthetic generators

def synth_gaussian(d: int, m: int, seed: int) -> Dataset:
    if d < 1 or m < 1:
        raise ValueError("d and m must be positive")
    X = np.random.default_rng(seed).standard_normal((m, d))
    return Dataset(X, None, {"generator": "gaussian", "d": d, "m": m, "seed": seed})


def class_group_labels(dataset: Dataset, positive_classes: Optional[Iterable[int]] = None) -> Dataset:
    """+1 for samples whose original class is in ``positive_classes`` (default: lower half), else -1."""
    if dataset.class_ids is None:
        raise ValueError("dataset carries no class ids")
    if positive_classes is None:
        present = np.unique(dataset.class_ids)
        positive_classes = present[: len(present) // 2]
    positive = sorted(int(c) for c in positive_classes)
    y = np.where(np.isin(dataset.class_ids, positive), 1.0, -1.0)
    prov = dict(dataset.provenance, labels="class_group", positive_classes=positive)
    return replace(dataset, y=y, provenance=prov)


def linear_task(u, epsilon: float = 1.0, sigma: float = 1.0, m: int = 10_000, seed: int = 0) -> Dataset:
    """Samples ``x = epsilon * y * u + w`` with ``w ~ N(0, sigma (I - u u^T))`` and ``y`` uniform on {-1, 1}."""
    u = np.asarray(u, dtype=float)
    if abs(np.linalg.norm(u) - 1.0) > 1e-8:
        raise ValueError("direction must have unit norm")
    if epsilon <= 0 or sigma <= 0:
        raise ValueError("epsilon and sigma must be positive")
    rng = np.random.default_rng(seed)
    y = rng.choice(np.array([-1.0, 1.0]), size=m)
    g = rng.standard_normal((m, u.shape[0]))
    w = np.sqrt(sigma) * (g - np.outer(g @ u, u))
    X = epsilon * y[:, None] * u[None, :] + w
    prov = {"generator": "linear_nad", "epsilon": epsilon, "sigma": sigma, "m": m, "seed": seed,
            "direction": u.tolist()}
    return Dataset(X, y, prov)


def label_with_eigenfunction(dataset: Dataset, eigsys, j: int) -> Dataset:
    from .spectral import binarize_eigenfunction

    if eigsys.dataset_fingerprint != dataset.fingerprint:
        raise ValueError("eigensystem was computed on a different sample set")
    y = binarize_eigenfunction(eigsys, j)
    prov = dict(dataset.provenance, labels="eigenfunction", j=int(j),
                gram_fingerprint=eigsys.gram_fingerprint,
                positive_fraction=float(np.mean(y > 0)))
    return replace(dataset, y=y, provenance=prov)


def split(dataset: Dataset, train_m: int, test_m: int, seed: int) -> tuple:
    if train_m < 0 or test_m < 0 or train_m + test_m > dataset.m:
        raise ValueError(f"cannot take {train_m}+{test_m} samples from {dataset.m}")
    perm = np.random.default_rng(seed).permutation(dataset.m)
    tr, te = np.sort(perm[:train_m]), np.sort(perm[train_m : train_m + test_m])
    note = {"split_seed": seed, "train_m": train_m, "test_m": test_m}
    return (
        dataset.subset(tr, dict(note, part="train")),
        dataset.subset(te, dict(note, part="test")),
    )
