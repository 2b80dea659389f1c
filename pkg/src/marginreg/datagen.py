"""Synthetic class-balanced Gaussian mixtures and the dataset file format.

Classes sit on orthonormal directions scaled by a common factor, with
per-class isotropic noise whose scale ramps linearly from ``sigma_min`` to
``sigma_max``.  Later class indices therefore have genuinely larger spread,
which is the whole point: difficulty is controlled and monotone in the
class index.

Files are little-endian: magic ``MR2D``, a u32 version, u64 sample count,
u32 input dimension, u32 class count, u16 labels, then float32 features in
row-major order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ._io import atomic_write_bytes
from ._validation import check_features, check_labels

_DATA_MAGIC = b"MR2D"
_DATA_VERSION = 1
_SPLIT_CODES = {"train": 0, "test": 1}


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        self.x = check_features(self.x)
        self.y = check_labels(self.y, self.num_classes, length=self.x.shape[0])
        if self.split not in _SPLIT_CODES:
            raise ValueError(f"split must be one of {tuple(_SPLIT_CODES)}")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d_in(self) -> int:
        return self.x.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.num_classes)


@dataclass
class SynthSpec:
    num_classes: int = 10
    d_in: int = 20
    train_per_class: int = 500
    test_per_class: int = 500
    sigma_min: float = 0.5
    sigma_max: float = 3.0
    mean_scale: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if self.d_in < self.num_classes:
            raise ValueError(
                f"orthonormal class means need d_in >= num_classes, "
                f"got d_in={self.d_in} < {self.num_classes}"
            )
        if self.train_per_class < 1 or self.test_per_class < 1:
            raise ValueError("per-class sample counts must be >= 1")
        if not (0 < self.sigma_min <= self.sigma_max):
            raise ValueError("need 0 < sigma_min <= sigma_max")
        if self.mean_scale <= 0:
            raise ValueError("mean_scale must be positive")


def class_sigmas(spec: SynthSpec) -> np.ndarray:
    """Linear ramp of noise scales over the class index."""
    return np.linspace(spec.sigma_min, spec.sigma_max, spec.num_classes)


def class_means(spec: SynthSpec) -> np.ndarray:
    """(K, d_in) orthonormal directions times ``mean_scale``, seeded.

    The QR sign ambiguity is fixed by forcing the R diagonal positive, so
    the means are reproducible bit for bit.
    """
    rng = np.random.default_rng([spec.seed, 9173])
    raw = rng.standard_normal((spec.d_in, spec.num_classes))
    q, r = np.linalg.qr(raw)
    q = q * np.sign(np.diag(r))[None, :]
    return spec.mean_scale * q.T


def generate(spec: SynthSpec) -> tuple[Dataset, Dataset]:
    """Draw the (train, test) pair described by ``spec``.

    Sampling is per class with derived seeds, so each class stream is
    independent of the others and of the split sizes.
    """
    means = class_means(spec)
    sigmas = class_sigmas(spec)
    out = []
    for split, per_class in (
        ("train", spec.train_per_class),
        ("test", spec.test_per_class),
    ):
        xs, ys = [], []
        code = _SPLIT_CODES[split]
        for k in range(spec.num_classes):
            rng = np.random.default_rng([spec.seed, code, k])
            pts = means[k] + sigmas[k] * rng.standard_normal((per_class, spec.d_in))
            xs.append(pts)
            ys.append(np.full(per_class, k, dtype=np.int64))
        out.append(
            Dataset(
                x=np.concatenate(xs),
                y=np.concatenate(ys),
                num_classes=spec.num_classes,
                split=split,
            )
        )
    return out[0], out[1]


def write_dataset(path, dataset: Dataset) -> None:
    if dataset.num_classes > 0xFFFF:
        raise ValueError("dataset format stores labels as u16")
    head = _DATA_MAGIC + struct.pack(
        "<IQII", _DATA_VERSION, dataset.n, dataset.d_in, dataset.num_classes
    )
    labels = dataset.y.astype("<u2").tobytes()
    feats = np.ascontiguousarray(dataset.x, dtype="<f4").tobytes()
    atomic_write_bytes(path, head + labels + feats)


def read_dataset(path, split: str = "train") -> Dataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _DATA_MAGIC:
        raise ValueError("not a dataset file (bad magic)")
    fmt = "<IQII"
    try:
        version, n, d_in, k = struct.unpack_from(fmt, blob, 4)
    except struct.error as exc:
        raise ValueError("truncated dataset header") from exc
    if version != _DATA_VERSION:
        raise ValueError(f"unsupported dataset version {version}")
    off = 4 + struct.calcsize(fmt)
    expect = off + 2 * n + 4 * n * d_in
    if len(blob) != expect:
        raise ValueError(
            f"dataset size mismatch: file has {len(blob)} bytes, header implies {expect}"
        )
    labels = np.frombuffer(blob, dtype="<u2", count=n, offset=off).astype(np.int64)
    feats = (
        np.frombuffer(blob, dtype="<f4", count=n * d_in, offset=off + 2 * n)
        .astype(np.float64)
        .reshape(n, d_in)
    )
    if not np.all(np.isfinite(feats)):
        raise ValueError("dataset contains non-finite features")
    if n and labels.max() >= k:
        raise ValueError("dataset contains labels outside [0, K)")
    return Dataset(x=feats, y=labels, num_classes=k, split=split)
