"""Per-class feature statistics with exponential moving averages.

For every class this module tracks three scalars computed from embedded
features: the squared norm of the class mean embedding, the mean squared
deviation of embeddings around that mean (the "spread"), and the mean
squared p-norm of the embeddings themselves.  The margin schedule and the
capacity terms both read these numbers, so they live in one structure with
one update rule.

Batch statistics are plain per-batch averages; the running state folds them
in with a fixed-decay exponential moving average.  A class that has never
appeared stays uninitialized and takes the first batch value directly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_features, check_labels, check_norm_order

_STATS_MAGIC = b"STAT"
_STATS_VERSION = 1


def batch_class_stats(features, labels, num_classes: int, p: float = 2.0):
    """Per-class statistics of one batch of embedded features.

    Parameters
    ----------
    features : array of shape (n, d)
        Embedded points.
    labels : int array of shape (n,)
        Class indices in ``[0, num_classes)``.
    num_classes : int
        Total number of classes K.
    p : float
        Norm order for the mean squared p-norm (``np.inf`` allowed).

    Returns
    -------
    mu_sq, s_sq, r_sq, counts : arrays of shape (K,)
        Squared mean-embedding norm, mean squared deviation around the
        class mean, mean squared p-norm, and the sample count per class.
        Classes absent from the batch get zeros and count 0.
    """
    features = check_features(features)
    labels = check_labels(labels, num_classes, length=features.shape[0])
    p = check_norm_order(p)

    mu_sq = np.zeros(num_classes)
    s_sq = np.zeros(num_classes)
    r_sq = np.zeros(num_classes)
    counts = np.bincount(labels, minlength=num_classes).astype(np.int64)
    for k in range(num_classes):
        if counts[k] == 0:
            continue
        pts = features[labels == k]
        mu = pts.mean(axis=0)
        mu_sq[k] = mu @ mu
        s_sq[k] = mean_deviation_sq(pts)
        norms = np.linalg.norm(pts, ord=p, axis=1)
        r_sq[k] = float(np.mean(norms**2))
    return mu_sq, s_sq, r_sq, counts


def mean_deviation_sq(points) -> float:
    """Mean squared L2 deviation of a point set around its own mean."""
    points = check_features(points)
    if points.shape[0] == 0:
        raise ValueError("need at least one point")
    centered = points - points.mean(axis=0)
    return float(np.mean(np.sum(centered**2, axis=1)))


def mean_pairwise_sq_distance(points) -> float:
    """Mean squared distance over all ordered pairs, self-pairs included.

    Equals exactly twice :func:`mean_deviation_sq` of the same point set,
    which is why the spread statistic carries a factor of two when used as
    a compactness target.
    """
    points = check_features(points)
    n = points.shape[0]
    if n == 0:
        raise ValueError("need at least one point")
    sq = np.sum(points**2, axis=1)
    gram = points @ points.T
    d2 = sq[:, None] + sq[None, :] - 2.0 * gram
    return float(np.sum(np.maximum(d2, 0.0)) / (n * n))


@dataclass
class ClassStats:
    """Running per-class feature statistics under exponential decay.

    Attributes
    ----------
    num_classes : int
    dim : int
        Embedding dimension the statistics were computed from.
    p : float
        Norm order used for ``r_sq``.
    decay : float
        EMA decay in ``[0, 1)``; the batch value enters with weight
        ``1 - decay``.
    mu_sq, s_sq, r_sq : arrays of shape (K,)
    initialized : bool array of shape (K,)
        False until the class has been observed at least once.
    """

    num_classes: int
    dim: int
    p: float = 2.0
    decay: float = 0.9
    mu_sq: np.ndarray = field(default=None)  # type: ignore[assignment]
    s_sq: np.ndarray = field(default=None)  # type: ignore[assignment]
    r_sq: np.ndarray = field(default=None)  # type: ignore[assignment]
    initialized: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        self.p = check_norm_order(self.p)
        if not (0.0 <= self.decay < 1.0):
            raise ValueError(f"decay must lie in [0, 1), got {self.decay}")
        k = self.num_classes
        if self.mu_sq is None:
            self.mu_sq = np.zeros(k)
        if self.s_sq is None:
            self.s_sq = np.zeros(k)
        if self.r_sq is None:
            self.r_sq = np.zeros(k)
        if self.initialized is None:
            self.initialized = np.zeros(k, dtype=bool)
        for name in ("mu_sq", "s_sq", "r_sq", "initialized"):
            arr = getattr(self, name)
            if np.asarray(arr).shape != (k,):
                raise ValueError(f"{name} must have shape ({k},)")
        self.mu_sq = np.asarray(self.mu_sq, dtype=np.float64).copy()
        self.s_sq = np.asarray(self.s_sq, dtype=np.float64).copy()
        self.r_sq = np.asarray(self.r_sq, dtype=np.float64).copy()
        self.initialized = np.asarray(self.initialized, dtype=bool).copy()

    def update(self, features, labels) -> None:
        """Fold one batch into the running state.

        Classes absent from the batch are untouched.  A class seen for the
        first time takes the batch statistics directly instead of decaying
        from the zero state.
        """
        features = check_features(features, dim=self.dim)
        mu_sq, s_sq, r_sq, counts = batch_class_stats(
            features, labels, self.num_classes, p=self.p
        )
        present = counts > 0
        first = present & ~self.initialized
        ema = present & self.initialized
        d = self.decay
        for name, batch in (("mu_sq", mu_sq), ("s_sq", s_sq), ("r_sq", r_sq)):
            state = getattr(self, name)
            state[first] = batch[first]
            state[ema] = d * state[ema] + (1.0 - d) * batch[ema]
        self.initialized |= present

    def spread_target(self) -> float:
        """Mean of ``s_sq`` over initialized classes (0.0 if none yet)."""
        if not self.initialized.any():
            return 0.0
        return float(self.s_sq[self.initialized].mean())

    def alpha(self) -> np.ndarray:
        """Per-class capacity weight ``mu_sq + s_sq`` used by the schedule."""
        return self.mu_sq + self.s_sq

    def copy(self) -> "ClassStats":
        return ClassStats(
            num_classes=self.num_classes,
            dim=self.dim,
            p=self.p,
            decay=self.decay,
            mu_sq=self.mu_sq,
            s_sq=self.s_sq,
            r_sq=self.r_sq,
            initialized=self.initialized,
        )

    def to_bytes(self) -> bytes:
        """Serialize to the versioned little-endian section format."""
        k = self.num_classes
        head = _STATS_MAGIC + struct.pack(
            "<IIIdd", _STATS_VERSION, k, self.dim, self.p, self.decay
        )
        body = (
            self.mu_sq.astype("<f8").tobytes()
            + self.s_sq.astype("<f8").tobytes()
            + self.r_sq.astype("<f8").tobytes()
            + self.initialized.astype(np.uint8).tobytes()
        )
        return head + body

    @classmethod
    def from_bytes(cls, blob: bytes) -> tuple["ClassStats", int]:
        """Parse a stats section; returns the instance and bytes consumed."""
        if blob[:4] != _STATS_MAGIC:
            raise ValueError("bad statistics section magic")
        off = 4
        version, k, dim, p, decay = struct.unpack_from("<IIIdd", blob, off)
        if version != _STATS_VERSION:
            raise ValueError(f"unsupported statistics version {version}")
        off += struct.calcsize("<IIIdd")
        need = 3 * 8 * k + k
        if len(blob) < off + need:
            raise ValueError("truncated statistics section")
        arrs = []
        for _ in range(3):
            arrs.append(np.frombuffer(blob, dtype="<f8", count=k, offset=off).copy())
            off += 8 * k
        init = np.frombuffer(blob, dtype=np.uint8, count=k, offset=off).astype(bool)
        off += k
        stats = cls(
            num_classes=k,
            dim=dim,
            p=p,
            decay=decay,
            mu_sq=arrs[0],
            s_sq=arrs[1],
            r_sq=arrs[2],
            initialized=init,
        )
        return stats, off
