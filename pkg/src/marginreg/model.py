"""Small dense classifier with hand-written backprop.

Encoders: identity, one linear layer, or a one-hidden-layer MLP with a
smooth nonlinearity (tanh or softplus) so derivative checks are clean
everywhere.  Heads: plain linear, or cosine (both the class weights and
the features L2-normalized with an epsilon guard).

Parameters are a dict of float64 arrays in a fixed order; ``backward``
returns gradients in the same structure.  Checkpoints are a little-endian
binary format with the class statistics embedded after the weights.
"""

from __future__ import annotations

import struct

import numpy as np

from ._io import atomic_write_bytes
from ._validation import check_finite
from .stats import ClassStats

_CKPT_MAGIC = b"MR2C"
_CKPT_VERSION = 1

ENCODERS = ("identity", "linear", "mlp")
HEADS = ("linear", "cosine")
ACTIVATIONS = ("tanh", "softplus")

_NORM_EPS = 1e-12


def _act(name, x):
    if name == "tanh":
        return np.tanh(x)
    return np.logaddexp(0.0, x)  # softplus


def _act_grad(name, x, fx):
    if name == "tanh":
        return 1.0 - fx**2
    return 1.0 / (1.0 + np.exp(-x))  # sigmoid


def _normalize_rows(a):
    """Row-normalize with a smooth epsilon guard; also returns the scale."""
    r = 1.0 / np.sqrt(np.sum(a**2, axis=1) + _NORM_EPS)
    return a * r[:, None], r


class MarginModel:
    """Encoder plus classification head, all float64, all explicit."""

    def __init__(
        self,
        d_in: int,
        num_classes: int,
        encoder: str = "mlp",
        hidden_dim: int = 64,
        feature_dim: int = 32,
        head: str = "linear",
        activation: str = "tanh",
        seed: int = 0,
    ):
        if encoder not in ENCODERS:
            raise ValueError(f"unknown encoder {encoder!r}")
        if head not in HEADS:
            raise ValueError(f"unknown head {head!r}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if d_in < 1 or num_classes < 2:
            raise ValueError("need d_in >= 1 and num_classes >= 2")
        self.d_in = int(d_in)
        self.num_classes = int(num_classes)
        self.encoder = encoder
        self.head = head
        self.activation = activation
        self.hidden_dim = int(hidden_dim) if encoder == "mlp" else 0
        if encoder == "identity":
            self.feature_dim = self.d_in
        else:
            self.feature_dim = int(feature_dim)
        if self.encoder == "mlp" and self.hidden_dim < 1:
            raise ValueError("mlp encoder needs hidden_dim >= 1")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        self.params: dict[str, np.ndarray] = {}
        rng = np.random.default_rng(seed)
        if encoder == "linear":
            self._init_layer(rng, "enc_w", "enc_b", self.feature_dim, self.d_in)
        elif encoder == "mlp":
            self._init_layer(rng, "enc_w1", "enc_b1", self.hidden_dim, self.d_in)
            self._init_layer(rng, "enc_w2", "enc_b2", self.feature_dim, self.hidden_dim)
        bound = 1.0 / np.sqrt(self.feature_dim)
        self.params["head_w"] = rng.uniform(
            -bound, bound, size=(self.num_classes, self.feature_dim)
        )

    def _init_layer(self, rng, wname, bname, fan_out, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        self.params[wname] = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        self.params[bname] = rng.uniform(-bound, bound, size=fan_out)

    # -- forward / backward -------------------------------------------------

    def forward(self, x):
        """Return (features, logits, cache) for a (B, d_in) batch."""
        x = check_finite("x", x)
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise ValueError(f"x must be (B, {self.d_in}), got {x.shape}")
        cache = {"x": x}
        if self.encoder == "identity":
            feat = x
        elif self.encoder == "linear":
            feat = x @ self.params["enc_w"].T + self.params["enc_b"]
        else:
            pre = x @ self.params["enc_w1"].T + self.params["enc_b1"]
            hid = _act(self.activation, pre)
            cache["pre"] = pre
            cache["hid"] = hid
            feat = hid @ self.params["enc_w2"].T + self.params["enc_b2"]
        cache["feat"] = feat
        w = self.params["head_w"]
        if self.head == "linear":
            logits = feat @ w.T
        else:
            fn, fr = _normalize_rows(feat)
            wn, wr = _normalize_rows(w)
            cache.update(fn=fn, fr=fr, wn=wn, wr=wr)
            logits = fn @ wn.T
        return feat, logits, cache

    def backward(self, cache, grad_logits, grad_features=None):
        """Exact parameter gradients given upstream gradients.

        ``grad_logits`` is (B, K); ``grad_features`` is an optional (B, d)
        term added directly on the encoder output (the compactness loss
        feeds in there, bypassing the head).
        """
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        feat = cache["feat"]
        w = self.params["head_w"]
        if self.head == "linear":
            grads["head_w"] = grad_logits.T @ feat
            gfeat = grad_logits @ w
        else:
            fn, fr, wn, wr = cache["fn"], cache["fr"], cache["wn"], cache["wr"]
            gwn = grad_logits.T @ fn
            # through w / sqrt(|w|^2 + eps): r*g - r^3 (w.g) w, rowwise
            grads["head_w"] = wr[:, None] * gwn - (
                wr**3 * np.sum(w * gwn, axis=1)
            )[:, None] * w
            gfn = grad_logits @ wn
            gfeat = fr[:, None] * gfn - (
                fr**3 * np.sum(feat * gfn, axis=1)
            )[:, None] * feat
        if grad_features is not None:
            gfeat = gfeat + grad_features
        if self.encoder == "identity":
            return grads
        if self.encoder == "linear":
            grads["enc_w"] = gfeat.T @ cache["x"]
            grads["enc_b"] = gfeat.sum(axis=0)
            return grads
        grads["enc_w2"] = gfeat.T @ cache["hid"]
        grads["enc_b2"] = gfeat.sum(axis=0)
        ghid = gfeat @ self.params["enc_w2"]
        gpre = ghid * _act_grad(self.activation, cache["pre"], cache["hid"])
        grads["enc_w1"] = gpre.T @ cache["x"]
        grads["enc_b1"] = gpre.sum(axis=0)
        return grads

    def predict_logits(self, x):
        return self.forward(x)[1]

    def features(self, x):
        return self.forward(x)[0]

    def head_norm_bound(self, q: float = 2.0) -> float:
        """Largest q-norm over class weight rows (1.0-normalized rows for
        the cosine head, so the bound reflects the weights actually used)."""
        w = self.params["head_w"]
        if self.head == "cosine":
            w = _normalize_rows(w)[0]
        return float(np.linalg.norm(w, ord=q, axis=1).max())

    # -- flat parameter vector ---------------------------------------------

    def param_names(self):
        return list(self.params.keys())

    def params_vector(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in self.params])

    def set_params_vector(self, vec) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        off = 0
        for k in self.params:
            n = self.params[k].size
            self.params[k] = vec[off : off + n].reshape(self.params[k].shape).copy()
            off += n
        if off != vec.size:
            raise ValueError(f"parameter vector has {vec.size} entries, expected {off}")

    def grads_vector(self, grads) -> np.ndarray:
        return np.concatenate([grads[k].ravel() for k in self.params])


# -- checkpoint i/o ---------------------------------------------------------


def save_checkpoint(path, model: MarginModel, stats: ClassStats | None = None) -> None:
    """Write model weights plus class statistics to ``path``.

    When no statistics are given an empty (uninitialized) block of the
    right shape is embedded so the format always carries one.
    """
    if stats is None:
        stats = ClassStats(num_classes=model.num_classes, dim=model.feature_dim)
    head = _CKPT_MAGIC + struct.pack(
        "<IBBBIIII",
        _CKPT_VERSION,
        ENCODERS.index(model.encoder),
        HEADS.index(model.head),
        ACTIVATIONS.index(model.activation),
        model.d_in,
        model.hidden_dim,
        model.feature_dim,
        model.num_classes,
    )
    body = b"".join(model.params[k].astype("<f8").tobytes() for k in model.params)
    atomic_write_bytes(path, head + body + stats.to_bytes())


def load_checkpoint(path) -> tuple[MarginModel, ClassStats]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _CKPT_MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    off = 4
    fmt = "<IBBBIIII"
    try:
        version, enc, hd, act, d_in, hidden, feat, k = struct.unpack_from(
            fmt, blob, off
        )
    except struct.error as exc:
        raise ValueError("truncated checkpoint header") from exc
    off += struct.calcsize(fmt)
    if version != _CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    if enc >= len(ENCODERS) or hd >= len(HEADS) or act >= len(ACTIVATIONS):
        raise ValueError("corrupt checkpoint architecture descriptor")
    if ENCODERS[enc] == "identity" and feat != d_in:
        raise ValueError("corrupt checkpoint: identity encoder with feat != d_in")
    try:
        model = MarginModel(
            d_in=d_in,
            num_classes=k,
            encoder=ENCODERS[enc],
            hidden_dim=hidden,
            feature_dim=feat,
            head=HEADS[hd],
            activation=ACTIVATIONS[act],
        )
    except ValueError as exc:
        raise ValueError(f"corrupt checkpoint dimensions: {exc}") from exc
    for name in model.params:
        n = model.params[name].size
        need = off + 8 * n
        if len(blob) < need:
            raise ValueError("truncated checkpoint parameters")
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=off)
        model.params[name] = arr.reshape(model.params[name].shape).copy()
        off = need
    stats, used = ClassStats.from_bytes(blob[off:])
    if stats.num_classes != k:
        raise ValueError("checkpoint statistics disagree with the head size")
    if off + used != len(blob):
        raise ValueError("trailing bytes after checkpoint statistics")
    return model, stats
