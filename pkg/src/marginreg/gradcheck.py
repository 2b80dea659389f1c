"""Central finite-difference checks for every analytic gradient.

Each check builds a random instance, evaluates the analytic gradient, and
compares it against a float64 central difference with step 1e-5.  The
error reported per instance is

    max_i |analytic_i - numeric_i| / max(1, |analytic_i|, |numeric_i|)

so large gradients are judged relatively and near-zero ones absolutely.
"""

from __future__ import annotations

import numpy as np

from .losses import combined_objective, logit_margin_ce, rep_margin_loss
from .model import ACTIVATIONS, ENCODERS, HEADS, MarginModel

FD_STEP = 1e-5
DEFAULT_TOL = 1e-5
LOSS_NAMES = ("logit_margin_ce", "rep_margin_loss", "combined_objective")


def central_difference(f, x0, step: float = FD_STEP) -> np.ndarray:
    """Per-coordinate central finite difference of a scalar function."""
    x0 = np.asarray(x0, dtype=np.float64)
    grad = np.zeros_like(x0)
    for i in range(x0.size):
        hi = x0.copy()
        lo = x0.copy()
        hi[i] += step
        lo[i] -= step
        grad[i] = (f(hi) - f(lo)) / (2.0 * step)
    return grad


def gradient_error(analytic, numeric) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def _check_logit_margin_ce(rng) -> float:
    k = int(rng.integers(2, 11))
    z = rng.normal(0.0, 3.0, size=k)
    y = int(rng.integers(k))
    gamma_y = float(rng.uniform(0.3, 3.0))
    analytic = logit_margin_ce(z, y, gamma_y).grad_logits
    numeric = central_difference(lambda v: logit_margin_ce(v, y, gamma_y).value, z)
    return gradient_error(analytic, numeric)


def _check_rep_margin_loss(rng) -> float:
    d = int(rng.integers(2, 9))
    m = int(rng.integers(1, 7))
    anchor = rng.normal(0.0, 1.0, size=d)
    positives = rng.normal(0.0, 1.0, size=(m, d))
    s_bar = float(rng.uniform(0.0, 2.0))
    got = rep_margin_loss(anchor, positives, s_bar)
    analytic = np.concatenate([got.grad_anchor, got.grad_positives.ravel()])

    def f(vec):
        a = vec[:d]
        p = vec[d:].reshape(m, d)
        return rep_margin_loss(a, p, s_bar).value

    numeric = central_difference(f, np.concatenate([anchor, positives.ravel()]))
    return gradient_error(analytic, numeric)


def _check_combined(rng) -> float:
    d_in = int(rng.integers(3, 7))
    k = int(rng.integers(2, 5))
    b = int(rng.integers(4, 9))
    model = MarginModel(
        d_in=d_in,
        num_classes=k,
        encoder=ENCODERS[rng.integers(len(ENCODERS))],
        hidden_dim=int(rng.integers(3, 6)),
        feature_dim=int(rng.integers(2, 6)),
        head=HEADS[rng.integers(len(HEADS))],
        activation=ACTIVATIONS[rng.integers(len(ACTIVATIONS))],
        seed=int(rng.integers(1 << 31)),
    )
    x = rng.normal(0.0, 1.0, size=(b, d_in))
    labels = rng.integers(0, k, size=b)
    gamma = rng.uniform(0.4, 2.5, size=k)
    s_bar = float(rng.uniform(0.0, 1.0))
    lam = float(rng.uniform(0.1, 1.0))
    _, _, _, grads = combined_objective(model, x, labels, gamma, s_bar, lam)
    analytic = model.grads_vector(grads)
    theta0 = model.params_vector()

    def f(vec):
        model.set_params_vector(vec)
        value = combined_objective(model, x, labels, gamma, s_bar, lam)[0]
        return value

    numeric = central_difference(f, theta0)
    model.set_params_vector(theta0)
    return gradient_error(analytic, numeric)


_CHECKS = {
    "logit_margin_ce": _check_logit_margin_ce,
    "rep_margin_loss": _check_rep_margin_loss,
    "combined_objective": _check_combined,
}


def run_suite(instances: int = 200, seed: int = 0):
    """Run every check ``instances`` times.

    Returns a list of (loss_name, instance_id, rel_error) tuples in a
    deterministic order.
    """
    if instances < 1:
        raise ValueError("instances must be >= 1")
    rows = []
    for li, name in enumerate(LOSS_NAMES):
        check = _CHECKS[name]
        for i in range(instances):
            rng = np.random.default_rng([seed, 17 + li, i])
            rows.append((name, i, check(rng)))
    return rows
