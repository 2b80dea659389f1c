"""Margin schedules: how a fixed margin budget is split across classes.

The spread-proportional rule gives class y a logit margin proportional to
the cube root of its capacity weight, normalized so the mean margin equals
the budget.  The cube root is what falls out of minimizing the sum of
weight-over-squared-margin terms subject to a fixed total, so classes whose
features are spread out or far from the origin receive larger margins.

Also here: the family of fixed pairwise logit offsets used by prior-driven
losses, kept as an explicit K-by-K matrix.
"""

from __future__ import annotations

import numpy as np

from ._validation import check_finite

DELTA_KINDS = ("ldam", "eql", "balanced_softmax", "logit_adjustment")

_ALPHA_FLOOR = 1e-12


def compute_gamma(alpha, c_bar: float) -> np.ndarray:
    """Spread-proportional margins for capacity weights ``alpha``.

    gamma_y = c_bar * K * alpha_y**(1/3) / sum_k alpha_k**(1/3)

    The mean of the result is exactly ``c_bar``.  All-zero weights fall
    back to the uniform vector; if only some weights are zero a floor of
    1e-12 is added to every weight before the cube root so the result stays
    strictly positive.
    """
    alpha = check_finite("alpha", alpha)
    if alpha.ndim != 1 or alpha.size == 0:
        raise ValueError("alpha must be a non-empty 1-D array")
    if np.any(alpha < 0):
        raise ValueError("alpha must be non-negative")
    c_bar = float(c_bar)
    if not np.isfinite(c_bar) or c_bar <= 0:
        raise ValueError(f"margin budget c_bar must be positive, got {c_bar}")
    k = alpha.shape[0]
    if np.all(alpha == 0.0):
        return np.full(k, c_bar)
    if np.any(alpha == 0.0):
        alpha = alpha + _ALPHA_FLOOR
    roots = np.cbrt(alpha)
    return c_bar * k * roots / roots.sum()


def compute_gamma_lp(r_sq, c_bar: float) -> np.ndarray:
    """Margins driven by mean squared p-norms instead of mean/spread parts.

    Same allocation rule as :func:`compute_gamma`; only the capacity
    weight changes, so this is a thin alias kept for call-site clarity.
    """
    return compute_gamma(r_sq, c_bar)


def gamma_from_stats(stats, c_bar: float, use_lp: bool = False) -> np.ndarray:
    """Margin vector from running class statistics.

    Classes never observed get the neutral margin ``c_bar``; the formula is
    applied over the observed subset with its own budget, which keeps the
    overall mean at ``c_bar`` without an extra renormalization step.
    """
    c_bar = float(c_bar)
    if not np.isfinite(c_bar) or c_bar <= 0:
        raise ValueError(f"margin budget c_bar must be positive, got {c_bar}")
    init = stats.initialized
    gamma = np.full(stats.num_classes, c_bar)
    if init.any():
        weights = stats.r_sq[init] if use_lp else stats.alpha()[init]
        gamma[init] = compute_gamma(weights, c_bar)
    return gamma


def delta_margins(priors, kind: str, tau: float = 1.0) -> np.ndarray:
    """Pairwise logit offsets ``delta[y, y']`` for a prior vector.

    kind:
        ``ldam``              delta = priors[y] ** (-1/4)        (row-constant)
        ``eql``               delta = priors[y']                 (column-constant)
        ``balanced_softmax``  delta = ln(priors[y'] / priors[y])
        ``logit_adjustment``  delta = tau * ln(priors[y'] / priors[y])

    Uniform priors collapse every kind to a constant matrix, at which point
    the induced loss is ordinary cross-entropy with a constant absorbed
    into the true-class logit.
    """
    priors = check_finite("priors", priors)
    if priors.ndim != 1 or priors.size == 0:
        raise ValueError("priors must be a non-empty 1-D array")
    if np.any(priors <= 0):
        raise ValueError("priors must be strictly positive")
    if abs(priors.sum() - 1.0) > 1e-8:
        raise ValueError(f"priors must sum to 1, got {priors.sum()!r}")
    if kind not in DELTA_KINDS:
        raise ValueError(f"unknown delta kind {kind!r}, expected one of {DELTA_KINDS}")
    k = priors.shape[0]
    if kind == "ldam":
        return np.tile(priors[:, None] ** (-0.25), (1, k))
    if kind == "eql":
        return np.tile(priors[None, :], (k, 1))
    log_ratio = np.log(priors)[None, :] - np.log(priors)[:, None]
    if kind == "balanced_softmax":
        return log_ratio
    return float(tau) * log_ratio


def margin_cost(alpha, gamma) -> float:
    """The allocation objective sum_k alpha_k / gamma_k**2."""
    alpha = check_finite("alpha", alpha)
    gamma = check_finite("gamma", gamma)
    if alpha.shape != gamma.shape:
        raise ValueError("alpha and gamma must have matching shapes")
    if np.any(gamma <= 0):
        raise ValueError("gamma must be strictly positive")
    return float(np.sum(alpha / gamma**2))


def check_gamma_budget(gamma, c_bar: float, tol: float = 1e-12) -> bool:
    """True when mean(gamma) matches the budget to within ``tol``."""
    gamma = check_finite("gamma", gamma)
    return bool(abs(float(gamma.mean()) - float(c_bar)) <= tol)
