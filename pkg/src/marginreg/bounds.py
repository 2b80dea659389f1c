"""Numerical evaluators for the margin generalization bounds.

Every closed-form bound here has a matching estimator that does not share
its algebra: the class-capacity complexity bounds can be checked against a
Monte Carlo (or, for tiny instances, exhaustive) estimate of the underlying
sign-average, and the deviation terms are plain formulas evaluated at
stated confidence levels.

Conventions.  ``lam`` is the radius of the weight-vector ball measured in
the norm dual to the feature norm order ``p`` (so plain L2 against L2,
an L-infinity ball against L1 features, and so on).  ``gamma`` is the
per-class margin vector; samples are always scaled by the margin of their
own class.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._validation import (
    check_features,
    check_labels,
    check_norm_order,
    check_positive_vector,
)
from .losses import LN2, logit_margin_ce_batch
from .margins import compute_gamma
from .stats import batch_class_stats

_MC_CHUNK = 512
_EXACT_LIMIT = 16


def conjugate_order(p: float) -> float:
    p = check_norm_order(p)
    if p == 1.0:
        return np.inf
    if np.isinf(p):
        return 1.0
    return p / (p - 1.0)


def sample_margins(logits, labels) -> np.ndarray:
    """Per-sample logit margin: true logit minus best competitor."""
    logits = check_features(logits)
    labels = check_labels(labels, logits.shape[1], length=logits.shape[0])
    rows = np.arange(logits.shape[0])
    true = logits[rows, labels]
    masked = logits.copy()
    masked[rows, labels] = -np.inf
    return true - masked.max(axis=1)


def empirical_margin_risk(logits, labels, gamma) -> float:
    """Mean ramp loss at per-class margin scales."""
    gamma = check_positive_vector("gamma", gamma, length=np.asarray(logits).shape[1])
    margins = sample_margins(logits, labels)
    labels = np.asarray(labels, dtype=np.int64)
    per = np.clip(1.0 - margins / gamma[labels], 0.0, 1.0)
    return float(per.mean())


def surrogate_risk(logits, labels, gamma) -> float:
    """Mean temperature cross-entropy at per-class margin scales."""
    values, _ = logit_margin_ce_batch(logits, labels, gamma)
    return float(values.mean())


def zero_one_risk(logits, labels) -> float:
    """Mean classification error; argmax ties count as errors."""
    return float(np.mean(sample_margins(logits, labels) <= 0.0))


# -- closed-form complexity bounds ------------------------------------------


def rademacher_bound_l2(mu_sq, s_sq, gamma, lam: float, n: int) -> float:
    """Capacity bound lam * sqrt(K/N) * sqrt(sum_k (mu2_k + s2_k) / gamma_k^2)."""
    gamma = check_positive_vector("gamma", gamma)
    mu_sq = np.asarray(mu_sq, dtype=np.float64)
    s_sq = np.asarray(s_sq, dtype=np.float64)
    if mu_sq.shape != gamma.shape or s_sq.shape != gamma.shape:
        raise ValueError("mu_sq, s_sq, gamma must share one shape")
    if np.any(mu_sq < 0) or np.any(s_sq < 0):
        raise ValueError("squared statistics must be non-negative")
    lam, n = _check_lam_n(lam, n)
    k = gamma.shape[0]
    return float(lam * math.sqrt(k / n) * math.sqrt(np.sum((mu_sq + s_sq) / gamma**2)))


def rademacher_bound_lp(r_sq, gamma, lam: float, n: int, p: float, d: int) -> float:
    """General-norm capacity bound C(p) * lam * sqrt(K/N) * sqrt(sum r2/g2).

    ``lam`` is the dual-ball radius and ``r_sq`` the per-class mean squared
    p-norms of the features.
    """
    gamma = check_positive_vector("gamma", gamma)
    r_sq = np.asarray(r_sq, dtype=np.float64)
    if r_sq.shape != gamma.shape:
        raise ValueError("r_sq and gamma must share one shape")
    if np.any(r_sq < 0):
        raise ValueError("squared statistics must be non-negative")
    lam, n = _check_lam_n(lam, n)
    k = gamma.shape[0]
    cp = c_p_constant(p, d)
    return float(cp * lam * math.sqrt(k / n) * math.sqrt(np.sum(r_sq / gamma**2)))


def c_p_constant(p: float, d: int | float | None = None) -> float:
    """Norm-dependent constant in the general capacity bound.

    1 for 1 <= p <= 2; the folded-Gaussian moment 2^(p/2) Gamma((p+1)/2) /
    sqrt(pi) for finite p > 2; sqrt(2 ln d) at p = infinity, which is the
    one case that needs the feature dimension.
    """
    p = check_norm_order(p)
    if np.isinf(p):
        if d is None:
            raise ValueError("p = inf needs the feature dimension d")
        d = float(d)
        if d < 1:
            raise ValueError("feature dimension must be >= 1")
        return math.sqrt(2.0 * math.log(d))
    if p <= 2.0:
        return 1.0
    return math.exp(
        0.5 * p * math.log(2.0) + math.lgamma(0.5 * (p + 1.0)) - 0.5 * math.log(math.pi)
    )


def _check_lam_n(lam: float, n: int):
    lam = float(lam)
    if not math.isfinite(lam) or lam <= 0:
        raise ValueError(f"weight bound lam must be positive, got {lam}")
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    return lam, n


# -- sign-average estimators ------------------------------------------------


def _scaled_features(features, labels, gamma, num_classes):
    features = check_features(features)
    labels = check_labels(labels, num_classes, length=features.shape[0])
    gamma = check_positive_vector("gamma", gamma, length=num_classes)
    return features / gamma[labels][:, None], labels


def _sup_over_draws(eps, psi, lam: float, p: float):
    """Closed-form supremum of the sign-weighted correlation per draw.

    For weight rows living in the dual-norm ball of radius ``lam``, the
    supremum over the function class is lam * sum_y ||v_y||_p with
    v_y = sum_i eps[i, y] * psi_i.  ``eps`` is (draws, N, K).
    """
    v = np.einsum("dnk,nf->dkf", eps, psi)
    if np.isinf(p):
        norms = np.abs(v).max(axis=2)
    else:
        norms = np.sum(np.abs(v) ** p, axis=2) ** (1.0 / p)
    return lam * norms.sum(axis=1)


def rademacher_mc(
    features,
    labels,
    gamma,
    lam: float,
    num_classes: int,
    num_draws: int = 4096,
    seed: int = 0,
    p: float = 2.0,
    threads: int = 1,
):
    """Monte Carlo estimate of the margin-scaled sign complexity.

    Returns ``(mean, stderr)`` over ``num_draws`` independent sign
    matrices.  Draws are seeded per fixed-size chunk, so the result is
    identical for any ``threads`` value.
    """
    p = check_norm_order(p)
    lam, _ = _check_lam_n(lam, 1)
    if num_draws < 2:
        raise ValueError("num_draws must be >= 2")
    psi, _ = _scaled_features(features, labels, gamma, num_classes)
    n = psi.shape[0]

    def run_chunk(idx_size):
        idx, size = idx_size
        rng = np.random.default_rng([int(seed), 7, idx])
        eps = rng.integers(0, 2, size=(size, n, num_classes)).astype(np.float64)
        eps = 2.0 * eps - 1.0
        return _sup_over_draws(eps, psi, lam, p)

    chunks = []
    left = num_draws
    while left > 0:
        take = min(_MC_CHUNK, left)
        chunks.append((len(chunks), take))
        left -= take
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run_chunk, chunks))
    else:
        parts = [run_chunk(c) for c in chunks]
    sups = np.concatenate(parts) / n
    return float(sups.mean()), float(sups.std(ddof=1) / math.sqrt(num_draws))


def rademacher_exact(
    features, labels, gamma, lam: float, num_classes: int, p: float = 2.0
) -> float:
    """Exact sign-average by enumerating every sign matrix.

    Only feasible for N * K <= 16; raises otherwise.
    """
    p = check_norm_order(p)
    lam, _ = _check_lam_n(lam, 1)
    psi, _ = _scaled_features(features, labels, gamma, num_classes)
    n = psi.shape[0]
    cells = n * num_classes
    if cells > _EXACT_LIMIT:
        raise ValueError(
            f"exact enumeration over 2^{cells} sign matrices is not feasible"
        )
    total = 1 << cells
    codes = np.arange(total, dtype=np.uint32)
    bits = (codes[:, None] >> np.arange(cells)[None, :]) & 1
    eps = (2.0 * bits - 1.0).reshape(total, n, num_classes)
    sups = _sup_over_draws(eps, psi, lam, p)
    return float(sups.mean() / n)


# -- deviation terms and assembled right-hand sides -------------------------


def confidence_term(n: int, delta: float) -> float:
    """3 * sqrt(ln(2 / delta) / (2 N))."""
    if not (0.0 < delta < 1.0):
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if n < 1:
        raise ValueError("n must be >= 1")
    return 3.0 * math.sqrt(math.log(2.0 / delta) / (2.0 * n))


def lemma1_rhs(margin_risk: float, complexity: float, n: int, k: int, delta: float) -> float:
    """Ramp risk + 4 sqrt(2K) * complexity + confidence term."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return float(
        margin_risk + 4.0 * math.sqrt(2.0 * k) * complexity + confidence_term(n, delta)
    )


def prop1_rhs(
    surrogate: float, mu_sq, s_sq, gamma, lam: float, n: int, delta: float
) -> float:
    """Surrogate form of the bound with the capacity term spelled out.

    (1/ln 2) * surrogate + (4 sqrt(2) lam K / sqrt(N)) * sqrt(sum alpha/g^2)
    + 3 sqrt(ln(2/delta) / (2N)).
    """
    gamma = check_positive_vector("gamma", gamma)
    lam, n = _check_lam_n(lam, n)
    k = gamma.shape[0]
    alpha = np.asarray(mu_sq, dtype=np.float64) + np.asarray(s_sq, dtype=np.float64)
    cap = (
        4.0
        * math.sqrt(2.0)
        * lam
        * k
        / math.sqrt(n)
        * math.sqrt(np.sum(alpha / gamma**2))
    )
    return float(surrogate / LN2 + cap + confidence_term(n, delta))


def per_class_rhs(
    surrogate_k: float,
    mu_sq_k: float,
    s_sq_k: float,
    gamma_k: float,
    lam: float,
    n_k: int,
    delta: float,
) -> float:
    """Single-class version of the surrogate bound.

    The class capacity term is (4 / gamma_k) * (lam / sqrt(N_k)) *
    sqrt(mu2 + s2); the deviation term uses the class sample count.
    """
    if gamma_k <= 0:
        raise ValueError("gamma_k must be positive")
    lam, n_k = _check_lam_n(lam, n_k)
    if mu_sq_k < 0 or s_sq_k < 0:
        raise ValueError("squared statistics must be non-negative")
    cap = 4.0 / gamma_k * lam / math.sqrt(n_k) * math.sqrt(mu_sq_k + s_sq_k)
    return float(surrogate_k / LN2 + cap + confidence_term(n_k, delta))


@dataclass
class BoundReport:
    """Every evaluated term for one dataset-model pair."""

    n: int
    num_classes: int
    p: float
    delta: float
    c_bar: float
    lam: float
    gamma: np.ndarray
    empirical_margin_risk: float
    surrogate_risk: float
    zero_one_risk: float
    complexity_l2: float
    complexity_lp: float
    c_p: float
    mc_mean: float
    mc_stderr: float
    lemma1_rhs: float
    prop1_rhs: float
    per_class_rhs: np.ndarray
    per_class_counts: np.ndarray = field(default=None)  # type: ignore[assignment]

    def rows(self):
        """Long-form (field, index, value) rows for CSV output."""
        out = []
        for name in (
            "n",
            "num_classes",
            "p",
            "delta",
            "c_bar",
            "lam",
            "empirical_margin_risk",
            "surrogate_risk",
            "zero_one_risk",
            "complexity_l2",
            "complexity_lp",
            "c_p",
            "mc_mean",
            "mc_stderr",
            "lemma1_rhs",
            "prop1_rhs",
        ):
            out.append((name, "", getattr(self, name)))
        for i, g in enumerate(self.gamma):
            out.append(("gamma", i, g))
        for i, v in enumerate(self.per_class_rhs):
            out.append(("per_class_rhs", i, v))
        return out


def build_bound_report(
    model,
    dataset,
    delta: float = 0.05,
    p: float = 2.0,
    c_bar: float = 2.0,
    num_draws: int = 4096,
    seed: int = 0,
    threads: int = 1,
) -> BoundReport:
    """Evaluate every bound term for a model on a dataset.

    Statistics are computed fresh from the model's features on this
    dataset (not from any training-time running state), margins follow the
    spread-proportional rule at budget ``c_bar``, and the weight bound is
    read off the model head in the norm dual to ``p``.
    """
    p = check_norm_order(p)
    feats = model.features(dataset.x)
    logits = model.predict_logits(dataset.x)
    k = dataset.num_classes
    mu_sq, s_sq, r_sq, counts = batch_class_stats(feats, dataset.y, k, p=p)
    if np.any(counts == 0):
        raise ValueError("bound report needs at least one sample of every class")
    alpha = mu_sq + s_sq if p == 2.0 else r_sq
    gamma = compute_gamma(alpha, c_bar)
    q = conjugate_order(p)
    lam = model.head_norm_bound(q)
    n = dataset.n
    d = feats.shape[1]
    emp = empirical_margin_risk(logits, dataset.y, gamma)
    surr = surrogate_risk(logits, dataset.y, gamma)
    lam2 = model.head_norm_bound(2.0)
    comp_l2 = rademacher_bound_l2(mu_sq, s_sq, gamma, lam2, n)
    comp_lp = rademacher_bound_lp(r_sq, gamma, lam, n, p, d)
    mc_mean, mc_stderr = rademacher_mc(
        feats,
        dataset.y,
        gamma,
        lam,
        k,
        num_draws=num_draws,
        seed=seed,
        p=p,
        threads=threads,
    )
    per_class = np.full(k, np.nan)
    for c in range(k):
        mask = dataset.y == c
        surr_c = surrogate_risk(logits[mask], dataset.y[mask], gamma)
        per_class[c] = per_class_rhs(
            surr_c, mu_sq[c], s_sq[c], gamma[c], lam2, int(counts[c]), delta
        )
    return BoundReport(
        n=n,
        num_classes=k,
        p=p,
        delta=delta,
        c_bar=c_bar,
        lam=lam,
        gamma=gamma,
        empirical_margin_risk=emp,
        surrogate_risk=surr,
        zero_one_risk=zero_one_risk(logits, dataset.y),
        complexity_l2=comp_l2,
        complexity_lp=comp_lp,
        c_p=c_p_constant(p, d),
        mc_mean=mc_mean,
        mc_stderr=mc_stderr,
        lemma1_rhs=lemma1_rhs(emp, comp_l2, n, k, delta),
        prop1_rhs=prop1_rhs(surr, mu_sq, s_sq, gamma, lam2, n, delta),
        per_class_rhs=per_class,
        per_class_counts=counts,
    )
