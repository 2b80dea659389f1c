"""Risk terms, capacity estimates, and assembled bound right-hand sides.

The closed-form capacity bounds are checked against sign-average estimates
that do not share their algebra: Monte Carlo over random sign matrices and,
for tiny instances, exhaustive enumeration.
"""

import math

import numpy as np
import pytest

from marginreg.bounds import (
    BoundReport,
    build_bound_report,
    c_p_constant,
    confidence_term,
    conjugate_order,
    empirical_margin_risk,
    lemma1_rhs,
    per_class_rhs,
    prop1_rhs,
    rademacher_bound_l2,
    rademacher_bound_lp,
    rademacher_exact,
    rademacher_mc,
    sample_margins,
    surrogate_risk,
    zero_one_risk,
)
from marginreg.datagen import Dataset, SynthSpec, generate
from marginreg.losses import logit_margin_ce
from marginreg.model import MarginModel
from marginreg.stats import batch_class_stats


class TestRiskTerms:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.logits = rng.normal(scale=2.0, size=(40, 4))
        self.labels = rng.integers(0, 4, size=40)
        self.gamma = rng.uniform(0.5, 3.0, size=4)

    def test_sample_margins_loop_oracle(self):
        got = sample_margins(self.logits, self.labels)
        for i in range(40):
            y = self.labels[i]
            others = [self.logits[i, j] for j in range(4) if j != y]
            assert got[i] == pytest.approx(self.logits[i, y] - max(others))

    def test_empirical_margin_risk_is_mean_ramp(self):
        got = empirical_margin_risk(self.logits, self.labels, self.gamma)
        total = 0.0
        for i in range(40):
            m = sample_margins(self.logits[i : i + 1], self.labels[i : i + 1])[0]
            total += min(1.0, max(0.0, 1.0 - m / self.gamma[self.labels[i]]))
        assert got == pytest.approx(total / 40)

    def test_surrogate_risk_is_mean_ce(self):
        got = surrogate_risk(self.logits, self.labels, self.gamma)
        vals = [
            logit_margin_ce(self.logits[i], int(self.labels[i]),
                            self.gamma[self.labels[i]]).value
            for i in range(40)
        ]
        assert got == pytest.approx(np.mean(vals), rel=1e-12)

    def test_zero_one_risk_counts_ties_as_errors(self):
        logits = np.array([[1.0, 1.0], [2.0, 0.0], [0.0, 2.0]])
        labels = np.array([0, 0, 0])
        assert zero_one_risk(logits, labels) == pytest.approx(2.0 / 3.0)

    def test_risk_ordering(self):
        """Error rate <= margin risk <= surrogate / ln 2, per batch."""
        err = zero_one_risk(self.logits, self.labels)
        marg = empirical_margin_risk(self.logits, self.labels, self.gamma)
        surr = surrogate_risk(self.logits, self.labels, self.gamma)
        assert err <= marg + 1e-12
        assert marg <= surr / math.log(2.0) + 1e-12


class TestConjugateOrder:
    def test_pairs(self):
        assert conjugate_order(1.0) == np.inf
        assert conjugate_order(np.inf) == 1.0
        assert conjugate_order(2.0) == pytest.approx(2.0)
        assert conjugate_order(3.0) == pytest.approx(1.5)

    def test_involution(self):
        for p in (1.0, 1.5, 2.0, 4.0, np.inf):
            assert conjugate_order(conjugate_order(p)) == pytest.approx(p)

    def test_holder_exponent_identity(self):
        for p in (1.25, 2.0, 5.0):
            q = conjugate_order(p)
            assert 1.0 / p + 1.0 / q == pytest.approx(1.0)


class TestCpConstant:
    def test_exactly_one_at_and_below_two(self):
        for p in (1.0, 1.5, 2.0):
            assert c_p_constant(p) == 1.0

    def test_fourth_moment_is_three(self):
        assert c_p_constant(4.0) == pytest.approx(3.0, abs=1e-9)

    def test_continuous_at_two(self):
        assert c_p_constant(2.0 + 1e-6) == pytest.approx(1.0, abs=1e-5)

    def test_matches_folded_gaussian_moment(self):
        """For finite p > 2 the constant is the p-th absolute moment of a
        standard Gaussian; cross-checked by direct Monte Carlo."""
        g = np.random.default_rng(0).standard_normal(2_000_000)
        for p in (2.5, 3.0, 4.0):
            mc = float(np.mean(np.abs(g) ** p))
            assert c_p_constant(p) == pytest.approx(mc, rel=5e-3)

    def test_third_moment_value(self):
        assert c_p_constant(3.0) == pytest.approx(1.5957691216057306, abs=1e-12)

    def test_monotone_beyond_two(self):
        ps = [2.1, 2.5, 3.0, 4.0, 6.0]
        vals = [c_p_constant(p) for p in ps]
        assert all(a < b for a, b in zip(vals, vals[1:]))

    def test_infinity_needs_dimension(self):
        with pytest.raises(ValueError, match="dimension"):
            c_p_constant(np.inf)
        assert c_p_constant(np.inf, d=8) == pytest.approx(math.sqrt(2 * math.log(8)))

    def test_infinity_degenerates_at_one_dimension(self):
        """ln 1 = 0: the stated constant vanishes for one feature, a real
        degeneracy of the formula rather than a code defect."""
        assert c_p_constant(np.inf, d=1) == 0.0

    def test_rejects_bad_order(self):
        with pytest.raises(ValueError):
            c_p_constant(0.5)


def _dual_attainer(v, p, lam):
    """Weight vector of dual norm lam whose inner product with v equals
    lam * ||v||_p.  Standard tight case of the Holder inequality."""
    v = np.asarray(v, dtype=np.float64)
    if np.isinf(p):
        w = np.zeros_like(v)
        j = int(np.argmax(np.abs(v)))
        w[j] = lam * np.sign(v[j])
        return w
    if p == 1.0:
        return lam * np.sign(v)
    norm = np.sum(np.abs(v) ** p) ** (1.0 / p)
    if norm == 0.0:
        return np.zeros_like(v)
    return lam * np.sign(v) * np.abs(v) ** (p - 1.0) / norm ** (p - 1.0)


class TestSignAverages:
    def _instance(self, seed, n=3, k=2, d=3):
        rng = np.random.default_rng(seed)
        feats = rng.normal(size=(n, d))
        labels = rng.integers(0, k, size=n)
        gamma = rng.uniform(0.5, 2.0, size=k)
        return feats, labels, gamma

    def test_exact_matches_brute_force_search(self):
        """Enumerate every sign matrix; per matrix, the supremum reached by
        the Holder attainer matches the library value and no random feasible
        weight matrix beats it."""
        for seed in range(5):
            feats, labels, gamma = self._instance(seed)
            n, d = feats.shape
            k = gamma.shape[0]
            lam = 1.3
            for p, q in ((2.0, 2.0), (1.0, np.inf), (3.0, 1.5), (np.inf, 1.0)):
                psi = feats / gamma[labels][:, None]
                rng = np.random.default_rng(seed + 100)
                total = 0.0
                cells = n * k
                for code in range(1 << cells):
                    eps = np.array(
                        [1.0 if (code >> i) & 1 else -1.0 for i in range(cells)]
                    ).reshape(n, k)
                    sup = 0.0
                    for y in range(k):
                        v = (eps[:, y : y + 1] * psi).sum(axis=0)
                        w = _dual_attainer(v, p, lam)
                        if np.any(w):
                            qn = np.linalg.norm(w, ord=q)
                            assert qn == pytest.approx(lam, rel=1e-9)
                        sup += float(w @ v)
                        for _ in range(20):
                            cand = rng.normal(size=d)
                            cand = lam * cand / np.linalg.norm(cand, ord=q)
                            assert float(cand @ v) <= float(w @ v) + 1e-9
                    total += sup / n
                want = total / (1 << cells)
                got = rademacher_exact(feats, labels, gamma, lam, k, p=p)
                assert got == pytest.approx(want, rel=1e-9)

    def test_exact_guard(self):
        feats = np.zeros((9, 2))
        labels = np.zeros(9, dtype=int)
        with pytest.raises(ValueError, match="feasible"):
            rademacher_exact(feats, labels, np.ones(2), 1.0, 2)

    def test_mc_agrees_with_exact(self):
        feats, labels, gamma = self._instance(11, n=4, k=2, d=2)
        exact = rademacher_exact(feats, labels, gamma, 1.0, 2)
        mean, stderr = rademacher_mc(
            feats, labels, gamma, 1.0, 2, num_draws=8192, seed=3
        )
        assert abs(mean - exact) <= 4.0 * stderr

    def test_mc_thread_count_invariant(self):
        feats, labels, gamma = self._instance(12, n=10, k=3, d=4)
        a = rademacher_mc(feats, labels, gamma, 1.0, 3, num_draws=1024, seed=5, threads=1)
        b = rademacher_mc(feats, labels, gamma, 1.0, 3, num_draws=1024, seed=5, threads=4)
        assert a == b

    def test_mc_seed_sensitivity(self):
        feats, labels, gamma = self._instance(13, n=8, k=2, d=3)
        a, _ = rademacher_mc(feats, labels, gamma, 1.0, 2, num_draws=256, seed=1)
        b, _ = rademacher_mc(feats, labels, gamma, 1.0, 2, num_draws=256, seed=2)
        assert a != b

    def test_mc_scales_linearly_in_lam(self):
        feats, labels, gamma = self._instance(14, n=6, k=2, d=3)
        a, _ = rademacher_mc(feats, labels, gamma, 1.0, 2, num_draws=512, seed=9)
        b, _ = rademacher_mc(feats, labels, gamma, 2.5, 2, num_draws=512, seed=9)
        assert b == pytest.approx(2.5 * a, rel=1e-12)

    def test_mc_below_l2_bound(self):
        """The estimated sign average respects the closed-form capacity
        bound on every random instance, within Monte Carlo resolution.

        Classes are balanced: the closed form assumes equal per-class
        sample counts, and heavy imbalance genuinely breaks it."""
        rng = np.random.default_rng(77)
        for _ in range(30):
            k = int(rng.integers(2, 5))
            per_class = int(rng.integers(2, 10))
            d = int(rng.integers(2, 7))
            n = k * per_class
            feats = rng.normal(scale=rng.uniform(0.5, 3.0), size=(n, d))
            labels = rng.permutation(np.repeat(np.arange(k), per_class))
            gamma = rng.uniform(0.5, 2.5, size=k)
            lam = float(rng.uniform(0.5, 3.0))
            mu_sq, s_sq, _, _ = batch_class_stats(feats, labels, k)
            bound = rademacher_bound_l2(mu_sq, s_sq, gamma, lam, n)
            mean, stderr = rademacher_mc(
                feats, labels, gamma, lam, k, num_draws=1024, seed=int(rng.integers(1 << 30))
            )
            assert mean <= bound + 3.0 * stderr


class TestClosedFormBounds:
    def test_l2_bound_value(self):
        got = rademacher_bound_l2(
            np.array([1.0, 2.0]), np.array([0.5, 0.5]), np.array([1.0, 2.0]), 1.5, 100
        )
        assert got == pytest.approx(0.30923292192132457, abs=1e-12)

    def test_lp_bound_reduces_to_l2_form(self):
        """At p = 2 the general bound with r-squared weights equals the
        mean/spread form whenever the weights agree."""
        r_sq = np.array([1.5, 2.5])
        gamma = np.array([1.0, 2.0])
        lp = rademacher_bound_lp(r_sq, gamma, 1.5, 100, 2.0, d=4)
        l2 = rademacher_bound_l2(r_sq, np.zeros(2), gamma, 1.5, 100)
        assert lp == pytest.approx(l2, rel=1e-12)

    def test_lp_bound_carries_cp(self):
        r_sq = np.array([2.0])
        gamma = np.array([1.0])
        base = rademacher_bound_lp(r_sq, gamma, 1.0, 50, 2.0, d=3)
        p4 = rademacher_bound_lp(r_sq, gamma, 1.0, 50, 4.0, d=3)
        assert p4 == pytest.approx(3.0 * base, rel=1e-9)

    def test_mean_squared_norm_split(self):
        """The identity behind the l2 weights: mean ||x||^2 equals
        ||mean x||^2 plus the mean squared deviation."""
        rng = np.random.default_rng(6)
        for _ in range(50):
            pts = rng.normal(size=(int(rng.integers(1, 30)), 5))
            labels = np.zeros(len(pts), dtype=int)
            mu_sq, s_sq, r_sq, _ = batch_class_stats(pts, labels, 1)
            assert r_sq[0] == pytest.approx(mu_sq[0] + s_sq[0], rel=1e-10)

    def test_rejects_negative_stats(self):
        with pytest.raises(ValueError):
            rademacher_bound_l2(np.array([-1.0]), np.array([0.0]), np.ones(1), 1.0, 10)


class TestAssembledRhs:
    def test_confidence_term_value(self):
        assert confidence_term(200, 0.05) == pytest.approx(0.28809683739597625, abs=1e-14)

    def test_confidence_shrinks_with_n(self):
        assert confidence_term(1000, 0.05) < confidence_term(10, 0.05)

    def test_confidence_grows_as_delta_shrinks(self):
        assert confidence_term(100, 0.01) > confidence_term(100, 0.2)

    def test_lemma1_value(self):
        got = lemma1_rhs(0.1, 0.05, 200, 3, 0.05)
        assert got == pytest.approx(0.8779947859526118, abs=1e-12)

    def test_prop1_value(self):
        got = prop1_rhs(
            0.3, np.array([1.0, 2.0]), np.array([0.5, 0.5]), np.array([1.0, 2.0]),
            1.5, 100, 0.05,
        )
        assert got == pytest.approx(3.3141023423594715, abs=1e-12)

    def test_per_class_value(self):
        got = per_class_rhs(0.2, 3.0, 1.0, 1.5, 2.0, 50, 0.05)
        assert got == pytest.approx(2.373227149501046, abs=1e-12)

    def test_per_class_uses_class_count(self):
        few = per_class_rhs(0.2, 3.0, 1.0, 1.5, 2.0, 10, 0.05)
        many = per_class_rhs(0.2, 3.0, 1.0, 1.5, 2.0, 1000, 0.05)
        assert few > many

    def test_delta_range_checked(self):
        with pytest.raises(ValueError):
            confidence_term(10, 0.0)
        with pytest.raises(ValueError):
            confidence_term(10, 1.0)


@pytest.fixture(scope="module")
def trained_pair():
    spec = SynthSpec(num_classes=3, d_in=5, train_per_class=60, test_per_class=30)
    train_set, _ = generate(spec)
    model = MarginModel(d_in=5, num_classes=3, encoder="linear", feature_dim=4, seed=0)
    return model, train_set


class TestBoundReport:
    def test_report_fields(self, trained_pair):
        model, data = trained_pair
        report = build_bound_report(model, data, num_draws=256, seed=1)
        assert isinstance(report, BoundReport)
        assert report.n == data.n
        assert report.gamma.shape == (3,)
        assert report.gamma.mean() == pytest.approx(report.c_bar, rel=1e-12)
        assert report.mc_mean <= report.complexity_l2 + 3.0 * report.mc_stderr
        assert report.per_class_rhs.shape == (3,)
        assert np.isfinite(report.lemma1_rhs)
        assert report.zero_one_risk <= report.empirical_margin_risk + 1e-12

    def test_report_rows_long_form(self, trained_pair):
        model, data = trained_pair
        report = build_bound_report(model, data, num_draws=256, seed=1)
        rows = report.rows()
        fields = [r[0] for r in rows]
        assert "complexity_l2" in fields
        assert all(len(r) == 3 for r in rows)

    def test_missing_class_rejected(self, trained_pair):
        model, data = trained_pair
        trimmed = Dataset(data.x[data.y != 2], data.y[data.y != 2], num_classes=3)
        with pytest.raises(ValueError, match="class"):
            build_bound_report(model, trimmed, num_draws=256)

    def test_deterministic(self, trained_pair):
        model, data = trained_pair
        a = build_bound_report(model, data, num_draws=256, seed=4)
        b = build_bound_report(model, data, num_draws=256, seed=4, threads=3)
        assert a.mc_mean == b.mc_mean
        assert a.mc_stderr == b.mc_stderr
