"""The fit/predict wrapper around the training loop."""

import numpy as np
import pytest
from sklearn.exceptions import NotFittedError

from marginreg.estimator import MarginRegularizedClassifier


@pytest.fixture(scope="module")
def blobs():
    rng = np.random.default_rng(0)
    centers = np.array([[0.0, 4.0], [4.0, 0.0], [-4.0, -4.0]])
    x = np.vstack([c + rng.normal(scale=0.8, size=(40, 2)) for c in centers])
    y = np.repeat(np.arange(3), 40)
    return x, y


def _fast_estimator(**kw):
    kw.setdefault("epochs", 8)
    kw.setdefault("hidden_dim", 8)
    kw.setdefault("feature_dim", 4)
    kw.setdefault("batch_size", 32)
    kw.setdefault("lam", 0.2)
    return MarginRegularizedClassifier(**kw)


class TestFitPredict:
    def test_learns_separable_blobs(self, blobs):
        x, y = blobs
        clf = _fast_estimator().fit(x, y)
        assert clf.score(x, y) > 0.95

    def test_predict_before_fit_raises(self, blobs):
        x, _ = blobs
        with pytest.raises(NotFittedError):
            MarginRegularizedClassifier().predict(x)

    def test_classes_attribute(self, blobs):
        x, y = blobs
        clf = _fast_estimator().fit(x, y)
        np.testing.assert_array_equal(clf.classes_, [0, 1, 2])

    def test_string_labels_round_trip(self, blobs):
        x, y = blobs
        names = np.array(["ant", "bee", "cat"])[y]
        clf = _fast_estimator().fit(x, names)
        np.testing.assert_array_equal(clf.classes_, ["ant", "bee", "cat"])
        pred = clf.predict(x)
        assert set(pred) <= {"ant", "bee", "cat"}
        assert np.mean(pred == names) > 0.95

    def test_noncontiguous_integer_labels(self, blobs):
        x, y = blobs
        remapped = np.array([10, 40, 7])[y]
        clf = _fast_estimator().fit(x, remapped)
        np.testing.assert_array_equal(clf.classes_, [7, 10, 40])
        assert set(clf.predict(x)) <= {7, 10, 40}

    def test_predict_proba_normalized(self, blobs):
        x, y = blobs
        clf = _fast_estimator().fit(x, y)
        proba = clf.predict_proba(x)
        assert proba.shape == (len(x), 3)
        np.testing.assert_allclose(proba.sum(axis=1), 1.0, rtol=1e-9)
        assert np.all(proba >= 0)

    def test_proba_argmax_matches_predict(self, blobs):
        x, y = blobs
        clf = _fast_estimator().fit(x, y)
        np.testing.assert_array_equal(
            clf.classes_[clf.predict_proba(x).argmax(axis=1)], clf.predict(x)
        )

    def test_decision_function_shape(self, blobs):
        x, y = blobs
        clf = _fast_estimator().fit(x, y)
        assert clf.decision_function(x).shape == (len(x), 3)

    def test_transform_gives_features(self, blobs):
        x, y = blobs
        clf = _fast_estimator(feature_dim=4).fit(x, y)
        feats = clf.transform(x)
        assert feats.shape == (len(x), 4)

    def test_random_state_reproducible(self, blobs):
        x, y = blobs
        a = _fast_estimator(random_state=3).fit(x, y)
        b = _fast_estimator(random_state=3).fit(x, y)
        np.testing.assert_array_equal(
            a.model_.params_vector(), b.model_.params_vector()
        )

    def test_feature_count_mismatch_rejected(self, blobs):
        x, y = blobs
        clf = _fast_estimator().fit(x, y)
        with pytest.raises(ValueError):
            clf.predict(np.zeros((2, 5)))

    def test_exposes_training_artifacts(self, blobs):
        x, y = blobs
        clf = _fast_estimator().fit(x, y)
        assert clf.stats_.initialized.all()
        assert len(clf.log_.epochs) == 8
        assert clf.report_.num_classes == 3

    def test_sklearn_clone_compatible(self, blobs):
        from sklearn.base import clone

        x, y = blobs
        est = _fast_estimator(objective="gamma_only", lam=0.1)
        dup = clone(est)
        assert dup.objective == "gamma_only"
        assert dup.lam == 0.1
        dup.fit(x, y)

    def test_grid_search_param_access(self):
        est = MarginRegularizedClassifier()
        params = est.get_params()
        assert params["c_bar"] == 2.0
        est.set_params(c_bar=3.0)
        assert est.c_bar == 3.0

    def test_single_class_rejected(self):
        x = np.zeros((5, 2))
        y = np.zeros(5, dtype=int)
        with pytest.raises(ValueError):
            _fast_estimator().fit(x, y)


class TestObjectiveChoices:
    @pytest.mark.parametrize("objective", ["ce", "gamma_only", "mr2"])
    def test_objectives_fit(self, objective, blobs):
        x, y = blobs
        clf = _fast_estimator(objective=objective, epochs=4).fit(x, y)
        assert clf.score(x, y) > 0.8

    def test_invalid_objective_fails_at_fit(self, blobs):
        x, y = blobs
        clf = MarginRegularizedClassifier(objective="nonsense")
        with pytest.raises(ValueError):
            clf.fit(x, y)
