"""Scikit-learn style front door for the margin trainer."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from .datagen import Dataset
from .metrics import softmax
from .trainer import TrainConfig, train


class MarginRegularizedClassifier(ClassifierMixin, BaseEstimator):
    """Classifier trained with spread-proportional margins.

    Wraps the mini-batch trainer in the usual fit/predict surface.  The
    constructor mirrors the training configuration; see ``TrainConfig``
    for the semantics of each knob.  ``objective="ce"`` recovers a plain
    softmax classifier trained by the same loop.

    Attributes set by ``fit``: ``classes_``, ``model_``, ``stats_``,
    ``log_``, ``report_`` (an evaluation of the final model on the
    training data).
    """

    def __init__(
        self,
        objective: str = "mr2",
        c_bar: float = 2.0,
        lam: float = 0.5,
        ema_decay: float = 0.9,
        epochs: int = 30,
        batch_size: int = 128,
        lr: float = 0.1,
        momentum: float = 0.9,
        weight_decay: float = 5e-4,
        lr_schedule: str = "cosine",
        p: float = 2.0,
        stats_update_order: str = "before_loss",
        tau: float = 1.0,
        encoder: str = "mlp",
        hidden_dim: int = 64,
        feature_dim: int = 32,
        head: str = "linear",
        activation: str = "tanh",
        random_state: int = 0,
    ):
        self.objective = objective
        self.c_bar = c_bar
        self.lam = lam
        self.ema_decay = ema_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.lr_schedule = lr_schedule
        self.p = p
        self.stats_update_order = stats_update_order
        self.tau = tau
        self.encoder = encoder
        self.hidden_dim = hidden_dim
        self.feature_dim = feature_dim
        self.head = head
        self.activation = activation
        self.random_state = random_state

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if self.classes_.shape[0] < 2:
            raise ValueError("need at least two classes to fit")
        config = TrainConfig(
            objective=self.objective,
            c_bar=self.c_bar,
            lam=self.lam,
            ema_decay=self.ema_decay,
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            lr_schedule=self.lr_schedule,
            seed=self.random_state,
            p=self.p,
            stats_update_order=self.stats_update_order,
            tau=self.tau,
            encoder=self.encoder,
            hidden_dim=self.hidden_dim,
            feature_dim=self.feature_dim,
            head=self.head,
            activation=self.activation,
        )
        data = Dataset(
            x=X, y=encoded, num_classes=self.classes_.shape[0], split="train"
        )
        result = train(config, data, data)
        self.model_ = result.model
        self.stats_ = result.stats
        self.log_ = result.log
        self.report_ = result.report
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = validate_data(self, X, reset=False, dtype=np.float64)
        return self.model_.predict_logits(X)

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[scores.argmax(axis=1)]

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def transform(self, X):
        """Encoder features, in case the embedding itself is wanted."""
        check_is_fitted(self, "model_")
        X = validate_data(self, X, reset=False, dtype=np.float64)
        return self.model_.features(X)
