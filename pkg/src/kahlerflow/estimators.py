"""scikit-learn style density estimators wrapping the discrete and continuous flows.

Inputs are complex ``(n, 2)`` arrays or realified ``(n, 4)`` arrays with
columns re1, im1, re2, im2. Log-densities are with respect to Lebesgue
measure on R⁴ in the caller's coordinates.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, DensityMixin, TransformerMixin
from sklearn.preprocessing import StandardScaler
from sklearn.utils import check_array
from sklearn.utils.validation import check_is_fitted

from kahlerflow.continuous import ContinuousFlow
from kahlerflow.datasets import Dataset, complexify, realify
from kahlerflow.flow import FlowStack
from kahlerflow.training import TrainConfig, nll_loss, train


def check_complex_points(X, d: int = 2) -> np.ndarray:
    """Validate and return complex points of shape (n, d)."""
    if isinstance(X, Dataset):
        X = X.points
    X = np.asarray(X)
    real = realify(X) if np.iscomplexobj(X) else X
    real = check_array(real, dtype=np.float64, ensure_2d=True)
    if real.shape[1] != 2 * d:
        raise ValueError(f"expected {d} complex or {2 * d} real columns, got {real.shape[1]} real columns")
    return complexify(real)


class _FlowDensity(DensityMixin, TransformerMixin, BaseEstimator):
    def _make_model(self):
        raise NotImplementedError

    def _train_config(self):
        return TrainConfig(lr=self.lr, epochs=self.epochs, batch=self.batch_size,
                           seed=self.random_state, clip_norm=self.clip_norm)

    def fit(self, X, y=None):
        z = check_complex_points(X)
        self.n_features_in_ = 4
        if self.standardize:
            self.scaler_ = StandardScaler().fit(realify(z))
            z = self._to_model(z)
        else:
            self.scaler_ = None
        self.model_ = self._make_model()
        self.initial_nll_ = nll_loss(self.model_, z)
        self.loss_curve_ = train(self.model_, z, self._train_config())
        return self

    def _to_model(self, z):
        if getattr(self, "scaler_", None) is None:
            return z
        return complexify(self.scaler_.transform(realify(z)))

    def _from_model(self, z):
        if self.scaler_ is None:
            return z
        return complexify(self.scaler_.inverse_transform(realify(z)))

    def _log_scale(self):
        return 0.0 if self.scaler_ is None else float(np.sum(np.log(self.scaler_.scale_)))

    def score_samples(self, X):
        """Per-point log-density."""
        check_is_fitted(self, "model_")
        z = self._to_model(check_complex_points(X))
        return self.model_.log_prob(z) - self._log_scale()

    def score(self, X, y=None):
        return float(np.mean(self.score_samples(X)))

    def sample(self, n_samples=1, random_state=0):
        check_is_fitted(self, "model_")
        return self._from_model(self.model_.sample(n_samples, random_state).points)

    def transform(self, X):
        """Map data points to base (latent) coordinates."""
        check_is_fitted(self, "model_")
        return self.model_.inverse(self._to_model(check_complex_points(X)))

    def inverse_transform(self, Z):
        check_is_fitted(self, "model_")
        return self._from_model(self.model_(check_complex_points(Z)))


class ComplexFlowDensity(_FlowDensity):
    """Discrete coupling flow on C² fitted by maximum likelihood."""

    def __init__(self, n_layers=8, hidden=8, activation="cgelu", lr=1e-3, epochs=2000,
                 batch_size=256, clip_norm=10.0, standardize=True, random_state=7, clamp=10.0):
        self.n_layers = n_layers
        self.hidden = hidden
        self.activation = activation
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.clip_norm = clip_norm
        self.standardize = standardize
        self.random_state = random_state
        self.clamp = clamp

    def _make_model(self):
        return FlowStack.init(self.n_layers, self.hidden, self.activation, self.random_state, clamp=self.clamp)


class ContinuousComplexFlowDensity(_FlowDensity):
    """Continuous flow (RK4 through a complex velocity net), trained through the unrolled solver."""

    def __init__(self, hidden=16, steps=16, lr=1e-3, epochs=200, batch_size=128, clip_norm=10.0,
                 standardize=True, random_state=7):
        self.hidden = hidden
        self.steps = steps
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.clip_norm = clip_norm
        self.standardize = standardize
        self.random_state = random_state

    def _make_model(self):
        return ContinuousFlow.init(2, self.hidden, self.random_state, self.steps)
