"""scikit-learn style wrappers around the encoder, federated training and the SVM."""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import classify
from ._rng import substream
from .encoder import EncoderConfig, EncoderParams, init_params, transform
from .federate import FedConfig, run_training
from .ssl import DEFAULT_NEGATIVES, MIN_WINDOW, AdamState, local_train
from .validation import check_features, check_iq, check_labels


class _EncoderMixin(TransformerMixin):
    def _encoder_config(self, input_channels: int = 2) -> EncoderConfig:
        return EncoderConfig(
            depth=self.depth,
            kernel_size=self.kernel_size,
            channels=self.channels,
            feature_dim=self.feature_dim,
            input_channels=input_channels,
        )

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        return transform(self.params_, check_iq(X))


class TripletEncoder(_EncoderMixin, BaseEstimator):
    """Train the causal CNN on one unlabeled pool with the triplet objective.

    ``fit`` ignores ``y``; ``transform`` maps frames to feature vectors.
    """

    def __init__(
        self,
        depth: int = 10,
        kernel_size: int = 3,
        channels: int = 89,
        feature_dim: int = 320,
        steps: int = 2500,
        batch_size: int = 20,
        lr: float = 1e-3,
        negatives: int = DEFAULT_NEGATIVES,
        min_window: int = MIN_WINDOW,
        random_state: int = 0,
    ):
        self.depth = depth
        self.kernel_size = kernel_size
        self.channels = channels
        self.feature_dim = feature_dim
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.negatives = negatives
        self.min_window = min_window
        self.random_state = random_state

    def fit(self, X, y=None):
        pool = check_iq(X, self.min_window)
        config = self._encoder_config()
        params = init_params(config, substream(self.random_state, "init"))
        adam = AdamState(params.flat.size, lr=self.lr)
        rng = substream(self.random_state, "train")
        self.params_, _, self.losses_ = local_train(
            params, pool, self.steps, self.batch_size, adam, rng, self.negatives, self.min_window
        )
        self.n_features_out_ = config.feature_dim
        return self


class FederatedTripletEncoder(_EncoderMixin, BaseEstimator):
    """Federated averaging of the triplet encoder over several client pools.

    ``fit`` takes a sequence of per-client unlabeled pools.
    """

    def __init__(
        self,
        depth: int = 10,
        kernel_size: int = 3,
        channels: int = 89,
        feature_dim: int = 320,
        rounds: int = 10,
        local_steps: int = 2500,
        batch_size: int = 20,
        lr: float = 1e-3,
        negatives: int = DEFAULT_NEGATIVES,
        min_window: int = MIN_WINDOW,
        quantization: Optional[Sequence[str]] = None,
        random_state: int = 0,
    ):
        self.depth = depth
        self.kernel_size = kernel_size
        self.channels = channels
        self.feature_dim = feature_dim
        self.rounds = rounds
        self.local_steps = local_steps
        self.batch_size = batch_size
        self.lr = lr
        self.negatives = negatives
        self.min_window = min_window
        self.quantization = quantization
        self.random_state = random_state

    def fit(self, X, y=None):
        pools = [check_iq(p, self.min_window) for p in X]
        if not pools:
            raise ValueError("need at least one client pool")
        config = self._encoder_config()
        fed = FedConfig(
            rounds=self.rounds,
            local_steps=self.local_steps,
            batch_size=self.batch_size,
            lr=self.lr,
            seed=self.random_state,
            negatives=self.negatives,
            min_window=self.min_window,
            quantization=self.quantization,
        )
        initial = init_params(config, substream(self.random_state, "init"))
        self.params_, self.metrics_ = run_training(initial, pools, fed)
        self.n_features_out_ = config.feature_dim
        return self


class LinearSVMClassifier(ClassifierMixin, BaseEstimator):
    """One-vs-rest hinge-loss SVM trained by deterministic subgradient descent."""

    def __init__(self, C: float = classify.DEFAULT_C, epochs: int = classify.DEFAULT_EPOCHS, lr: float = classify.DEFAULT_LR, standardize: bool = True):
        self.C = C
        self.epochs = epochs
        self.lr = lr
        self.standardize = standardize

    def fit(self, X, y):
        X = check_features(X)
        y = check_labels(y, X.shape[0])
        self.classes_, encoded = np.unique(y, return_inverse=True)
        self.model_ = classify.fit(X, encoded, len(self.classes_), self.C, self.epochs, self.lr, self.standardize)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return self.model_.scores(check_features(X))

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return self.classes_[classify.predict(self.model_, check_features(X))]
