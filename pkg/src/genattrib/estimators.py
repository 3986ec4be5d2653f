"""scikit-learn style wrappers around training, inversion and attribution."""

from __future__ import annotations

import hashlib

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .attribution import InversionConfig, attribute_many, invert_many
from .data import LabeledDataset
from .exceptions import ConfigError, ShapeError, UsageError
from .network import MlpGenerator, forward
from .optim import PlateauScheduler
from .train import TrainConfig, train_autoencoder


def check_images(X, n_features=None, name="X") -> np.ndarray:
    """2-D float64 rows of intensities in [0, 1]."""
    try:
        X = check_array(X, dtype=np.float64, ensure_2d=False)
    except ValueError as exc:
        raise UsageError(f"{name}: {exc}") from exc
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {X.shape}")
    if n_features is not None and X.shape[1] != n_features:
        raise ShapeError(f"{name} has {X.shape[1]} features, expected {n_features}")
    if X.size and (X.min() < 0.0 or X.max() > 1.0):
        raise UsageError(f"{name} values must lie in [0, 1]")
    return X


def check_generators(generators) -> list:
    gens = list(generators or [])
    if not all(isinstance(g, MlpGenerator) for g in gens):
        raise ConfigError("generators must be MlpGenerator instances")
    if len({g.output_dim for g in gens}) > 1:
        raise ShapeError("generators disagree on output size")
    return gens


class _InversionParams:
    def _inversion_config(self) -> InversionConfig:
        sched = PlateauScheduler(patience=self.plateau_patience) if self.plateau_patience else None
        return InversionConfig(restarts=self.restarts, steps=self.steps,
                               learning_rate=self.learning_rate, loss_kind=self.loss,
                               scheduler=sched, master_seed=self.random_state, init=self.init,
                               record_stride=self.steps).validate()


class MlpAutoencoder(TransformerMixin, BaseEstimator):
    """Sigmoid MLP autoencoder; ``transform`` encodes, ``inverse_transform`` decodes."""

    def __init__(self, hidden=(64, 32), steps=20000, batch_size=256, learning_rate=0.01,
                 loss="L2", random_state=0, order_seed=0):
        self.hidden = hidden
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.loss = loss
        self.random_state = random_state
        self.order_seed = order_seed

    def fit(self, X, y=None):
        X = check_images(X)
        labels = np.zeros(len(X), dtype=np.int64) if y is None else np.asarray(y, dtype=np.int64)
        cfg = TrainConfig(steps=self.steps, batch_size=self.batch_size,
                          learning_rate=self.learning_rate, weight_init_seed=self.random_state,
                          data_order_seed=self.order_seed, loss_kind=self.loss,
                          hidden=tuple(self.hidden))
        side = int(round(np.sqrt(X.shape[1])))
        shape = (side, side) if side * side == X.shape[1] else (1, X.shape[1])
        ae = train_autoencoder(LabeledDataset(X, labels, shape, ("array",)), cfg)
        self.encoder_, self.decoder_, self.manifest_ = ae.encoder, ae.decoder, ae.manifest
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "encoder_")
        return forward(self.encoder_, check_images(X, self.n_features_in_))

    def inverse_transform(self, Z):
        check_is_fitted(self, "decoder_")
        Z = check_array(Z, dtype=np.float64)
        return forward(self.decoder_, Z)

    @property
    def generator_(self) -> MlpGenerator:
        check_is_fitted(self, "decoder_")
        return self.decoder_


class GeneratorInverter(_InversionParams, TransformerMixin, BaseEstimator):
    """Maps images to the latent that best reconstructs them under ``generator``."""

    def __init__(self, generator=None, restarts=10, steps=1000, learning_rate=0.01, loss="L2",
                 init="uniform", plateau_patience=None, random_state=0):
        self.generator = generator
        self.restarts = restarts
        self.steps = steps
        self.learning_rate = learning_rate
        self.loss = loss
        self.init = init
        self.plateau_patience = plateau_patience
        self.random_state = random_state

    def fit(self, X=None, y=None):
        if not isinstance(self.generator, MlpGenerator):
            raise ConfigError("GeneratorInverter needs a generator")
        self.config_ = self._inversion_config()
        self.n_features_in_ = self.generator.output_dim
        return self

    def invert(self, X) -> list:
        check_is_fitted(self, "config_")
        return invert_many(self.generator, check_images(X, self.n_features_in_), self.config_)

    def transform(self, X):
        return np.stack([r.z_hat for r in self.invert(X)])

    def reconstruction_error(self, X):
        return np.array([r.l_min for r in self.invert(X)])


class InversionAttributor(_InversionParams, ClassifierMixin, BaseEstimator):
    """Predicts which of ``generators`` produced each image.

    Nothing is learned from data: ``fit`` only checks the generators and
    fixes ``classes_`` to their indices.  ``decision_function`` returns the
    one-vs-rest scores, one column per generator.
    """

    def __init__(self, generators=None, restarts=10, steps=1000, learning_rate=0.01, loss="L2",
                 init="uniform", plateau_patience=None, confidence_floor=0.5, random_state=0):
        self.generators = generators
        self.restarts = restarts
        self.steps = steps
        self.learning_rate = learning_rate
        self.loss = loss
        self.init = init
        self.plateau_patience = plateau_patience
        self.confidence_floor = confidence_floor
        self.random_state = random_state

    def fit(self, X=None, y=None):
        gens = check_generators(self.generators)
        if len(gens) < 2:
            raise ConfigError("InversionAttributor needs at least two generators")
        self.generators_ = gens
        self.classes_ = np.arange(len(gens))
        self.n_features_in_ = gens[0].output_dim
        cfg = self._inversion_config()
        cfg.confidence_floor = self.confidence_floor
        self.config_ = cfg
        self._cache = (None, None)
        return self

    def attribute_reports(self, X, probe_ids=None) -> list:
        check_is_fitted(self, "config_")
        X = check_images(X, self.n_features_in_)
        key = hashlib.sha256(X.tobytes()).hexdigest() + repr(X.shape)
        if probe_ids is None and self._cache[0] == key:
            return self._cache[1]
        reports = attribute_many(X, self.generators_, self.config_, probe_ids)
        if probe_ids is None:
            self._cache = (key, reports)
        return reports

    def predict(self, X):
        return np.array([r.chosen for r in self.attribute_reports(X)])

    def decision_function(self, X):
        return np.array([r.scores for r in self.attribute_reports(X)])

    def min_losses(self, X):
        return np.array([r.losses for r in self.attribute_reports(X)])
