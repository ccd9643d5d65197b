"""scikit-learn compatible classifier around the spiking network."""

from __future__ import annotations

import contextlib

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y
from threadpoolctl import threadpool_limits

from .absorb import AbsorbedModel, absorb_scales
from .autograd import OptimizerState, forward_unroll, train_step
from .data import encode_direct, encode_frames
from .network import Network, NetworkSpec, build_network, parse_layers
from .neurons import NeuronConfig
from .surrogates import Surrogate


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class QBLIFClassifier(ClassifierMixin, BaseEstimator):
    """Spiking classifier trained with surrogate-gradient BPTT.

    Parameters
    ----------
    layers : str
        Hidden stack without the readout, e.g. ``"dense:64"`` or
        ``"conv:8, avgpool, flatten, dense:32"``. A readout sized to the
        number of classes is appended.
    neuron : {"qblif", "ilif", "binary"}
        Default neuron kind of every hidden layer.
    surrogate : {"relsg_et", "box_et", "arctan"}
    n_max : int
        Maximum burst level.
    timesteps : int
        Simulation length ``T``.
    encoding : {"direct", "frames"}
        ``"direct"`` repeats static inputs of shape ``(n, *shape)`` at every
        step; ``"frames"`` takes ``(n, frames, *shape)`` and re-bins to ``T``.
    random_state : int
        Seeds weight init and minibatch order.
    deterministic : bool
        Pin BLAS to one thread so repeated fits are bit-identical.
    """

    def __init__(self, layers="dense:64", neuron="qblif", surrogate="relsg_et", n_max=20,
                 timesteps=4, encoding="direct", beta=0.5, alpha=1.0, v_theta=1.0,
                 gamma_init=1.0, train_beta_alpha=False, arctan_sharpness=2.0, lr=0.1,
                 momentum=0.9, epochs=20, batch_size=64, cosine=True, random_state=0,
                 deterministic=True, verbose=False):
        self.layers = layers
        self.neuron = neuron
        self.surrogate = surrogate
        self.n_max = n_max
        self.timesteps = timesteps
        self.encoding = encoding
        self.beta = beta
        self.alpha = alpha
        self.v_theta = v_theta
        self.gamma_init = gamma_init
        self.train_beta_alpha = train_beta_alpha
        self.arctan_sharpness = arctan_sharpness
        self.lr = lr
        self.momentum = momentum
        self.epochs = epochs
        self.batch_size = batch_size
        self.cosine = cosine
        self.random_state = random_state
        self.deterministic = deterministic
        self.verbose = verbose

    # -- helpers ---------------------------------------------------------

    def _limits(self):
        return threadpool_limits(1) if self.deterministic else contextlib.nullcontext()

    def _encode(self, X):
        if self.encoding == "frames":
            return encode_frames(X, self.timesteps)
        return encode_direct(X, self.timesteps)

    def _feature_shape(self, X):
        return X.shape[2:] if self.encoding == "frames" else X.shape[1:]

    def _make_spec(self, input_shape, n_classes) -> NetworkSpec:
        layers = parse_layers(self.layers) if isinstance(self.layers, str) else list(self.layers)
        layers += parse_layers(f"readout:{n_classes}")
        cfg = NeuronConfig(kind=self.neuron, beta=self.beta, alpha=self.alpha,
                           v_theta=self.v_theta, n_max=self.n_max, gamma=self.gamma_init)
        return NetworkSpec(input_shape, layers, timesteps=self.timesteps, encoding=self.encoding,
                           seed=self.random_state, neuron=cfg,
                           train_beta_alpha=self.train_beta_alpha)

    def _validate_X(self, X, reset=False):
        X = check_array(X, allow_nd=True, dtype=np.float64)
        n_features = int(np.prod(self._feature_shape(X)))
        if reset:
            self.n_features_in_ = n_features
        elif n_features != self.n_features_in_:
            raise ValueError(f"X has {n_features} features, but {type(self).__name__} "
                             f"is expecting {self.n_features_in_} features as input")
        return X

    # -- estimator API ---------------------------------------------------

    def fit(self, X, y, log=None):
        """Train from scratch. ``log`` receives one dict per epoch."""
        X, y = check_X_y(X, y, allow_nd=True, dtype=np.float64)
        if self.encoding not in ("direct", "frames"):
            raise ValueError(f"unknown encoding {self.encoding!r}")
        self.n_features_in_ = int(np.prod(self._feature_shape(X)))
        self._label_encoder = LabelEncoder().fit(y)
        self.classes_ = self._label_encoder.classes_
        y_idx = self._label_encoder.transform(y)
        surrogate = Surrogate(self.surrogate, self.arctan_sharpness)

        spec = self._make_spec(self._feature_shape(X), len(self.classes_))
        network = build_network(spec)
        n = len(X)
        steps_per_epoch = -(-n // self.batch_size)
        opt = OptimizerState(lr=self.lr, momentum=self.momentum,
                             total_steps=steps_per_epoch * self.epochs if self.cosine else None)
        rng = np.random.default_rng(self.random_state)
        self.history_ = []
        with self._limits():
            for epoch in range(self.epochs):
                order = rng.permutation(n)
                losses, correct = [], 0
                for start in range(0, n, self.batch_size):
                    idx = order[start:start + self.batch_size]
                    loss, mean_logits = train_step(network, self._encode(X[idx]), y_idx[idx],
                                                   opt, surrogate)
                    losses.append(loss * len(idx))
                    correct += int((mean_logits.argmax(axis=1) == y_idx[idx]).sum())
                record = {"epoch": epoch, "step": opt.step, "loss": float(sum(losses) / n),
                          "accuracy": correct / n, "gammas": network.gammas()}
                self.history_.append(record)
                if log is not None:
                    log(record)
                if self.verbose:
                    print(f"epoch {epoch}: loss={record['loss']:.4f} acc={record['accuracy']:.4f}")
        self.network_ = network
        return self

    @classmethod
    def from_network(cls, network: Network, classes=None, **params) -> "QBLIFClassifier":
        """Wrap an already trained network (e.g. a loaded checkpoint)."""
        layers = network.spec.layers[:-1]
        cfg = network.spec.neuron
        clf = cls(layers=layers, neuron=cfg.kind.value, n_max=cfg.n_max,
                  timesteps=network.timesteps, encoding=network.spec.encoding, beta=cfg.beta,
                  alpha=cfg.alpha, v_theta=cfg.v_theta, gamma_init=cfg.gamma,
                  train_beta_alpha=network.spec.train_beta_alpha,
                  random_state=network.spec.seed, **params)
        clf.network_ = network
        clf.classes_ = np.arange(network.n_classes) if classes is None else np.asarray(classes)
        clf._label_encoder = LabelEncoder().fit(clf.classes_)
        clf.n_features_in_ = int(np.prod(network.input_shape))
        clf.history_ = []
        return clf

    def decision_function(self, X):
        """Time-averaged logits, shape ``(n, n_classes)``."""
        check_is_fitted(self, "network_")
        X = self._validate_X(X)
        with self._limits():
            logits, _ = forward_unroll(self.network_, self._encode(X))
        return logits.mean(axis=0)

    def predict_proba(self, X):
        return _softmax(self.decision_function(X))

    def predict(self, X):
        check_is_fitted(self, "network_")
        return self.classes_[self.decision_function(X).argmax(axis=1)]

    def transform(self, X):
        """Burst levels of the last hidden layer summed over time, ``(n, units)``."""
        check_is_fitted(self, "network_")
        X = self._validate_X(X)
        _, _, spikes = forward_unroll(self.network_, self._encode(X), record_spikes=True)
        last = self.network_.spiking_layers()[-1]
        levels = spikes[last.layer_id]
        if last.kind.value == "qblif":
            levels = np.rint(levels / float(last.gamma))
        return levels.sum(axis=0).reshape(len(X), -1)

    def spike_record(self, X) -> dict:
        """Per-layer integer levels ``{layer_id: (T, n, ...)}``."""
        check_is_fitted(self, "network_")
        X = self._validate_X(X)
        _, _, spikes = forward_unroll(self.network_, self._encode(X), record_spikes=True)
        out = {}
        for layer in self.network_.spiking_layers():
            s = spikes[layer.layer_id]
            if layer.kind.value == "qblif":
                s = s / float(layer.gamma)
            out[layer.layer_id] = np.rint(s).astype(np.int64)
        return out

    def absorb(self) -> AbsorbedModel:
        check_is_fitted(self, "network_")
        return absorb_scales(self.network_)

    def encode(self, X):
        """Network input ``(T, n, ...)`` for raw samples ``X``."""
        return self._encode(self._validate_X(X))
