"""Discrete-time neuron dynamics: binary LIF, integer LIF and quantized-burst LIF.

All step functions are pure: they take a :class:`MembraneState` and return a
new one together with the emitted spikes. The membrane update for every kind
follows the same bracket convention::

    u[t] = (beta * u[t-1] + I[t]) * (1 - alpha * reset[t-1])

where ``reset`` is the previous spike for binary neurons and the indicator
``spike > 0`` for burst neurons (magnitude does not matter).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionError, InvalidScaleError, NumericFaultError

GAMMA_FLOOR = 1e-4
DEFAULT_N_MAX = 20


class NeuronKind(str, enum.Enum):
    BINARY_LIF = "binary"
    ILIF = "ilif"
    QBLIF = "qblif"

    @classmethod
    def parse(cls, value: "str | NeuronKind") -> "NeuronKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        aliases = {"binary": cls.BINARY_LIF, "binarylif": cls.BINARY_LIF, "lif": cls.BINARY_LIF,
                   "ilif": cls.ILIF, "qblif": cls.QBLIF}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown neuron kind {value!r}") from None


@dataclass
class NeuronConfig:
    """Per-layer neuron constants.

    ``gamma`` is only meaningful for QB-LIF; I-LIF always quantizes with a unit
    scale and binary LIF uses ``v_theta``.
    """

    kind: NeuronKind = NeuronKind.QBLIF
    beta: float = 0.5
    alpha: float = 1.0
    v_theta: float = 1.0
    n_max: int = DEFAULT_N_MAX
    gamma: float = 1.0

    def __post_init__(self):
        self.kind = NeuronKind.parse(self.kind)
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if int(self.n_max) != self.n_max or self.n_max < 1:
            raise ValueError(f"n_max must be an integer >= 1, got {self.n_max}")
        self.n_max = int(self.n_max)
        _check_gamma(self.gamma)

    @property
    def effective_gamma(self) -> float:
        """Scale actually used by the quantizer (1 for I-LIF)."""
        return 1.0 if self.kind is NeuronKind.ILIF else float(self.gamma)

    @property
    def first_threshold(self) -> float:
        if self.kind is NeuronKind.BINARY_LIF:
            return float(self.v_theta)
        return self.effective_gamma


@dataclass
class MembraneState:
    u: np.ndarray
    last_spike: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.last_spike = np.asarray(self.last_spike, dtype=np.float64)
        if self.u.shape != self.last_spike.shape:
            raise DimensionError(
                f"membrane {self.u.shape} and last_spike {self.last_spike.shape} differ")

    @classmethod
    def zeros(cls, shape) -> "MembraneState":
        return cls(np.zeros(shape), np.zeros(shape))

    @property
    def shape(self):
        return self.u.shape


@dataclass
class SpikeTensor:
    """Burst outputs over time, shape ``(T, batch, ...)``.

    With ``scale_attached`` the entries are gamma-scaled reals (training form);
    otherwise they are integer levels in ``[0, n_max]``.
    """

    values: np.ndarray
    scale_attached: bool = False
    gamma: float = 1.0
    n_max: int = DEFAULT_N_MAX
    layer_id: int = 0
    meta: dict = field(default_factory=dict)

    def levels(self) -> np.ndarray:
        """Integer burst levels regardless of form."""
        if not self.scale_attached:
            return np.asarray(self.values)
        return np.rint(np.asarray(self.values) / self.gamma).astype(np.int64)


def _check_gamma(gamma):
    g = float(gamma)
    if not np.isfinite(g) or g <= 0.0:
        raise InvalidScaleError(f"gamma must be finite and > 0, got {gamma}")
    return g


def _check_finite(u):
    if not np.all(np.isfinite(u)):
        raise NumericFaultError("non-finite membrane potential")


def _integrate(state: MembraneState, input_current, cfg: NeuronConfig, reset_mask):
    input_current = np.asarray(input_current, dtype=np.float64)
    if input_current.shape != state.u.shape:
        raise DimensionError(
            f"input current {input_current.shape} does not match state {state.u.shape}")
    u = (cfg.beta * state.u + input_current) * (1.0 - cfg.alpha * reset_mask)
    _check_finite(u)
    return u


def quantize_burst(u, gamma, n_max) -> np.ndarray:
    """Integer burst level ``clip(floor(u / gamma), 0, n_max)``."""
    g = _check_gamma(gamma)
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    u = np.asarray(u, dtype=np.float64)
    if np.any(np.isnan(u)):
        raise NumericFaultError("NaN membrane potential")
    with np.errstate(over="ignore", invalid="ignore"):
        q = np.floor(u / g)
    return np.clip(q, 0, n_max).astype(np.int64)


def lif_step(state: MembraneState, input_current, cfg: NeuronConfig):
    """Binary LIF step; spike where ``u > v_theta`` (strict)."""
    u = _integrate(state, input_current, cfg, state.last_spike)
    spike = (u > cfg.v_theta).astype(np.float64)
    return MembraneState(u, spike), spike


def qblif_step(state: MembraneState, input_current, cfg: NeuronConfig):
    """QB-LIF step; returns the gamma-scaled burst output."""
    gamma = cfg.effective_gamma
    u = _integrate(state, input_current, cfg, (state.last_spike > 0).astype(np.float64))
    out = gamma * quantize_burst(u, gamma, cfg.n_max)
    return MembraneState(u, out), out


def ilif_step(state: MembraneState, input_current, cfg: NeuronConfig):
    """Integer LIF: QB-LIF with the scale pinned to 1."""
    u = _integrate(state, input_current, cfg, (state.last_spike > 0).astype(np.float64))
    level = quantize_burst(u, 1.0, cfg.n_max).astype(np.float64)
    return MembraneState(u, level), level


def neuron_step(state: MembraneState, input_current, cfg: NeuronConfig):
    if cfg.kind is NeuronKind.BINARY_LIF:
        return lif_step(state, input_current, cfg)
    if cfg.kind is NeuronKind.ILIF:
        return ilif_step(state, input_current, cfg)
    return qblif_step(state, input_current, cfg)


def reset_state(state: MembraneState) -> MembraneState:
    return MembraneState.zeros(state.shape)
