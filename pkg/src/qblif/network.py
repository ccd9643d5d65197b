"""Layer stack and network construction.

A network is an ordered list of blocks:

* :class:`SpikingLayer` - dense or ``k x k`` convolution (optionally followed by
  2x2 average pooling of the synaptic current) feeding a neuron population;
* :class:`Flatten` - reshape, no parameters;
* :class:`Readout` - plain affine map producing real logits, always last.

Pooling acts on currents before the neuron so that the activations passed
between layers stay integer burst levels after scale absorption.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ConfigError, DimensionError
from .neurons import MembraneState, NeuronConfig, NeuronKind

ENCODINGS = ("direct", "frames")


# ---------------------------------------------------------------------------
# primitive linear ops (batch-first)
# ---------------------------------------------------------------------------

def dense_forward(x, weight, bias=None):
    out = x @ weight.T
    if bias is not None:
        out = out + bias
    return out


def dense_backward(x, weight, grad_out, with_bias=False):
    gx = grad_out @ weight
    gw = grad_out.T @ x
    gb = grad_out.sum(axis=0) if with_bias else None
    return gx, gw, gb


def _windows(x, k):
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    return sliding_window_view(xp, (k, k), axis=(2, 3))  # (B, C, H, W, k, k)


def conv2d_forward(x, weight, bias=None):
    """Stride-1 'same' convolution with an odd square kernel."""
    k = weight.shape[-1]
    win = _windows(x, k)
    out = np.tensordot(win, weight, axes=([1, 4, 5], [1, 2, 3]))  # (B, H, W, O)
    out = out.transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias[None, :, None, None]
    return np.ascontiguousarray(out)


def conv2d_backward(x, weight, grad_out, with_bias=False):
    k = weight.shape[-1]
    win = _windows(x, k)
    gw = np.tensordot(grad_out, win, axes=([0, 2, 3], [0, 2, 3]))  # (O, C, k, k)
    flipped = weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    gx = conv2d_forward(grad_out, np.ascontiguousarray(flipped))
    gb = grad_out.sum(axis=(0, 2, 3)) if with_bias else None
    return gx, gw, gb


def avgpool2_forward(x):
    b, c, h, w = x.shape
    return x.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def sumpool2_forward(x):
    b, c, h, w = x.shape
    return x.reshape(b, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def avgpool2_backward(grad_out):
    return 0.25 * np.repeat(np.repeat(grad_out, 2, axis=2), 2, axis=3)


# ---------------------------------------------------------------------------
# specs
# ---------------------------------------------------------------------------

LAYER_TYPES = ("dense", "conv", "avgpool", "flatten", "readout")


@dataclass
class LayerSpec:
    type: str
    size: int | None = None
    kernel: int = 3
    neuron: NeuronKind | None = None
    bias: bool = False
    in_features: int | None = None

    def __post_init__(self):
        if self.type not in LAYER_TYPES:
            raise ConfigError(f"unknown layer type {self.type!r}")
        if self.neuron is not None:
            self.neuron = NeuronKind.parse(self.neuron)


def parse_layers(text: str) -> list[LayerSpec]:
    """Parse ``"conv:8, avgpool, flatten, dense:32, readout:4"``.

    Extra ``key=value`` fields after the size are allowed, e.g.
    ``dense:32:neuron=binary:bias=1`` or ``conv:8:kernel=1``.
    """
    layers = []
    for idx, chunk in enumerate(c.strip() for c in text.split(",")):
        if not chunk:
            continue
        parts = chunk.split(":")
        kind = parts[0].strip().lower()
        kwargs: dict = {}
        for part in parts[1:]:
            part = part.strip()
            if "=" in part:
                key, val = (s.strip() for s in part.split("=", 1))
                if key in ("kernel", "in_features"):
                    kwargs[key] = int(val)
                elif key == "neuron":
                    kwargs[key] = val
                elif key == "bias":
                    kwargs[key] = val.lower() in ("1", "true", "yes", "on")
                else:
                    raise ConfigError(f"layer {idx}: unknown option {key!r}")
            else:
                try:
                    kwargs["size"] = int(part)
                except ValueError:
                    raise ConfigError(f"layer {idx}: bad size {part!r}") from None
        try:
            layers.append(LayerSpec(kind, **kwargs))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"layer {idx}: {exc}") from None
    return layers


@dataclass
class NetworkSpec:
    input_shape: tuple
    layers: list
    timesteps: int = 4
    encoding: str = "direct"
    seed: int = 0
    neuron: NeuronConfig = field(default_factory=NeuronConfig)
    train_beta_alpha: bool = False

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in np.atleast_1d(self.input_shape))
        if isinstance(self.layers, str):
            self.layers = parse_layers(self.layers)
        if self.timesteps < 1:
            raise ConfigError("timesteps must be >= 1")
        if self.encoding not in ENCODINGS:
            raise ConfigError(f"encoding must be one of {ENCODINGS}")


# ---------------------------------------------------------------------------
# blocks
# ---------------------------------------------------------------------------

class SpikingLayer:
    """Synaptic op (+ optional 2x2 pooling) followed by a neuron population."""

    def __init__(self, layer_id, op, weight, bias, pool, neuron: NeuronConfig, in_shape):
        self.layer_id = layer_id
        self.op = op
        self.weight = weight
        self.bias = bias
        self.pool = pool
        self.kind = neuron.kind
        self.v_theta = float(neuron.v_theta)
        self.n_max = int(neuron.n_max)
        self.gamma = np.array(float(neuron.gamma))
        self.beta = np.array(float(neuron.beta))
        self.alpha = np.array(float(neuron.alpha))
        self.in_shape = tuple(in_shape)
        self.out_shape = self._infer_out_shape()

    def _infer_out_shape(self):
        if self.op == "dense":
            return (self.weight.shape[0],)
        c, h, w = self.in_shape
        if self.pool:
            return (self.weight.shape[0], h // 2, w // 2)
        return (self.weight.shape[0], h, w)

    @property
    def fan_in(self):
        return int(np.prod(self.weight.shape[1:]))

    def neuron_config(self) -> NeuronConfig:
        return NeuronConfig(kind=self.kind, beta=float(self.beta), alpha=float(self.alpha),
                            v_theta=self.v_theta, n_max=self.n_max, gamma=float(self.gamma))

    def current(self, x):
        if self.op == "dense":
            out = dense_forward(x, self.weight, self.bias)
        else:
            out = conv2d_forward(x, self.weight, self.bias)
        return avgpool2_forward(out) if self.pool else out

    def current_backward(self, x, grad):
        if self.pool:
            grad = avgpool2_backward(grad)
        if self.op == "dense":
            return dense_backward(x, self.weight, grad, self.bias is not None)
        return conv2d_backward(x, self.weight, grad, self.bias is not None)

    def init_state(self, batch) -> MembraneState:
        return MembraneState.zeros((batch,) + self.out_shape)

    def __repr__(self):
        return (f"SpikingLayer(id={self.layer_id}, op={self.op}, w={self.weight.shape}, "
                f"pool={self.pool}, kind={self.kind.value}, gamma={float(self.gamma):.4g})")


class Flatten:
    def __init__(self, in_shape):
        self.in_shape = tuple(in_shape)
        self.out_shape = (int(np.prod(in_shape)),)

    def __repr__(self):
        return f"Flatten({self.in_shape})"


class Readout:
    def __init__(self, weight, bias, in_shape):
        self.weight = weight
        self.bias = bias
        self.in_shape = tuple(in_shape)
        self.out_shape = (weight.shape[0],)

    @property
    def fan_in(self):
        return self.weight.shape[1]

    def __repr__(self):
        return f"Readout(w={self.weight.shape})"


class Network:
    def __init__(self, blocks, spec: NetworkSpec):
        self.blocks = blocks
        self.spec = spec

    @property
    def timesteps(self):
        return self.spec.timesteps

    @property
    def input_shape(self):
        return self.spec.input_shape

    @property
    def n_classes(self):
        return self.blocks[-1].out_shape[0]

    def spiking_layers(self) -> list[SpikingLayer]:
        return [b for b in self.blocks if isinstance(b, SpikingLayer)]

    @property
    def readout(self) -> Readout:
        return self.blocks[-1]

    def parameters(self) -> dict:
        """Trainable arrays keyed by name; the arrays are the live storage."""
        params = {}
        for b in self.spiking_layers():
            params[f"layer{b.layer_id}.weight"] = b.weight
            if b.bias is not None:
                params[f"layer{b.layer_id}.bias"] = b.bias
            if b.kind is NeuronKind.QBLIF:
                params[f"layer{b.layer_id}.gamma"] = b.gamma
            if self.spec.train_beta_alpha:
                params[f"layer{b.layer_id}.beta"] = b.beta
                params[f"layer{b.layer_id}.alpha"] = b.alpha
        params["readout.weight"] = self.readout.weight
        if self.readout.bias is not None:
            params["readout.bias"] = self.readout.bias
        return params

    def state_arrays(self) -> dict:
        """Every numeric array that defines the network (for checkpointing)."""
        arrays = {}
        for b in self.spiking_layers():
            p = f"layer{b.layer_id}."
            arrays[p + "weight"] = b.weight
            if b.bias is not None:
                arrays[p + "bias"] = b.bias
            arrays[p + "gamma"] = b.gamma
            arrays[p + "beta"] = b.beta
            arrays[p + "alpha"] = b.alpha
        arrays["readout.weight"] = self.readout.weight
        if self.readout.bias is not None:
            arrays["readout.bias"] = self.readout.bias
        return arrays

    def load_state_arrays(self, arrays: dict):
        own = self.state_arrays()
        missing = set(own) - set(arrays)
        if missing:
            raise ConfigError(f"state is missing arrays: {sorted(missing)}")
        for name, dst in own.items():
            src = np.asarray(arrays[name])
            if src.shape != dst.shape:
                raise DimensionError(f"{name}: expected {dst.shape}, got {src.shape}")
            dst[...] = src

    def gammas(self) -> list[float]:
        return [float(b.gamma) for b in self.spiking_layers()]

    def __repr__(self):
        inner = ",\n  ".join(repr(b) for b in self.blocks)
        return f"Network(T={self.timesteps}, [\n  {inner}\n])"


def _he_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def build_network(spec: NetworkSpec) -> Network:
    """Allocate and initialize a network from its spec.

    Conv layers followed by ``avgpool`` are merged into one spiking layer that
    pools the current. Raises :class:`ConfigError` naming the offending layer.
    """
    rng = np.random.default_rng(spec.seed)
    layers = list(spec.layers)
    if not layers or layers[-1].type != "readout":
        raise ConfigError("the last layer must be a readout")
    shape = tuple(spec.input_shape)
    blocks = []
    spiking_id = 0
    i = 0
    while i < len(layers):
        ls = layers[i]
        where = f"layer {i} ({ls.type})"
        if ls.in_features is not None and int(np.prod(shape)) != ls.in_features:
            raise ConfigError(f"{where}: declared fan-in {ls.in_features} but input has shape {shape}")
        if ls.type == "readout":
            if i != len(layers) - 1:
                raise ConfigError(f"{where}: readout must be the last layer")
            if len(shape) != 1:
                raise ConfigError(f"{where}: readout needs flat input, got {shape}; add 'flatten'")
            if not ls.size or ls.size < 1:
                raise ConfigError(f"{where}: readout needs a positive size")
            w = _he_uniform(rng, (ls.size, shape[0]), shape[0])
            blocks.append(Readout(w, np.zeros(ls.size), shape))
            shape = (ls.size,)
        elif ls.type == "flatten":
            blocks.append(Flatten(shape))
            shape = blocks[-1].out_shape
        elif ls.type == "avgpool":
            raise ConfigError(f"{where}: avgpool must directly follow a conv layer")
        else:
            if not ls.size or ls.size < 1:
                raise ConfigError(f"{where}: needs a positive size")
            cfg = dataclasses.replace(spec.neuron, kind=ls.neuron or spec.neuron.kind)
            if ls.type == "dense":
                if len(shape) != 1:
                    raise ConfigError(f"{where}: dense needs flat input, got {shape}; add 'flatten'")
                fan_in = shape[0]
                w = _he_uniform(rng, (ls.size, fan_in), fan_in)
                pool = False
            else:
                if len(shape) != 3:
                    raise ConfigError(f"{where}: conv needs (C, H, W) input, got {shape}")
                if ls.kernel % 2 != 1:
                    raise ConfigError(f"{where}: kernel size must be odd")
                fan_in = shape[0] * ls.kernel * ls.kernel
                w = _he_uniform(rng, (ls.size, shape[0], ls.kernel, ls.kernel), fan_in)
                pool = i + 1 < len(layers) and layers[i + 1].type == "avgpool"
                if pool and (shape[1] % 2 or shape[2] % 2):
                    raise ConfigError(f"layer {i + 1} (avgpool): spatial size {shape[1:]} is not even")
            bias = np.zeros(ls.size) if ls.bias else None
            block = SpikingLayer(spiking_id, ls.type, w, bias, pool, cfg, shape)
            blocks.append(block)
            shape = block.out_shape
            spiking_id += 1
            if pool:
                i += 1
        i += 1
    return Network(blocks, spec)


def layer_forward(layer: SpikingLayer, x, state: MembraneState):
    """Synaptic current then one neuron step; returns ``(output, new_state)``."""
    from .neurons import neuron_step

    current = layer.current(np.asarray(x, dtype=np.float64))
    new_state, out = neuron_step(state, current, layer.neuron_config())
    return out, new_state


def spec_to_dict(spec: NetworkSpec) -> dict:
    return {
        "input_shape": list(spec.input_shape),
        "layers": [
            {"type": ls.type, "size": ls.size, "kernel": ls.kernel,
             "neuron": ls.neuron.value if ls.neuron else None, "bias": ls.bias,
             "in_features": ls.in_features}
            for ls in spec.layers
        ],
        "timesteps": spec.timesteps,
        "encoding": spec.encoding,
        "seed": spec.seed,
        "neuron": {"kind": spec.neuron.kind.value, "beta": spec.neuron.beta,
                   "alpha": spec.neuron.alpha, "v_theta": spec.neuron.v_theta,
                   "n_max": spec.neuron.n_max, "gamma": spec.neuron.gamma},
        "train_beta_alpha": spec.train_beta_alpha,
    }


def spec_from_dict(d: dict) -> NetworkSpec:
    return NetworkSpec(
        input_shape=tuple(d["input_shape"]),
        layers=[LayerSpec(**ls) for ls in d["layers"]],
        timesteps=d["timesteps"],
        encoding=d["encoding"],
        seed=d["seed"],
        neuron=NeuronConfig(**d["neuron"]),
        train_beta_alpha=d["train_beta_alpha"],
    )
