"""Scale absorption and the accumulate-only integer executor.

``absorb_scales`` folds each burst layer's gamma into the weights of the layer
that consumes its output, so spikes travel between layers as integer levels.
``infer_integer`` runs the folded model: a level-``k`` event contributes ``k``
accumulations of the folded weight per outgoing synapse, and each neuron maps
its membrane potential to a level by counting rungs of the threshold ladder
``gamma, 2*gamma, ..., n_max*gamma`` it has reached.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import container
from .autograd import forward_unroll
from .exceptions import DimensionError, InvariantViolation
from .network import (Flatten, Network, Readout, SpikingLayer, conv2d_forward, dense_forward,
                      sumpool2_forward)
from .neurons import NeuronKind

MAGIC = b"QBAM"
VERSION = 1


@dataclass
class AbsorbedLayer:
    """One block of an absorbed model.

    ``role`` is ``"spiking"``, ``"flatten"`` or ``"readout"``. ``input_levels``
    says whether the block consumes integer levels (True) or real values.
    Pooled convolutions carry the 1/4 averaging factor in their weights and
    sum-pool at run time.
    """

    role: str
    in_shape: tuple
    out_shape: tuple
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None
    op: str = "dense"
    pool: bool = False
    kind: NeuronKind = NeuronKind.QBLIF
    beta: float = 0.5
    alpha: float = 1.0
    v_theta: float = 1.0
    n_max: int = 20
    gamma: float = 1.0
    input_levels: bool = False

    @property
    def ladder(self) -> np.ndarray:
        """Thresholds ``k * gamma`` for ``k = 1..n_max``."""
        gamma = 1.0 if self.kind is NeuronKind.ILIF else self.gamma
        return np.arange(1, self.n_max + 1, dtype=np.float64) * gamma

    @property
    def level_cap(self) -> int:
        return 1 if self.kind is NeuronKind.BINARY_LIF else self.n_max


@dataclass
class AbsorbedModel:
    layers: list
    input_shape: tuple
    timesteps: int
    n_max: int
    source_hash: str = ""

    @property
    def n_classes(self):
        return self.layers[-1].out_shape[0]

    def spiking(self):
        return [l for l in self.layers if l.role == "spiking"]


@dataclass
class LayerOps:
    name: str
    input_levels: bool
    flops: int = 0
    sops: int = 0
    multiplies: int = 0
    scale_multiplies: int = 0
    neuron_updates: int = 0


@dataclass
class OpTrace:
    """Operation counts of one inference call (totals over the batch)."""

    layers: list = field(default_factory=list)
    sign_ops: int = 0
    batch: int = 0
    timesteps: int = 0

    @property
    def flops(self):
        return sum(l.flops for l in self.layers)

    @property
    def sops(self):
        return sum(l.sops for l in self.layers)

    @property
    def spiking_path_multiplies(self):
        """Real multiplies on any layer fed by spikes (must be zero)."""
        return sum(l.multiplies + l.scale_multiplies for l in self.layers if l.input_levels)

    @property
    def scale_multiplies(self):
        return sum(l.scale_multiplies for l in self.layers)


def network_hash(network: Network) -> str:
    h = hashlib.sha256()
    for name, arr in network.state_arrays().items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


def absorb_scales(network: Network) -> AbsorbedModel:
    """Fold upstream gammas into downstream weights.

    The first layer (real-valued input) keeps its weights; non-QB-LIF layers
    emit unit-scale integers and fold nothing.
    """
    layers = []
    upstream_scale = None  # None: real-valued input
    for block in network.blocks:
        if isinstance(block, Flatten):
            layers.append(AbsorbedLayer("flatten", block.in_shape, block.out_shape,
                                        input_levels=upstream_scale is not None))
            continue
        scale = 1.0 if upstream_scale is None else upstream_scale
        if isinstance(block, Readout):
            layers.append(AbsorbedLayer(
                "readout", block.in_shape, block.out_shape,
                weight=block.weight * scale,
                bias=None if block.bias is None else block.bias.copy(),
                input_levels=upstream_scale is not None))
            continue
        weight = block.weight * scale
        if block.pool:
            weight = weight * 0.25
        layers.append(AbsorbedLayer(
            "spiking", block.in_shape, block.out_shape, weight=weight,
            bias=None if block.bias is None else block.bias.copy(),
            op=block.op, pool=block.pool, kind=block.kind, beta=float(block.beta),
            alpha=float(block.alpha), v_theta=block.v_theta, n_max=block.n_max,
            gamma=float(block.gamma), input_levels=upstream_scale is not None))
        upstream_scale = float(block.gamma) if block.kind is NeuronKind.QBLIF else 1.0
    n_max = max((b.n_max for b in network.spiking_layers()), default=0)
    return AbsorbedModel(layers, tuple(network.input_shape), network.timesteps, n_max,
                         network_hash(network))


def _conv_fanout(in_shape, kernel, out_channels) -> np.ndarray:
    """Number of outgoing synapses of every input position of a 'same' conv."""
    _, h, w = in_shape
    ones = np.ones((1, 1, h, w))
    reach = conv2d_forward(ones, np.ones((1, 1, kernel, kernel)))[0, 0]
    return np.rint(reach).astype(np.int64) * out_channels


def _accumulate(layer: AbsorbedLayer, levels, strict: bool):
    """Synaptic current from integer levels, by accumulation only."""
    if strict:
        current = None
        for k in range(1, layer_input_cap(levels) + 1):
            mask = (levels >= k).astype(np.float64)
            part = _apply(layer, mask)
            current = part if current is None else current + part
        if current is None:
            current = _apply(layer, np.zeros_like(levels, dtype=np.float64))
        return current
    return _apply(layer, levels.astype(np.float64))


def layer_input_cap(levels) -> int:
    return int(levels.max()) if levels.size else 0


def _apply(layer: AbsorbedLayer, x):
    if layer.role == "readout" or layer.op == "dense":
        return dense_forward(x, layer.weight)
    out = conv2d_forward(x, layer.weight)
    return sumpool2_forward(out) if layer.pool else out


def _add_bias(layer, current):
    if layer.bias is None:
        return current
    if layer.role == "spiking" and layer.op == "conv":
        return current + layer.bias[None, :, None, None]
    return current + layer.bias


def _count_sops(layer: AbsorbedLayer, levels) -> int:
    total = int(levels.sum())
    if layer.role == "readout" or layer.op == "dense":
        return total * layer.weight.shape[0]
    fan = _conv_fanout(layer.in_shape, layer.weight.shape[-1], layer.weight.shape[0])
    return int((levels.sum(axis=0) * fan[None]).sum())


def _real_macs(layer: AbsorbedLayer, batch: int) -> int:
    if layer.role == "readout" or layer.op == "dense":
        return batch * layer.weight.size
    _, h, w = layer.in_shape
    return batch * h * w * layer.weight.size


def _check_levels(levels, cap, where):
    if levels.size and (levels.min() < 0 or levels.max() > cap):
        raise InvariantViolation(f"{where}: activation outside [0, {cap}]")


def infer_integer(model: AbsorbedModel, inputs, strict: bool = False,
                  record_levels: bool = False):
    """Run the absorbed model on ``inputs`` of shape ``(T, batch, *input_shape)``.

    Returns ``(logits, trace)`` with per-step logits ``(T, batch, classes)``,
    plus a dict of per-layer integer levels when ``record_levels`` is set.
    ``strict`` decomposes every accumulation into binary ladder masks instead
    of the fused ``levels @ W`` form; results agree to rounding.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim < 2 or inputs.shape[2:] != tuple(model.input_shape):
        raise DimensionError(
            f"expected input (T, batch, *{tuple(model.input_shape)}), got {inputs.shape}")
    T, batch = inputs.shape[:2]
    trace = OpTrace(batch=batch, timesteps=T)
    ops = {}
    for i, layer in enumerate(model.layers):
        if layer.role != "flatten":
            ops[i] = LayerOps(f"{layer.role}{i}", layer.input_levels)
            trace.layers.append(ops[i])
    u = {i: np.zeros((batch,) + l.out_shape) for i, l in enumerate(model.layers) if l.role == "spiking"}
    last = {i: np.zeros(v.shape, dtype=np.int64) for i, v in u.items()}
    ladders = {i: model.layers[i].ladder for i in u}
    levels_log = {i: [] for i in u} if record_levels else None
    logits = np.empty((T, batch, model.n_classes))

    for t in range(T):
        x = inputs[t]
        for i, layer in enumerate(model.layers):
            if layer.role == "flatten":
                x = x.reshape(batch, -1)
                continue
            rec = ops[i]
            if layer.input_levels:
                _check_levels(x, model.n_max if model.n_max else 1, f"layer {i} input")
                current = _accumulate(layer, x, strict)
                if layer.role == "readout":
                    rec.flops += _real_macs(layer, batch)
                else:
                    rec.sops += _count_sops(layer, x)
            else:
                current = _apply(layer, x)
                macs = _real_macs(layer, batch)
                rec.flops += macs
                rec.multiplies += macs
            if layer.bias is not None and layer.role == "spiking":
                rec.sops += batch * int(np.prod(layer.out_shape))
            current = _add_bias(layer, current)
            if layer.role == "readout":
                logits[t] = current
                continue
            fired = (last[i] > 0).astype(np.float64)
            u[i] = (layer.beta * u[i] + current) * (1.0 - layer.alpha * fired)
            rec.neuron_updates += u[i].size
            if layer.kind is NeuronKind.BINARY_LIF:
                level = (u[i] > layer.v_theta).astype(np.int64)
            else:
                level = np.searchsorted(ladders[i], u[i], side="right").astype(np.int64)
            _check_levels(level, layer.level_cap, f"layer {i}")
            last[i] = level
            if levels_log is not None:
                levels_log[i].append(level)
            x = level
    if record_levels:
        return logits, trace, {i: np.stack(v) for i, v in levels_log.items()}
    return logits, trace


def verify_equivalence(network: Network, model: AbsorbedModel, inputs) -> float:
    """Max |training-form logits - absorbed logits| over all steps and inputs."""
    ref, _ = forward_unroll(network, inputs, mode="eval")
    got, _ = infer_integer(model, inputs)
    return float(np.max(np.abs(ref - got)))


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------

def export_model(model: AbsorbedModel, path):
    meta_layers = []
    arrays = {}
    for i, l in enumerate(model.layers):
        meta_layers.append({
            "role": l.role, "in_shape": list(l.in_shape), "out_shape": list(l.out_shape),
            "op": l.op, "pool": l.pool, "kind": l.kind.value, "beta": l.beta, "alpha": l.alpha,
            "v_theta": l.v_theta, "n_max": l.n_max, "gamma": l.gamma,
            "input_levels": l.input_levels,
            "has_weight": l.weight is not None, "has_bias": l.bias is not None,
        })
        if l.weight is not None:
            arrays[f"{i}.weight"] = l.weight
        if l.bias is not None:
            arrays[f"{i}.bias"] = l.bias
    meta = {"layers": meta_layers, "input_shape": list(model.input_shape),
            "timesteps": model.timesteps, "n_max": model.n_max, "source_hash": model.source_hash}
    container.write(path, MAGIC, VERSION, len(model.layers), meta, arrays)


def import_model(path) -> AbsorbedModel:
    meta, arrays, _ = container.read(path, MAGIC, {VERSION})
    layers = []
    for i, m in enumerate(meta["layers"]):
        layers.append(AbsorbedLayer(
            m["role"], tuple(m["in_shape"]), tuple(m["out_shape"]),
            weight=arrays.get(f"{i}.weight") if m["has_weight"] else None,
            bias=arrays.get(f"{i}.bias") if m["has_bias"] else None,
            op=m["op"], pool=m["pool"], kind=NeuronKind(m["kind"]), beta=m["beta"],
            alpha=m["alpha"], v_theta=m["v_theta"], n_max=m["n_max"], gamma=m["gamma"],
            input_levels=m["input_levels"]))
    return AbsorbedModel(layers, tuple(meta["input_shape"]), meta["timesteps"], meta["n_max"],
                         meta["source_hash"])
