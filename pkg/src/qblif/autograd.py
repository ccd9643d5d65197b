"""Backpropagation through time over the unrolled network.

``forward_unroll`` runs the network step by step and, in train mode, records a
:class:`Tape`. ``backward_bptt`` walks the tape in reverse, substituting a
surrogate for the firing nonlinearity and using a straight-through rule for
the learnable scale. The reset indicator is treated as a constant; gradients
do flow through the ``beta * u[t-1]`` recurrence.

Setting ``quantizer="relaxed"`` replaces ``gamma * clip(floor(u / gamma))``
with ``gamma * clip(u / gamma)`` and uses its exact derivative. That mode
exists so the tape can be checked against finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionError, InvalidScaleError, NumericFaultError
from .network import Flatten, Network, Readout, SpikingLayer, dense_backward, dense_forward
from .neurons import GAMMA_FLOOR, MembraneState, NeuronKind, neuron_step
from .surrogates import Surrogate, level_derivative

QUANTIZERS = ("floor", "relaxed")


@dataclass
class _Record:
    block_index: int
    t: int
    x: np.ndarray
    u: np.ndarray | None = None
    u_prev: np.ndarray | None = None
    bracket: np.ndarray | None = None
    reset_ind: np.ndarray | None = None
    cfg: object = None


@dataclass
class Tape:
    network: Network
    timesteps: int
    batch: int
    quantizer: str = "floor"
    records: list = field(default_factory=list)

    def record(self, rec: _Record):
        self.records.append(rec)


def _relaxed_step(state: MembraneState, current, cfg):
    ind = (state.last_spike > 0).astype(np.float64)
    u = (cfg.beta * state.u + current) * (1.0 - cfg.alpha * ind)
    if not np.all(np.isfinite(u)):
        raise NumericFaultError("non-finite membrane potential")
    out = np.clip(u, 0.0, cfg.n_max * cfg.effective_gamma)
    return MembraneState(u, out), out


def forward_unroll(network: Network, inputs, mode: str = "eval", quantizer: str = "floor",
                   record_spikes: bool = False):
    """Run ``network`` over ``inputs`` of shape ``(T, batch, *input_shape)``.

    Returns ``(logits, tape)`` where ``logits`` has shape ``(T, batch, classes)``
    and ``tape`` is ``None`` in eval mode. With ``record_spikes`` a third item,
    the per-layer output arrays ``(T, batch, ...)``, is returned.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if quantizer not in QUANTIZERS:
        raise ValueError(f"quantizer must be one of {QUANTIZERS}")
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim < 2 or inputs.shape[2:] != tuple(network.input_shape):
        raise DimensionError(
            f"expected input (T, batch, *{tuple(network.input_shape)}), got {inputs.shape}")
    T, batch = inputs.shape[:2]
    if T < 1:
        raise DimensionError("need at least one timestep")

    spiking = network.spiking_layers()
    cfgs = {id(b): b.neuron_config() for b in spiking}
    if quantizer == "relaxed" and any(b.kind is NeuronKind.BINARY_LIF for b in spiking):
        raise ValueError("the relaxed quantizer only applies to burst neurons")
    states = {id(b): b.init_state(batch) for b in spiking}
    tape = Tape(network, T, batch, quantizer) if mode == "train" else None
    spikes = {b.layer_id: [] for b in spiking} if record_spikes else None
    logits = np.empty((T, batch, network.n_classes))

    for t in range(T):
        x = inputs[t]
        for idx, block in enumerate(network.blocks):
            if isinstance(block, Flatten):
                x = x.reshape(batch, -1)
            elif isinstance(block, SpikingLayer):
                cfg = cfgs[id(block)]
                state = states[id(block)]
                current = block.current(x)
                if quantizer == "relaxed":
                    new_state, out = _relaxed_step(state, current, cfg)
                else:
                    new_state, out = neuron_step(state, current, cfg)
                if tape is not None:
                    ind = (state.last_spike > 0).astype(np.float64)
                    tape.record(_Record(idx, t, x, u=new_state.u, u_prev=state.u,
                                        bracket=cfg.beta * state.u + current,
                                        reset_ind=ind, cfg=cfg))
                states[id(block)] = new_state
                if spikes is not None:
                    spikes[block.layer_id].append(out)
                x = out
            else:
                if tape is not None:
                    tape.record(_Record(idx, t, x))
                logits[t] = dense_forward(x, block.weight, block.bias)
    if record_spikes:
        return logits, tape, {k: np.stack(v) for k, v in spikes.items()}
    return logits, tape


def gamma_gradient(u, gamma, n_max) -> np.ndarray:
    """Straight-through d(output)/d(gamma) for ``gamma * clip(floor(u/gamma))``.

    ``level - u/gamma`` inside the range, 0 below it, ``n_max`` above it.
    """
    g = float(gamma)
    if not np.isfinite(g) or g <= 0:
        raise InvalidScaleError(f"gamma must be > 0, got {gamma}")
    r = np.asarray(u, dtype=np.float64) / g
    inside = np.floor(r) - r
    return np.where(r < 0, 0.0, np.where(r > n_max, float(n_max), inside))


def _relaxed_gamma_gradient(u, gamma, n_max):
    return np.where(np.asarray(u) > n_max * gamma, float(n_max), 0.0)


def backward_bptt(tape: Tape, loss_grad, surrogate: Surrogate | str = "relsg_et") -> dict:
    """Gradients of the loss for every entry of ``network.parameters()``.

    ``loss_grad`` is dL/dlogits with shape ``(T, batch, classes)``.
    """
    if not isinstance(surrogate, Surrogate):
        surrogate = Surrogate(surrogate)
    net = tape.network
    loss_grad = np.asarray(loss_grad, dtype=np.float64)
    expected = (tape.timesteps, tape.batch, net.n_classes)
    if loss_grad.shape != expected:
        raise DimensionError(f"loss gradient {loss_grad.shape} does not match tape {expected}")

    params = net.parameters()
    grads = {name: np.zeros_like(p) for name, p in params.items()}
    carry = {}
    upstream = None
    for rec in reversed(tape.records):
        block = net.blocks[rec.block_index]
        if isinstance(block, Readout):
            g = loss_grad[rec.t]
            gx, gw, gb = dense_backward(rec.x, block.weight, g, block.bias is not None)
            grads["readout.weight"] += gw
            if gb is not None:
                grads["readout.bias"] += gb
            upstream = gx
            # flatten blocks sit between here and the previous spiking layer
            for prev in reversed(net.blocks[:rec.block_index]):
                if isinstance(prev, Flatten):
                    upstream = upstream.reshape((tape.batch,) + prev.in_shape)
                else:
                    break
            continue
        _spiking_backward(tape, rec, block, upstream, carry, grads, surrogate)
        upstream = carry.pop(("dx", block.layer_id))
        for prev in reversed(net.blocks[:rec.block_index]):
            if isinstance(prev, Flatten):
                upstream = upstream.reshape((tape.batch,) + prev.in_shape)
            else:
                break
    return grads


def _spiking_backward(tape, rec, block: SpikingLayer, g_out, carry, grads, surrogate):
    cfg = rec.cfg
    u = rec.u
    gamma = cfg.effective_gamma
    if tape.quantizer == "relaxed":
        dsdu = ((u > 0) & (u < cfg.n_max * gamma)).astype(np.float64)
        dsdg = _relaxed_gamma_gradient(u, gamma, cfg.n_max)
    else:
        dsdu = level_derivative(u, surrogate, cfg)
        if cfg.kind is NeuronKind.QBLIF:
            dsdu = gamma * dsdu
            dsdg = gamma_gradient(u, gamma, cfg.n_max)
        else:
            dsdg = None
    prefix = f"layer{block.layer_id}."
    gu = g_out * dsdu + carry.get(block.layer_id, 0.0)
    if cfg.kind is NeuronKind.QBLIF and prefix + "gamma" in grads:
        grads[prefix + "gamma"] += np.sum(g_out * dsdg)
    reset = 1.0 - cfg.alpha * rec.reset_ind
    g_bracket = gu * reset
    if prefix + "alpha" in grads:
        grads[prefix + "alpha"] += np.sum(gu * -rec.bracket * rec.reset_ind)
        grads[prefix + "beta"] += np.sum(g_bracket * rec.u_prev)
    carry[block.layer_id] = cfg.beta * g_bracket
    gx, gw, gb = block.current_backward(rec.x, g_bracket)
    grads[prefix + "weight"] += gw
    if gb is not None:
        grads[prefix + "bias"] += gb
    carry[("dx", block.layer_id)] = gx


def cross_entropy(logits_per_step, labels):
    """Cross-entropy of the time-averaged logits.

    Returns ``(loss, dL/dlogits)`` with the gradient shaped like the input.
    """
    logits_per_step = np.asarray(logits_per_step, dtype=np.float64)
    T, batch, _ = logits_per_step.shape
    mean = logits_per_step.mean(axis=0)
    shifted = mean - mean.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    labels = np.asarray(labels)
    loss = -logp[np.arange(batch), labels].mean()
    g = np.exp(logp)
    g[np.arange(batch), labels] -= 1.0
    g /= batch
    return float(loss), np.broadcast_to(g / T, logits_per_step.shape).copy()


@dataclass
class OptimizerState:
    """SGD with momentum and optional cosine decay of the base learning rate."""

    lr: float = 0.1
    momentum: float = 0.9
    total_steps: int | None = None
    step: int = 0
    buffers: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")

    def current_lr(self) -> float:
        if not self.total_steps:
            return self.lr
        frac = min(self.step, self.total_steps) / self.total_steps
        return 0.5 * self.lr * (1.0 + math.cos(math.pi * frac))


def sgd_step(params: dict, grads: dict, opt: OptimizerState) -> dict:
    """In-place momentum update; clamps gammas to the positivity floor."""
    lr = opt.current_lr()
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if np.shape(g) != np.shape(p):
            raise DimensionError(f"{name}: gradient {np.shape(g)} vs parameter {np.shape(p)}")
        if opt.momentum:
            buf = opt.buffers.get(name)
            buf = g.copy() if buf is None else opt.momentum * buf + g
            opt.buffers[name] = buf
            p -= lr * buf
        else:
            p -= lr * g
        if name.endswith(".gamma"):
            np.maximum(p, GAMMA_FLOOR, out=p)
        elif name.endswith(".beta") or name.endswith(".alpha"):
            np.clip(p, 0.0, 1.0, out=p)
    opt.step += 1
    return params


def gamma_grad_scale(layer: SpikingLayer) -> float:
    """Learned-step-size damping: 1 / sqrt(neurons * n_max)."""
    return 1.0 / math.sqrt(int(np.prod(layer.out_shape)) * layer.n_max)


def train_step(network: Network, inputs, labels, opt: OptimizerState,
               surrogate: Surrogate | str = "relsg_et") -> tuple[float, np.ndarray]:
    """One forward/backward/update pass. Returns ``(loss, mean logits)``."""
    logits, tape = forward_unroll(network, inputs, mode="train")
    loss, g = cross_entropy(logits, labels)
    grads = backward_bptt(tape, g, surrogate)
    for layer in network.spiking_layers():
        key = f"layer{layer.layer_id}.gamma"
        if key in grads:
            grads[key] = grads[key] * gamma_grad_scale(layer)
    for name, g_ in grads.items():
        if not np.all(np.isfinite(g_)):
            raise NumericFaultError(f"non-finite gradient for {name}")
    sgd_step(network.parameters(), grads, opt)
    return loss, logits.mean(axis=0)
