"""Shared builders for the test suite."""

import numpy as np

from qblif.autograd import backward_bptt, cross_entropy, forward_unroll
from qblif.network import NetworkSpec, build_network
from qblif.neurons import NeuronConfig


def make_net(layers, input_shape=(4,), T=3, seed=0, **neuron):
    cfg = NeuronConfig(**neuron)
    return build_network(NetworkSpec(input_shape, layers, timesteps=T, seed=seed, neuron=cfg))


def randomize_gammas(net, rng, lo=0.2, hi=1.5):
    for layer in net.spiking_layers():
        layer.gamma[...] = rng.uniform(lo, hi)


def loss_and_grads(net, x, labels, quantizer="floor", surrogate="relsg_et"):
    logits, tape = forward_unroll(net, x, mode="train", quantizer=quantizer)
    loss, g = cross_entropy(logits, labels)
    return loss, backward_bptt(tape, g, surrogate)


def loss_only(net, x, labels, quantizer="floor"):
    logits, _ = forward_unroll(net, x, quantizer=quantizer)
    return cross_entropy(logits, labels)[0]


def relaxed_min_margin(net, x):
    """Smallest distance of any live membrane potential to a clip corner (0 or n_max*gamma)."""
    _, tape = forward_unroll(net, x, mode="train", quantizer="relaxed")
    margin = np.inf
    for rec in tape.records:
        if rec.u is None:
            continue
        # a full reset pins u at exactly 0 regardless of the parameters
        live = rec.u[(1.0 - rec.cfg.alpha * rec.reset_ind) != 0]
        if live.size:
            top = rec.cfg.n_max * rec.cfg.effective_gamma
            margin = min(margin, np.abs(live).min(), np.abs(live - top).min())
    return margin


def finite_difference_check(net, x, labels, names, rng, n_coords=6, step=1e-4):
    """Worst relative error between tape gradients and central differences."""
    _, grads = loss_and_grads(net, x, labels, quantizer="relaxed")
    params = net.parameters()
    worst = 0.0
    for name in names:
        p = params[name]
        flat = p.reshape(-1)
        picks = rng.choice(flat.size, size=min(n_coords, flat.size), replace=False)
        for i in picks:
            orig = flat[i]
            flat[i] = orig + step
            up = loss_only(net, x, labels, "relaxed")
            flat[i] = orig - step
            down = loss_only(net, x, labels, "relaxed")
            flat[i] = orig
            numeric = (up - down) / (2 * step)
            analytic = grads[name].reshape(-1)[i]
            denom = max(abs(numeric), abs(analytic), 1e-8)
            worst = max(worst, abs(numeric - analytic) / denom)
    return worst


def levels_of(net, x):
    """Integer levels of every spiking layer, keyed by layer id: ``(T, batch, ...)``."""
    _, _, spikes = forward_unroll(net, x, record_spikes=True)
    out = {}
    for layer in net.spiking_layers():
        s = spikes[layer.layer_id]
        if layer.kind.value == "qblif":
            s = s / float(layer.gamma)
        out[layer.layer_id] = np.rint(s).astype(np.int64)
    return out


def brute_force_sops(net, x):
    """Walk every spike event and count one SOP per unit of level per outgoing synapse."""
    levels = levels_of(net, x)
    layers = net.spiking_layers()
    total = 0
    for down in layers[1:]:
        src = levels[down.layer_id - 1]
        in_shape = down.in_shape
        for t, b, *pos in zip(*np.nonzero(src.reshape(src.shape[:2] + tuple(in_shape)))):
            k = int(src.reshape(src.shape[:2] + tuple(in_shape))[(t, b, *pos)])
            if down.op == "dense":
                synapses = down.weight.shape[0]
            else:
                _, yi, xi = pos
                kk = down.weight.shape[-1]
                r = kk // 2
                h, w = in_shape[1:]
                synapses = 0
                for yo in range(h):
                    for xo in range(w):
                        if abs(yo - yi) <= r and abs(xo - xi) <= r:
                            synapses += down.weight.shape[0]
            total += k * synapses
    for layer in layers:
        if layer.bias is not None:
            total += x.shape[0] * x.shape[1] * int(np.prod(layer.out_shape))
    return total


def assert_models_identical(a, b):
    assert a.input_shape == b.input_shape and a.timesteps == b.timesteps
    assert a.n_max == b.n_max and a.source_hash == b.source_hash
    assert len(a.layers) == len(b.layers)
    for la, lb in zip(a.layers, b.layers):
        for name in ("role", "in_shape", "out_shape", "op", "pool", "kind", "beta", "alpha",
                     "v_theta", "n_max", "gamma", "input_levels"):
            assert getattr(la, name) == getattr(lb, name), name
        for name in ("weight", "bias"):
            x, y = getattr(la, name), getattr(lb, name)
            assert (x is None) == (y is None)
            if x is not None:
                assert x.dtype == y.dtype and x.shape == y.shape
                assert x.tobytes() == y.tobytes()
