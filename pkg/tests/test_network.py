import numpy as np
import pytest

from helpers import make_net
from qblif.checkpoint import checkpoint_load, checkpoint_save
from qblif.exceptions import ChecksumError, ConfigError
from qblif.network import (NetworkSpec, build_network, conv2d_backward, conv2d_forward,
                           dense_forward, layer_forward, parse_layers, spec_from_dict,
                           spec_to_dict)
from qblif.neurons import MembraneState, NeuronConfig, qblif_step


class TestBuild:
    def test_mismatched_sizes_name_the_layer(self):
        with pytest.raises(ConfigError, match="layer 1"):
            make_net("dense:5, dense:3:in_features=7, readout:2")

    def test_readout_required(self):
        with pytest.raises(ConfigError):
            make_net("dense:5")

    def test_dense_after_conv_needs_flatten(self):
        with pytest.raises(ConfigError, match="flatten"):
            make_net("conv:2, dense:3, readout:2", input_shape=(1, 4, 4))

    def test_bad_layer_strings(self):
        for text in ("dense:x", "resblock:4", "dense:4:colour=red"):
            with pytest.raises(ConfigError):
                parse_layers(text)

    def test_seeded_init(self):
        a, b = make_net("dense:5, readout:2", seed=9), make_net("dense:5, readout:2", seed=9)
        for k, v in a.state_arrays().items():
            assert np.array_equal(v, b.state_arrays()[k])

    def test_defaults(self):
        net = make_net("dense:5, dense:4, readout:2")
        assert all(l.n_max == 20 and float(l.gamma) == 1.0 for l in net.spiking_layers())
        assert all(l.bias is None for l in net.spiking_layers())

    def test_per_layer_neuron_kind(self):
        net = make_net("dense:5:neuron=binary, dense:4, readout:2")
        assert [l.kind.value for l in net.spiking_layers()] == ["binary", "qblif"]

    def test_spec_dict_round_trip(self):
        spec = NetworkSpec((1, 4, 4), "conv:2:kernel=1, avgpool, flatten, dense:3:bias=1, readout:2",
                           timesteps=3, seed=4, neuron=NeuronConfig(n_max=7))
        again = spec_from_dict(spec_to_dict(spec))
        assert spec_to_dict(again) == spec_to_dict(spec)


class TestLayerForward:
    def test_zero_weights_silent(self):
        net = make_net("dense:3, readout:2")
        layer = net.spiking_layers()[0]
        layer.weight[...] = 0.0
        out, _ = layer_forward(layer, np.ones((2, 4)), layer.init_state(2))
        assert not out.any()

    def test_identity_reduces_to_neuron_step(self):
        net = make_net("dense:1, readout:1", input_shape=(1,), beta=0.0)
        layer = net.spiking_layers()[0]
        layer.weight[...] = 1.0
        out, state = layer_forward(layer, np.array([[3.7]]), layer.init_state(1))
        ref_state, ref = qblif_step(MembraneState.zeros((1, 1)), np.array([[3.7]]),
                                    layer.neuron_config())
        assert out[0, 0] == ref[0, 0] == 3.0
        assert state.u[0, 0] == ref_state.u[0, 0]

    def test_pointwise_conv_is_channel_sum(self, rng):
        x = rng.normal(size=(2, 3, 4, 4))
        out = conv2d_forward(x, np.ones((1, 3, 1, 1)))
        dense = dense_forward(x.transpose(0, 2, 3, 1).reshape(-1, 3), np.ones((1, 3)))
        np.testing.assert_allclose(out[:, 0], dense.reshape(2, 4, 4))

    def test_conv_matches_loops(self, rng):
        x, w = rng.normal(size=(1, 2, 5, 5)), rng.normal(size=(3, 2, 3, 3))
        out = conv2d_forward(x, w)
        pad = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        ref = np.zeros_like(out)
        for o in range(3):
            for i in range(5):
                for j in range(5):
                    ref[0, o, i, j] = (pad[0, :, i:i + 3, j:j + 3] * w[o]).sum()
        np.testing.assert_allclose(out, ref, atol=1e-12)

    def test_conv_backward(self, rng):
        x, w = rng.normal(size=(2, 2, 4, 4)), rng.normal(size=(3, 2, 3, 3))
        g = rng.normal(size=(2, 3, 4, 4))
        gx, gw, _ = conv2d_backward(x, w, g)
        eps = 1e-6
        for idx in [(0, 1, 2, 3), (1, 0, 0, 0)]:
            xp, xm = x.copy(), x.copy()
            xp[idx] += eps
            xm[idx] -= eps
            num = ((conv2d_forward(xp, w) - conv2d_forward(xm, w)) * g).sum() / (2 * eps)
            assert gx[idx] == pytest.approx(num, rel=1e-6)
        wp, wm = w.copy(), w.copy()
        wp[2, 1, 0, 2] += eps
        wm[2, 1, 0, 2] -= eps
        num = ((conv2d_forward(x, wp) - conv2d_forward(x, wm)) * g).sum() / (2 * eps)
        assert gw[2, 1, 0, 2] == pytest.approx(num, rel=1e-6)

    def test_state_shapes_fixed(self, rng):
        from qblif.autograd import forward_unroll
        net = make_net("conv:2, avgpool, flatten, dense:3, readout:2", input_shape=(1, 4, 4), T=4)
        logits, _, spikes = forward_unroll(net, rng.normal(size=(4, 3, 1, 4, 4)), record_spikes=True)
        assert spikes[0].shape == (4, 3, 2, 2, 2) and spikes[1].shape == (4, 3, 3)
        assert logits.shape == (4, 3, 2)


class TestCheckpoint:
    def test_round_trip(self, rng, tmp_path):
        net = make_net("conv:2, avgpool, flatten, dense:3:bias=1, readout:2", input_shape=(1, 4, 4))
        for layer in net.spiking_layers():
            layer.gamma[...] = rng.uniform(0.1, 2.0)
        checkpoint_save(net, tmp_path / "c.qbck", extra={"note": 1})
        back, extra = checkpoint_load(tmp_path / "c.qbck", with_extra=True)
        assert extra == {"note": 1}
        assert back.gammas() == net.gammas()
        for k, v in net.state_arrays().items():
            assert v.tobytes() == back.state_arrays()[k].tobytes()

    def test_corrupt(self, tmp_path):
        checkpoint_save(make_net("dense:3, readout:2"), tmp_path / "c.qbck")
        blob = bytearray((tmp_path / "c.qbck").read_bytes())
        blob[len(blob) // 2] ^= 0x10
        (tmp_path / "c.qbck").write_bytes(bytes(blob))
        with pytest.raises(ChecksumError):
            checkpoint_load(tmp_path / "c.qbck")
