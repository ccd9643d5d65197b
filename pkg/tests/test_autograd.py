import numpy as np
import pytest

from helpers import (finite_difference_check, loss_and_grads, make_net, randomize_gammas,
                     relaxed_min_margin)
from qblif.autograd import (OptimizerState, backward_bptt, cross_entropy, forward_unroll,
                            gamma_gradient, sgd_step, train_step)
from qblif.exceptions import DimensionError, InvalidScaleError


class TestGammaGradient:
    @pytest.mark.parametrize("u,expected", [(2.6, -0.6), (-1.0, 0.0), (30.0, 20.0)])
    def test_examples(self, u, expected):
        assert gamma_gradient(u, 1.0, 20) == pytest.approx(expected)

    def test_invalid_scale(self):
        with pytest.raises(InvalidScaleError):
            gamma_gradient(1.0, -1.0, 20)


def _single_neuron(gamma, w, T=1):
    net = make_net("dense:1, readout:1", input_shape=(1,), T=T, gamma=gamma)
    net.spiking_layers()[0].weight[...] = w
    net.readout.weight[...] = 1.0
    return net


class TestForwardUnroll:
    def test_subthreshold_is_silent(self):
        net = make_net("dense:3, readout:3", input_shape=(3,), T=1, gamma=1.0)
        net.spiking_layers()[0].weight[...] = np.eye(3)
        logits, _ = forward_unroll(net, np.full((1, 2, 3), 0.9))
        assert not logits.any()

    def test_two_step_accumulation(self):
        net = _single_neuron(0.5, 1.0, T=2)
        net.spiking_layers()[0].beta[...] = 1.0
        net.spiking_layers()[0].alpha[...] = 0.0
        logits, _, spikes = forward_unroll(net, np.full((2, 1, 1), 0.3), record_spikes=True)
        assert spikes[0][:, 0, 0].tolist() == [0.0, 0.5]
        assert logits[:, 0, 0].tolist() == [0.0, 0.5]

    def test_train_and_eval_agree(self, rng):
        net = make_net("dense:6, dense:5, readout:3", T=3)
        randomize_gammas(net, rng)
        x = rng.normal(size=(3, 7, 4))
        a, tape = forward_unroll(net, x, mode="train")
        b, none = forward_unroll(net, x, mode="eval")
        np.testing.assert_array_equal(a, b)
        assert tape is not None and none is None

    def test_shape_error(self):
        net = make_net("dense:2, readout:2")
        with pytest.raises(DimensionError):
            forward_unroll(net, np.zeros((2, 3, 5)))


class TestBackward:
    def test_one_step_chain_rule(self):
        net = _single_neuron(gamma=0.5, w=3.0)
        _, tape = forward_unroll(net, np.full((1, 1, 1), 2.0), mode="train")
        grads = backward_bptt(tape, np.ones((1, 1, 1)), "relsg_et")
        assert grads["layer0.weight"][0, 0] == pytest.approx(0.5 * 1.0 * 2.0)

    def test_zero_loss_gradient(self, rng):
        net = make_net("dense:5, readout:2", T=2)
        x = rng.normal(size=(2, 4, 4))
        _, tape = forward_unroll(net, x, mode="train")
        grads = backward_bptt(tape, np.zeros((2, 4, 2)), "relsg_et")
        assert all(not np.any(g) for g in grads.values())

    def test_plateau_passes_exactly_gamma(self):
        for u in (0.5, 3.3, 10.0):
            net = _single_neuron(gamma=0.5, w=u)
            _, tape = forward_unroll(net, np.ones((1, 1, 1)), mode="train")
            grads = backward_bptt(tape, np.ones((1, 1, 1)), "relsg_et")
            assert grads["layer0.weight"][0, 0] == 0.5

    def test_box_outside_window_blocks_weight_gradient(self):
        for u in (0.2, 11.0):
            net = _single_neuron(gamma=0.5, w=u, T=2)
            _, tape = forward_unroll(net, np.ones((2, 1, 1)), mode="train")
            grads = backward_bptt(tape, np.ones((2, 1, 1)), "box_et")
            assert grads["layer0.weight"][0, 0] == 0.0

    def test_loss_grad_shape_checked(self, rng):
        net = make_net("dense:5, readout:2", T=2)
        _, tape = forward_unroll(net, rng.normal(size=(2, 4, 4)), mode="train")
        with pytest.raises(DimensionError):
            backward_bptt(tape, np.zeros((2, 4, 3)))

    def test_deterministic(self, rng):
        net = make_net("dense:6, readout:3", T=3)
        x, y = rng.normal(size=(3, 5, 4)), np.array([0, 1, 2, 0, 1])
        _, g1 = loss_and_grads(net, x, y)
        _, g2 = loss_and_grads(net, x, y)
        for k in g1:
            assert np.array_equal(g1[k], g2[k])

    @pytest.mark.parametrize("layers,shape", [
        ("dense:8, dense:8, readout:3", (5,)),
        ("conv:2, avgpool, flatten, dense:4, readout:2", (1, 4, 4)),
    ])
    def test_relaxed_finite_differences(self, layers, shape):
        rng = np.random.default_rng(7)
        for _ in range(20):
            net = make_net(layers, input_shape=shape, T=3, seed=int(rng.integers(1 << 30)))
            randomize_gammas(net, rng, 0.05, 0.3)
            x = rng.normal(0.5, 1.0, size=(3, 4) + shape)
            if relaxed_min_margin(net, x) > 1e-3:
                break
        else:
            pytest.fail("no sample kept clear of the clip corners")
        y = rng.integers(0, net.n_classes, 4)
        names = [n for n in net.parameters() if not n.endswith("bias")]
        assert finite_difference_check(net, x, y, names, rng) < 1e-4

    def test_beta_alpha_gradients(self):
        rng = np.random.default_rng(3)
        from qblif.network import NetworkSpec, build_network
        from qblif.neurons import NeuronConfig
        net = build_network(NetworkSpec((4,), "dense:6, readout:2", timesteps=3, seed=2,
                                        neuron=NeuronConfig(beta=0.6, alpha=0.4, gamma=0.1),
                                        train_beta_alpha=True))
        x = rng.normal(0.5, 1.0, size=(3, 4, 4))
        assert relaxed_min_margin(net, x) > 1e-3
        y = np.array([0, 1, 1, 0])
        assert finite_difference_check(net, x, y, ["layer0.beta", "layer0.alpha"], rng) < 1e-4


class TestCrossEntropy:
    def test_uniform_logits(self):
        loss, g = cross_entropy(np.zeros((2, 3, 4)), np.array([0, 1, 2]))
        assert loss == pytest.approx(np.log(4))
        np.testing.assert_allclose(g.sum(axis=(0, 2)), 0.0, atol=1e-15)


class TestSgd:
    def test_zero_gradient_no_change(self):
        p = {"w": np.array([1.0, 2.0])}
        sgd_step(p, {"w": np.zeros(2)}, OptimizerState(lr=0.5, momentum=0.0))
        assert p["w"].tolist() == [1.0, 2.0]

    def test_plain_step(self):
        p = {"w": np.array([1.0])}
        sgd_step(p, {"w": np.array([0.25])}, OptimizerState(lr=1.0, momentum=0.0))
        assert p["w"][0] == 0.75

    def test_gamma_floor(self):
        p = {"layer0.gamma": np.array(0.1)}
        sgd_step(p, {"layer0.gamma": np.array(5.0)}, OptimizerState(lr=1.0, momentum=0.0))
        assert float(p["layer0.gamma"]) == 1e-4

    def test_cosine_decay(self):
        opt = OptimizerState(lr=1.0, total_steps=10)
        assert opt.current_lr() == 1.0
        opt.step = 10
        assert opt.current_lr() == pytest.approx(0.0)

    @pytest.mark.parametrize("kw", [dict(lr=0.0), dict(momentum=1.0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            OptimizerState(**kw)

    def test_train_step_reduces_loss(self, rng):
        net = make_net("dense:16, readout:2", T=2, gamma=0.5)
        x = rng.normal(size=(2, 64, 4))
        y = (x[0, :, 0] > 0).astype(int)
        opt = OptimizerState(lr=0.1)
        first = train_step(net, x, y, opt)[0]
        for _ in range(30):
            last = train_step(net, x, y, opt)[0]
        assert last < first
