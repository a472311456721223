import numpy as np
import pytest

from modules.net_core import (
    INFER,
    BatchNorm,
    DenseNet,
    LatentInject,
    Linear,
    build_preset,
    gradient_check,
    init_params,
    numeric_gradient,
)
from modules.lab_assets import (
    BatchNormError,
    LatentContractError,
    NetShapeError,
    NonFiniteError,
    PresetError,
    TapeMismatchError,
)

GRAD_TOL = 1e-4


class TestGradientIntegrity:
    @pytest.mark.parametrize("kind", ["leaky", "relu_tanh", "sigmoid", "bn_free", "bn_affine"])
    def test_layer_kinds(self, make_net, rng, kind):
        net = make_net(kind)
        x = rng.normal(size=(7, 5))
        assert gradient_check(net, x, rng=rng) < GRAD_TOL

    def test_latent_injection(self, make_net, rng):
        net = make_net("inject")
        x, z = rng.normal(size=(6, 5)), rng.uniform(-1, 1, size=(6, 4))
        assert gradient_check(net, x, z, rng=rng) < GRAD_TOL

    def test_infer_mode_backward(self, make_net, rng):
        net = make_net("bn_free")
        net.forward(rng.normal(size=(16, 5)))
        net.set_mode(INFER)
        assert gradient_check(net, rng.normal(size=(4, 5)), rng=rng) < GRAD_TOL

    def test_discriminator_preset(self, rng):
        net = build_preset("mnist_D_bigan", latent_dim=3, data_dim=9, hidden=8)
        init_params(net, rng, std=0.5)
        x, z = rng.uniform(-1, 1, size=(5, 9)), rng.uniform(-1, 1, size=(5, 3))
        assert gradient_check(net, x, z, rng=rng) < GRAD_TOL

    def test_numeric_gradient_of_a_quadratic(self):
        theta = np.array([1.0, -2.0, 3.0])
        grad = numeric_gradient(lambda: float(np.sum(theta ** 2)), theta)
        np.testing.assert_allclose(grad, 2 * theta, rtol=1e-8)


class TestBatchNorm:
    def test_train_mode_standardizes(self, rng):
        bn = BatchNorm(4)
        x = rng.normal(loc=30.0, scale=100.0, size=(256, 4))
        out, _ = bn.forward(x, None, train=True)
        np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-10)
        np.testing.assert_allclose(out.var(axis=0), 1.0, atol=1e-6)

    def test_running_statistics_update(self, rng):
        bn = BatchNorm(3, momentum=0.9)
        x = rng.normal(size=(32, 3))
        bn.forward(x, None, train=True)
        np.testing.assert_allclose(bn.running_mean, 0.1 * x.mean(axis=0))
        np.testing.assert_allclose(bn.running_var, 0.9 + 0.1 * x.var(axis=0))

    def test_infer_mode_uses_running_statistics(self):
        bn = BatchNorm(2)
        x = np.array([[2.0, -4.0]])
        out, _ = bn.forward(x, None, train=False)
        np.testing.assert_allclose(out, x / np.sqrt(1.0 + bn.eps))

    def test_single_row_batch_in_train_mode(self):
        with pytest.raises(BatchNormError):
            BatchNorm(2).forward(np.ones((1, 2)), None, train=True)


class TestNetworkContracts:
    def test_infer_is_row_wise(self, make_net, rng):
        net = make_net("bn_free")
        net.forward(rng.normal(size=(32, 5)))
        net.set_mode(INFER)
        x = rng.normal(size=(10, 5))
        perm = rng.permutation(10)
        full, _ = net.forward(x)
        shuffled, _ = net.forward(x[perm])
        np.testing.assert_allclose(shuffled, full[perm], rtol=1e-12, atol=1e-15)

    def test_train_mode_permutation_equivariance(self):
        # dyadic values keep every sum exact, so reordering rows is bit-identical
        net = DenseNet([Linear(2, 2)], in_dim=2)
        net.layers[0].params["W"] = np.array([[0.5, -0.25], [1.0, 0.75]])
        net.layers[0].params["b"] = np.array([0.125, -0.5])
        x = np.array([[1.0, 2.0], [-0.5, 0.25], [3.0, -1.5]])
        perm = np.array([2, 0, 1])
        np.testing.assert_array_equal(net.forward(x[perm])[0], net.forward(x)[0][perm])

    def test_infer_is_batch_size_invariant(self, make_net, rng):
        net = make_net("bn_free")
        net.forward(rng.normal(size=(32, 5)))
        net.set_mode(INFER)
        a, b = rng.normal(size=(7, 5)), rng.normal(size=(12, 5))
        joint, _ = net.forward(np.concatenate([a, b]))
        split = np.concatenate([net.forward(a)[0], net.forward(b)[0]])
        np.testing.assert_allclose(joint, split, rtol=1e-12, atol=1e-15)

    def test_coordinate_permutation_equivariance(self, make_net, rng):
        # small dyadic values keep the first matmul exact under any summation order
        net = make_net("bn_free")
        first = net.layers[0]
        first.params["W"] = rng.integers(-8, 9, size=first.params["W"].shape) / 8.0
        x = rng.integers(-8, 9, size=(6, 5)) / 4.0
        perm = rng.permutation(5)

        out, _ = net.forward(x)
        first.params["W"] = first.params["W"][perm]
        permuted, _ = net.forward(x[:, perm])
        np.testing.assert_array_equal(permuted, out)

    def test_zero_injection_matches_the_plain_network(self, make_net, rng):
        net = make_net("inject")
        inject = next(layer for layer in net.layers if isinstance(layer, LatentInject))
        inject.params["W"] = np.zeros_like(inject.params["W"])
        plain = DenseNet([layer for layer in net.layers if layer is not inject], in_dim=5)
        net.set_mode(INFER)
        plain.set_mode(INFER)
        x, z = rng.normal(size=(6, 5)), rng.normal(size=(6, 4))
        np.testing.assert_array_equal(net.forward(x, z)[0], plain.forward(x)[0])

    def test_latent_is_required_by_injecting_nets(self, make_net, rng):
        with pytest.raises(LatentContractError):
            make_net("inject").forward(rng.normal(size=(3, 5)))

    def test_latent_is_refused_by_plain_nets(self, make_net, rng):
        with pytest.raises(LatentContractError):
            make_net("leaky").forward(rng.normal(size=(3, 5)), rng.normal(size=(3, 4)))

    def test_wrong_input_width(self, make_net, rng):
        with pytest.raises(NetShapeError):
            make_net("leaky").forward(rng.normal(size=(3, 6)))

    def test_non_finite_activation_names_the_layer(self, make_net):
        x = np.ones((2, 5))
        x[0, 0] = np.nan
        with pytest.raises(NonFiniteError) as err:
            make_net("leaky").forward(x)
        assert err.value.layer_index == 0

    def test_foreign_tape(self, make_net, rng):
        a, b = make_net("leaky"), make_net("leaky")
        out, tape = a.forward(rng.normal(size=(3, 5)))
        with pytest.raises(TapeMismatchError):
            b.backward(tape, np.ones_like(out))


class TestPresets:
    def test_mnist_shapes(self, rng):
        for name, in_dim, out_dim in [("mnist_G", 50, 784), ("mnist_E", 784, 50), ("mnist_D_gan", 784, 1)]:
            net = init_params(build_preset(name, hidden=32), rng)
            out, _ = net.forward(rng.uniform(-1, 1, size=(4, in_dim)))
            assert out.shape == (4, out_dim)

    def test_generator_output_is_bounded(self, rng):
        net = init_params(build_preset("mnist_G", latent_dim=5, data_dim=16, hidden=8), rng, std=3.0)
        out, _ = net.forward(rng.uniform(-1, 1, size=(8, 5)))
        assert np.all(np.abs(out) <= 1.0)

    def test_discriminator_feature_layer(self, rng):
        net = init_params(build_preset("mnist_D_gan", data_dim=16, hidden=10), rng)
        feats, _ = net.forward(rng.uniform(-1, 1, size=(6, 16)), until=net.feature_layer)
        assert feats.shape == (6, 10)
        assert net.describe()[net.feature_layer - 1].startswith("leaky_relu")

    def test_bigan_discriminator_injects_twice(self):
        net = build_preset("mnist_D_bigan", latent_dim=50, hidden=16)
        assert net.needs_latent
        assert sum(d.startswith("latent_inject") for d in net.describe()) == 2

    def test_generator_parameter_count(self):
        net = build_preset("mnist_G", latent_dim=50, data_dim=784, hidden=1024)
        assert net.param_count() == 50 * 1024 + 1024 + 1024 * 1024 + 1024 + 1024 * 784 + 784

    def test_unknown_preset(self):
        with pytest.raises(PresetError):
            build_preset("mnist_X")

    def test_initialization(self, rng):
        net = init_params(build_preset("mnist_E", hidden=256), rng)
        first = net.layers[0]
        assert np.all(first.params["b"] == 0.0)
        assert abs(first.params["W"].std() - 0.02) < 1e-3
        bn = next(layer for layer in net.layers if isinstance(layer, BatchNorm))
        np.testing.assert_array_equal(bn.running_mean, 0.0)
        np.testing.assert_array_equal(bn.running_var, 1.0)
