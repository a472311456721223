import math

import numpy as np
import pytest

from modules.loss_tools import (
    ENCODER_PAIR,
    GENERATOR_PAIR,
    PairBatch,
    autoencoder_loss,
    bigan_value,
    discriminator_loss,
    gan_losses,
    ge_inverse_loss,
    latent_regressor_loss,
    sigmoid_ce,
)
from modules.net_core import build_preset, init_params, numeric_gradient, relative_error
from modules.lab_assets import LossTargetError

GRAD_TOL = 1e-4


def _max_rel(analytic, numeric):
    return float(relative_error(np.asarray(analytic), np.asarray(numeric)).max())


@pytest.fixture
def bigan_setup(rng):
    D = init_params(build_preset("mnist_D_bigan", latent_dim=3, data_dim=6, hidden=7), rng, std=0.5)
    enc = PairBatch(rng.uniform(-1, 1, size=(5, 6)), rng.normal(size=(5, 3)), ENCODER_PAIR)
    gen = PairBatch(rng.uniform(-1, 1, size=(5, 6)), rng.uniform(-1, 1, size=(5, 3)), GENERATOR_PAIR)
    return D, enc, gen


class TestSigmoidCrossEntropy:
    def test_zero_logit(self):
        assert sigmoid_ce(np.zeros((4, 1)), 1.0).value == pytest.approx(math.log(2.0))

    def test_stable_for_huge_logits(self):
        assert sigmoid_ce(np.array([[1000.0]]), 1.0).value == pytest.approx(0.0, abs=1e-300)
        assert sigmoid_ce(np.array([[1000.0]]), 0.0).value == pytest.approx(1000.0)
        assert np.isfinite(sigmoid_ce(np.array([[-1000.0]]), 1.0).value)

    def test_worked_example(self):
        loss = sigmoid_ce(np.array([1.0, -2.0]), np.array([1.0, 0.0]))
        expected = 0.5 * (math.log1p(math.exp(-1.0)) + math.log1p(math.exp(-2.0)))
        assert loss.value == pytest.approx(expected, rel=1e-12)
        assert loss.value == pytest.approx(0.220095, abs=1e-6)

    def test_gradient(self, rng):
        logits, targets = rng.normal(size=(6, 2)), rng.uniform(size=(6, 2))
        analytic = sigmoid_ce(logits, targets).grads["logits"]
        numeric = numeric_gradient(lambda: sigmoid_ce(logits, targets).value, logits)
        assert _max_rel(analytic, numeric) < GRAD_TOL

    def test_target_range(self):
        with pytest.raises(LossTargetError):
            sigmoid_ce(np.zeros(3), np.array([0.0, 1.2, 0.5]))


class TestBiganObjectives:
    def test_value_at_chance(self):
        assert bigan_value(np.zeros(8), np.zeros(8)) == pytest.approx(-math.log(4.0))

    def test_value_worked_example(self):
        assert bigan_value(np.array([1.0]), np.array([-1.0])) == pytest.approx(-0.626523, abs=1e-6)

    def test_discriminator_loss_is_half_the_negated_value(self, bigan_setup):
        D, enc, gen = bigan_setup
        enc_logits, _ = D.forward(enc.x, enc.z)
        gen_logits, _ = D.forward(gen.x, gen.z)
        expected = -0.5 * bigan_value(enc_logits, gen_logits)
        assert abs(discriminator_loss(enc, gen, D).value - expected) < 1e-12

    def test_symmetric_saddle_start(self, rng):
        D = init_params(build_preset("mnist_D_bigan", latent_dim=3, data_dim=6, hidden=7), rng, std=0.0)
        enc = PairBatch(rng.uniform(-1, 1, size=(4, 6)), rng.normal(size=(4, 3)), ENCODER_PAIR)
        gen = PairBatch(rng.uniform(-1, 1, size=(4, 6)), rng.uniform(-1, 1, size=(4, 3)), GENERATOR_PAIR)
        assert discriminator_loss(enc, gen, D).value == pytest.approx(math.log(2.0))
        assert ge_inverse_loss(enc, gen, D).value == pytest.approx(math.log(2.0))

    def test_inverse_loss_swaps_labels(self, bigan_setup):
        D, enc, gen = bigan_setup
        enc_logits, _ = D.forward(enc.x, enc.z)
        gen_logits, _ = D.forward(gen.x, gen.z)
        logits = np.concatenate([enc_logits, gen_logits])
        expected = sigmoid_ce(logits, np.concatenate([np.zeros_like(enc_logits), np.ones_like(gen_logits)])).value
        assert ge_inverse_loss(enc, gen, D).value == pytest.approx(expected, rel=1e-12)

    def test_discriminator_gradient(self, bigan_setup):
        D, enc, gen = bigan_setup
        grads = discriminator_loss(enc, gen, D).grads["D"]
        for layer, layer_grads in zip(D.layers, grads):
            for key, analytic in layer_grads.items():
                numeric = numeric_gradient(lambda: discriminator_loss(enc, gen, D).value, layer.params[key])
                assert _max_rel(analytic, numeric) < GRAD_TOL, key

    def test_inverse_gradient_on_encoder_and_generator_outputs(self, bigan_setup):
        D, enc, gen = bigan_setup
        grads = ge_inverse_loss(enc, gen, D).grads
        loss = lambda: ge_inverse_loss(enc, gen, D).value
        assert _max_rel(grads["z_enc"], numeric_gradient(loss, enc.z)) < GRAD_TOL
        assert _max_rel(grads["x_gen"], numeric_gradient(loss, gen.x)) < GRAD_TOL


class TestGanLosses:
    def test_gradients(self, rng):
        D = init_params(build_preset("mnist_D_gan", data_dim=6, hidden=7), rng, std=0.5)
        x_real, x_gen = rng.uniform(-1, 1, size=(5, 6)), rng.uniform(-1, 1, size=(5, 6))
        d_loss, g_loss = gan_losses(x_real, x_gen, D)

        numeric = numeric_gradient(lambda: gan_losses(x_real, x_gen, D)[1].value, x_gen)
        assert _max_rel(g_loss.grads["x_gen"], numeric) < GRAD_TOL

        head = D.layers[-1]
        numeric = numeric_gradient(lambda: gan_losses(x_real, x_gen, D)[0].value, head.params["W"])
        assert _max_rel(d_loss.grads["D"][-1]["W"], numeric) < GRAD_TOL


class TestBaselineLosses:
    def test_latent_regressor_rescales_targets(self, rng):
        z = rng.uniform(-1, 1, size=(4, 3))
        logits = rng.normal(size=(4, 3))
        np.testing.assert_allclose(latent_regressor_loss(logits, z).value,
                                   sigmoid_ce(logits, (z + 1) / 2).value)
        numeric = numeric_gradient(lambda: latent_regressor_loss(logits, z).value, logits)
        assert _max_rel(latent_regressor_loss(logits, z).grads["logits"], numeric) < GRAD_TOL

    def test_latent_regressor_worked_example(self):
        loss = latent_regressor_loss(np.array([[-3.0, 3.0]]), np.array([[-1.0, 1.0]]))
        assert loss.value == pytest.approx(0.048587, abs=1e-6)

    def test_l2_example(self):
        loss = autoencoder_loss(np.zeros((1, 2)), np.array([[0.5, -0.5]]), "l2")
        assert loss.value == pytest.approx(0.25)
        np.testing.assert_allclose(loss.grads["x_hat"], [[0.5, -0.5]])

    def test_l1_example(self):
        loss = autoencoder_loss(np.zeros((1, 2)), np.array([[0.5, -0.5]]), "l1")
        assert loss.value == pytest.approx(0.5)
        np.testing.assert_allclose(loss.grads["x_hat"], [[0.5, -0.5]])

    @pytest.mark.parametrize("norm", ["l1", "l2"])
    def test_gradients(self, rng, norm):
        x, x_hat = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        numeric = numeric_gradient(lambda: autoencoder_loss(x, x_hat, norm).value, x_hat)
        assert _max_rel(autoencoder_loss(x, x_hat, norm).grads["x_hat"], numeric) < GRAD_TOL
