import numpy as np
import pytest

import modules.eval_model as eval_model
import modules.train_model as train_model
from modules.data_tools import Dataset
from modules.loss_tools import LossValue, discriminator_loss, ge_inverse_loss
from modules.train_model import (
    AdamState,
    TrainConfig,
    adam_step,
    downsample_gx,
    fold_weight_decay,
    lr_at,
    new_train_state,
    run_training,
    train_baseline,
    train_bigan,
)
from modules.lab_assets import DivergenceError, NetShapeError, NonFiniteError, TrainConfigError
from modules.net_core import build_preset


def _params_copy(net):
    return [{k: v.copy() for k, v in layer.params.items()} for layer in net.layers]


def _assert_same_params(a, b):
    for la, lb in zip(a, b):
        for key in la:
            np.testing.assert_array_equal(la[key], lb[key])


class TestSchedule:
    def test_reference_points(self):
        config = TrainConfig()
        assert lr_at(0, 400, config) == 2e-4
        assert lr_at(399, 400, config) == pytest.approx(2e-6, abs=1e-12)
        assert lr_at(299, 400, config) == pytest.approx(2e-5, rel=1e-12)

    def test_shape(self):
        config = TrainConfig()
        rates = [lr_at(e, 400, config) for e in range(400)]
        assert all(r == 2e-4 for r in rates[:200])
        assert all(b <= a for a, b in zip(rates, rates[1:]))
        # continuous at the handoff within one geometric step
        step = (config.alpha_final / config.alpha0) ** (1 / 200)
        assert rates[200] == pytest.approx(2e-4 * step)


class TestAdam:
    def _scalar(self, theta):
        params = [{"w": np.array([theta])}]
        state = AdamState("toy", [{"w": np.zeros(1)}], [{"w": np.zeros(1)}])
        return params, state

    def test_first_step_is_a_sign_step(self):
        params, state = self._scalar(1.0)
        adam_step(params, [{"w": np.array([3.0])}], state, 0.01, TrainConfig())
        assert params[0]["w"][0] == pytest.approx(1.0 - 0.01, rel=1e-8)
        assert state.t == 1

    def test_zero_gradient_leaves_parameters(self):
        params, state = self._scalar(0.7)
        adam_step(params, [{"w": np.zeros(1)}], state, 0.1, TrainConfig())
        assert params[0]["w"][0] == 0.7

    def test_quadratic_descent(self):
        params, state = self._scalar(1.0)
        config = TrainConfig()
        for _ in range(100):
            adam_step(params, [{"w": 2.0 * params[0]["w"]}], state, 0.1, config)
        assert abs(params[0]["w"][0]) < 0.05

    def test_shape_mismatch(self):
        params, state = self._scalar(1.0)
        with pytest.raises(NetShapeError):
            adam_step(params, [{"w": np.zeros(2)}], state, 0.1, TrainConfig())


class TestWeightDecay:
    def test_only_multiplicative_weights_decay(self, rng):
        net = build_preset("mnist_D_bigan", latent_dim=2, data_dim=4, hidden=5)
        for layer in net.layers:
            for key in layer.params:
                layer.params[key] = rng.normal(size=layer.params[key].shape)
        zeros = [{k: np.zeros_like(v) for k, v in layer.params.items()} for layer in net.layers]
        folded = fold_weight_decay(net, zeros, 0.5)
        for layer, grads in zip(net.layers, folded):
            for key, g in grads.items():
                if key == "W":
                    np.testing.assert_allclose(g, 0.5 * layer.params[key])
                else:
                    np.testing.assert_array_equal(g, 0.0)


class TestDownsample:
    def test_two_by_two(self):
        np.testing.assert_allclose(downsample_gx(np.array([[1.0, 2.0, 3.0, 4.0]]), 2), [[2.5]])

    def test_constant_image(self):
        out = downsample_gx(np.full((2, 16), 0.3), 2)
        assert out.shape == (2, 4)
        np.testing.assert_allclose(out, 0.3)

    def test_mass_is_preserved(self, rng):
        x = rng.uniform(-1, 1, size=(3, 784))
        out = downsample_gx(x, 2)
        assert out.shape == (3, 196)
        np.testing.assert_allclose(out.sum(axis=1) * 4, x.sum(axis=1))

    def test_indivisible(self):
        with pytest.raises(NetShapeError):
            downsample_gx(np.zeros((1, 25)), 2)


class TestConfig:
    @pytest.mark.parametrize("overrides", [
        {"alpha_final": 1e-3},
        {"batch_size": 1},
        {"epochs": 0},
        {"model_kind": "vae"},
        {"gx_factor": 2, "model_kind": "gan"},
    ])
    def test_invalid(self, overrides):
        with pytest.raises(TrainConfigError):
            TrainConfig(**overrides)


class TestBiganTraining:
    def test_bookkeeping(self, toy_dataset, tiny_config):
        config = TrainConfig(**{**tiny_config.to_dict(), "batch_size": 128})
        state = run_training(config, toy_dataset)
        assert state.iteration == 2
        assert len(state.report.records) == 1
        assert np.isfinite(state.report.initial_recon_error)

    def test_same_seed_same_run(self, toy_dataset, tiny_config):
        a, report_a = train_bigan(tiny_config, toy_dataset)
        b, report_b = train_bigan(tiny_config, toy_dataset)
        for name in a.nets:
            _assert_same_params(_params_copy(a.nets[name]), _params_copy(b.nets[name]))
        for ra, rb in zip(report_a.records, report_b.records):
            assert (ra.d_loss, ra.ge_loss, ra.value, ra.recon_error) == (rb.d_loss, rb.ge_loss, rb.value, rb.recon_error)

    def test_updates_use_pre_update_parameters(self, toy_dataset, tiny_config, monkeypatch):
        config = TrainConfig(**{**tiny_config.to_dict(), "batch_size": toy_dataset.n})
        recorded = {}

        def recording_step(params, grads, state, lr, cfg):
            recorded[state.name] = [{k: g.copy() for k, g in layer.items()} for layer in grads]
            return params, state

        monkeypatch.setattr(train_model, "adam_step", recording_step)
        fresh = new_train_state(config, toy_dataset.d)
        run_training(config, toy_dataset, fresh, until_epoch=1)

        # replay the iteration by hand against the untouched initial networks
        ref = new_train_state(config, toy_dataset.d)
        E, G, D = ref.bundle.nets["E"], ref.bundle.nets["G"], ref.bundle.nets["D"]
        rows = ref.streams.data.permutation(toy_dataset.n)
        x = toy_dataset.features[rows]
        z = train_model.sample_latent(ref.bundle.latent_spec, x.shape[0], ref.streams.latent)
        z_enc, tape_e = E.forward(x)
        x_gen, tape_g = G.forward(z)
        enc = train_model.PairBatch(x, z_enc, train_model.ENCODER_PAIR)
        gen = train_model.PairBatch(x_gen, z, train_model.GENERATOR_PAIR)
        d_grads = fold_weight_decay(D, discriminator_loss(enc, gen, D).grads["D"], config.weight_decay)
        ge = ge_inverse_loss(enc, gen, D)
        e_grads = fold_weight_decay(E, E.backward(tape_e, ge.grads["z_enc"]).param_grads, config.weight_decay)

        for expected, got in [(d_grads, recorded["D"]), (e_grads, recorded["E"])]:
            for le, lg in zip(expected, got):
                for key in le:
                    np.testing.assert_allclose(lg[key], le[key], rtol=1e-9, atol=1e-14)

    def test_divergence_reports_the_iteration(self, toy_dataset, tiny_config, monkeypatch):
        def broken(*args, **kwargs):
            loss = discriminator_loss(*args, **kwargs)
            return LossValue(float("nan"), loss.grads)

        monkeypatch.setattr(train_model, "discriminator_loss", broken)
        with pytest.raises(DivergenceError) as err:
            train_bigan(tiny_config, toy_dataset)
        assert err.value.iteration == 0

    def test_non_finite_reconstruction_counts_as_divergence(self, toy_dataset, tiny_config, monkeypatch):
        calls = []

        def failing_after_start(bundle, dataset):
            calls.append(dataset.n)
            if len(calls) > 1:
                raise NonFiniteError(3, "G: non-finite output at layer 3.")
            return 1.0

        monkeypatch.setattr(eval_model, "reconstruction_error", failing_after_start)
        with pytest.raises(DivergenceError) as err:
            train_bigan(tiny_config, toy_dataset)
        assert err.value.iteration == toy_dataset.n // tiny_config.batch_size

    def test_infinite_reconstruction_at_start(self, toy_dataset, tiny_config, monkeypatch):
        monkeypatch.setattr(eval_model, "reconstruction_error", lambda bundle, dataset: float("inf"))
        with pytest.raises(DivergenceError) as err:
            run_training(tiny_config, toy_dataset)
        assert err.value.iteration == 0

    def test_resume_equals_uninterrupted(self, toy_dataset, tiny_config):
        config = TrainConfig(**{**tiny_config.to_dict(), "epochs": 2})
        whole = run_training(config, toy_dataset)
        split = run_training(config, toy_dataset, until_epoch=1)
        assert split.epoch == 1
        split = run_training(config, toy_dataset, split)
        for name in whole.bundle.nets:
            _assert_same_params(_params_copy(whole.bundle.nets[name]), _params_copy(split.bundle.nets[name]))

    def test_generalized_resolution_split(self, toy_dataset, tiny_config):
        config = TrainConfig(**{**tiny_config.to_dict(), "gx_factor": 2})
        bundle, report = train_bigan(config, toy_dataset)
        assert bundle.nets["E"].in_dim == 16
        assert bundle.nets["G"].out_dim == 4
        assert bundle.nets["D"].in_dim == 4
        assert np.isfinite(report.records[-1].recon_error)

    def test_identity_gx_matches_plain_training(self, toy_dataset, tiny_config):
        explicit = TrainConfig(**{**tiny_config.to_dict(), "gx_factor": 1})
        a, _ = train_bigan(tiny_config, toy_dataset)
        b, _ = train_bigan(explicit, toy_dataset)
        for name in a.nets:
            _assert_same_params(_params_copy(a.nets[name]), _params_copy(b.nets[name]))


class TestBaselines:
    def test_latent_regressor_freezes_the_encoder_in_phase_one(self, toy_dataset, tiny_config):
        config = TrainConfig(**{**tiny_config.to_dict(), "model_kind": "lr"})
        state = new_train_state(config, toy_dataset.d)
        initial = _params_copy(state.bundle.nets["E"])
        state = run_training(config, toy_dataset, state, until_epoch=config.epochs)
        _assert_same_params(initial, _params_copy(state.bundle.nets["E"]))

        frozen_g = _params_copy(state.bundle.nets["G"])
        state = run_training(config, toy_dataset, state)
        _assert_same_params(frozen_g, _params_copy(state.bundle.nets["G"]))
        assert len(state.report.records) == 2 * config.epochs
        assert np.isnan(state.report.records[-1].d_loss)

    def test_gan_has_no_encoder(self, toy_dataset, tiny_config):
        bundle, report = train_baseline(TrainConfig(**{**tiny_config.to_dict(), "model_kind": "gan"}), toy_dataset)
        assert set(bundle.nets) == {"G", "D"}
        assert np.isnan(report.records[0].recon_error)

    def test_joint_regressor_trains_everything(self, toy_dataset, tiny_config):
        config = TrainConfig(**{**tiny_config.to_dict(), "model_kind": "jlr"})
        state = new_train_state(config, toy_dataset.d)
        before = {n: _params_copy(net) for n, net in state.bundle.nets.items()}
        state = run_training(config, toy_dataset, state)
        for name, net in state.bundle.nets.items():
            assert any(not np.array_equal(b[k], a[k])
                       for b, a in zip(before[name], _params_copy(net)) for k in b), name

    @pytest.mark.parametrize("kind", ["ae_l1", "ae_l2"])
    def test_autoencoders_reduce_reconstruction_error(self, kind):
        gen = np.random.default_rng(5)
        data = Dataset(np.tanh(gen.normal(size=(512, 2)) @ gen.normal(size=(2, 9))), None, "low-rank")
        config = TrainConfig(model_kind=kind, epochs=60, batch_size=64, hidden_units=32, latent_dim=4,
                             alpha0=2e-3, alpha_final=2e-4, recon_probe=512)
        _, report = train_baseline(config, data)
        assert report.records[-1].recon_error < 0.5 * report.initial_recon_error

    def test_rejects_bigan(self, toy_dataset, tiny_config):
        with pytest.raises(TrainConfigError):
            train_baseline(tiny_config, toy_dataset)
