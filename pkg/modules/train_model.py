import math
import time
import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Callable, Dict, Iterator, List, Optional, Tuple

import numpy as np

from modules.data_tools import Dataset, LabStreams, LatentSpec, make_streams, sample_latent
from modules.net_core import INFER, TRAIN, DenseNet, ParamGrads, Tensor, build_preset, init_params
from modules.loss_tools import (
    ENCODER_PAIR,
    GENERATOR_PAIR,
    PairBatch,
    autoencoder_loss,
    bigan_value,
    discriminate,
    discriminator_loss,
    gan_losses,
    ge_inverse_loss,
    latent_regressor_loss,
)
from modules.lab_assets import (
    MODEL_KINDS,
    DivergenceError,
    NetShapeError,
    NonFiniteError,
    TrainConfigError,
)

"""
TRAIN MODEL MODULE
------------------
Responsibility: Optimization and training loops.
Adam with coupled weight decay, the halfway-exponential step-size schedule,
and the simultaneous-update trainers for BiGAN (plain and generalized) and
every baseline (GAN discriminator, latent regressor, joint latent regressor,
l1/l2 autoencoders). Training state is explicit so runs can be resumed.
"""

logger = logging.getLogger(__name__)

NET_ORDER = ("G", "E", "D", "decoder")


# 1. CONFIGURATION
@dataclass
class TrainConfig:
    alpha0: float = 2e-4
    alpha_final: float = 2e-6
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 2.5e-5
    batch_size: int = 128
    epochs: int = 400
    seed: int = 0
    model_kind: str = "bigan"
    latent_dim: int = 50
    snapshot_every: int = 25
    hidden_units: int = 1024
    gx_factor: int = 1
    recon_probe: int = 1000

    def __post_init__(self):
        if not 0 < self.alpha_final <= self.alpha0:
            raise TrainConfigError("Require 0 < alpha_final <= alpha0.")
        if self.batch_size < 2:
            raise TrainConfigError("batch_size must be >= 2 (batch normalization).")
        if self.epochs < 1:
            raise TrainConfigError("epochs must be >= 1.")
        if self.model_kind not in MODEL_KINDS:
            raise TrainConfigError(f"model_kind must be one of {', '.join(MODEL_KINDS)}.")
        if self.latent_dim < 1 or self.hidden_units < 1:
            raise TrainConfigError("latent_dim and hidden_units must be positive.")
        if self.gx_factor < 1:
            raise TrainConfigError("gx_factor must be >= 1.")
        if self.gx_factor > 1 and self.model_kind != "bigan":
            raise TrainConfigError("gx_factor > 1 (generalized BiGAN) applies to model_kind=bigan only.")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in known})


# 2. OPTIMIZER
@dataclass
class AdamState:
    name: str
    m: List[Dict[str, np.ndarray]]
    v: List[Dict[str, np.ndarray]]
    t: int = 0


def new_adam_state(net: DenseNet, name: str) -> AdamState:
    m = [{k: np.zeros_like(p) for k, p in layer.items()} for layer in net.params]
    v = [{k: np.zeros_like(p) for k, p in layer.items()} for layer in net.params]
    return AdamState(name=name, m=m, v=v, t=0)


def fold_weight_decay(net: DenseNet, grads: ParamGrads, decay: float) -> ParamGrads:
    """Adds decay * W to the grads of multiplicative weights only."""
    folded = []
    for layer, layer_grads in zip(net.layers, grads):
        folded.append({
            k: g + decay * layer.params[k] if k in layer.decayed else g
            for k, g in layer_grads.items()
        })
    return folded


def adam_step(params: List[Dict[str, np.ndarray]], grads: ParamGrads, state: AdamState,
              lr: float, config: TrainConfig) -> Tuple[List[Dict[str, np.ndarray]], AdamState]:
    """
    Bias-corrected Adam update applied in place to ``params``.
    Weight decay must already be folded into ``grads``.
    """
    state.t += 1
    b1, b2, eps = config.beta1, config.beta2, config.adam_eps
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p_layer, g_layer, m_layer, v_layer in zip(params, grads, state.m, state.v):
        for key, g in g_layer.items():
            if g.shape != p_layer[key].shape:
                raise NetShapeError(f"{state.name}: gradient shape {g.shape} != parameter shape {p_layer[key].shape}.")
            m_layer[key] = b1 * m_layer[key] + (1.0 - b1) * g
            v_layer[key] = b2 * v_layer[key] + (1.0 - b2) * g * g
            p_layer[key] = p_layer[key] - lr * (m_layer[key] / c1) / (np.sqrt(v_layer[key] / c2) + eps)
    return params, state


def lr_at(epoch: int, total_epochs: int, config: TrainConfig) -> float:
    """Constant for the first half, then geometric decay reaching alpha_final at the last epoch."""
    half = total_epochs / 2.0
    if epoch < half:
        return config.alpha0
    ratio = config.alpha_final / config.alpha0
    return config.alpha0 * ratio ** ((epoch - half + 1.0) / half)


# 3. GENERALIZED BIGAN
def downsample_gx(x: Tensor, factor: int) -> Tensor:
    """Non-overlapping k x k mean pooling of flattened square images."""
    x = np.asarray(x, dtype=np.float64)
    batch, dim = x.shape
    side = math.isqrt(dim)
    if side * side != dim or side % factor != 0:
        raise NetShapeError(f"Cannot pool {dim}-dim vectors (side {side}) by factor {factor}.")
    small = side // factor
    return x.reshape(batch, small, factor, small, factor).mean(axis=(2, 4)).reshape(batch, small * small)


def make_gx(factor: int) -> Callable[[Tensor], Tensor]:
    if factor == 1:
        return lambda x: x
    return lambda x: downsample_gx(x, factor)


# 4. MODEL BUNDLE & REPORT
@dataclass
class ModelBundle:
    """Trained networks of one run, keyed G / E / D / decoder."""
    kind: str
    nets: Dict[str, DenseNet]
    config: TrainConfig

    @property
    def encoder(self) -> Optional[DenseNet]:
        return self.nets.get("E")

    @property
    def generator(self) -> Optional[DenseNet]:
        return self.nets.get("decoder") if self.kind.startswith("ae") else self.nets.get("G")

    @property
    def discriminator(self) -> Optional[DenseNet]:
        return self.nets.get("D")

    @property
    def latent_spec(self) -> LatentSpec:
        return LatentSpec(dim=self.config.latent_dim)

    def gx(self) -> Callable[[Tensor], Tensor]:
        return make_gx(self.config.gx_factor)

    def set_mode(self, mode: str) -> "ModelBundle":
        for net in self.nets.values():
            net.set_mode(mode)
        return self


BiGanModel = ModelBundle


@dataclass
class EpochRecord:
    epoch: int
    d_loss: float
    ge_loss: float
    value: float
    recon_error: float
    seconds: float
    lr: float = float("nan")


@dataclass
class TrainReport:
    records: List[EpochRecord] = field(default_factory=list)
    initial_recon_error: float = float("nan")

    def rows(self) -> List[Dict[str, float]]:
        return [asdict(r) for r in self.records]


@dataclass
class TrainState:
    bundle: ModelBundle
    optim: Dict[str, AdamState]
    streams: LabStreams
    epoch: int = 0
    iteration: int = 0
    report: TrainReport = field(default_factory=TrainReport)


def total_epochs(config: TrainConfig) -> int:
    """The latent regressor runs a GAN phase and a regression phase of equal length."""
    return 2 * config.epochs if config.model_kind == "lr" else config.epochs


def build_bundle(config: TrainConfig, data_dim: int, streams: LabStreams) -> ModelBundle:
    """Builds and initializes the networks the model kind needs."""
    latent, hidden, kind = config.latent_dim, config.hidden_units, config.model_kind
    model_dim = data_dim // (config.gx_factor ** 2)
    if config.gx_factor > 1:
        downsample_gx(np.zeros((1, data_dim)), config.gx_factor)

    nets: Dict[str, DenseNet] = {}
    if kind.startswith("ae"):
        nets["E"] = build_preset("mnist_E", latent, data_dim, hidden)
        nets["decoder"] = build_preset("mnist_AE", latent, data_dim, hidden)
    else:
        nets["G"] = build_preset("mnist_G", latent, model_dim, hidden)
        if kind in ("bigan", "lr", "jlr"):
            nets["E"] = build_preset("mnist_E", latent, data_dim, hidden)
        nets["D"] = build_preset("mnist_D_bigan" if kind == "bigan" else "mnist_D_gan", latent, model_dim, hidden)

    for name in NET_ORDER:
        if name in nets:
            init_params(nets[name], streams.init)
    return ModelBundle(kind=kind, nets=nets, config=config)


def new_train_state(config: TrainConfig, data_dim: int, streams: Optional[LabStreams] = None) -> TrainState:
    streams = streams or make_streams(config.seed)
    bundle = build_bundle(config, data_dim, streams)
    optim = {name: new_adam_state(net, name) for name, net in bundle.nets.items()}
    return TrainState(bundle=bundle, optim=optim, streams=streams)


# 5. ITERATION HELPERS
def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    order = rng.permutation(n)
    if n < batch_size:
        yield order
        return
    for i in range(n // batch_size):
        yield order[i * batch_size:(i + 1) * batch_size]


def iterations_per_epoch(n: int, batch_size: int) -> int:
    return max(1, n // batch_size)


def _apply_updates(state: TrainState, updates: List[Tuple[str, ParamGrads]], lr: float) -> None:
    """
    Applies every update of an iteration. All gradients are computed before
    this is called, so each is a function of the pre-update parameters.
    """
    config = state.bundle.config
    for name, grads in updates:
        net = state.bundle.nets[name]
        net.zero_grads()
        net.accumulate_grads(grads)
        folded = fold_weight_decay(net, net.grads, config.weight_decay)
        adam_step(net.params, folded, state.optim[name], lr, config)


def _require_finite(iteration: int, **values: float) -> None:
    for name, value in values.items():
        if not np.isfinite(value):
            raise DivergenceError(iteration, f"Non-finite {name} at iteration {iteration}.")


def _bigan_step(state: TrainState, x: Tensor, lr: float) -> Dict[str, float]:
    bundle = state.bundle
    E, G, D = bundle.nets["E"], bundle.nets["G"], bundle.nets["D"]
    z = sample_latent(bundle.latent_spec, x.shape[0], state.streams.latent)

    z_enc, tape_e = E.forward(x)
    x_gen, tape_g = G.forward(z)
    enc = PairBatch(bundle.gx()(x), z_enc, ENCODER_PAIR)
    gen = PairBatch(x_gen, z, GENERATOR_PAIR)

    d_pass = discriminate(D, enc, gen)
    d_loss = discriminator_loss(enc, gen, D, d_pass)
    ge_loss = ge_inverse_loss(enc, gen, D, d_pass)
    value = bigan_value(d_pass.enc_logits, d_pass.gen_logits)
    _require_finite(state.iteration, d_loss=d_loss.value, ge_loss=ge_loss.value)

    e_grads = E.backward(tape_e, ge_loss.grads["z_enc"]).param_grads
    g_grads = G.backward(tape_g, ge_loss.grads["x_gen"]).param_grads
    _apply_updates(state, [("D", d_loss.grads["D"]), ("G", g_grads), ("E", e_grads)], lr)
    return {"d_loss": d_loss.value, "ge_loss": ge_loss.value, "value": value}


def _gan_step(state: TrainState, x: Tensor, lr: float, joint_regressor: bool) -> Dict[str, float]:
    bundle = state.bundle
    G, D = bundle.nets["G"], bundle.nets["D"]
    z = sample_latent(bundle.latent_spec, x.shape[0], state.streams.latent)

    x_gen, tape_g = G.forward(z)
    d_loss, g_loss = gan_losses(x, x_gen, D)
    value = bigan_value(d_loss.grads["logits_real"], d_loss.grads["logits_gen"])
    x_gen_grad = g_loss.grads["x_gen"]
    ge_value = g_loss.value

    updates: List[Tuple[str, ParamGrads]] = [("D", d_loss.grads["D"])]
    if joint_regressor:
        E = bundle.nets["E"]
        e_logits, tape_e = E.forward(x_gen)
        reg = latent_regressor_loss(e_logits, z)
        e_back = E.backward(tape_e, reg.grads["logits"])
        # G/E minimize g_loss + 1.0 * regressor loss
        x_gen_grad = x_gen_grad + e_back.input_grad
        ge_value += reg.value
        updates.append(("E", e_back.param_grads))
    _require_finite(state.iteration, d_loss=d_loss.value, ge_loss=ge_value)

    g_grads = G.backward(tape_g, x_gen_grad).param_grads
    updates.insert(1, ("G", g_grads))
    _apply_updates(state, updates, lr)
    return {"d_loss": d_loss.value, "ge_loss": ge_value, "value": value}


def _regressor_step(state: TrainState, batch: int, lr: float) -> Dict[str, float]:
    """Latent-regressor phase: E learns z from G(z) with G frozen."""
    bundle = state.bundle
    G, E = bundle.nets["G"], bundle.nets["E"]
    z = sample_latent(bundle.latent_spec, batch, state.streams.latent)
    x_gen, _ = G.forward(z)
    e_logits, tape_e = E.forward(x_gen)
    reg = latent_regressor_loss(e_logits, z)
    _require_finite(state.iteration, ge_loss=reg.value)
    _apply_updates(state, [("E", E.backward(tape_e, reg.grads["logits"]).param_grads)], lr)
    return {"d_loss": float("nan"), "ge_loss": reg.value, "value": float("nan")}


def _autoencoder_step(state: TrainState, x: Tensor, lr: float) -> Dict[str, float]:
    bundle = state.bundle
    E, dec = bundle.nets["E"], bundle.nets["decoder"]
    code, tape_e = E.forward(x)
    x_hat, tape_dec = dec.forward(code)
    loss = autoencoder_loss(x, x_hat, "l1" if bundle.kind == "ae_l1" else "l2")
    _require_finite(state.iteration, ge_loss=loss.value)
    dec_back = dec.backward(tape_dec, loss.grads["x_hat"])
    e_back = E.backward(tape_e, dec_back.input_grad)
    _apply_updates(state, [("decoder", dec_back.param_grads), ("E", e_back.param_grads)], lr)
    return {"d_loss": float("nan"), "ge_loss": loss.value, "value": float("nan")}


def _probe_recon(bundle: ModelBundle, dataset: Dataset, iteration: int = 0) -> float:
    """Reconstruction error on the first rows; a non-finite pass counts as divergence."""
    if bundle.encoder is None or bundle.generator is None:
        return float("nan")
    # LAZY IMPORT
    from modules.eval_model import reconstruction_error
    probe = dataset.features[:bundle.config.recon_probe]
    try:
        error = reconstruction_error(bundle, Dataset(probe, None, "probe", dataset.bounded))
    except NonFiniteError as e:
        raise DivergenceError(iteration, f"Reconstruction probe diverged at iteration {iteration}: {e}") from e
    _require_finite(iteration, recon_error=error)
    return error


# 6. TRAINING LOOPS
def run_training(config: TrainConfig, dataset: Dataset, state: Optional[TrainState] = None,
                 until_epoch: Optional[int] = None,
                 on_epoch_end: Optional[Callable[[TrainState], None]] = None) -> TrainState:
    """
    Trains (or resumes) one model. Each epoch is one shuffled pass over the
    data; the step size is set per epoch by ``lr_at``.

    Args:
        config: hyperparameters; ``model_kind`` selects the trainer.
        dataset: preprocessed training data.
        state: a state to resume from (fresh state when None).
        until_epoch: stop once this many epochs are complete.
        on_epoch_end: callback after every completed epoch (snapshots).

    Raises:
        DivergenceError: any non-finite loss or activation.
    """
    if state is None:
        state = new_train_state(config, dataset.d)
        state.report.initial_recon_error = _probe_recon(state.bundle, dataset)
    bundle = state.bundle
    kind = config.model_kind
    total = total_epochs(config)
    stop = total if until_epoch is None else min(until_epoch, total)
    per_epoch = iterations_per_epoch(dataset.n, config.batch_size)

    bundle.set_mode(TRAIN)
    while state.epoch < stop:
        started = time.perf_counter()
        regression_phase = kind == "lr" and state.epoch >= config.epochs
        phase_epoch = state.epoch - config.epochs if regression_phase else state.epoch
        lr = lr_at(phase_epoch, config.epochs, config)
        if regression_phase:
            bundle.nets["G"].set_mode(INFER)

        sums = {"d_loss": 0.0, "ge_loss": 0.0, "value": 0.0}
        count = 0
        try:
            if regression_phase:
                batch = min(config.batch_size, dataset.n)
                for _ in range(per_epoch):
                    metrics = _regressor_step(state, batch, lr)
                    state.iteration += 1
                    count += 1
                    for key in sums:
                        sums[key] += metrics[key]
            else:
                for rows in _epoch_batches(dataset.n, config.batch_size, state.streams.data):
                    x = dataset.features[rows]
                    if kind == "bigan":
                        metrics = _bigan_step(state, x, lr)
                    elif kind in ("gan", "lr", "jlr"):
                        metrics = _gan_step(state, x, lr, joint_regressor=kind == "jlr")
                    else:
                        metrics = _autoencoder_step(state, x, lr)
                    logger.debug("iteration %d: %s", state.iteration, metrics)
                    state.iteration += 1
                    count += 1
                    for key in sums:
                        sums[key] += metrics[key]
        except NonFiniteError as e:
            raise DivergenceError(state.iteration, f"Training diverged at iteration {state.iteration}: {e}") from e

        recon = _probe_recon(bundle, dataset, state.iteration)
        record = EpochRecord(
            epoch=state.epoch,
            d_loss=sums["d_loss"] / count,
            ge_loss=sums["ge_loss"] / count,
            value=sums["value"] / count,
            recon_error=recon,
            seconds=time.perf_counter() - started,
            lr=lr,
        )
        state.report.records.append(record)
        state.epoch += 1
        logger.info(
            "[%s] epoch %d/%d d_loss=%.4f ge_loss=%.4f value=%.4f recon=%.4f lr=%.2e (%.1fs)",
            kind, record.epoch + 1, total, record.d_loss, record.ge_loss, record.value,
            record.recon_error, lr, record.seconds,
        )
        if on_epoch_end:
            on_epoch_end(state)

    bundle.set_mode(INFER)
    return state


def train_bigan(config: TrainConfig, dataset: Dataset, rng: Optional[LabStreams] = None) -> Tuple[ModelBundle, TrainReport]:
    """Simultaneous-update BiGAN training (plain, or generalized when gx_factor > 1)."""
    if config.model_kind != "bigan":
        raise TrainConfigError("train_bigan requires model_kind=bigan.")
    state = None
    if rng is not None:
        state = new_train_state(config, dataset.d, rng)
        state.report.initial_recon_error = _probe_recon(state.bundle, dataset)
    state = run_training(config, dataset, state)
    return state.bundle, state.report


def train_baseline(config: TrainConfig, dataset: Dataset, rng: Optional[LabStreams] = None) -> Tuple[ModelBundle, TrainReport]:
    """GAN, latent regressor, joint latent regressor and autoencoder baselines."""
    if config.model_kind == "bigan":
        raise TrainConfigError("train_baseline covers gan, lr, jlr, ae_l1 and ae_l2.")
    state = None
    if rng is not None:
        state = new_train_state(config, dataset.d, rng)
        state.report.initial_recon_error = _probe_recon(state.bundle, dataset)
    state = run_training(config, dataset, state)
    return state.bundle, state.report
