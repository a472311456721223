import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy.special import expit, log_expit

from modules.net_core import DenseNet, ParamGrads, Tape, Tensor
from modules.lab_assets import LossTargetError

"""
LOSS TOOLS MODULE
-----------------
Responsibility: Scalar objectives and their output-gradients.
Covers the BiGAN value V, the discriminator loss, the label-swapped
("inverse") G/E loss, the plain GAN losses and the baseline losses
(latent regressor, autoencoders). Every loss uses mean reduction.
"""

logger = logging.getLogger(__name__)

ENCODER_PAIR = "encoder_pair"
GENERATOR_PAIR = "generator_pair"


# 1. DOMAIN TYPES
@dataclass
class PairBatch:
    """(x, E(x)) with x ~ p_X, or (G(z), z) with z ~ p_Z."""
    x: Tensor
    z: Tensor
    source: str

    def __post_init__(self):
        if self.source not in (ENCODER_PAIR, GENERATOR_PAIR):
            raise ValueError(f"Unknown pair source '{self.source}'.")
        if self.x.shape[0] != self.z.shape[0]:
            raise ValueError("x and z batches must have equal size.")


@dataclass
class LossValue:
    """
    A loss evaluation.

    ``grads`` maps a head name to its gradient: ``logits`` for the plain
    losses, ``D`` for discriminator parameter grads, ``x_gen`` / ``z_enc`` for
    the generator and encoder outputs, ``x_hat`` for reconstructions.
    """
    value: float
    grads: Dict[str, Any] = field(default_factory=dict)


@dataclass
class DiscriminatorPass:
    """One forward pass of D over both pair batches, shared by both losses."""
    enc_logits: Tensor
    gen_logits: Tensor
    enc_tape: Tape
    gen_tape: Tape


# 2. CORE CROSS ENTROPY
def sigmoid_ce(logits: Tensor, targets: Tensor) -> LossValue:
    """
    Mean sigmoid cross entropy in the stable logit form.

    Raises:
        LossTargetError: targets outside [0, 1] or shape mismatch.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.broadcast_to(np.asarray(targets, dtype=np.float64), logits.shape)
    if np.any(targets < 0.0) or np.any(targets > 1.0):
        raise LossTargetError("sigmoid_ce targets must lie in [0, 1].")
    count = logits.size
    per_element = -(targets * log_expit(logits) + (1.0 - targets) * log_expit(-logits))
    grad = (expit(logits) - targets) / count
    return LossValue(value=float(per_element.sum() / count), grads={"logits": grad})


def bigan_value(d_logit_enc: Tensor, d_logit_gen: Tensor) -> float:
    """Monte-Carlo estimate of V = E log D(x, E(x)) + E log(1 - D(G(z), z))."""
    return float(np.mean(log_expit(d_logit_enc)) + np.mean(log_expit(-np.asarray(d_logit_gen))))


# 3. ADVERSARIAL LOSSES
def discriminate(D: DenseNet, batch_enc: PairBatch, batch_gen: PairBatch) -> DiscriminatorPass:
    enc_logits, enc_tape = D.forward(batch_enc.x, batch_enc.z)
    gen_logits, gen_tape = D.forward(batch_gen.x, batch_gen.z)
    return DiscriminatorPass(enc_logits, gen_logits, enc_tape, gen_tape)


def _sum_grads(a: ParamGrads, b: ParamGrads) -> ParamGrads:
    return [{k: ga[k] + gb[k] for k in ga} for ga, gb in zip(a, b)]


def _pair_ce(D: DenseNet, d_pass: DiscriminatorPass, enc_target: float, gen_target: float):
    logits = np.concatenate([d_pass.enc_logits, d_pass.gen_logits], axis=0)
    targets = np.concatenate([
        np.full(d_pass.enc_logits.shape, enc_target),
        np.full(d_pass.gen_logits.shape, gen_target),
    ])
    ce = sigmoid_ce(logits, targets)
    split = d_pass.enc_logits.shape[0]
    grad = ce.grads["logits"]
    enc_back = D.backward(d_pass.enc_tape, grad[:split])
    gen_back = D.backward(d_pass.gen_tape, grad[split:])
    return ce.value, enc_back, gen_back


def discriminator_loss(batch_enc: PairBatch, batch_gen: PairBatch, D: DenseNet,
                       d_pass: Optional[DiscriminatorPass] = None) -> LossValue:
    """
    Targets 1 on encoder pairs and 0 on generator pairs; minimizing ascends V.
    Only the D parameter gradients are returned.
    """
    d_pass = d_pass or discriminate(D, batch_enc, batch_gen)
    value, enc_back, gen_back = _pair_ce(D, d_pass, 1.0, 0.0)
    return LossValue(value, {"D": _sum_grads(enc_back.param_grads, gen_back.param_grads)})


def ge_inverse_loss(batch_enc: PairBatch, batch_gen: PairBatch, D: DenseNet,
                    d_pass: Optional[DiscriminatorPass] = None) -> LossValue:
    """
    Label-swapped objective for G and E (0 on encoder pairs, 1 on generator
    pairs). Gradients are returned on the encoder output ``z_enc`` and the
    generator output ``x_gen``; D's own parameter gradients are discarded.
    """
    d_pass = d_pass or discriminate(D, batch_enc, batch_gen)
    value, enc_back, gen_back = _pair_ce(D, d_pass, 0.0, 1.0)
    return LossValue(value, {"z_enc": enc_back.latent_grad, "x_gen": gen_back.input_grad})


def gan_losses(x_real: Tensor, x_gen: Tensor, D_gan: DenseNet) -> Tuple[LossValue, LossValue]:
    """
    x-only GAN: d_loss pushes D(x_real) to 1 and D(x_gen) to 0; g_loss is
    the label-swapped generator loss on D(x_gen) with gradient on ``x_gen``.
    """
    real_logits, real_tape = D_gan.forward(x_real)
    gen_logits, gen_tape = D_gan.forward(x_gen)

    logits = np.concatenate([real_logits, gen_logits], axis=0)
    targets = np.concatenate([np.ones_like(real_logits), np.zeros_like(gen_logits)])
    d_ce = sigmoid_ce(logits, targets)
    split = real_logits.shape[0]
    real_back = D_gan.backward(real_tape, d_ce.grads["logits"][:split])
    gen_back = D_gan.backward(gen_tape, d_ce.grads["logits"][split:])
    d_loss = LossValue(d_ce.value, {
        "D": _sum_grads(real_back.param_grads, gen_back.param_grads),
        "logits_real": real_logits,
        "logits_gen": gen_logits,
    })

    g_ce = sigmoid_ce(gen_logits, np.ones_like(gen_logits))
    g_back = D_gan.backward(gen_tape, g_ce.grads["logits"])
    g_loss = LossValue(g_ce.value, {"x_gen": g_back.input_grad})
    return d_loss, g_loss


# 4. BASELINE LOSSES
def latent_regressor_loss(e_logits: Tensor, z: Tensor) -> LossValue:
    """Sigmoid CE of E(G(z)) against z rescaled from (-1, 1) onto (0, 1)."""
    return sigmoid_ce(e_logits, (np.asarray(z) + 1.0) / 2.0)


def autoencoder_loss(x: Tensor, x_hat: Tensor, norm: str = "l2") -> LossValue:
    """Mean squared (l2) or mean absolute (l1) reconstruction error."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError("x and x_hat must have equal shapes.")
    diff = x_hat - x
    count = diff.size
    if norm == "l2":
        return LossValue(float(np.sum(diff ** 2) / count), {"x_hat": 2.0 * diff / count})
    if norm == "l1":
        return LossValue(float(np.sum(np.abs(diff)) / count), {"x_hat": np.sign(diff) / count})
    raise ValueError(f"Unknown norm '{norm}'.")
