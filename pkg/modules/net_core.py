import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from modules.lab_assets import (
    BN_EPS,
    BN_MOMENTUM,
    HIDDEN_UNITS,
    INIT_STD,
    LEAK,
    MNIST_DIM,
    MNIST_LATENT_DIM,
    PRESET_NAMES,
    BatchNormError,
    LatentContractError,
    NetShapeError,
    NonFiniteError,
    PresetError,
    TapeMismatchError,
)

"""
NET CORE MODULE
---------------
Responsibility: Minimal dense-network engine.
Layers (linear, batch norm, activations, latent injection), the DenseNet
container with forward/backward passes, initialization, finite-difference
gradient verification, and the MNIST architecture presets.
Tensors are row-major float64 numpy arrays shaped batch x features.
"""

logger = logging.getLogger(__name__)

Tensor = np.ndarray
ParamGrads = List[Dict[str, np.ndarray]]

TRAIN = "train"
INFER = "infer"


# 1. LAYERS
class Layer:
    """Base layer. ``decayed`` names the multiplicative weights."""
    kind = "layer"
    decayed: Tuple[str, ...] = ()

    def __init__(self):
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}

    def _register(self, name: str, value: np.ndarray) -> None:
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def out_dim(self, in_dim: int) -> int:
        return in_dim

    def forward(self, x: Tensor, z: Optional[Tensor], train: bool) -> Tuple[Tensor, Any]:
        raise NotImplementedError

    def backward(self, cache: Any, grad: Tensor) -> Tuple[Tensor, Dict[str, np.ndarray], Optional[Tensor]]:
        raise NotImplementedError

    def describe(self) -> str:
        return self.kind


class Linear(Layer):
    kind = "linear"
    decayed = ("W",)

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.in_dim, self.dim = in_dim, out_dim
        self._register("W", np.zeros((in_dim, out_dim)))
        self._register("b", np.zeros(out_dim))

    def out_dim(self, in_dim: int) -> int:
        if in_dim != self.in_dim:
            raise NetShapeError(f"linear expects {self.in_dim} inputs, got {in_dim}.")
        return self.dim

    def forward(self, x, z, train):
        return x @ self.params["W"] + self.params["b"], x

    def backward(self, cache, grad):
        x = cache
        grads = {"W": x.T @ grad, "b": grad.sum(axis=0)}
        return grad @ self.params["W"].T, grads, None

    def describe(self) -> str:
        return f"linear({self.in_dim}, {self.dim})"


class BatchNorm(Layer):
    """
    Batch normalization over the batch axis.

    Train mode normalizes with the (biased) batch statistics and folds them
    into the running statistics with ``momentum``; infer mode uses the
    running statistics. The parameter-free variant has no scale/bias.
    """
    kind = "batch_norm"

    def __init__(self, dim: int, parameter_free: bool = True, eps: float = BN_EPS, momentum: float = BN_MOMENTUM):
        super().__init__()
        self.dim = dim
        self.parameter_free = parameter_free
        self.eps = eps
        self.momentum = momentum
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        if not parameter_free:
            self._register("gamma", np.ones(dim))
            self._register("beta", np.zeros(dim))

    def out_dim(self, in_dim: int) -> int:
        if in_dim != self.dim:
            raise NetShapeError(f"batch_norm expects {self.dim} features, got {in_dim}.")
        return self.dim

    def forward(self, x, z, train):
        if train:
            if x.shape[0] < 2:
                raise BatchNormError("batch_norm in train mode needs a batch of at least 2.")
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            m = self.momentum
            self.running_mean = m * self.running_mean + (1.0 - m) * mean
            self.running_var = m * self.running_var + (1.0 - m) * var
        else:
            mean, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv
        out = xhat if self.parameter_free else xhat * self.params["gamma"] + self.params["beta"]
        return out, (xhat, inv, train)

    def backward(self, cache, grad):
        xhat, inv, train = cache
        grads: Dict[str, np.ndarray] = {}
        if self.parameter_free:
            dxhat = grad
        else:
            grads["gamma"] = (grad * xhat).sum(axis=0)
            grads["beta"] = grad.sum(axis=0)
            dxhat = grad * self.params["gamma"]
        if not train:
            return dxhat * inv, grads, None
        n = grad.shape[0]
        dx = (inv / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        return dx, grads, None

    def describe(self) -> str:
        flag = "parameter_free" if self.parameter_free else "affine"
        return f"batch_norm({self.dim}, {flag})"


class Activation(Layer):
    kind = "activation"
    FUNCTIONS = ("relu", "leaky_relu", "tanh", "sigmoid", "identity")

    def __init__(self, fn: str, slope: float = LEAK):
        super().__init__()
        if fn not in self.FUNCTIONS:
            raise NetShapeError(f"Unknown activation '{fn}'.")
        self.fn = fn
        self.slope = slope

    def forward(self, x, z, train):
        if self.fn == "relu":
            out = np.maximum(x, 0.0)
        elif self.fn == "leaky_relu":
            out = np.where(x > 0, x, self.slope * x)
        elif self.fn == "tanh":
            out = np.tanh(x)
        elif self.fn == "sigmoid":
            out = expit(x)
        else:
            out = x
        return out, (x, out)

    def backward(self, cache, grad):
        x, out = cache
        if self.fn == "relu":
            dx = grad * (x > 0)
        elif self.fn == "leaky_relu":
            dx = np.where(x > 0, grad, self.slope * grad)
        elif self.fn == "tanh":
            dx = grad * (1.0 - out ** 2)
        elif self.fn == "sigmoid":
            dx = grad * out * (1.0 - out)
        else:
            dx = grad
        return dx, {}, None

    def describe(self) -> str:
        return f"leaky_relu({self.slope})" if self.fn == "leaky_relu" else self.fn


class LatentInject(Layer):
    """Adds W_z . z (no bias) to the running pre-nonlinearity sum."""
    kind = "latent_inject"
    decayed = ("W",)

    def __init__(self, latent_dim: int, hidden_dim: int):
        super().__init__()
        self.latent_dim, self.dim = latent_dim, hidden_dim
        self._register("W", np.zeros((latent_dim, hidden_dim)))

    def out_dim(self, in_dim: int) -> int:
        if in_dim != self.dim:
            raise NetShapeError(f"latent_inject expects {self.dim} features, got {in_dim}.")
        return self.dim

    def forward(self, x, z, train):
        return x + z @ self.params["W"], z

    def backward(self, cache, grad):
        z = cache
        return grad, {"W": z.T @ grad}, grad @ self.params["W"].T

    def describe(self) -> str:
        return f"latent_inject({self.latent_dim}, {self.dim})"


# 2. NETWORK CONTAINER
@dataclass
class Tape:
    net_id: int
    mode: str
    caches: List[Any]
    batch: int


@dataclass
class BackwardResult:
    param_grads: ParamGrads
    input_grad: Tensor
    latent_grad: Optional[Tensor] = None


class DenseNet:
    """
    Ordered stack of layers with a train/infer mode.

    The mode selects the batch-norm statistics source. A network is owned by
    one caller during forward/backward (running statistics mutate in train
    mode).
    """

    def __init__(self, layers: Sequence[Layer], in_dim: int, name: str = "net",
                 latent_dim: Optional[int] = None, feature_layer: Optional[int] = None,
                 spec: Optional[Dict[str, Any]] = None):
        self.layers = list(layers)
        self.in_dim = in_dim
        self.name = name
        self.latent_dim = latent_dim
        self.feature_layer = feature_layer
        self.spec = spec or {}
        self.mode = TRAIN

        dim = in_dim
        for layer in self.layers:
            dim = layer.out_dim(dim)
            if isinstance(layer, LatentInject) and layer.latent_dim != latent_dim:
                raise NetShapeError(f"{name}: latent_inject width disagrees with latent_dim.")
        self.out_dim = dim

    # --- Introspection
    @property
    def needs_latent(self) -> bool:
        return any(isinstance(layer, LatentInject) for layer in self.layers)

    @property
    def params(self) -> List[Dict[str, np.ndarray]]:
        return [layer.params for layer in self.layers]

    @property
    def grads(self) -> List[Dict[str, np.ndarray]]:
        return [layer.grads for layer in self.layers]

    def param_count(self) -> int:
        return int(sum(p.size for layer in self.layers for p in layer.params.values()))

    def describe(self) -> List[str]:
        return [layer.describe() for layer in self.layers]

    # --- Mode & gradient buffers
    def set_mode(self, mode: str) -> "DenseNet":
        if mode not in (TRAIN, INFER):
            raise ValueError(f"Unknown mode '{mode}'.")
        self.mode = mode
        return self

    def zero_grads(self) -> None:
        for layer in self.layers:
            for key in layer.grads:
                layer.grads[key] = np.zeros_like(layer.params[key])

    def accumulate_grads(self, param_grads: ParamGrads) -> None:
        for layer, grads in zip(self.layers, param_grads):
            for key, value in grads.items():
                layer.grads[key] = layer.grads[key] + value

    # --- Passes
    def forward(self, x: Tensor, aux_latent: Optional[Tensor] = None, until: Optional[int] = None) -> Tuple[Tensor, Tape]:
        """
        Runs the stack on a batch.

        Args:
            x: batch x in_dim input.
            aux_latent: batch x latent_dim; required iff the net injects z.
            until: stop after this many layers (partial forward).

        Returns:
            (output, tape) where the tape holds what backward needs.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise NetShapeError(f"{self.name}: expected batch x {self.in_dim} input, got {x.shape}.")
        if self.needs_latent:
            if aux_latent is None:
                raise LatentContractError(f"{self.name}: aux_latent is required.")
            aux_latent = np.asarray(aux_latent, dtype=np.float64)
            if aux_latent.shape != (x.shape[0], self.latent_dim):
                raise LatentContractError(f"{self.name}: aux_latent must be {x.shape[0]} x {self.latent_dim}.")
        elif aux_latent is not None:
            raise LatentContractError(f"{self.name}: this network does not consume a latent input.")

        train = self.mode == TRAIN
        stop = len(self.layers) if until is None else until
        caches = []
        out = x
        for index, layer in enumerate(self.layers[:stop]):
            out, cache = layer.forward(out, aux_latent, train)
            if not np.all(np.isfinite(out)):
                raise NonFiniteError(index, f"{self.name}: non-finite output at layer {index} ({layer.describe()}).")
            caches.append(cache)
        return out, Tape(net_id=id(self), mode=self.mode, caches=caches, batch=x.shape[0])

    def backward(self, tape: Tape, output_grad: Tensor) -> BackwardResult:
        """Exact gradients w.r.t. params, the input and the injected latent."""
        if tape.net_id != id(self) or len(tape.caches) > len(self.layers):
            raise TapeMismatchError(f"{self.name}: tape was produced by a different network.")
        grad = np.asarray(output_grad, dtype=np.float64)
        if grad.shape[0] != tape.batch:
            raise TapeMismatchError(f"{self.name}: output_grad batch does not match the tape.")

        depth = len(tape.caches)
        param_grads: ParamGrads = [{} for _ in self.layers]
        latent_grad = None
        for index in range(depth - 1, -1, -1):
            grad, grads, dz = self.layers[index].backward(tape.caches[index], grad)
            param_grads[index] = grads
            if dz is not None:
                latent_grad = dz if latent_grad is None else latent_grad + dz
        return BackwardResult(param_grads=param_grads, input_grad=grad, latent_grad=latent_grad)

    def infer(self, x: Tensor, aux_latent: Optional[Tensor] = None, batch_size: int = 1000, until: Optional[int] = None) -> Tensor:
        """Batched inference in infer mode; restores the previous mode."""
        previous = self.mode
        self.set_mode(INFER)
        try:
            chunks = []
            for start in range(0, x.shape[0], batch_size):
                z = None if aux_latent is None else aux_latent[start:start + batch_size]
                out, _ = self.forward(x[start:start + batch_size], z, until=until)
                chunks.append(out)
            return np.concatenate(chunks, axis=0)
        finally:
            self.set_mode(previous)


def forward(net: DenseNet, x: Tensor, aux_latent: Optional[Tensor] = None) -> Tuple[Tensor, Tape]:
    return net.forward(x, aux_latent)


def backward(net: DenseNet, tape: Tape, output_grad: Tensor) -> BackwardResult:
    return net.backward(tape, output_grad)


# 3. INITIALIZATION
def init_params(net: DenseNet, rng: np.random.Generator, std: float = INIT_STD) -> DenseNet:
    """
    Multiplicative weights ~ N(0, std^2); biases zero; batch-norm scale one,
    shift zero, running mean 0 and running variance 1.
    """
    for layer in net.layers:
        if isinstance(layer, (Linear, LatentInject)):
            layer.params["W"] = rng.normal(0.0, std, size=layer.params["W"].shape)
            if "b" in layer.params:
                layer.params["b"] = np.zeros_like(layer.params["b"])
        elif isinstance(layer, BatchNorm):
            layer.running_mean = np.zeros(layer.dim)
            layer.running_var = np.ones(layer.dim)
            if not layer.parameter_free:
                layer.params["gamma"] = np.ones(layer.dim)
                layer.params["beta"] = np.zeros(layer.dim)
    net.zero_grads()
    return net


# 4. PRESETS
def _hidden_block(in_dim: int, hidden: int, fn: str, latent_dim: Optional[int], normalize: bool) -> List[Layer]:
    block: List[Layer] = [Linear(in_dim, hidden)]
    if normalize:
        block.append(BatchNorm(hidden, parameter_free=True))
    if latent_dim is not None:
        block.append(LatentInject(latent_dim, hidden))
    block.append(Activation(fn))
    return block


def build_preset(name: str, latent_dim: int = MNIST_LATENT_DIM, data_dim: int = MNIST_DIM,
                 hidden: int = HIDDEN_UNITS) -> DenseNet:
    """
    Builds one of the MNIST modules: hidden1 -> nonlinearity -> hidden2 ->
    parameter-free batch norm -> nonlinearity -> linear head.

    D and E use leaky ReLU (0.2), G and the autoencoder decoder use ReLU.
    ``mnist_D_bigan`` injects z before both hidden nonlinearities.
    Parameters are left at zero; call ``init_params``.
    """
    if name not in PRESET_NAMES:
        raise PresetError(f"Unknown preset '{name}'. Choose from {', '.join(PRESET_NAMES)}.")

    inject = latent_dim if name == "mnist_D_bigan" else None
    if name in ("mnist_G", "mnist_AE"):
        in_dim, fn, head = latent_dim, "relu", [Linear(hidden, data_dim), Activation("tanh")]
    elif name == "mnist_E":
        in_dim, fn, head = data_dim, "leaky_relu", [Linear(hidden, latent_dim)]
    else:
        in_dim, fn, head = data_dim, "leaky_relu", [Linear(hidden, 1)]

    layers = _hidden_block(in_dim, hidden, fn, inject, normalize=False)
    layers += _hidden_block(hidden, hidden, fn, inject, normalize=True)
    feature_layer = len(layers)
    layers += head

    spec = {"preset": name, "latent_dim": latent_dim, "data_dim": data_dim, "hidden": hidden}
    return DenseNet(layers, in_dim=in_dim, name=name, latent_dim=latent_dim,
                    feature_layer=feature_layer, spec=spec)


# 5. GRADIENT VERIFICATION
def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def numeric_gradient(fn: Callable[[], float], array: np.ndarray, h: float = 1e-5,
                     indices: Optional[Sequence[Tuple[int, ...]]] = None) -> np.ndarray:
    """
    Central finite differences of a scalar function w.r.t. ``array``.

    The array is perturbed in place and restored. Entries not in
    ``indices`` (when given) are left as NaN.
    """
    grad = np.full(array.shape, np.nan) if indices is not None else np.zeros(array.shape)
    targets = indices if indices is not None else list(np.ndindex(array.shape))
    for idx in targets:
        original = array[idx]
        array[idx] = original + h
        plus = fn()
        array[idx] = original - h
        minus = fn()
        array[idx] = original
        grad[idx] = (plus - minus) / (2.0 * h)
    return grad


def _sample_indices(shape: Tuple[int, ...], limit: Optional[int], rng: np.random.Generator):
    every = list(np.ndindex(shape))
    if limit is None or len(every) <= limit:
        return every
    picks = rng.choice(len(every), size=limit, replace=False)
    return [every[i] for i in sorted(picks)]


def gradient_check(net: DenseNet, x: Tensor, aux_latent: Optional[Tensor] = None,
                   rng: Optional[np.random.Generator] = None, h: float = 1e-5,
                   max_coords: Optional[int] = None) -> float:
    """
    Max relative error between backward() and central differences.

    The scalar loss is a fixed random projection of the output, so every
    output coordinate contributes. Checks all parameters, the input and the
    injected latent (optionally a random subset of ``max_coords`` entries
    per tensor).
    """
    rng = rng or np.random.default_rng(0)
    x = np.array(x, dtype=np.float64)
    z = None if aux_latent is None else np.array(aux_latent, dtype=np.float64)
    out, tape = net.forward(x, z)
    projection = rng.standard_normal(out.shape)
    result = net.backward(tape, projection)

    def loss() -> float:
        return float(np.sum(net.forward(x, z)[0] * projection))

    worst = 0.0
    for layer, grads in zip(net.layers, result.param_grads):
        for key, analytic in grads.items():
            idx = _sample_indices(analytic.shape, max_coords, rng)
            numeric = numeric_gradient(loss, layer.params[key], h, idx)
            picked = tuple(np.array(idx).T)
            worst = max(worst, float(relative_error(analytic[picked], numeric[picked]).max()))

    checks = [(x, result.input_grad)]
    if z is not None:
        checks.append((z, result.latent_grad))
    for tensor, analytic in checks:
        idx = _sample_indices(tensor.shape, max_coords, rng)
        numeric = numeric_gradient(loss, tensor, h, idx)
        picked = tuple(np.array(idx).T)
        worst = max(worst, float(relative_error(analytic[picked], numeric[picked]).max()))
    return worst
