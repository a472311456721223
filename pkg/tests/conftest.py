import numpy as np
import pytest

from modules.data_tools import Dataset, write_idx
from modules.net_core import Activation, BatchNorm, DenseNet, LatentInject, Linear, init_params
from modules.train_model import TrainConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def mnist_files(tmp_path):
    """64 random 28x28 digits in IDX format, MNIST file naming."""
    gen = np.random.default_rng(0)
    images = gen.integers(0, 256, size=(64, 28, 28))
    labels = np.arange(64) % 10
    images_path = tmp_path / "train-images-idx3-ubyte"
    labels_path = tmp_path / "train-labels-idx1-ubyte"
    write_idx(str(images_path), images)
    write_idx(str(labels_path), labels)
    return str(images_path), str(labels_path)


@pytest.fixture
def toy_dataset():
    """256 labelled 4x4 'images' in [-1, 1]."""
    gen = np.random.default_rng(7)
    return Dataset(gen.uniform(-1.0, 1.0, size=(256, 16)), gen.integers(0, 3, size=256), "toy")


@pytest.fixture
def tiny_config():
    return TrainConfig(epochs=1, batch_size=64, hidden_units=12, latent_dim=3, recon_probe=64, seed=11)


@pytest.fixture
def make_net():
    """Factory for small randomized networks covering every layer kind."""
    def build(kind: str, in_dim: int = 5, hidden: int = 6, out_dim: int = 3, latent_dim: int = 4, seed: int = 0):
        layers = {
            "leaky": [Linear(in_dim, hidden), Activation("leaky_relu"), Linear(hidden, out_dim)],
            "relu_tanh": [Linear(in_dim, hidden), Activation("relu"), Linear(hidden, out_dim), Activation("tanh")],
            "sigmoid": [Linear(in_dim, hidden), Activation("sigmoid"), Linear(hidden, out_dim)],
            "bn_free": [Linear(in_dim, hidden), BatchNorm(hidden), Activation("leaky_relu"), Linear(hidden, out_dim)],
            "bn_affine": [Linear(in_dim, hidden), BatchNorm(hidden, parameter_free=False), Activation("tanh"), Linear(hidden, out_dim)],
            "inject": [Linear(in_dim, hidden), BatchNorm(hidden), LatentInject(latent_dim, hidden),
                       Activation("leaky_relu"), Linear(hidden, out_dim)],
        }[kind]
        net = DenseNet(layers, in_dim=in_dim, name=kind, latent_dim=latent_dim if kind == "inject" else None)
        init_params(net, np.random.default_rng(seed), std=0.5)
        if kind == "bn_affine":
            bn = net.layers[1]
            bn.params["gamma"] = np.random.default_rng(seed + 1).uniform(0.5, 1.5, hidden)
            bn.params["beta"] = np.random.default_rng(seed + 2).normal(0.0, 0.5, hidden)
        return net
    return build
