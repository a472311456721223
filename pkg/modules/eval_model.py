import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.spatial.distance import cdist

from modules.data_tools import Dataset
from modules.net_core import INFER, DenseNet
from modules.train_model import ModelBundle
from modules.lab_assets import (
    DatasetError,
    FeatureModeError,
    NonFiniteError,
    ReconstructionUnavailableError,
    ZeroNormError,
)

"""
EVAL MODEL MODULE
-----------------
Responsibility: Feature extraction and the quantitative evaluations.
- Encoder / discriminator features
- Exact blockwise 1NN accuracy (Euclidean, ties to the lowest train index)
- Reconstruction error ||x - G(E(x))||
- Cosine nearest neighbours
"""

logger = logging.getLogger(__name__)

FEATURE_BATCH = 1000
DISTANCE_BLOCK = 500
# decimals kept in cosine distances; values that round together tie
COSINE_DECIMALS = 12


@dataclass
class FeatureMatrix:
    rows: np.ndarray
    source: str

    def __post_init__(self):
        if not np.all(np.isfinite(self.rows)):
            raise NonFiniteError(-1, f"{self.source}: non-finite features.")

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


ArrayLike = Union[np.ndarray, FeatureMatrix]


def _rows(feats: ArrayLike) -> np.ndarray:
    return feats.rows if isinstance(feats, FeatureMatrix) else np.asarray(feats, dtype=np.float64)


def _batched(net: DenseNet, x: np.ndarray, until: Optional[int] = None) -> np.ndarray:
    chunks = [net.forward(x[i:i + FEATURE_BATCH], until=until)[0] for i in range(0, x.shape[0], FEATURE_BATCH)]
    return np.concatenate(chunks, axis=0)


# 1. FEATURES
def extract_features(bundle: ModelBundle, dataset: Dataset) -> FeatureMatrix:
    """
    bigan / lr / jlr / ae: the encoder's linear outputs (the code).
    gan: the discriminator's second hidden layer after its nonlinearity, on x alone.

    Raises:
        FeatureModeError: any network of the bundle is not in infer mode.
    """
    not_infer = [name for name, net in bundle.nets.items() if net.mode != INFER]
    if not_infer:
        raise FeatureModeError(f"Networks {', '.join(not_infer)} must be in infer mode for feature extraction.")

    if bundle.kind == "gan":
        D = bundle.discriminator
        rows = _batched(D, dataset.features, until=D.feature_layer)
        return FeatureMatrix(rows, f"gan:D.layer{D.feature_layer - 1}")
    rows = _batched(bundle.encoder, dataset.features)
    return FeatureMatrix(rows, f"{bundle.kind}:E")


# 2. 1NN CLASSIFICATION
def one_nn_accuracy(train_feats: ArrayLike, train_labels: np.ndarray,
                    test_feats: ArrayLike, test_labels: np.ndarray) -> float:
    """Percentage of test rows whose Euclidean-nearest train row has the same label."""
    train, test = _rows(train_feats), _rows(test_feats)
    train_labels, test_labels = np.asarray(train_labels), np.asarray(test_labels)
    if train.shape[0] == 0:
        raise DatasetError("1NN needs a non-empty training set.")
    if train.shape[1] != test.shape[1]:
        raise DatasetError(f"Feature dimensions differ: {train.shape[1]} vs {test.shape[1]}.")
    if len(train_labels) != train.shape[0] or len(test_labels) != test.shape[0]:
        raise DatasetError("Labels must align with feature rows.")
    if test.shape[0] == 0:
        raise DatasetError("1NN needs a non-empty test set.")

    correct = 0
    for start in range(0, test.shape[0], DISTANCE_BLOCK):
        block = test[start:start + DISTANCE_BLOCK]
        # argmin returns the first (lowest) index on ties
        nearest = cdist(block, train, "sqeuclidean").argmin(axis=1)
        correct += int(np.sum(train_labels[nearest] == test_labels[start:start + DISTANCE_BLOCK]))
    return 100.0 * correct / test.shape[0]


# 3. RECONSTRUCTION
def reconstruct(bundle: ModelBundle, x: np.ndarray) -> np.ndarray:
    if bundle.encoder is None or bundle.generator is None:
        raise ReconstructionUnavailableError(f"A '{bundle.kind}' model has no encoder/generator pair.")
    code = bundle.encoder.infer(x, batch_size=FEATURE_BATCH)
    return bundle.generator.infer(code, batch_size=FEATURE_BATCH)


def reconstruction_error(bundle: ModelBundle, dataset: Dataset) -> float:
    """Mean over samples of ||g_X(x) - G(E(x))||_2 (g_X is the identity for plain BiGAN)."""
    x_hat = reconstruct(bundle, dataset.features)
    target = bundle.gx()(dataset.features)
    return float(np.mean(np.linalg.norm(target - x_hat, axis=1)))


# 4. COSINE RETRIEVAL
def _unit_rows(feats: np.ndarray, label: str) -> np.ndarray:
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ZeroNormError(f"{label} contains a zero-norm row (cosine distance undefined).")
    return feats / norms


def cosine_distances(query_feats: ArrayLike, corpus_feats: ArrayLike) -> np.ndarray:
    """
    1 - cos(angle) for every (query, corpus) pair, rounded to
    ``COSINE_DECIMALS`` so that exact rescalings of a row land on the same
    distance (0 for positive, 2 for negative multiples).
    """
    q = _unit_rows(_rows(query_feats), "query")
    c = _unit_rows(_rows(corpus_feats), "corpus")
    # +0.0 folds -0.0 from rounding into 0.0
    return np.clip(np.round(1.0 - q @ c.T, COSINE_DECIMALS), 0.0, 2.0) + 0.0


def cosine_neighbors(query_feats: ArrayLike, corpus_feats: ArrayLike, k: int) -> np.ndarray:
    """Indices of the k nearest corpus rows per query, ascending distance, ties to the lowest index."""
    if k < 1:
        raise ValueError("k must be >= 1.")
    distances = cosine_distances(query_feats, corpus_feats)
    return np.argsort(distances, axis=1, kind="stable")[:, :k]
