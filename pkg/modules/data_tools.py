import os
import gzip
import struct
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from modules.file_tools import atomic_write_bytes, atomic_write_frame
from modules.lab_assets import (
    MNIST_DIM,
    STREAM_OFFSETS,
    DatasetError,
    IdxFormatError,
    IdxLengthError,
    IdxUnsupportedError,
)

"""
DATA TOOLS MODULE
-----------------
Responsibility: Data ingestion and sampling.
Reads MNIST in IDX format, generates the synthetic 2D mixture and latent
samples, and normalizes everything into flat float64 vectors. All sampling
is driven by explicit numpy Generators (see LabStreams) so every draw is
reproducible from the master seed.
"""

logger = logging.getLogger(__name__)

IDX_UBYTE = 0x08
UNBOUNDED_TAG = "[unbounded]"


# 1. RNG STREAMS
@dataclass
class LabStreams:
    """
    Independent PCG64 streams derived from one master seed.

    Each stream is seeded with ``seed + offset`` (offsets in
    ``STREAM_OFFSETS``) so shuffling, latent sampling, weight init and
    mixture sampling can each be replayed on their own.
    """
    seed: int
    data: np.random.Generator = field(init=False)
    latent: np.random.Generator = field(init=False)
    init: np.random.Generator = field(init=False)
    mixture: np.random.Generator = field(init=False)

    def __post_init__(self):
        for name, offset in STREAM_OFFSETS.items():
            setattr(self, name, np.random.Generator(np.random.PCG64(self.seed + offset)))

    def get_state(self) -> Dict[str, dict]:
        return {name: getattr(self, name).bit_generator.state for name in STREAM_OFFSETS}

    def set_state(self, state: Dict[str, dict]) -> None:
        for name in STREAM_OFFSETS:
            getattr(self, name).bit_generator.state = state[name]


def make_streams(seed: int) -> LabStreams:
    return LabStreams(seed=int(seed))


# 2. DOMAIN TYPES
@dataclass
class Dataset:
    features: np.ndarray
    labels: Optional[np.ndarray] = None
    name: str = "dataset"
    bounded: bool = True

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise DatasetError(f"{self.name}: features must be a non-empty n x d matrix.")
        if self.bounded and (self.features.min() < -1.0 or self.features.max() > 1.0):
            raise DatasetError(f"{self.name}: feature values must lie in [-1, 1].")
        if self.labels is not None:
            self.labels = np.asarray(self.labels).astype(np.int64)
            if self.labels.shape != (self.features.shape[0],):
                raise DatasetError(f"{self.name}: labels must align with feature rows.")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class LatentSpec:
    dim: int
    low: float = -1.0
    high: float = 1.0

    def __post_init__(self):
        if self.dim < 1:
            raise DatasetError("Latent dimension must be >= 1.")
        if not self.low < self.high:
            raise DatasetError("Latent bounds must satisfy low < high.")


@dataclass(frozen=True)
class MixtureComponent:
    mean: Tuple[float, float]
    stddev: float
    weight: float


@dataclass(frozen=True)
class MixtureSpec:
    components: Tuple[MixtureComponent, ...]
    clip: bool = False

    def __post_init__(self):
        if not self.components:
            raise DatasetError("A mixture needs at least one component.")
        weights = np.array([c.weight for c in self.components])
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise DatasetError("Mixture weights must be positive and sum to 1.")
        if any(c.stddev < 0 for c in self.components):
            raise DatasetError("Mixture standard deviations must be non-negative.")

    @classmethod
    def ring(cls, k: int = 5, radius: float = 0.7, stddev: float = 0.05, clip: bool = False) -> "MixtureSpec":
        """k equally weighted Gaussians evenly spaced on a circle."""
        angles = 2.0 * np.pi * np.arange(k) / k
        comps = tuple(
            MixtureComponent((float(radius * np.cos(a)), float(radius * np.sin(a))), stddev, 1.0 / k)
            for a in angles
        )
        return cls(components=comps, clip=clip)


# 3. IDX FORMAT
def _read_raw(path: str) -> bytes:
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as f:
        return f.read()


def load_idx(path: str) -> np.ndarray:
    """
    Parses an IDX file into a float64 tensor of its declared shape.

    Header: two zero bytes, a type byte (only 0x08, unsigned byte, is
    accepted), a dimension-count byte, then one big-endian uint32 per
    dimension. ``.gz`` files are decompressed transparently.

    Raises:
        IdxFormatError: bad magic or truncated header.
        IdxUnsupportedError: type byte other than 0x08.
        IdxLengthError: payload length differs from the product of dims.
    """
    raw = _read_raw(path)
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise IdxFormatError(f"{path}: malformed IDX magic.")
    if raw[2] != IDX_UBYTE:
        raise IdxUnsupportedError(f"{path}: unsupported IDX type byte 0x{raw[2]:02x}.")

    ndim = raw[3]
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise IdxFormatError(f"{path}: header declares {ndim} dims but is truncated.")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])

    expected = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    payload = raw[header_len:]
    if len(payload) != expected:
        raise IdxLengthError(
            f"{path}: payload has {len(payload)} bytes, header declares {expected}."
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims).astype(np.float64)


def encode_idx(array: np.ndarray) -> bytes:
    """Serializes an array of byte-range values as an unsigned-byte IDX blob."""
    values = np.asarray(array)
    if values.size and (values.min() < 0 or values.max() > 255):
        raise IdxFormatError("IDX unsigned-byte payload must lie in [0, 255].")
    header = bytes([0, 0, IDX_UBYTE, values.ndim]) + struct.pack(f">{values.ndim}I", *values.shape)
    return header + np.rint(values).astype(np.uint8).tobytes()


def write_idx(path: str, array: np.ndarray) -> None:
    atomic_write_bytes(path, encode_idx(array))


# 4. PREPROCESSING
def preprocess_mnist(images: np.ndarray, labels: Optional[np.ndarray] = None, name: str = "mnist") -> Dataset:
    """Flattens images to vectors and maps pixels affinely onto [-1, 1]."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images.reshape(images.shape[0], -1)
    if images.ndim != 2:
        raise DatasetError("Images must be n x h x w or n x d.")
    if images.min() < 0 or images.max() > 255:
        raise DatasetError("Pixel values must lie in [0, 255].")
    if labels is not None and len(labels) != images.shape[0]:
        raise DatasetError("Image and label counts differ.")
    return Dataset(features=images / 127.5 - 1.0, labels=labels, name=name)


def to_pixels(features: np.ndarray) -> np.ndarray:
    """Inverse of the preprocessing map, rounded back to byte values."""
    return np.rint((np.asarray(features) + 1.0) * 127.5)


def infer_labels_path(images_path: str) -> Optional[str]:
    """Maps the MNIST images filename convention onto its labels file."""
    candidate = str(images_path).replace("images-idx3", "labels-idx1").replace("images.idx3", "labels.idx1")
    if candidate != str(images_path) and os.path.exists(candidate):
        return candidate
    return None


def load_mnist_split(images_path: str, labels_path: Optional[str] = None, name: Optional[str] = None) -> Dataset:
    images = load_idx(images_path)
    labels_path = labels_path or infer_labels_path(images_path)
    labels = load_idx(labels_path).astype(np.int64) if labels_path else None
    if labels is not None and (labels.min() < 0 or labels.max() > 9):
        raise DatasetError(f"{labels_path}: MNIST labels must lie in [0, 9].")
    dataset = preprocess_mnist(images, labels, name=name or os.path.basename(str(images_path)))
    logger.info("Loaded %s: n=%d d=%d", dataset.name, dataset.n, dataset.d)
    return dataset


# 5. SAMPLERS
def sample_latent(spec: LatentSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """
    Draws n latent vectors i.i.d. uniform on the open box (low, high)^dim.
    """
    if n < 1:
        raise DatasetError("Latent sample count must be >= 1.")
    z = rng.uniform(spec.low, spec.high, size=(n, spec.dim))
    # open interval: nudge the (measure-zero) endpoints inwards
    z[z <= spec.low] = np.nextafter(spec.low, spec.high)
    z[z >= spec.high] = np.nextafter(spec.high, spec.low)
    return z


def sample_mixture(spec: MixtureSpec, n: int, rng: np.random.Generator) -> Dataset:
    """
    Draws n points from a 2D Gaussian mixture.

    Labels hold the component index of each draw. Unless the mixture requests
    clipping the range invariant of Dataset is waived and the name carries
    the ``[unbounded]`` tag.
    """
    means = np.array([c.mean for c in spec.components], dtype=np.float64)
    stds = np.array([c.stddev for c in spec.components], dtype=np.float64)
    weights = np.array([c.weight for c in spec.components], dtype=np.float64)

    comp = rng.choice(len(spec.components), size=n, p=weights / weights.sum())
    noise = rng.standard_normal((n, 2))
    points = means[comp] + noise * stds[comp][:, None]

    name = f"mixture{len(spec.components)}"
    if spec.clip:
        points = np.clip(points, -1.0, 1.0)
    else:
        name += UNBOUNDED_TAG
    return Dataset(features=points, labels=comp, name=name, bounded=spec.clip)


# 6. SUBSETS & CSV EXPORT
def subset_dataset(dataset: Dataset, n: int) -> Dataset:
    if n <= 0 or n >= dataset.n:
        return dataset
    labels = dataset.labels[:n] if dataset.labels is not None else None
    return Dataset(dataset.features[:n], labels, f"{dataset.name}[:{n}]", dataset.bounded)


def dataset_frame(dataset: Dataset) -> pd.DataFrame:
    frame = pd.DataFrame(dataset.features, columns=[f"f{i}" for i in range(dataset.d)])
    if dataset.labels is not None:
        frame["label"] = dataset.labels
    return frame


def export_dataset_csv(dataset: Dataset, path: str) -> None:
    """One row per sample: features, then the label (when present)."""
    atomic_write_frame(path, dataset_frame(dataset))
    logger.info("Exported %s (%d rows) to %s", dataset.name, dataset.n, path)


def load_dataset_csv(path: str) -> Dataset:
    frame = pd.read_csv(path)
    feature_cols = [c for c in frame.columns if c != "label"]
    labels = frame["label"].to_numpy() if "label" in frame.columns else None
    features = frame[feature_cols].to_numpy(dtype=np.float64)
    bounded = bool(features.min() >= -1.0 and features.max() <= 1.0)
    name = os.path.basename(path) + ("" if bounded else UNBOUNDED_TAG)
    return Dataset(features, labels, name, bounded)


def load_dataset(path: str, labels_path: Optional[str] = None) -> Dataset:
    """Loads a CSV export or an IDX images file (labels inferred when possible)."""
    if not os.path.exists(path):
        raise DatasetError(f"Data file not found: {path}")
    if str(path).endswith(".csv"):
        return load_dataset_csv(path)
    return load_mnist_split(path, labels_path)
