# modules/lab_assets.py

# =====================================================
# SHARED CONSTANTS
# =====================================================
MNIST_SIDE = 28
MNIST_DIM = MNIST_SIDE * MNIST_SIDE
MNIST_LATENT_DIM = 50
HIDDEN_UNITS = 1024
LEAK = 0.2
INIT_STD = 0.02

BN_EPS = 1e-5
BN_MOMENTUM = 0.9

# RNG stream offsets from the master seed
STREAM_OFFSETS = {
    "data": 0,
    "latent": 1,
    "init": 2,
    "mixture": 3,
}

MODEL_KINDS = ("bigan", "gan", "lr", "jlr", "ae_l1", "ae_l2")
PRESET_NAMES = ("mnist_G", "mnist_E", "mnist_D_bigan", "mnist_D_gan", "mnist_AE")

# Column layouts of the exported tables
REPORT_COLUMNS = ["epoch", "d_loss", "ge_loss", "value", "recon_error", "seconds"]
METRICS_COLUMNS = ["model_kind", "accuracy", "feature_dim", "checkpoint"]

# Results table: display order, headers and published 1NN accuracies
RESULTS_ORDER = ["bigan", "gan", "lr", "jlr", "ae_l2", "ae_l1"]
RESULTS_HEADERS = {
    "bigan": "BiGAN",
    "gan": "D",
    "lr": "LR",
    "jlr": "JLR",
    "ae_l2": "AE (l2)",
    "ae_l1": "AE (l1)",
}
REFERENCE_ACCURACY = {
    "bigan": 97.39,
    "gan": 97.30,
    "lr": 97.44,
    "jlr": 97.13,
    "ae_l2": 97.58,
    "ae_l1": 97.63,
}

# Checkpoint container
CHECKPOINT_MAGIC = b"BGLB"
CHECKPOINT_VERSION = 1
DTYPE_F64 = 1

# Oracle tolerances
MEASURE_TOL = 1e-12
IDENTITY_TOL = 1e-9
BRUTE_FORCE_GUARD = 10 ** 7


# =====================================================
# ERRORS
# =====================================================
class LabError(Exception):
    """Base class of every failure the lab reports cleanly."""


# Data
class IdxFormatError(LabError, ValueError):
    pass


class IdxLengthError(IdxFormatError):
    pass


class IdxUnsupportedError(IdxFormatError):
    pass


class DatasetError(LabError, ValueError):
    pass


# Network engine
class NetShapeError(LabError, ValueError):
    pass


class NonFiniteError(LabError, FloatingPointError):
    def __init__(self, layer_index: int, message: str = ""):
        self.layer_index = layer_index
        super().__init__(message or f"Non-finite activation at layer {layer_index}.")


class LatentContractError(LabError, ValueError):
    pass


class BatchNormError(LabError, ValueError):
    pass


class TapeMismatchError(LabError, ValueError):
    pass


class PresetError(LabError, ValueError):
    pass


# Objectives
class LossTargetError(LabError, ValueError):
    pass


# Training
class TrainConfigError(LabError, ValueError):
    pass


class DivergenceError(LabError, ArithmeticError):
    def __init__(self, iteration: int, message: str = ""):
        self.iteration = iteration
        super().__init__(message or f"Training diverged at iteration {iteration}.")


# Theory oracle
class WorldValidationError(LabError, ValueError):
    pass


class OracleSizeError(LabError, ValueError):
    pass


# Evaluation
class FeatureModeError(LabError, RuntimeError):
    pass


class ReconstructionUnavailableError(LabError, ValueError):
    pass


class ZeroNormError(LabError, ValueError):
    pass


class GridLayoutError(LabError, ValueError):
    pass


# CLI / persistence
class ConfigError(LabError, ValueError):
    pass


class CheckpointFormatError(LabError, ValueError):
    pass


class CheckpointVersionError(CheckpointFormatError):
    pass


class CheckpointLengthError(CheckpointFormatError):
    pass


class CheckpointMismatchError(CheckpointFormatError):
    pass
