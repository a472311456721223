import os
import logging
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, Iterable, List, Optional

from dotenv import dotenv_values, load_dotenv

from modules.file_tools import atomic_write_text
from modules.data_tools import Dataset, MixtureSpec, load_dataset, make_streams, sample_mixture, subset_dataset
from modules.train_model import TrainConfig
from modules.lab_assets import ConfigError

"""
CONFIG UTILS MODULE
-------------------
Responsibility: Environment and run configuration.
Reads the KEY=VALUE run-configuration file with python-dotenv, applies
command-line overrides (flags win), coerces values to the declared field
types, validates data paths before any work starts, and echoes the
resolved configuration next to the run outputs.
"""

logger = logging.getLogger(__name__)

CONFIG_ENV_VAR = "BIGAN_LAB_CONFIG"
LOG_LEVEL_ENV_VAR = "BIGAN_LAB_LOG_LEVEL"
RESOLVED_CONFIG_FILE = "resolved_config.env"
DATASET_KINDS = ("mnist", "mixture", "csv")


@dataclass
class RunConfig(TrainConfig):
    dataset: str = "mnist"
    train_data: str = ""
    train_labels: str = ""
    test_data: str = ""
    test_labels: str = ""
    subset: int = 0
    mixture_samples: int = 10000
    out_dir: str = os.path.join("runs", "default")

    def __post_init__(self):
        super().__post_init__()
        if self.dataset not in DATASET_KINDS:
            raise ConfigError(f"dataset must be one of {', '.join(DATASET_KINDS)}.")
        if self.subset < 0 or self.mixture_samples < 1:
            raise ConfigError("subset must be >= 0 and mixture_samples >= 1.")

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in asdict(self).items() if k in names})


# 1. ENVIRONMENT
def load_environment() -> None:
    """Loads a .env file from the working directory, if any."""
    load_dotenv()


def default_config_path() -> Optional[str]:
    return os.getenv(CONFIG_ENV_VAR) or None


def default_log_level() -> str:
    return os.getenv(LOG_LEVEL_ENV_VAR, "INFO").upper()


# 2. PARSING
def _coerce(name: str, raw: Any, kind: type) -> Any:
    if isinstance(raw, kind) and not isinstance(raw, bool):
        return raw
    text = str(raw).strip()
    try:
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError as e:
        raise ConfigError(f"Config key '{name}': cannot read '{text}' as {kind.__name__}.") from e
    return text


def _check_keys(keys: Iterable[str], known: Dict[str, type], origin: str) -> None:
    unknown = sorted(set(keys) - set(known))
    if unknown:
        raise ConfigError(f"Unknown configuration key(s) in {origin}: {', '.join(unknown)}.")


def read_config_file(path: str) -> Dict[str, Optional[str]]:
    if not os.path.exists(path):
        raise ConfigError(f"Configuration file not found: {path}")
    return {k.strip().lower(): v for k, v in dotenv_values(path).items()}


def load_run_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Resolves a RunConfig: dataclass defaults < config file < overrides.

    Args:
        path: KEY=VALUE file (keys are the lower-case field names).
        overrides: values from command-line flags; None entries are ignored.

    Raises:
        ConfigError: unknown keys, unparsable values or a missing file.
    """
    known = {f.name: f.type for f in fields(RunConfig)}
    values: Dict[str, Any] = {}

    if path:
        file_values = read_config_file(path)
        _check_keys(file_values, known, path)
        values.update({k: v for k, v in file_values.items() if v is not None and v != ""})
        logger.info("Read %d key(s) from %s", len(file_values), path)

    flags = {k: v for k, v in (overrides or {}).items() if v is not None}
    _check_keys(flags, known, "command-line overrides")
    values.update(flags)

    coerced = {k: _coerce(k, v, known[k]) for k, v in values.items()}
    return RunConfig(**coerced)


def validate_paths(config: RunConfig, keys: Iterable[str]) -> None:
    """Fails fast on data paths that are required but missing."""
    for key in keys:
        value = getattr(config, key)
        if not value:
            raise ConfigError(f"'{key}' is required for dataset={config.dataset}.")
        if not os.path.exists(value):
            raise ConfigError(f"'{key}' points to a missing file: {value}")


def validate_files(paths: Iterable[str], label: str) -> None:
    missing = [p for p in paths if not os.path.exists(p)]
    if missing:
        raise ConfigError(f"{label} not found: {', '.join(missing)}")


def required_paths(config: RunConfig, splits: Iterable[str] = ("train",)) -> List[str]:
    """Config keys naming the files the given splits read (none for mixture data)."""
    if config.dataset == "mixture":
        return []
    keys = []
    for split in splits:
        keys.append(f"{split}_data")
        if getattr(config, f"{split}_labels"):
            keys.append(f"{split}_labels")
    return keys


# 3. ECHO
def config_to_env(config: RunConfig) -> str:
    return "".join(f"{k}={v}\n" for k, v in asdict(config).items())


def echo_config(config: RunConfig, out_dir: Optional[str] = None) -> str:
    path = os.path.join(out_dir or config.out_dir, RESOLVED_CONFIG_FILE)
    atomic_write_text(path, config_to_env(config))
    logger.info("Resolved configuration written to %s", path)
    return path


# 4. DATA RESOLUTION
def load_run_data(config: RunConfig, split: str = "train") -> Dataset:
    """
    Builds the dataset a run configuration names. Mixture data is drawn
    from the mixture stream: the training split first, then the test split.
    """
    if config.dataset == "mixture":
        rng = make_streams(config.seed).mixture
        spec = MixtureSpec.ring()
        dataset = sample_mixture(spec, config.mixture_samples, rng)
        if split == "test":
            dataset = sample_mixture(spec, config.mixture_samples, rng)
    else:
        validate_paths(config, required_paths(config, [split]))
        dataset = load_dataset(getattr(config, f"{split}_data"), getattr(config, f"{split}_labels") or None)
    return subset_dataset(dataset, config.subset)
