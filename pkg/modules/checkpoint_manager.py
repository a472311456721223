import json
import struct
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from modules.file_tools import atomic_write_bytes
from modules.data_tools import LabStreams
from modules.net_core import BatchNorm, DenseNet, build_preset
from modules.train_model import (
    NET_ORDER,
    AdamState,
    EpochRecord,
    ModelBundle,
    TrainConfig,
    TrainReport,
    TrainState,
    new_adam_state,
)
from modules.lab_assets import (
    CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
    DTYPE_F64,
    CheckpointFormatError,
    CheckpointLengthError,
    CheckpointMismatchError,
    CheckpointVersionError,
)

"""
CHECKPOINT MANAGER MODULE
-------------------------
Responsibility: Lossless persistence of models and training state.

Container layout (little-endian):
    magic "BGLB" | u32 version | u32 header length | header (UTF-8 JSON,
    sorted keys) | u32 entry count | entries
Each entry:
    u16 name length | name | u8 dtype tag (1 = f64) | u8 ndim | u32 dims... |
    row-major float64 payload
Entry names: ``net.<G|E|D|decoder>.layer<i>.<param>`` for parameters and
batch-norm running statistics, ``adam.<net>.layer<i>.<m|v>.<param>`` for
optimizer moments. The header carries the model kind, the config echo,
the RNG stream states and training progress; never wall-clock times, so
identical runs produce identical bytes.
"""

logger = logging.getLogger(__name__)

Entries = Dict[str, np.ndarray]


@dataclass
class Checkpoint:
    header: Dict[str, Any]
    entries: Entries = field(default_factory=dict)

    @property
    def model_kind(self) -> str:
        return self.header["model_kind"]


# 1. BUNDLE <-> ENTRIES
def _net_entries(name: str, net: DenseNet) -> Entries:
    entries: Entries = {}
    for i, layer in enumerate(net.layers):
        prefix = f"net.{name}.layer{i}"
        for key in sorted(layer.params):
            entries[f"{prefix}.{key}"] = layer.params[key]
        if isinstance(layer, BatchNorm):
            entries[f"{prefix}.running_mean"] = layer.running_mean
            entries[f"{prefix}.running_var"] = layer.running_var
    return entries


def _adam_entries(state: AdamState) -> Entries:
    entries: Entries = {}
    for i, (m_layer, v_layer) in enumerate(zip(state.m, state.v)):
        for key in sorted(m_layer):
            entries[f"adam.{state.name}.layer{i}.m.{key}"] = m_layer[key]
            entries[f"adam.{state.name}.layer{i}.v.{key}"] = v_layer[key]
    return entries


def _record_dict(record: EpochRecord) -> Dict[str, float]:
    return {
        "epoch": record.epoch, "d_loss": record.d_loss, "ge_loss": record.ge_loss,
        "value": record.value, "recon_error": record.recon_error, "lr": record.lr,
    }


def to_checkpoint(bundle: ModelBundle, state: Optional[TrainState] = None) -> Checkpoint:
    names = [n for n in NET_ORDER if n in bundle.nets]
    header: Dict[str, Any] = {
        "model_kind": bundle.kind,
        "config": bundle.config.to_dict(),
        "nets": {n: bundle.nets[n].spec for n in names},
    }
    entries: Entries = {}
    for n in names:
        entries.update(_net_entries(n, bundle.nets[n]))

    if state is not None:
        header["rng"] = state.streams.get_state()
        header["progress"] = {
            "epoch": state.epoch,
            "iteration": state.iteration,
            "initial_recon_error": state.report.initial_recon_error,
            "records": [_record_dict(r) for r in state.report.records],
            "adam_steps": {n: state.optim[n].t for n in names},
        }
        for n in names:
            entries.update(_adam_entries(state.optim[n]))
    return Checkpoint(header=header, entries=entries)


# 2. BINARY CODEC
def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    header = json.dumps(checkpoint.header, sort_keys=True).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(header)), header,
             struct.pack("<I", len(checkpoint.entries))]
    for name, array in checkpoint.entries.items():
        array = np.ascontiguousarray(array, dtype=np.float64)
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)) + raw_name)
        parts.append(struct.pack(f"<BB{array.ndim}I", DTYPE_F64, array.ndim, *array.shape))
        parts.append(array.astype("<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, size: int, what: str) -> bytes:
        if self.pos + size > len(self.raw):
            raise CheckpointLengthError(f"Checkpoint truncated while reading {what}.")
        chunk = self.raw[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt: str, what: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(raw: bytes) -> Checkpoint:
    """
    Raises:
        CheckpointFormatError: bad magic, header or dtype tag.
        CheckpointVersionError: unknown format version.
        CheckpointLengthError: truncated data (names the entry).
    """
    reader = _Reader(raw)
    if reader.take(len(CHECKPOINT_MAGIC), "magic") != CHECKPOINT_MAGIC:
        raise CheckpointFormatError("Not a checkpoint file (bad magic).")
    (version,) = reader.unpack("<I", "version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"Unsupported checkpoint version {version} (reader understands {CHECKPOINT_VERSION}).")
    (header_len,) = reader.unpack("<I", "header length")
    try:
        header = json.loads(reader.take(header_len, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"Corrupt checkpoint header: {e}") from e

    (count,) = reader.unpack("<I", "entry count")
    entries: Entries = {}
    for index in range(count):
        (name_len,) = reader.unpack("<H", f"entry #{index} name length")
        name = reader.take(name_len, f"entry #{index} name").decode("utf-8")
        dtype, ndim = reader.unpack("<BB", f"entry '{name}' dtype")
        if dtype != DTYPE_F64:
            raise CheckpointFormatError(f"Entry '{name}' has unknown dtype tag {dtype}.")
        dims = reader.unpack(f"<{ndim}I", f"entry '{name}' shape")
        size = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        payload = reader.take(8 * size, f"entry '{name}' payload")
        entries[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
    if reader.pos != len(raw):
        raise CheckpointFormatError(f"{len(raw) - reader.pos} trailing bytes after the last entry.")
    return Checkpoint(header=header, entries=entries)


# 3. RESTORE
def _assign(target: Dict[str, np.ndarray], key: str, entries: Entries, name: str) -> None:
    if name not in entries:
        raise CheckpointMismatchError(f"Checkpoint lacks entry '{name}'.")
    value = entries[name]
    if value.shape != target[key].shape:
        raise CheckpointMismatchError(f"Entry '{name}' has shape {value.shape}, model expects {target[key].shape}.")
    target[key] = value.copy()


def restore_bundle(checkpoint: Checkpoint, bundle: ModelBundle) -> ModelBundle:
    """Copies parameters and running statistics into an existing bundle."""
    if checkpoint.model_kind != bundle.kind:
        raise CheckpointMismatchError(f"Checkpoint holds a '{checkpoint.model_kind}' model, not '{bundle.kind}'.")
    expected = {n for n in checkpoint.header.get("nets", {})}
    if expected != set(bundle.nets):
        raise CheckpointMismatchError(f"Checkpoint networks {sorted(expected)} do not match {sorted(bundle.nets)}.")

    for n, net in bundle.nets.items():
        for i, layer in enumerate(net.layers):
            prefix = f"net.{n}.layer{i}"
            for key in list(layer.params):
                _assign(layer.params, key, checkpoint.entries, f"{prefix}.{key}")
            if isinstance(layer, BatchNorm):
                stats = {"running_mean": layer.running_mean, "running_var": layer.running_var}
                for key in stats:
                    _assign(stats, key, checkpoint.entries, f"{prefix}.{key}")
                layer.running_mean, layer.running_var = stats["running_mean"], stats["running_var"]
        net.zero_grads()
    return bundle


def bundle_from_checkpoint(checkpoint: Checkpoint) -> ModelBundle:
    try:
        config = TrainConfig.from_dict(checkpoint.header["config"])
        nets = {
            n: build_preset(spec["preset"], spec["latent_dim"], spec["data_dim"], spec["hidden"])
            for n, spec in checkpoint.header["nets"].items()
        }
    except (KeyError, TypeError) as e:
        raise CheckpointFormatError(f"Checkpoint header is incomplete: {e}") from e
    return restore_bundle(checkpoint, ModelBundle(kind=checkpoint.model_kind, nets=nets, config=config))


def state_from_checkpoint(checkpoint: Checkpoint, bundle: ModelBundle) -> Optional[TrainState]:
    """Rebuilds the resumable training state, or None for a model-only checkpoint."""
    progress = checkpoint.header.get("progress")
    if progress is None or "rng" not in checkpoint.header:
        return None

    optim: Dict[str, AdamState] = {}
    for n, net in bundle.nets.items():
        adam = new_adam_state(net, n)
        adam.t = int(progress["adam_steps"][n])
        for i, (m_layer, v_layer) in enumerate(zip(adam.m, adam.v)):
            for key in list(m_layer):
                _assign(m_layer, key, checkpoint.entries, f"adam.{n}.layer{i}.m.{key}")
                _assign(v_layer, key, checkpoint.entries, f"adam.{n}.layer{i}.v.{key}")
        optim[n] = adam

    streams = LabStreams(seed=bundle.config.seed)
    streams.set_state(checkpoint.header["rng"])
    report = TrainReport(
        records=[EpochRecord(seconds=float("nan"), **r) for r in progress["records"]],
        initial_recon_error=progress["initial_recon_error"],
    )
    return TrainState(bundle=bundle, optim=optim, streams=streams,
                      epoch=int(progress["epoch"]), iteration=int(progress["iteration"]), report=report)


# 4. FILE API
def save_checkpoint(path: str, bundle: ModelBundle, state: Optional[TrainState] = None) -> str:
    """Writes the bundle (and the training state when given) atomically."""
    payload = encode_checkpoint(to_checkpoint(bundle, state))
    atomic_write_bytes(path, payload)
    logger.info("Saved %s checkpoint (%d bytes) to %s", bundle.kind, len(payload), path)
    return path


def read_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        return decode_checkpoint(f.read())


def load_checkpoint(path: str, bundle: Optional[ModelBundle] = None) -> Tuple[ModelBundle, Optional[TrainState]]:
    """
    Loads a checkpoint into ``bundle`` (verifying it matches) or into a
    freshly built bundle. Returns the bundle and the training state if
    the file carries one.
    """
    checkpoint = read_checkpoint(path)
    bundle = restore_bundle(checkpoint, bundle) if bundle is not None else bundle_from_checkpoint(checkpoint)
    state = state_from_checkpoint(checkpoint, bundle)
    logger.info("Loaded %s checkpoint from %s", bundle.kind, path)
    return bundle, state


def list_entries(path: str) -> List[Tuple[str, Tuple[int, ...]]]:
    checkpoint = read_checkpoint(path)
    return [(name, array.shape) for name, array in checkpoint.entries.items()]
