import os
import shutil
import tempfile
import logging
from typing import Union

import pandas as pd

"""
FILE TOOLS MODULE
-----------------
Responsibility: Atomic persistence primitives shared by every writer.
All outputs are written to a temporary file in the destination directory,
flushed to disk, then moved over the target so readers never observe a
partially written file.
"""

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]


def ensure_dir(path: PathLike) -> None:
    """Creates a directory (and parents) if missing."""
    if path and not os.path.exists(path):
        os.makedirs(path)


def atomic_write_bytes(path: PathLike, payload: bytes) -> None:
    """
    Persists a byte payload using an atomic write-replace strategy.

    Args:
        path: Destination file.
        payload: Raw bytes to store.
    """
    target_dir = os.path.dirname(os.path.abspath(path))
    ensure_dir(target_dir)
    with tempfile.NamedTemporaryFile("wb", delete=False, dir=target_dir) as tmp:
        tmp.write(payload)
        tmp.flush()
        os.fsync(tmp.fileno())
    shutil.move(tmp.name, path)
    logger.debug("Wrote %d bytes to %s", len(payload), path)


def atomic_write_text(path: PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_frame(path: PathLike, frame: pd.DataFrame) -> None:
    """Writes a DataFrame as CSV with a header row and no index column."""
    atomic_write_text(path, frame.to_csv(index=False))
