import math
import logging
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from modules.file_tools import atomic_write_bytes, atomic_write_frame
from modules.lab_assets import (
    METRICS_COLUMNS,
    RESULTS_HEADERS,
    RESULTS_ORDER,
    REFERENCE_ACCURACY,
    GridLayoutError,
)

"""
EVAL VIEW MODULE
----------------
Responsibility: Evaluation artifacts.
1. Image grids as binary PGM (P5)
2. Metrics CSV (one row per checkpoint)
3. Results table (model kinds side by side)
4. Cosine neighbour listings
"""

logger = logging.getLogger(__name__)


# 1. IMAGE GRIDS
def grid_layout(count: int, max_cols: int = 10) -> tuple:
    cols = min(count, max_cols)
    return math.ceil(count / cols), cols


def tile_image(vectors: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """
    Arranges n flattened square images row-major on a rows x cols grid with
    no padding; unused cells stay black. Values map [-1, 1] -> [0, 255].
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[0] == 0:
        raise GridLayoutError("Expected a non-empty n x d matrix of images.")
    n, dim = vectors.shape
    side = math.isqrt(dim)
    if side * side != dim:
        raise GridLayoutError(f"Vector length {dim} is not a perfect square.")
    if rows < 1 or cols < 1 or n > rows * cols:
        raise GridLayoutError(f"{n} images do not fit a {rows} x {cols} layout.")

    pixels = np.clip(np.rint((vectors + 1.0) * 127.5), 0, 255).astype(np.uint8)
    canvas = np.zeros((rows * side, cols * side), dtype=np.uint8)
    for i in range(n):
        r, c = divmod(i, cols)
        canvas[r * side:(r + 1) * side, c * side:(c + 1) * side] = pixels[i].reshape(side, side)
    return canvas


def encode_pgm(canvas: np.ndarray) -> bytes:
    height, width = canvas.shape
    return f"P5\n{width} {height}\n255\n".encode("ascii") + canvas.astype(np.uint8).tobytes()


def image_grid(vectors: np.ndarray, path: str, rows: Optional[int] = None, cols: Optional[int] = None) -> str:
    """Writes the grid as a binary PGM file; the layout defaults to at most 10 columns."""
    if rows is None or cols is None:
        rows, cols = grid_layout(len(vectors))
    atomic_write_bytes(path, encode_pgm(tile_image(vectors, rows, cols)))
    logger.info("Wrote %d-image grid (%dx%d) to %s", len(vectors), rows, cols, path)
    return path


# 2. METRICS TABLES
def metrics_frame(rows: List[Dict]) -> pd.DataFrame:
    return pd.DataFrame(rows, columns=METRICS_COLUMNS)


def write_metrics_csv(rows: List[Dict], path: str) -> None:
    atomic_write_frame(path, metrics_frame(rows))
    logger.info("Wrote %d metric row(s) to %s", len(rows), path)


def render_results_table(rows: List[Dict]) -> str:
    """
    One column per model kind (BiGAN, D, LR, JLR, AE l2, AE l1),
    measured accuracy against the reference figures.
    """
    measured = {}
    for row in rows:
        measured.setdefault(row["model_kind"], row["accuracy"])
    kinds = [k for k in RESULTS_ORDER if k in measured]
    kinds += [k for k in measured if k not in kinds]

    table = pd.DataFrame(
        [
            [measured[k] for k in kinds],
            [REFERENCE_ACCURACY.get(k, float("nan")) for k in kinds],
        ],
        index=["1NN accuracy (%)", "reference (%)"],
        columns=[RESULTS_HEADERS.get(k, k) for k in kinds],
    )
    try:
        return table.to_markdown(floatfmt=".2f")
    except ImportError:
        return table.to_string(float_format=lambda v: f"{v:.2f}")


# 4. NEIGHBOUR RETRIEVAL
def neighbors_frame(indices: np.ndarray, distances: np.ndarray,
                    query_labels: Optional[np.ndarray] = None,
                    corpus_labels: Optional[np.ndarray] = None) -> pd.DataFrame:
    """One row per (query, rank): corpus index, cosine distance and, when known, both labels."""
    queries, k = indices.shape
    frame = pd.DataFrame({
        "query": np.repeat(np.arange(queries), k),
        "rank": np.tile(np.arange(k), queries),
        "index": indices.ravel(),
        "distance": distances.ravel(),
    })
    if query_labels is not None and corpus_labels is not None:
        frame["query_label"] = np.repeat(np.asarray(query_labels), k)
        frame["label"] = np.asarray(corpus_labels)[indices.ravel()]
    return frame


def write_neighbors_csv(frame: pd.DataFrame, path: str) -> None:
    atomic_write_frame(path, frame)
    logger.info("Wrote %d neighbour row(s) to %s", len(frame), path)
