import math
import logging
from argparse import Namespace
from typing import Optional

import numpy as np

import modules.eval_view as view
from modules.eval_model import cosine_distances, cosine_neighbors, extract_features, reconstruct, reconstruction_error
from modules.checkpoint_manager import load_checkpoint
from modules.config_utils import validate_files
from modules.data_tools import Dataset, export_dataset_csv, load_dataset, make_streams, sample_latent, subset_dataset
from modules.net_core import INFER
from modules.lab_assets import ConfigError, ReconstructionUnavailableError

"""
GALLERY CONTROLLER
------------------
Responsibility: Qualitative outputs.
- sample: G(z) grid for z ~ p_Z drawn from the latent stream of --seed
- reconstruct: paired grids of x and G(E(x)) in matching order, plus the
  mean reconstruction error
- neighbors: cosine nearest neighbours in feature space (index CSV and a
  grid with each query followed by its neighbours)
Vectors that are not square images (2D mixture) are written as CSV.
"""

logger = logging.getLogger(__name__)


def _is_square(dim: int) -> bool:
    return math.isqrt(dim) ** 2 == dim


def _stem(path: str) -> str:
    return path.rsplit(".", 1)[0]


def _write(vectors: np.ndarray, path: str, name: str, rows: Optional[int] = None, cols: Optional[int] = None) -> str:
    if _is_square(vectors.shape[1]):
        return view.image_grid(vectors, path, rows, cols)
    csv_path = _stem(path) + ".csv"
    export_dataset_csv(Dataset(vectors, None, name, bounded=False), csv_path)
    return csv_path


def cmd_sample(args: Namespace) -> int:
    validate_files([args.checkpoint], "Checkpoint")
    bundle, _ = load_checkpoint(args.checkpoint)
    generator = bundle.generator
    if generator is None:
        raise ReconstructionUnavailableError(f"A '{bundle.kind}' model has no generator to sample from.")

    z = sample_latent(bundle.latent_spec, args.count, make_streams(args.seed).latent)
    samples = generator.infer(z)
    logger.info("Drew %d samples from %s with seed %d", args.count, args.checkpoint, args.seed)
    _write(samples, args.out, "samples")
    return 0


def cmd_reconstruct(args: Namespace) -> int:
    validate_files([args.checkpoint, args.data], "Input file")
    bundle, _ = load_checkpoint(args.checkpoint)
    if bundle.encoder is None or bundle.generator is None:
        raise ReconstructionUnavailableError(f"A '{bundle.kind}' model has no encoder; reconstruction needs E and G.")

    data = subset_dataset(load_dataset(args.data, args.labels), args.count)
    x_hat = reconstruct(bundle, data.features)
    error = reconstruction_error(bundle, data)
    prefix = _stem(args.out)
    _write(data.features, f"{prefix}_x.pgm", "inputs")
    _write(x_hat, f"{prefix}_recon.pgm", "reconstructions")
    print(f"Reconstruction error over {data.n} rows (mean ||x - G(E(x))||): {error:.6f}")
    return 0


def cmd_neighbors(args: Namespace) -> int:
    inputs = [args.checkpoint, args.data] + ([args.query_data] if args.query_data else [])
    validate_files(inputs, "Input file")
    if args.k < 1 or args.queries < 1:
        raise ConfigError("--k and --queries must be >= 1.")

    # 1. Model & data
    bundle, _ = load_checkpoint(args.checkpoint)
    bundle.set_mode(INFER)
    corpus = load_dataset(args.data, args.labels)
    source = load_dataset(args.query_data, args.query_labels) if args.query_data else corpus
    queries = subset_dataset(source, args.queries)

    # 2. Retrieval
    corpus_feats = extract_features(bundle, corpus)
    query_feats = extract_features(bundle, queries)
    k = min(args.k, corpus.n)
    indices = cosine_neighbors(query_feats, corpus_feats, k)
    distances = np.take_along_axis(cosine_distances(query_feats, corpus_feats), indices, axis=1)
    logger.info("Retrieved %d neighbour(s) for %d queries over %d rows (%s)",
                k, queries.n, corpus.n, corpus_feats.source)

    # 3. Outputs
    frame = view.neighbors_frame(indices, distances, queries.labels, corpus.labels)
    view.write_neighbors_csv(frame, _stem(args.out) + "_index.csv")
    tiles = np.concatenate([queries.features[:, None, :], corpus.features[indices]], axis=1)
    _write(tiles.reshape(-1, corpus.d), args.out, "neighbors", rows=queries.n, cols=k + 1)
    if "label" in frame:
        agreement = float((frame["label"] == frame["query_label"]).mean())
        print(f"Neighbour label agreement: {100.0 * agreement:.2f}%")
    return 0
