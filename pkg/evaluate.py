import os
import logging
from argparse import Namespace

import modules.eval_model as model
import modules.eval_view as view
from modules.config_utils import (
    default_config_path,
    load_run_config,
    load_run_data,
    required_paths,
    validate_files,
    validate_paths,
)
from modules.checkpoint_manager import load_checkpoint
from modules.net_core import INFER
from modules.lab_assets import DatasetError

"""
EVAL CONTROLLER
---------------
Responsibility: Orchestration Only.
Load checkpoints -> Extract features for both splits -> 1NN accuracy ->
Metrics CSV + side-by-side results table.
"""

logger = logging.getLogger(__name__)


def cmd_eval(args: Namespace) -> int:
    # 1. Configuration & path checks
    config = load_run_config(args.config or default_config_path(), {
        "train_data": args.train_data,
        "train_labels": args.train_labels,
        "test_data": args.test_data,
        "test_labels": args.test_labels,
        "dataset": args.dataset,
    })
    validate_paths(config, required_paths(config, ("train", "test")))
    validate_files(args.checkpoint, "Checkpoint")

    # 2. Data
    train = load_run_data(config, "train")
    test = load_run_data(config, "test")
    if train.labels is None or test.labels is None:
        raise DatasetError("1NN evaluation needs labels for both splits.")

    # 3. One row per checkpoint
    rows = []
    for path in args.checkpoint:
        bundle, _ = load_checkpoint(path)
        bundle.set_mode(INFER)
        train_feats = model.extract_features(bundle, train)
        test_feats = model.extract_features(bundle, test)
        accuracy = model.one_nn_accuracy(train_feats, train.labels, test_feats, test.labels)
        logger.info("%s (%s): 1NN accuracy %.2f%% on %d test rows", path, train_feats.source, accuracy, test.n)
        rows.append({
            "model_kind": bundle.kind,
            "accuracy": accuracy,
            "feature_dim": train_feats.dim,
            "checkpoint": os.path.basename(path),
        })

    # 4. Outputs
    view.write_metrics_csv(rows, args.out)
    print(view.render_results_table(rows))
    return 0
