import os
import logging
from argparse import Namespace
from dataclasses import replace
from typing import Any, Dict

import modules.train_model as model
import modules.train_view as view
from modules.config_utils import (
    default_config_path,
    echo_config,
    load_run_config,
    load_run_data,
    required_paths,
    validate_files,
    validate_paths,
)
from modules.checkpoint_manager import load_checkpoint, save_checkpoint
from modules.file_tools import ensure_dir
from modules.lab_assets import ConfigError

"""
TRAIN CONTROLLER
----------------
Responsibility: Orchestration Only.
Resolve config -> Load data (Model) -> Train with snapshots (Model) ->
Export report, curves and checkpoints (View / Manager).
"""

logger = logging.getLogger(__name__)

REPORT_FILE = "train_report.csv"
CHART_FILE = "training_curves.html"


def train_overrides(args: Namespace) -> Dict[str, Any]:
    """Maps train flags onto RunConfig keys (unset flags are None)."""
    return {
        "model_kind": args.model,
        "epochs": args.epochs,
        "seed": args.seed,
        "out_dir": args.out,
        "dataset": args.dataset,
        "train_data": args.train_data,
        "train_labels": args.train_labels,
        "subset": args.subset,
        "batch_size": args.batch_size,
        "hidden_units": args.hidden_units,
        "gx_factor": args.gx_factor,
        "snapshot_every": args.snapshot_every,
    }


def checkpoint_path(out_dir: str, kind: str, tag: str) -> str:
    return os.path.join(out_dir, f"{kind}_{tag}.bglb")


def cmd_train(args: Namespace) -> int:
    # 1. Configuration & path checks
    config = load_run_config(args.config or default_config_path(), train_overrides(args))
    validate_paths(config, required_paths(config, ["train"]))
    if args.resume:
        validate_files([args.resume], "Resume checkpoint")
    ensure_dir(config.out_dir)

    # 2. Optional resume state (the stored training settings win)
    state = None
    if args.resume:
        bundle, state = load_checkpoint(args.resume)
        if state is None:
            raise ConfigError(f"{args.resume} holds no training state; it cannot be resumed.")
        if bundle.config != config.train_config():
            logger.warning("Resuming with the configuration stored in %s; conflicting settings are ignored.", args.resume)
        config = replace(config, **bundle.config.to_dict())
    train_config = config.train_config()
    echo_config(config)

    # 3. Data
    dataset = load_run_data(config, "train")
    logger.info("Training %s on %s (n=%d, d=%d) for %d epoch(s), seed %d",
                train_config.model_kind, dataset.name, dataset.n, dataset.d,
                model.total_epochs(train_config), train_config.seed)

    # 4. Training with periodic snapshots
    total = model.total_epochs(train_config)

    def snapshot(current: model.TrainState) -> None:
        if current.epoch % train_config.snapshot_every == 0 and current.epoch < total:
            tag = f"epoch{current.epoch:04d}"
            save_checkpoint(checkpoint_path(config.out_dir, train_config.model_kind, tag), current.bundle, current)

    state = model.run_training(train_config, dataset, state, on_epoch_end=snapshot)

    # 5. Outputs
    save_checkpoint(checkpoint_path(config.out_dir, train_config.model_kind, "final"), state.bundle, state)
    view.write_report_csv(state.report, os.path.join(config.out_dir, REPORT_FILE))
    view.write_training_chart(state.report, os.path.join(config.out_dir, CHART_FILE),
                              title=f"{train_config.model_kind} on {dataset.name}")
    print(view.render_report_summary(state.report))
    return 0
