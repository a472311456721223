import sys
import logging
import argparse
from typing import List, Optional

from modules.config_utils import default_log_level, load_environment
from modules.lab_assets import MODEL_KINDS, DivergenceError, LabError

# Import Controllers (Command Logic)
from train import cmd_train
from evaluate import cmd_eval
from oracle import cmd_oracle
from gallery import cmd_neighbors, cmd_reconstruct, cmd_sample

"""
BIGAN LAB ENTRY POINT
---------------------
Responsibility: Command routing, logging setup and exit codes.
Exit status: 0 on success, 1 on any reported failure, 2 on training
divergence (argparse also uses 2 for usage errors).
"""

logger = logging.getLogger("bigan_lab")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bigan-lab", description="BiGAN laboratory: training, evaluation and exact theory checks.")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING... (default: $BIGAN_LAB_LOG_LEVEL or INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    # train
    p = sub.add_parser("train", help="Train BiGAN or a baseline; writes checkpoints, report CSV and curves.")
    p.add_argument("--config", help="KEY=VALUE configuration file (default: $BIGAN_LAB_CONFIG)")
    p.add_argument("--model", choices=MODEL_KINDS)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="Output directory")
    p.add_argument("--dataset", choices=("mnist", "mixture", "csv"))
    p.add_argument("--train-data")
    p.add_argument("--train-labels")
    p.add_argument("--subset", type=int, help="Use only the first N training rows")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--hidden-units", type=int)
    p.add_argument("--gx-factor", type=int, help="Generalized BiGAN downsampling factor (1 = plain)")
    p.add_argument("--snapshot-every", type=int)
    p.add_argument("--resume", help="Continue training from a checkpoint")
    p.set_defaults(handler=cmd_train)

    # eval
    p = sub.add_parser("eval", help="1NN accuracy of one or more checkpoints.")
    p.add_argument("--checkpoint", action="append", required=True, help="Repeat for several models")
    p.add_argument("--config")
    p.add_argument("--dataset", choices=("mnist", "mixture", "csv"))
    p.add_argument("--train-data")
    p.add_argument("--train-labels")
    p.add_argument("--test-data")
    p.add_argument("--test-labels")
    p.add_argument("--out", default="metrics.csv", help="Metrics CSV path")
    p.set_defaults(handler=cmd_eval)

    # oracle
    p = sub.add_parser("oracle", help="Exact theory checks on finite worlds.")
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--world", help="JSON world file")
    mode.add_argument("--random", type=int, metavar="N", help="Check N seeded random worlds")
    mode.add_argument("--brute", type=int, nargs=2, metavar=("M", "N"), help="Exhaustive optimum search")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tables", type=int, default=1000, help="Random discriminator tables per world")
    p.set_defaults(handler=cmd_oracle)

    # sample
    p = sub.add_parser("sample", help="Grid of generator samples G(z).")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="samples.pgm")
    p.set_defaults(handler=cmd_sample)

    # reconstruct
    p = sub.add_parser("reconstruct", help="Paired grids of x and G(E(x)).")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--labels")
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--out", default="reconstructions.pgm")
    p.set_defaults(handler=cmd_reconstruct)

    # neighbors
    p = sub.add_parser("neighbors", help="Cosine nearest neighbours in feature space.")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="Corpus searched for neighbours")
    p.add_argument("--labels")
    p.add_argument("--query-data", help="Query rows (default: the corpus itself)")
    p.add_argument("--query-labels")
    p.add_argument("--queries", type=int, default=10, help="Use the first N query rows")
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--out", default="neighbors.pgm", help="Grid path; the index CSV goes next to it")
    p.set_defaults(handler=cmd_neighbors)
    return parser


def configure_logging(level: str) -> None:
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT, force=True)


def main(argv: Optional[List[str]] = None) -> int:
    load_environment()
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level or default_log_level())
    try:
        return args.handler(args)
    except DivergenceError as e:
        logger.error("%s (iteration %d)", e, e.iteration)
        return 2
    except LabError as e:
        logger.error("%s", e)
        return 1
    except OSError as e:
        logger.error("I/O failure: %s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
