import logging
from argparse import Namespace

import modules.oracle_model as model
import modules.oracle_view as view

"""
ORACLE CONTROLLER
-----------------
Responsibility: Orchestration Only.
Pick the input mode (world file | random worlds | brute force) -> run the
check suite (Model) -> print the verification report (View).
Exit status is nonzero when any check fails.
"""

logger = logging.getLogger(__name__)


def cmd_oracle(args: Namespace) -> int:
    if args.world:
        world = model.load_world(args.world)
        title = f"World {args.world} (m={world.m}, n={world.n})"
        results = model.run_world_suite(world, seed=args.seed, tables=args.tables)
    elif args.random is not None:
        title = f"{args.random} random worlds, seed {args.seed}"
        results = model.run_identity_suite(args.random, seed=args.seed, tables=args.tables)
    else:
        m, n = args.brute
        title = f"Brute force m={m}, n={n} (uniform marginals)"
        results = model.run_brute_suite(m, n)

    print(view.render_report(results, title))
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.error("Failed checks: %s", ", ".join(failed))
        return 1
    return 0
