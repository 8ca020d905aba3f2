import argparse
import logging
import sys
from typing import List, Optional

import numpy as np
from pydantic import ValidationError

from modules.config import Config
from modules.multiplicity.combinatorics import (analytic_space_stats,
                                                count_equal_utility,
                                                format_count_summary,
                                                sample_equal_utility,
                                                sampled_space_stats)
from modules.multiplicity.domain import EqualUtilitySpace
from modules.multiplicity.exceptions import MultiplicityError
from modules.multiplicity.runner import (FIGURES, ExperimentConfig,
                                         ResultsArchive, emit_plot_data,
                                         run_experiment)
from modules.multiplicity.seeding import make_rng

logger = logging.getLogger("multiplicity")


def _space_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--n", type=int, required=True, help="Number of individuals")
    parser.add_argument("--k", type=int, required=True, help="Number of positive outcomes")
    parser.add_argument("--n-prime", type=int, required=True, help="Number of qualified individuals")
    parser.add_argument("--k-prime", type=int, required=True, help="Qualified individuals selected by the baseline")
    parser.add_argument("--delta", type=int, default=0, help="Utility tolerance in selected-qualified counts")


def _space(args: argparse.Namespace) -> EqualUtilitySpace:
    return EqualUtilitySpace(n=args.n, k=args.k, n_prime=args.n_prime, k_prime=args.k_prime, delta=args.delta)


def count_command(args: argparse.Namespace) -> int:
    space = _space(args)
    print(format_count_summary(space, count_equal_utility(space)))
    return 0


def sample_space_command(args: argparse.Namespace) -> int:
    space = _space(args)
    rng = make_rng(args.seed)
    mask = np.arange(space.n) < space.n_prime
    counts = np.zeros(space.n, dtype=np.int64)
    for _ in range(args.draws):
        counts += sample_equal_utility(space, rng, mask).outcomes
    frequencies = counts / args.draws

    print(format_count_summary(space, count_equal_utility(space)))
    print()
    print(f"Selection frequencies over {args.draws} draws (ids 0..{space.n_prime - 1} qualified)")
    for i, frequency in enumerate(frequencies[: args.show]):
        print(f"  id {i:>5}  {'Q' if mask[i] else '-'}  {frequency:.4f}")
    if space.n > args.show:
        print(f"  ... {space.n - args.show} more")

    if args.draws >= 2:
        sampled = sampled_space_stats(space, args.draws, make_rng(args.seed))
        print(f"Sampled:  p(qualified)={sampled.p_qualified:.4f}  p(unqualified)={sampled.p_unqualified:.4f}  "
              f"consistency={sampled.pairwise_consistency:.4f}")
    if space.delta == 0:
        analytic = analytic_space_stats(space)
        print(f"Analytic: p(qualified)={analytic.p_qualified:.4f}  p(unqualified)={analytic.p_unqualified:.4f}  "
              f"consistency={analytic.pairwise_consistency:.4f}")
    return 0


def run_command(args: argparse.Namespace) -> int:
    config = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.budget_scale is not None:
        overrides["budget_scale"] = args.budget_scale
    if args.output is not None:
        overrides["output_dir"] = args.output
    if overrides:
        config = ExperimentConfig.model_validate({**config.model_dump(), **overrides})
    archive = run_experiment(config)
    print(f"Results written to {archive.root}")
    return 0


def emit_command(args: argparse.Namespace) -> int:
    archive = ResultsArchive(args.archive or Config.get_output_root())
    figure_ids = list(FIGURES) if args.figure == "all" else [args.figure]
    for figure_id in figure_ids:
        print(emit_plot_data(archive, figure_id, args.out))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="multiplicity",
        description="Allocation multiplicity simulator: equal-utility counts, Rashomon sampling and mapping experiments.",
    )
    parser.add_argument("--log-level", default=None, help="Overrides MULTIPLICITY_LOG_LEVEL")
    commands = parser.add_subparsers(dest="command", required=True)

    count = commands.add_parser("count", help="Count the allocations of an equal-utility space")
    _space_arguments(count)
    count.set_defaults(handler=count_command)

    sample = commands.add_parser("sample-space", help="Draw allocations uniformly from an equal-utility space")
    _space_arguments(sample)
    sample.add_argument("--draws", type=int, default=1000)
    sample.add_argument("--seed", type=int, default=0)
    sample.add_argument("--show", type=int, default=20, help="Number of ids whose frequency is printed")
    sample.set_defaults(handler=sample_space_command)

    run = commands.add_parser("run", help="Run the simulation protocol and write a results archive")
    run.add_argument("--config", type=str, default=None, help="Experiment configuration JSON (default: smoke run)")
    run.add_argument("--threads", type=int, default=None)
    run.add_argument("--budget-scale", choices=["smoke", "full"], default=None)
    run.add_argument("--output", type=str, default=None, help="Archive directory")
    run.set_defaults(handler=run_command)

    emit = commands.add_parser("emit", help="Write the plot data behind a figure")
    emit.add_argument("--figure", required=True, choices=[*FIGURES, "all"])
    emit.add_argument("--archive", type=str, default=None, help="Archive directory (default: output root)")
    emit.add_argument("--out", type=str, default=None, help="Target directory (default: <archive>/figures)")
    emit.set_defaults(handler=emit_command)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=(args.log_level or Config.get_log_level()).upper(),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    try:
        return args.handler(args)
    except MultiplicityError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return 1
    except ValidationError as e:
        logger.error("Invalid input: %s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
