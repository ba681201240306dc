import argparse
import asyncio
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .config import Variant, load_run_config, load_suite
from .dsl.catalog import render_catalog
from .dsl.spec import OperatorSpec, validate_spec
from .engine import init_population, run_horizon
from .errors import BksMissingError, BudgetExceededError, ConfigError, DyaceError, InstanceParseError, SpecValidationError
from .problems import Domain, JsspInstance, ProblemInstance, TspInstance, exhaustive_makespan, held_karp, load_instance, optimality_gap
from .services.control_loop import run_variant
from .services.reporting import INSPECT_QUERIES, inspect_trace, run_suite, write_run_artifacts
from .services.trace import budget_ledger, read_trace
from .utils.logging import configure_logging, run_context
from .utils.rng import RandomStream

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_BUDGET = 4


def cmd_run(args: argparse.Namespace) -> int:
    overrides = {
        "run.variant": args.variant,
        "run.seed": args.seed,
        "run.budget": args.budget,
        "controller.backend": args.backend,
    }
    config = load_run_config(args.config, overrides)
    name = config.instance.name or Path(config.instance.path).stem
    with run_context(instance=name, variant=config.variant.value, seed=config.run.seed):
        trace = asyncio.run(run_variant(config))
    # the ledger is re-walked from the event log before anything is written
    budget_ledger(trace.events)
    paths = write_run_artifacts(trace, Path(args.output))
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return EXIT_OK


def cmd_suite(args: argparse.Namespace) -> int:
    suite = load_suite(args.suite)
    if args.output:
        suite = suite.model_copy(update={"output": Path(args.output)})
    report = run_suite(suite)
    print(report.matrix().to_string() if not report.matrix().empty else "no successful cells")
    for cell in report.failed:
        print(f"FAILED {cell.instance} {cell.variant} seed {cell.seed}: {cell.error}", file=sys.stderr)
    return EXIT_RUNTIME if report.failed else EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    events = read_trace(args.trace)
    sys.stdout.write(inspect_trace(events, args.query))
    return EXIT_OK


def cmd_validate_spec(args: argparse.Namespace) -> int:
    try:
        text = Path(args.spec).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read {args.spec}: {e}") from e
    instance = load_instance(args.instance, args.format) if args.instance else None
    domain = args.domain or (instance.domain.value if instance is not None else None)
    try:
        spec = validate_spec(text, domain=domain)
    except SpecValidationError as e:
        for error in e.errors:
            print(error, file=sys.stderr)
        return EXIT_RUNTIME
    print(spec.serialize())
    if instance is not None:
        dry_run(spec, instance, args.generations, args.seed)
    return EXIT_OK


# exact optima are only attempted below these sizes
ORACLE_MAX_OPERATIONS = 9
ORACLE_MAX_NODES = 12


def exact_optimum(instance: ProblemInstance) -> Optional[float]:
    if isinstance(instance, JsspInstance) and instance.encoding_length <= ORACLE_MAX_OPERATIONS:
        return exhaustive_makespan(instance)[0]
    if isinstance(instance, TspInstance) and instance.num_nodes <= ORACLE_MAX_NODES:
        return held_karp(instance.distances)[0]
    return None


def dry_run(spec: OperatorSpec, instance: ProblemInstance, generations: int, seed: int) -> None:
    """Apply a validated spec for a few generations and report the gap next to the exact optimum when one is cheap"""
    stream = RandomStream(seed)
    pop = init_population(instance, 20, stream.derive("population"))
    final, _ = run_horizon(pop, spec, generations, stream.derive("real"))
    print(
        f"dry run on {instance.name}: best cost {final.best_cost:g} after {generations} generations, "
        f"gap {optimality_gap(final.best_cost, instance.bks):.4f}%",
        file=sys.stderr,
    )
    optimum = exact_optimum(instance)
    if optimum is not None:
        print(f"exact optimum {optimum:g}, gap to it {optimality_gap(final.best_cost, optimum):.4f}%", file=sys.stderr)


def cmd_list_catalog(args: argparse.Namespace) -> int:
    domains = [Domain(args.domain)] if args.domain else list(Domain)
    for domain in domains:
        print(f"[{domain.value}]")
        print(render_catalog(domain))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dyace", description="Receding-horizon operator evolution for combinatorial search")
    parser.add_argument("--log-level", default=None, help="overrides LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run one variant on one instance")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--variant", choices=[v.value for v in Variant], default=None)
    run.add_argument("--backend", choices=["scripted", "openai", "replay"], default=None)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--budget", type=int, default=None)
    run.add_argument("--output", type=Path, default=Path("runs/latest"))
    run.set_defaults(func=cmd_run)

    suite = sub.add_parser("suite", help="Run an (instance, variant, seed) grid and aggregate final gaps")
    suite.add_argument("suite", type=Path)
    suite.add_argument("--output", type=Path, default=None)
    suite.set_defaults(func=cmd_suite)

    inspect = sub.add_parser("inspect", help="Render a view of a recorded trace")
    inspect.add_argument("trace", type=Path)
    inspect.add_argument("query", choices=INSPECT_QUERIES)
    inspect.set_defaults(func=cmd_inspect)

    validate = sub.add_parser("validate-spec", help="Validate a DSL document and print it normalized")
    validate.add_argument("spec", type=Path)
    validate.add_argument("--domain", choices=[d.value for d in Domain], default=None)
    validate.add_argument("--instance", type=Path, default=None, help="dry-run the spec on this instance")
    validate.add_argument("--format", choices=["taillard", "tsplib", "cvrplib"], default=None)
    validate.add_argument("--generations", type=int, default=10)
    validate.add_argument("--seed", type=int, default=0)
    validate.set_defaults(func=cmd_validate_spec)

    catalog = sub.add_parser("list-catalog", help="List the primitive catalog")
    catalog.add_argument("--domain", choices=[d.value for d in Domain], default=None)
    catalog.set_defaults(func=cmd_list_catalog)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.getLevelName(args.log_level.upper()) if args.log_level else None
    configure_logging(default_level=level if isinstance(level, int) else None)
    try:
        return args.func(args)
    except (ConfigError, InstanceParseError, BksMissingError) as e:
        logger.error(f"Configuration error: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetExceededError as e:
        logger.error(f"Budget violation: {e}")
        print(f"budget violation: {e}", file=sys.stderr)
        return EXIT_BUDGET
    except DyaceError as e:
        logger.error(f"Run failed: {type(e).__name__}: {e}")
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
