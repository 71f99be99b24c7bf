"""
Command-line front end.

Subcommands::

    pipebrew synth KIND --layers N [--seed S]
    pipebrew plan PROFILE [--machines M] [--bandwidth B] [--force-all-machines]
    pipebrew simulate PLAN PROFILE [--mode MODE] [--minibatches K] [--max-inflight D]
    pipebrew compare PROFILE [--machines M] [--bandwidth B]

Exit codes: 0 ok, 1 usage, 2 validation, 3 simulation.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pipebrew import __version__
from pipebrew.costmodel import CostContext, comm_reduction, comm_volume_bsp, comm_volume_pp
from pipebrew.exceptions import (
    ConsistencyError,
    ExceedsMaximumError,
    IntError,
    ProfileFormatError,
    SimulationError,
    ValidationError,
)
from pipebrew.generators import GENERATORS
from pipebrew.partitioner import PartitionSolver, load_plan, save_plan
from pipebrew.profile import HardwareSpec, load_profile, synth_profile
from pipebrew.semantics import ToyModel, equation_oracle, max_deviation, replay, write_trajectory_csv
from pipebrew.simulator import (
    Mode,
    PipelineSimulator,
    SimConfig,
    run_regimes,
    staleness_check,
    write_trace_csv,
)
from pipebrew.utils import write_json

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_SIMULATION = 3

DEFAULT_MACHINES = 4
DEFAULT_BANDWIDTH = 1.25e9
REPLAY_TOLERANCE = 1e-12
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _add_hardware_args(parser: argparse.ArgumentParser, machines_help: str) -> None:
    parser.add_argument("--machines", type=int, default=None, help=machines_help)
    parser.add_argument(
        "--bandwidth",
        type=float,
        default=DEFAULT_BANDWIDTH,
        help=f"Link bandwidth in bytes per second (default: {DEFAULT_BANDWIDTH:g})",
    )
    parser.add_argument(
        "--bytes-per-elem", type=int, default=4, help="Bytes per tensor element (default: 4)"
    )


def _add_common_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="Seed recorded in outputs (default: 0)")
    parser.add_argument(
        "--out-dir", type=Path, default=Path("."), help="Output directory (default: .)"
    )
    parser.add_argument("--verbose", action="store_true", help="Log debug output to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="pipebrew",
        description="Pipeline-parallel training planner and simulator",
    )
    parser.add_argument("--version", action="version", version=f"pipebrew {__version__}")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    synth = commands.add_parser("synth", help="Write a synthetic layer profile")
    synth.add_argument("kind", choices=sorted(GENERATORS), help="Profile family")
    synth.add_argument("--layers", type=int, required=True, help="Number of layers")
    _add_common_args(synth)

    plan = commands.add_parser("plan", help="Partition a profile across machines")
    plan.add_argument("profile", type=Path, help="Profile JSON file")
    _add_hardware_args(plan, f"Number of machines (default: {DEFAULT_MACHINES})")
    plan.add_argument(
        "--force-all-machines",
        action="store_true",
        help="Only consider plans that use every machine",
    )
    _add_common_args(plan)

    simulate = commands.add_parser("simulate", help="Simulate a plan and check weight versions")
    simulate.add_argument("plan", type=Path, help="Plan JSON file")
    simulate.add_argument("profile", type=Path, help="Profile JSON file")
    _add_hardware_args(simulate, "Number of machines (default: the plan's machine count)")
    simulate.add_argument(
        "--mode",
        choices=[mode.value for mode in Mode],
        default=Mode.STASH.value,
        help=f"Weight versioning mode (default: {Mode.STASH.value})",
    )
    simulate.add_argument(
        "--minibatches", type=int, default=100, help="Minibatches to simulate (default: 100)"
    )
    simulate.add_argument(
        "--max-inflight",
        type=int,
        default=None,
        help="Minibatches a worker may hold; 1 is model parallelism (default: NOAM)",
    )
    simulate.add_argument(
        "--no-overlap",
        action="store_true",
        help="Keep senders busy until their transfers finish",
    )
    simulate.add_argument(
        "--expect-naive",
        action="store_true",
        help="Succeed when naive_pipeline mode violates the staleness equations",
    )
    _add_common_args(simulate)

    compare = commands.add_parser("compare", help="Compare execution regimes by simulation")
    compare.add_argument("profile", type=Path, help="Profile JSON file")
    _add_hardware_args(compare, f"Number of machines (default: {DEFAULT_MACHINES})")
    compare.add_argument(
        "--mode",
        choices=[mode.value for mode in Mode],
        default=Mode.STASH.value,
        help=f"Weight versioning mode (default: {Mode.STASH.value})",
    )
    compare.add_argument(
        "--minibatches", type=int, default=100, help="Minibatches per simulation (default: 100)"
    )
    compare.add_argument(
        "--force-all-machines",
        action="store_true",
        help="Only consider plans that use every machine",
    )
    _add_common_args(compare)
    return parser


def configure_logging(verbose: bool) -> None:
    root = logging.getLogger("pipebrew")
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else logging.WARNING)


def build_manifest(args: argparse.Namespace) -> dict:
    inputs = {}
    for key, value in sorted(vars(args).items()):
        if key in ("command", "verbose", "handler", "seed"):
            continue
        inputs[key] = str(value) if isinstance(value, Path) else value
    return {
        "command": args.command,
        "inputs": inputs,
        "tool_version": __version__,
        "seed": args.seed,
    }


def sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".manifest.json")


def write_sidecar_manifest(path: Path, manifest: dict) -> Path:
    """Write ``<name>.manifest.json`` beside a CSV output."""
    return write_json({"artifact": path.name, "manifest": manifest}, sidecar_path(path))


def _context(profile, args, machines: int) -> CostContext:
    hw = HardwareSpec(
        num_machines=machines, bandwidth=args.bandwidth, bytes_per_elem=args.bytes_per_elem
    )
    return CostContext.build(profile, hw)


def _percent(value: Optional[float]) -> str:
    return "n/a (no comm)" if value is None else f"{100.0 * value:.2f}%"


def _per_worker(values: dict, fmt: str = "{}") -> str:
    return " ".join(f"{key}:{fmt.format(value)}" for key, value in sorted(values.items()))


def cmd_synth(args) -> int:
    profile = synth_profile(args.kind, args.layers, args.seed)
    payload = profile.to_dict()
    payload["manifest"] = build_manifest(args)
    path = write_json(payload, args.out_dir / "profile.json")
    print(f"kind: {args.kind}")
    print(f"layers: {profile.num_layers}")
    print(f"total_time: {profile.total_time:.6g}")
    print(f"total_params: {profile.total_params}")
    print(f"profile: {path}")
    return EXIT_OK


def cmd_plan(args) -> int:
    profile = load_profile(args.profile)
    machines = args.machines or DEFAULT_MACHINES
    ctx = _context(profile, args, machines)
    plan = PartitionSolver(ctx, force_all_machines=args.force_all_machines).solve()
    path = save_plan(plan, args.out_dir / "plan.json", manifest=build_manifest(args))
    print(f"config: {plan.config_string}")
    print(
        "stages: "
        + " ".join(f"{s.first_layer}-{s.last_layer}x{s.replication}" for s in plan.stages)
    )
    print(f"bottleneck_time: {plan.bottleneck_time:.6g}")
    print(f"noam: {plan.noam}")
    print(f"predicted_throughput: {plan.predicted_throughput:.6g}")
    print(f"comm_bytes_bsp: {comm_volume_bsp(ctx, machines):.6g}")
    print(f"comm_bytes_pp: {comm_volume_pp(ctx, plan):.6g}")
    print(f"comm_reduction: {_percent(comm_reduction(ctx, plan))}")
    print(f"plan: {path}")
    return EXIT_OK


def _staleness(args, plan, cfg, ledger) -> tuple:
    """
    :return: The printed status and whether the run passes.
    """
    if not plan.is_straight:
        return "skipped (replicated plan)", True
    if cfg.max_inflight != plan.noam:
        return "skipped (max_inflight below NOAM)", True
    violations = staleness_check(ledger, cfg.mode, plan.num_stages)
    if cfg.mode is Mode.NAIVE:
        if violations:
            status = f"{len(violations)} violations (expected for {cfg.mode.value})"
            return status, args.expect_naive
        return "passed", not args.expect_naive
    if violations:
        first = violations[0]
        return (
            f"FAILED ({len(violations)} violations; stage {first.stage} minibatch "
            f"{first.minibatch} {first.direction.value} read {first.actual}, "
            f"expected {first.expected})",
            False,
        )
    return "passed", True


def cmd_simulate(args) -> int:
    profile = load_profile(args.profile)
    plan = load_plan(args.plan)
    machines = args.machines or plan.machines_used
    ctx = _context(profile, args, machines)
    cfg = SimConfig(
        plan=plan,
        mode=Mode(args.mode),
        max_inflight=args.max_inflight,
        num_minibatches=args.minibatches,
        overlap_comm=not args.no_overlap,
    )
    simulator = PipelineSimulator(cfg, ctx)
    report, ledger = simulator.run()
    status, passed = _staleness(args, plan, cfg, ledger)

    model = ToyModel.create([stage.num_layers for stage in plan.stages], seed=args.seed)
    trajectory = replay(ledger, model)
    deviation = None
    if plan.is_straight and cfg.max_inflight == plan.noam:
        expected = equation_oracle(cfg.mode, plan.num_stages, model, cfg.num_minibatches)
        deviation = max_deviation(trajectory, expected)
        if deviation > REPLAY_TOLERANCE:
            raise ConsistencyError(
                f"Replayed weights deviate from the {cfg.mode.value} recurrence by {deviation!r}."
            )

    out_dir = args.out_dir
    manifest = build_manifest(args)
    trace_path = write_trace_csv(simulator.trace, out_dir / "trace.csv")
    trajectory_path = write_trajectory_csv(trajectory, out_dir / "trajectory.csv")
    for path in (trace_path, trajectory_path):
        write_sidecar_manifest(path, manifest)
    payload = report.to_dict()
    payload["staleness"] = status
    payload["replay_max_deviation"] = deviation
    payload["artifacts"] = [trace_path.name, trajectory_path.name]
    payload["manifest"] = manifest
    report_path = write_json(payload, out_dir / "report.json")

    throughput = report.steady_throughput
    print(f"mode: {cfg.mode.value}")
    print(f"config: {plan.config_string}")
    print(f"max_inflight: {cfg.max_inflight}")
    print(f"makespan: {report.makespan:.6g}")
    print(f"steady_throughput: {'n/a' if throughput is None else f'{throughput:.6g}'}")
    print(f"predicted_throughput: {plan.predicted_throughput:.6g}")
    print(f"utilization: {_per_worker(report.per_worker_utilization, '{:.4f}')}")
    print(f"peak_inflight: {_per_worker(report.peak_inflight_per_stage)}")
    print(f"peak_versions: {_per_worker(report.peak_versions_per_stage)}")
    print(f"comm_bytes: {report.comm_bytes_total:.6g}")
    print(f"staleness: {status}")
    print(f"replay_max_deviation: {'n/a' if deviation is None else repr(deviation)}")
    print(f"report: {report_path}")
    print(f"trace: {trace_path}")
    print(f"trajectory: {trajectory_path}")
    return EXIT_OK if passed else EXIT_VALIDATION


def cmd_compare(args) -> int:
    profile = load_profile(args.profile)
    machines = args.machines or DEFAULT_MACHINES
    ctx = _context(profile, args, machines)
    results = run_regimes(
        ctx,
        mode=Mode(args.mode),
        num_minibatches=args.minibatches,
        force_all_machines=args.force_all_machines,
    )
    print(f"{'regime':<20}{'config':<16}{'inflight':>9}{'throughput':>14}{'speedup':>10}")
    for result in results:
        print(
            f"{result.name:<20}{result.plan.config_string:<16}{result.max_inflight:>9}"
            f"{result.throughput:>14.6g}{result.speedup:>9.2f}x"
        )
    payload = {
        "machines": machines,
        "regimes": [
            {
                "name": result.name,
                "config": result.plan.config_string,
                "max_inflight": result.max_inflight,
                "throughput": result.throughput,
                "speedup": result.speedup,
            }
            for result in results
        ],
        "manifest": build_manifest(args),
    }
    path = write_json(payload, args.out_dir / "compare.json")
    print(f"comparison: {path}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "plan": cmd_plan,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(e, file=sys.stderr)
        return EXIT_USAGE
    configure_logging(args.verbose)
    logger.debug("Running %s with %s", args.command, build_manifest(args)["inputs"])
    try:
        return COMMANDS[args.command](args)
    except (ValidationError, ProfileFormatError, IntError, ExceedsMaximumError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SimulationError, ConsistencyError) as e:
        worker = getattr(e, "worker", None)
        if worker is not None:
            pending = getattr(e, "pending", None)
            detail = f", pending {pending}" if pending is not None else ""
            print(f"error: blocked worker {worker}{detail}", file=sys.stderr)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SIMULATION
