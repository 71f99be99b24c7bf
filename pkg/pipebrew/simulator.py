"""
Deterministic discrete-event simulation of a pipeline plan.

Workers execute their static 1F1B sequences with durations from the cost
model. Every stage boundary is one serial link: an activation or gradient
transfer holds it for ``C_i``. A `VersionLedger` records which weight
version each pass reads under the chosen versioning mode.
"""
import heapq
import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

from pipebrew.costmodel import (
    CostContext,
    check_plan,
    comm_time_activations,
    stage_bwd_time,
    stage_fwd_time,
)
from pipebrew.exceptions import (
    ConsistencyError,
    DeadlockError,
    SimulationError,
    ValidationError,
)
from pipebrew.partitioner import (
    Plan,
    PartitionSolver,
    data_parallel,
    straight_pipeline,
)
from pipebrew.schedule import Direction, WorkItem, build_schedule, replica_for
from pipebrew.utils import lcm_of, write_csv
from pipebrew.validation import is_positive_integer, validate_range

logger = logging.getLogger(__name__)

TRACE_CSV_HEADER = (
    "time_start",
    "time_end",
    "worker",
    "minibatch",
    "stage",
    "direction",
    "version_used",
)


class Mode(str, Enum):
    NAIVE = "naive_pipeline"
    STASH = "weight_stashing"
    VSYNC = "vertical_sync"


@dataclass(frozen=True)
class SimConfig:
    """
    :param plan: The plan to execute.
    :param mode: Weight-versioning mode.
    :param max_inflight: Minibatches a worker may hold; defaults to NOAM.
                         1 gives traditional model parallelism.
    :param num_minibatches: Minibatches to simulate.
    :param overlap_comm: When False, a sender stays busy until its transfer ends.
    """

    plan: Plan
    mode: Mode = Mode.STASH
    max_inflight: Optional[int] = None
    num_minibatches: int = 100
    overlap_comm: bool = True

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "mode", Mode(self.mode))
        except ValueError:
            raise ValidationError(
                f"Unknown mode {self.mode!r}. Expected one of {[m.value for m in Mode]}."
            )
        if self.max_inflight is None:
            object.__setattr__(self, "max_inflight", self.plan.noam)
        validate_range(self.max_inflight, 1, self.plan.noam, "max_inflight")
        is_positive_integer(self.num_minibatches)


@dataclass
class VersionLedger:
    """
    Weight version read by every pass.

    Version ``v`` at a stage means the weights after ``v`` committed updates;
    0 is the initial weights. Entries are write-once.
    """

    mode: Mode
    replications: Tuple[int, ...]
    max_inflight: int
    noam: int
    entries: Dict[Tuple[int, int, Direction], int] = field(default_factory=dict)
    latest: Dict[int, int] = field(default_factory=dict)
    commits: Dict[int, List[int]] = field(default_factory=dict)
    history: List[Tuple[int, int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        for stage in range(len(self.replications)):
            self.latest.setdefault(stage, 0)
            self.commits.setdefault(stage, [])

    @property
    def n_stages(self) -> int:
        return len(self.replications)

    @property
    def is_straight(self) -> bool:
        return all(r == 1 for r in self.replications)

    @property
    def minibatches(self) -> List[int]:
        return sorted({key[1] for key in self.entries})

    def record(self, stage: int, minibatch_id: int, direction: Direction, version: int) -> None:
        key = (stage, minibatch_id, Direction(direction))
        if key in self.entries:
            raise ConsistencyError(f"Ledger entry {key} written twice.")
        self.entries[key] = version

    def commit(self, stage: int, minibatch_id: int) -> int:
        self.latest[stage] += 1
        self.commits[stage].append(minibatch_id)
        self.history.append((stage, minibatch_id))
        return self.latest[stage]

    def version(self, stage: int, minibatch_id: int, direction: Direction) -> int:
        return self.entries[(stage, minibatch_id, Direction(direction))]

    def mismatches(self, stage: Optional[int] = None) -> List[Tuple[int, int, int, int]]:
        """
        ``(stage, minibatch, forward version, backward version)`` for every pass
        pair that read different versions.
        """
        found = []
        for (s, m, direction), forward in sorted(self.entries.items()):
            if direction is not Direction.FORWARD or (stage is not None and s != stage):
                continue
            backward = self.entries.get((s, m, Direction.BACKWARD))
            if backward is not None and backward != forward:
                found.append((s, m, forward, backward))
        return found


@dataclass(frozen=True)
class TraceRecord:
    time_start: float
    time_end: float
    worker: int
    minibatch: int
    stage: int
    direction: Direction
    version_used: int

    def row(self) -> tuple:
        return (
            repr(self.time_start),
            repr(self.time_end),
            self.worker,
            self.minibatch,
            self.stage,
            self.direction.value,
            self.version_used,
        )


@dataclass(frozen=True)
class SimReport:
    """
    Results of one run. Utilization and throughput cover the steady window
    only and are None when no steady window exists.

    ``comm_bytes_total`` counts every link transfer plus ``(r - 1) / r`` of a
    replicated stage's parameter bytes per backward pass. Over ``K``
    minibatches that is ``K / r`` rounds of the stage's sync term in
    `comm_volume_pp`.
    """

    mode: Mode
    num_minibatches: int
    makespan: float
    steady_throughput: Optional[float]
    per_worker_utilization: Dict[int, float]
    comm_bytes_total: float
    peak_versions_per_stage: Dict[int, int]
    peak_inflight_per_stage: Dict[int, int]
    window: Optional[Tuple[float, float]]
    completion_times: Tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "num_minibatches": self.num_minibatches,
            "makespan": self.makespan,
            "steady_throughput": self.steady_throughput,
            "per_worker_utilization": {
                str(worker): value for worker, value in self.per_worker_utilization.items()
            },
            "comm_bytes_total": self.comm_bytes_total,
            "peak_versions_per_stage": {
                str(stage): value for stage, value in self.peak_versions_per_stage.items()
            },
            "peak_inflight_per_stage": {
                str(stage): value for stage, value in self.peak_inflight_per_stage.items()
            },
            "window": list(self.window) if self.window else None,
        }


@dataclass(frozen=True)
class Violation:
    stage: int
    minibatch: int
    direction: Direction
    expected: int
    actual: int


class PipelineSimulator:
    """
    Event-driven engine for one `SimConfig`. Not reusable across runs.

    Events at equal times are ordered by worker id, then backward before
    forward, then minibatch id.
    """

    DONE = 0
    FREE = 1
    ARRIVE = 2

    def __init__(self, cfg: SimConfig, ctx: CostContext) -> None:
        check_plan(ctx, cfg.plan)
        plan = cfg.plan
        if cfg.num_minibatches < plan.noam + 10:
            raise ValidationError(
                f"num_minibatches must be at least NOAM + 10 = {plan.noam + 10}, "
                f"got {cfg.num_minibatches}."
            )
        self.cfg = cfg
        self.ctx = ctx
        self.plan = plan
        self.schedule = build_schedule(plan, cfg.num_minibatches, cfg.max_inflight)
        self.stage_of = [slot.stage_index for slot in self.schedule.workers]
        self.fwd_durations = [
            stage_fwd_time(ctx, stage.first_layer, stage.last_layer) for stage in plan.stages
        ]
        self.bwd_durations = [
            stage_bwd_time(ctx, stage.first_layer, stage.last_layer, stage.replication)
            for stage in plan.stages
        ]
        self.link_times = [
            comm_time_activations(ctx, stage.last_layer) for stage in plan.stages[:-1]
        ]
        self.link_bytes = [
            ctx.profile.layer(stage.last_layer).activation_elems * ctx.hw.bytes_per_elem
            for stage in plan.stages[:-1]
        ]
        self.sync_bytes = [
            (stage.replication - 1) / stage.replication
            * ctx.param_bytes(stage.first_layer, stage.last_layer)
            for stage in plan.stages
        ]
        self.ledger = VersionLedger(
            mode=cfg.mode,
            replications=tuple(plan.replications),
            max_inflight=cfg.max_inflight,
            noam=plan.noam,
        )
        self.trace: List[TraceRecord] = []

        n_workers = len(self.schedule.workers)
        self._events: list = []
        self._counter = itertools.count()
        self._pointer = [0] * n_workers
        self._busy = [False] * n_workers
        self._running: List[Optional[Tuple[WorkItem, float, int]]] = [None] * n_workers
        self._arrived = set()
        self._link_free = [0.0] * len(self.link_times)
        self._inflight = [0] * n_workers
        self._peak_inflight = [0] * n_workers
        self._stashed = [0] * n_workers
        self._peak_stashed = [1 if cfg.mode is Mode.NAIVE else 0] * n_workers
        self._stash: Dict[Tuple[int, int], int] = {}
        self._tags: Dict[int, int] = {}
        self._busy_intervals: List[List[Tuple[float, float]]] = [[] for _ in range(n_workers)]
        self._completion: Dict[int, float] = {}
        self._comm_bytes = 0.0
        self._now = 0.0

    def _push(self, time: float, worker: int, direction: Direction, minibatch_id: int, kind: int) -> None:
        rank = 0 if direction is Direction.BACKWARD else 1
        heapq.heappush(
            self._events,
            (time, worker, rank, minibatch_id, kind, next(self._counter)),
        )

    def _ready(self, worker: int, item: WorkItem) -> bool:
        if item.direction is Direction.FORWARD and item.stage_index == 0:
            return True
        return (worker, item.direction, item.minibatch_id) in self._arrived

    def _read_version(self, item: WorkItem) -> int:
        stage, m = item.stage_index, item.minibatch_id
        mode = self.cfg.mode
        if mode is Mode.NAIVE:
            return self.ledger.latest[stage]
        if mode is Mode.STASH:
            if item.direction is Direction.FORWARD:
                self._stash[(stage, m)] = self.ledger.latest[stage]
            return self._stash[(stage, m)]
        if stage == 0 and item.direction is Direction.FORWARD:
            # the tag travels with the activations and gradients
            self._tags[m] = self.ledger.latest[0]
        version = self._tags[m]
        if version > self.ledger.latest[stage]:
            raise ConsistencyError(
                f"Stage {stage} has no version {version} for minibatch {m}."
            )
        return version

    def _try_start(self, worker: int) -> None:
        if self._busy[worker]:
            return
        sequence = self.schedule.worker_items(worker)
        if self._pointer[worker] >= len(sequence):
            return
        item = sequence[self._pointer[worker]]
        if not self._ready(worker, item):
            return
        version = self._read_version(item)
        self.ledger.record(item.stage_index, item.minibatch_id, item.direction, version)
        if item.direction is Direction.FORWARD:
            duration = self.fwd_durations[item.stage_index]
            self._inflight[worker] += 1
            self._peak_inflight[worker] = max(self._peak_inflight[worker], self._inflight[worker])
            if self.cfg.mode is not Mode.NAIVE:
                self._stashed[worker] += 1
                self._peak_stashed[worker] = max(self._peak_stashed[worker], self._stashed[worker])
        else:
            duration = self.bwd_durations[item.stage_index]
        self._busy[worker] = True
        self._running[worker] = (item, self._now, version)
        self._push(self._now + duration, worker, item.direction, item.minibatch_id, self.DONE)

    def _send(self, link: int, dest: int, direction: Direction, minibatch_id: int) -> float:
        start = max(self._now, self._link_free[link])
        end = start + self.link_times[link]
        self._link_free[link] = end
        self._comm_bytes += self.link_bytes[link]
        self._push(end, dest, direction, minibatch_id, self.ARRIVE)
        return end

    def _complete(self, worker: int) -> None:
        item, started, version = self._running[worker]
        self._running[worker] = None
        stage = item.stage_index
        m = item.minibatch_id
        self.trace.append(
            TraceRecord(started, self._now, worker, m, stage, item.direction, version)
        )
        self._busy_intervals[worker].append((started, self._now))
        plan = self.plan
        last_stage = plan.num_stages - 1
        sent_until = None
        if item.direction is Direction.FORWARD:
            if stage == last_stage:
                self._arrived.add((worker, Direction.BACKWARD, m))
            else:
                replica = replica_for(m, plan.stages[stage + 1].replication)
                dest = self.schedule.worker_of(stage + 1, replica)
                sent_until = self._send(stage, dest, Direction.FORWARD, m)
        else:
            self.ledger.commit(stage, m)
            self._inflight[worker] -= 1
            if self.cfg.mode is not Mode.NAIVE:
                self._stashed[worker] -= 1
            self._comm_bytes += self.sync_bytes[stage]
            if stage == 0:
                self._completion[m] = self._now
            else:
                replica = replica_for(m, plan.stages[stage - 1].replication)
                dest = self.schedule.worker_of(stage - 1, replica)
                sent_until = self._send(stage - 1, dest, Direction.BACKWARD, m)
        self._pointer[worker] += 1
        if sent_until is not None and not self.cfg.overlap_comm:
            self._push(sent_until, worker, item.direction, m, self.FREE)
        else:
            self._busy[worker] = False
            self._try_start(worker)

    def run(self) -> Tuple[SimReport, VersionLedger]:
        """
        Execute the schedule to completion.

        :return: The report and the version ledger.
        :raises DeadlockError: If work remains but no event is pending.
        """
        for worker in range(len(self.schedule.workers)):
            self._try_start(worker)
        while self._events:
            time, worker, rank, m, kind, _ = heapq.heappop(self._events)
            self._now = time
            if kind == self.DONE:
                self._complete(worker)
            elif kind == self.FREE:
                self._busy[worker] = False
                self._try_start(worker)
            else:
                direction = Direction.BACKWARD if rank == 0 else Direction.FORWARD
                self._arrived.add((worker, direction, m))
                self._try_start(worker)

        for slot in self.schedule.workers:
            sequence = self.schedule.worker_items(slot.worker_id)
            if self._pointer[slot.worker_id] < len(sequence):
                pending = sequence[self._pointer[slot.worker_id]]
                raise DeadlockError(
                    f"Worker {slot.worker_id} (stage {slot.stage_index}) is blocked on "
                    f"{pending.label} at time {self._now!r}.",
                    worker=slot.worker_id,
                    pending=pending.label,
                )
        report = self._report()
        logger.info(
            "Simulated %d minibatches in %s mode: makespan %.6g s, throughput %s",
            self.cfg.num_minibatches,
            self.cfg.mode.value,
            report.makespan,
            report.steady_throughput,
        )
        return report, self.ledger

    def _window(self) -> Optional[Tuple[int, int]]:
        plan = self.plan
        period = lcm_of(plan.replications)
        k_lo = plan.noam + plan.num_stages
        k_hi = self.cfg.num_minibatches - plan.noam
        k_hi -= (k_hi - k_lo) % period if k_hi > k_lo else 0
        if k_hi - k_lo < period:
            return None
        return k_lo, k_hi

    def _report(self) -> SimReport:
        completions = sorted(self._completion.values())
        window = self._window()
        throughput = None
        utilization: Dict[int, float] = {}
        time_window = None
        if window is not None:
            k_lo, k_hi = window
            t_lo, t_hi = completions[k_lo - 1], completions[k_hi - 1]
            if t_hi > t_lo:
                time_window = (t_lo, t_hi)
                throughput = (k_hi - k_lo) / (t_hi - t_lo)
                for worker, intervals in enumerate(self._busy_intervals):
                    busy = sum(
                        max(0.0, min(end, t_hi) - max(start, t_lo)) for start, end in intervals
                    )
                    utilization[worker] = min(1.0, busy / (t_hi - t_lo))

        peak_inflight: Dict[int, int] = {}
        peak_versions: Dict[int, int] = {}
        for worker, stage in enumerate(self.stage_of):
            peak_inflight[stage] = max(peak_inflight.get(stage, 0), self._peak_inflight[worker])
            peak_versions[stage] = max(peak_versions.get(stage, 0), self._peak_stashed[worker])
        makespan = max(record.time_end for record in self.trace)
        return SimReport(
            mode=self.cfg.mode,
            num_minibatches=self.cfg.num_minibatches,
            makespan=makespan,
            steady_throughput=throughput,
            per_worker_utilization=utilization,
            comm_bytes_total=self._comm_bytes,
            peak_versions_per_stage=peak_versions,
            peak_inflight_per_stage=peak_inflight,
            window=time_window,
            completion_times=tuple(completions),
        )


def run(cfg: SimConfig, ctx: CostContext) -> Tuple[SimReport, VersionLedger]:
    return PipelineSimulator(cfg, ctx).run()


def expected_version(mode: Mode, n_stages: int, stage: int, minibatch_id: int) -> int:
    """
    Version a straight pipeline of ``n_stages`` stages reads at 0-based
    ``stage`` for ``minibatch_id`` with consistent versioning.

    Weight stashing reads ``m - n + i - 1`` at 1-based stage ``i``; vertical
    sync reads ``m - n`` everywhere. Warm-up values clamp to the initial
    weights.
    """
    if mode is Mode.VSYNC:
        return max(0, minibatch_id - n_stages)
    return max(0, minibatch_id - n_stages + stage)


def staleness_check(ledger: VersionLedger, mode, n_stages: int) -> List[Violation]:
    """
    Compare every ledger entry with the staleness equations.

    Naive mode is held to the weight-stashing equation, which its backward
    passes break.

    :param ledger: Ledger of a straight pipeline run with ``max_inflight == NOAM``.
    :param mode: The versioning mode of the run.
    :param n_stages: Number of pipeline stages.
    :return: Every mismatch; empty when the ledger follows the equations.
    :rtype: List[Violation]
    :raises ValidationError: If the ledger comes from a replicated plan or
                             does not match `n_stages`.
    """
    mode = Mode(mode)
    if not ledger.is_straight:
        raise ValidationError("Staleness equations hold for straight pipelines only.")
    if ledger.n_stages != n_stages:
        raise ValidationError(
            f"Ledger has {ledger.n_stages} stages, expected {n_stages}."
        )
    if ledger.max_inflight != ledger.noam:
        raise ValidationError("Staleness equations assume max_inflight == NOAM.")
    violations = []
    for (stage, m, direction), actual in sorted(ledger.entries.items()):
        expected = expected_version(mode, n_stages, stage, m)
        if actual != expected:
            violations.append(Violation(stage, m, direction, expected, actual))
    return violations


def measure_throughput(report: SimReport) -> float:
    """
    :raises SimulationError: If the run had no steady window.
    """
    if report.steady_throughput is None:
        raise SimulationError("The run is too short to have a steady window.")
    return report.steady_throughput


def compare_analytic(report: SimReport, plan: Plan) -> float:
    """
    Relative error between the measured throughput and ``1 / bottleneck_time``.
    """
    predicted = 1.0 / plan.bottleneck_time
    return abs(measure_throughput(report) - predicted) / predicted


def write_trace_csv(trace: List[TraceRecord], path):
    return write_csv(TRACE_CSV_HEADER, (record.row() for record in trace), path)


@dataclass(frozen=True)
class RegimeResult:
    name: str
    plan: Plan
    max_inflight: int
    throughput: float
    speedup: float


REGIMES = ("model_parallel", "straight_pipeline", "pipeline_parallel", "data_parallel")


def run_regimes(
    ctx: CostContext,
    mode: Mode = Mode.STASH,
    num_minibatches: int = 100,
    force_all_machines: bool = False,
) -> List[RegimeResult]:
    """
    Simulated speedup over one machine for each execution regime.

    * model parallelism: the best straight pipeline of ``min(M, N)`` stages
      with one minibatch in flight;
    * straight pipeline: the same plan with NOAM minibatches in flight;
    * pipeline parallelism: the solver's plan;
    * data parallelism: one stage replicated on all ``M`` machines.
    """
    machines = ctx.num_machines
    baseline_plan = data_parallel(ctx, 1)
    baseline = _simulated_throughput(ctx, baseline_plan, mode, num_minibatches, 1)
    straight = straight_pipeline(ctx, min(machines, ctx.num_layers))
    full = PartitionSolver(ctx, force_all_machines=force_all_machines).solve()
    runs = [
        ("model_parallel", straight, 1),
        ("straight_pipeline", straight, straight.noam),
        ("pipeline_parallel", full, full.noam),
        ("data_parallel", data_parallel(ctx, machines), 1),
    ]
    results = []
    for name, plan, inflight in runs:
        throughput = _simulated_throughput(ctx, plan, mode, num_minibatches, inflight)
        results.append(RegimeResult(name, plan, inflight, throughput, throughput / baseline))
    return results


def _simulated_throughput(
    ctx: CostContext, plan: Plan, mode: Mode, num_minibatches: int, max_inflight: int
) -> float:
    minibatches = max(num_minibatches, plan.noam + 10)
    cfg = SimConfig(
        plan=plan, mode=mode, max_inflight=max_inflight, num_minibatches=minibatches
    )
    report, _ = run(cfg, ctx)
    return measure_throughput(report)
