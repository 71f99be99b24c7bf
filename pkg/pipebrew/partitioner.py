"""
Stage partitioning.

`PartitionSolver` runs the dynamic program over ``A(j, m)``, the slowest
stage time of the best pipeline for layers ``1..j`` on exactly ``m``
machines:

* one stage replicated ``m`` times: ``T(1 -> j, m)``;
* a best sub-pipeline ``A(i, m - m')`` followed by one stage ``i+1..j`` on
  ``m'`` machines, paying ``2 * C_i`` at the boundary.

`BruteForceSolver` enumerates every contiguous partition and replication
assignment and serves as the oracle for the dynamic program.
"""
import itertools
import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from pipebrew.costmodel import CostContext, boundary_time, stage_time
from pipebrew.exceptions import (
    ExceedsMaximumError,
    PlanMismatchError,
    ProfileFormatError,
    ValidationError,
)
from pipebrew.utils import ceil_div, dash_join, write_json
from pipebrew.validation import (
    is_greater_than,
    is_less_or_equal,
    is_positive_integer,
    is_positive_number,
)

logger = logging.getLogger(__name__)

CONFIG_PATTERN = re.compile(r"^\s*\d+(?:-\d+)*\s*$")


@dataclass(frozen=True)
class Stage:
    first_layer: int
    last_layer: int
    replication: int = 1

    def __post_init__(self) -> None:
        is_positive_integer(self.first_layer)
        is_positive_integer(self.last_layer)
        is_positive_integer(self.replication)
        if self.first_layer > self.last_layer:
            raise ValidationError(
                f"Stage first_layer {self.first_layer} is after last_layer {self.last_layer}."
            )

    @property
    def num_layers(self) -> int:
        return self.last_layer - self.first_layer + 1

    def to_dict(self) -> dict:
        return {
            "first_layer": self.first_layer,
            "last_layer": self.last_layer,
            "replication": self.replication,
        }


@dataclass(frozen=True)
class Plan:
    """
    Ordered stages with the bottleneck time they achieve.

    :param stages: Contiguous stages covering layers 1..N.
    :param bottleneck_time: The slowest stage (or boundary) time in seconds.
    :param noam: Minibatches the input stage admits to keep the pipeline full.
    :param machines_used: Sum of stage replications.
    """

    stages: Tuple[Stage, ...]
    bottleneck_time: float
    noam: int
    machines_used: int

    @classmethod
    def from_stages(cls, stages: Sequence[Stage], bottleneck_time: float) -> "Plan":
        stages = tuple(stages)
        machines_used = sum(stage.replication for stage in stages)
        return cls(
            stages=stages,
            bottleneck_time=bottleneck_time,
            noam=ceil_div(machines_used, stages[0].replication),
            machines_used=machines_used,
        )

    @property
    def num_stages(self) -> int:
        return len(self.stages)

    @property
    def replications(self) -> List[int]:
        return [stage.replication for stage in self.stages]

    @property
    def config_string(self) -> str:
        return dash_join(self.replications)

    @property
    def is_straight(self) -> bool:
        return all(stage.replication == 1 for stage in self.stages)

    @property
    def predicted_throughput(self) -> float:
        return 1.0 / self.bottleneck_time

    def validate(self, n_layers: int, machines: Optional[int] = None) -> bool:
        """
        Check the plan invariants against a layer count.

        :param n_layers: Number of layers the plan must cover.
        :param machines: Optional machine budget.
        :return: True when the plan is consistent.
        :rtype: bool
        :raises PlanMismatchError: If the stages do not cover 1..n_layers
                                   contiguously or a count is inconsistent.
        """
        if not self.stages:
            raise PlanMismatchError("Plan has no stages.")
        expected = 1
        for index, stage in enumerate(self.stages):
            if stage.first_layer != expected:
                raise PlanMismatchError(
                    f"Stage {index} starts at layer {stage.first_layer}, expected {expected}."
                )
            expected = stage.last_layer + 1
        if expected - 1 != n_layers:
            raise PlanMismatchError(
                f"Plan covers {expected - 1} layers, profile has {n_layers}."
            )
        if self.machines_used != sum(self.replications):
            raise PlanMismatchError("machines_used does not match the stage replications.")
        if machines is not None and self.machines_used > machines:
            raise PlanMismatchError(
                f"Plan uses {self.machines_used} machines, only {machines} available."
            )
        if self.noam != noam(self):
            raise PlanMismatchError(f"Plan NOAM {self.noam} does not match {noam(self)}.")
        return True

    def to_dict(self) -> dict:
        return {
            "stages": [stage.to_dict() for stage in self.stages],
            "bottleneck_time": self.bottleneck_time,
            "noam": self.noam,
            "machines_used": self.machines_used,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "Plan":
        try:
            stages = tuple(Stage(**raw) for raw in payload["stages"])
            plan = cls(
                stages=stages,
                bottleneck_time=float(payload["bottleneck_time"]),
                noam=payload["noam"],
                machines_used=payload["machines_used"],
            )
        except (KeyError, TypeError) as e:
            raise ProfileFormatError(f"Malformed plan document: {e}")
        return plan


def noam(plan: Plan) -> int:
    """
    ``ceil(machines / machines in the input stage)``.

    :param plan: A plan with at least one stage.
    :return: The number of minibatches the input stage admits.
    :rtype: int
    """
    machines = sum(stage.replication for stage in plan.stages)
    return ceil_div(machines, plan.stages[0].replication)


def parse_config(text: str, n_layers: Optional[int] = None) -> List[int]:
    """
    Parse a dash-separated replication string such as ``"2-1-1"``.

    The string fixes the stage count and each stage's replication only; layer
    ranges come from a solved plan or are supplied separately.

    :param text: Dash-separated positive integers.
    :param n_layers: Optional layer count bounding the number of stages.
    :return: Replication per stage.
    :rtype: List[int]
    :raises ValidationError: If the text is malformed or a replication is 0.
    """
    if not isinstance(text, str) or not CONFIG_PATTERN.match(text):
        raise ValidationError(f"Malformed configuration {text!r}; expected e.g. '2-1-1'.")
    replications = [int(part) for part in text.strip().split("-")]
    if any(r < 1 for r in replications):
        raise ValidationError(f"Configuration {text!r} has a non-positive replication.")
    if n_layers is not None and len(replications) > n_layers:
        raise ValidationError(
            f"Configuration {text!r} has {len(replications)} stages for {n_layers} layers."
        )
    return replications


def evaluate_stages(ctx: CostContext, stages: Sequence[Stage]) -> float:
    """
    Bottleneck of a fixed partition: the max over stage times and boundary times.
    """
    value = 0.0
    for index, stage in enumerate(stages):
        value = max(value, stage_time(ctx, stage.first_layer, stage.last_layer, stage.replication))
        if index + 1 < len(stages):
            value = max(value, boundary_time(ctx, stage.last_layer))
    return value


def plan_from_stages(ctx: CostContext, stages: Sequence[Stage]) -> Plan:
    plan = Plan.from_stages(stages, evaluate_stages(ctx, stages))
    plan.validate(ctx.num_layers)
    return plan


def data_parallel(ctx: CostContext, machines: int) -> Plan:
    """
    The single-stage plan replicated on ``machines`` machines.
    """
    return plan_from_stages(ctx, [Stage(1, ctx.num_layers, machines)])


@dataclass(frozen=True)
class _Cell:
    value: float
    n_stages: int
    split: int
    last_replication: int


class PartitionSolver:
    """
    Dynamic-programming partitioner.

    Ties within the tolerance prefer fewer stages, then the smallest last
    split index. Across machine counts the solver also prefers fewer machines
    unless ``force_all_machines`` is set.

    Attributes
    ----------
    evaluations : int
        Number of candidate sub-problem evaluations made by the last `solve`.
    """

    _tolerance = 1e-12

    def __init__(
        self,
        ctx: CostContext,
        force_all_machines: bool = False,
        max_replication: Optional[int] = None,
    ) -> None:
        self.ctx = ctx
        self.force_all_machines = force_all_machines
        self.max_replication = max_replication or ctx.num_machines
        self.evaluations = 0
        self._table: Dict[Tuple[int, int], _Cell] = {}

    @property
    def tolerance(self) -> float:
        return self._tolerance

    @classmethod
    def set_tolerance(cls, value: float) -> None:
        is_positive_number(value, "tolerance")
        cls._tolerance = value

    def _better(self, value: float, tie: tuple, best: Optional[_Cell], best_tie: tuple) -> bool:
        if best is None:
            return True
        if value < best.value - self._tolerance:
            return True
        if value > best.value + self._tolerance:
            return False
        return tie < best_tie

    def _fill(self, machines: int) -> None:
        ctx = self.ctx
        n = ctx.num_layers
        boundaries = [0.0] + [boundary_time(ctx, i) for i in range(1, n)]
        self._table.clear()
        self.evaluations = 0
        for m in range(1, machines + 1):
            for j in range(1, n + 1):
                best: Optional[_Cell] = None
                best_tie: tuple = ()
                if m <= self.max_replication:
                    self.evaluations += 1
                    best = _Cell(stage_time(ctx, 1, j, m), 1, 0, m)
                    best_tie = (1, 0)
                for i in range(1, j):
                    for m_prime in range(1, min(m - 1, self.max_replication) + 1):
                        sub = self._table.get((i, m - m_prime))
                        if sub is None:
                            continue
                        self.evaluations += 1
                        value = max(
                            sub.value,
                            boundaries[i],
                            stage_time(ctx, i + 1, j, m_prime),
                        )
                        tie = (sub.n_stages + 1, i)
                        if self._better(value, tie, best, best_tie):
                            best = _Cell(value, sub.n_stages + 1, i, m_prime)
                            best_tie = tie
                if best is not None:
                    self._table[(j, m)] = best

    def _backtrack(self, j: int, m: int) -> List[Stage]:
        cell = self._table[(j, m)]
        if cell.split == 0:
            return [Stage(1, j, cell.last_replication)]
        stages = self._backtrack(cell.split, m - cell.last_replication)
        stages.append(Stage(cell.split + 1, j, cell.last_replication))
        return stages

    def solve(self, machines: Optional[int] = None) -> Plan:
        """
        Solve for the optimal plan.

        :param machines: Machine budget; defaults to the hardware's ``M``.
        :return: The optimal plan.
        :rtype: Plan
        :raises ValidationError: If no plan fits the budget.
        """
        machines = machines or self.ctx.num_machines
        is_positive_integer(machines)
        self._fill(machines)
        n = self.ctx.num_layers
        candidates = [machines] if self.force_all_machines else range(1, machines + 1)
        best: Optional[_Cell] = None
        best_tie: tuple = ()
        best_m = 0
        for m in candidates:
            cell = self._table.get((n, m))
            if cell is None:
                continue
            tie = (cell.n_stages, m, cell.split)
            if self._better(cell.value, tie, best, best_tie):
                best, best_tie, best_m = cell, tie, m
        if best is None:
            raise ValidationError(f"No plan fits {n} layers on {machines} machines.")
        plan = Plan.from_stages(self._backtrack(n, best_m), best.value)
        logger.info(
            "Solved %d layers on %d machines: config %s, bottleneck %.6g s, %d evaluations",
            n,
            machines,
            plan.config_string,
            plan.bottleneck_time,
            self.evaluations,
        )
        return plan


def solve(ctx: CostContext, force_all_machines: bool = False) -> Plan:
    return PartitionSolver(ctx, force_all_machines=force_all_machines).solve()


def straight_pipeline(ctx: CostContext, n_stages: int) -> Plan:
    """
    Best partition into exactly ``n_stages`` stages of one machine each.

    :raises ValidationError: If `n_stages` exceeds the layer count.
    """
    try:
        is_positive_integer(n_stages) and is_less_or_equal(n_stages, ctx.num_layers)
    except ExceedsMaximumError as e:
        raise ValidationError(e)
    solver = PartitionSolver(ctx, force_all_machines=True, max_replication=1)
    return solver.solve(n_stages)


class BruteForceSolver:
    """
    Exhaustive oracle over contiguous partitions and replication assignments
    with ``sum(replication) <= M``. Uses the same tie-breaking as the solver.
    """

    _max_layers = 12
    _max_machines = 8

    def __init__(self, ctx: CostContext) -> None:
        self.ctx = ctx

    @classmethod
    def set_max_layers(cls, value: int) -> None:
        try:
            is_positive_integer(value) and is_greater_than(value, 1)
        except ValueError as e:
            raise ValidationError(e)
        cls._max_layers = value

    @classmethod
    def set_max_machines(cls, value: int) -> None:
        is_positive_integer(value)
        cls._max_machines = value

    def _guard(self) -> None:
        try:
            is_less_or_equal(self.ctx.num_layers, self._max_layers)
            is_less_or_equal(self.ctx.num_machines, self._max_machines)
        except ExceedsMaximumError as e:
            raise ValidationError(f"Instance too large for brute force: {e}")

    def partitions(self):
        n = self.ctx.num_layers
        for mask in range(1 << (n - 1)):
            cuts = [i for i in range(1, n) if mask & (1 << (i - 1))]
            bounds = list(zip([0] + cuts, cuts + [n]))
            yield [(start + 1, stop) for start, stop in bounds]

    def solve(self) -> Plan:
        self._guard()
        machines = self.ctx.num_machines
        tolerance = PartitionSolver._tolerance
        best_value = None
        best_tie: tuple = ()
        best_stages: List[Stage] = []
        for spans in self.partitions():
            k = len(spans)
            if k > machines:
                continue
            for replications in itertools.product(range(1, machines - k + 2), repeat=k):
                used = sum(replications)
                if used > machines:
                    continue
                stages = [
                    Stage(first, last, r) for (first, last), r in zip(spans, replications)
                ]
                value = evaluate_stages(self.ctx, stages)
                last_split = spans[-1][0] - 1
                tie = (k, used, last_split)
                if (
                    best_value is None
                    or value < best_value - tolerance
                    or (abs(value - best_value) <= tolerance and tie < best_tie)
                ):
                    best_value, best_tie, best_stages = value, tie, stages
        return Plan.from_stages(best_stages, best_value)


def brute_force(ctx: CostContext) -> Plan:
    return BruteForceSolver(ctx).solve()


def save_plan(plan: Plan, path, manifest: Optional[dict] = None) -> Path:
    payload = plan.to_dict()
    payload["config"] = plan.config_string
    if manifest is not None:
        payload["manifest"] = manifest
    return write_json(payload, path)


def load_plan(path) -> Plan:
    """
    Read a plan document written by `save_plan`.

    :raises ProfileFormatError: If the file is not a valid plan document.
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as e:
        raise ProfileFormatError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}")
    return Plan.from_dict(payload)
