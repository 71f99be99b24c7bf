"""
Static 1F1B work order.

The order in which every worker processes forward and backward passes is
fixed before any timing is known. It is derived by replaying `next_work` in
unit-time lock step: every item takes one tick and results reach the next
worker one tick later. During warm-up a worker takes forward passes until it
has admitted its depth, so the input stage emits 1..NOAM before any
backward. The simulator then executes each worker's sequence in order with
real durations.
"""
import heapq
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

from pipebrew.exceptions import DeadlockError, ValidationError
from pipebrew.partitioner import Plan
from pipebrew.utils import ceil_div, write_csv
from pipebrew.validation import is_positive_integer, validate_range

logger = logging.getLogger(__name__)

SCHEDULE_CSV_HEADER = ("worker", "seq", "minibatch", "stage", "direction")


class Direction(str, Enum):
    FORWARD = "forward"
    BACKWARD = "backward"

    @property
    def short(self) -> str:
        return "F" if self is Direction.FORWARD else "B"


@dataclass(frozen=True)
class WorkItem:
    minibatch_id: int
    stage_index: int
    replica_index: int
    direction: Direction

    @property
    def label(self) -> str:
        return f"{self.direction.short}{self.minibatch_id}"


@dataclass(frozen=True)
class WorkerSlot:
    worker_id: int
    stage_index: int
    replica_index: int


def replica_for(minibatch_id: int, replication: int) -> int:
    """
    Round-robin replica of a minibatch within a stage.

    Minibatch 1 lands on replica 0. A minibatch maps to the same replica for
    its forward and backward passes.

    :param minibatch_id: 1-based minibatch id.
    :param replication: Number of replicas of the stage.
    :return: 0-based replica index.
    :rtype: int
    """
    is_positive_integer(minibatch_id)
    is_positive_integer(replication)
    return (minibatch_id - 1) % replication


def admission_depths(plan: Plan, max_inflight: Optional[int] = None) -> List[int]:
    """
    Per-stage limit of minibatches a worker holds between its forward and
    backward pass.

    Stage ``s`` admits ``ceil(machines in stages s..end / r_s)``, which is NOAM
    for the input stage and ``n - s`` in a straight pipeline of ``n`` stages.
    ``max_inflight`` caps every stage.

    :raises ValidationError: If `max_inflight` is outside ``1..NOAM``.
    """
    if max_inflight is None:
        max_inflight = plan.noam
    validate_range(max_inflight, 1, plan.noam, "max_inflight")
    depths = []
    downstream = plan.machines_used
    for stage in plan.stages:
        depths.append(min(ceil_div(downstream, stage.replication), max_inflight))
        downstream -= stage.replication
    return depths


@dataclass
class WorkerState:
    slot: WorkerSlot
    depth: int
    inflight: int = 0
    admitted: int = 0
    last_direction: Optional[Direction] = None


@dataclass
class WorkQueues:
    """Minibatch ids ready for each direction, kept as min-heaps."""

    forward: List[int] = field(default_factory=list)
    backward: List[int] = field(default_factory=list)

    def push(self, direction: Direction, minibatch_id: int) -> None:
        heapq.heappush(
            self.forward if direction is Direction.FORWARD else self.backward,
            minibatch_id,
        )


def next_work(state: WorkerState, queues: WorkQueues) -> Optional[WorkItem]:
    """
    Pick the next item for one worker, or None when it must idle.

    Until the worker has admitted ``state.depth`` forward passes, an
    admissible forward pass runs first. After that a ready backward pass runs
    unless the worker just ran one and a forward pass is admissible, so the
    worker alternates once both kinds are available and backward wins any
    choice. Forward passes are admissible while fewer than ``state.depth``
    minibatches are held. The smallest ready minibatch id is taken first.

    The state and queues are updated for the returned item.
    """
    backward_ready = bool(queues.backward)
    forward_ready = bool(queues.forward) and state.inflight < state.depth
    warming_up = forward_ready and state.admitted < state.depth
    if backward_ready and not warming_up and (
        state.last_direction is not Direction.BACKWARD or not forward_ready
    ):
        direction = Direction.BACKWARD
        minibatch_id = heapq.heappop(queues.backward)
        state.inflight -= 1
    elif forward_ready:
        direction = Direction.FORWARD
        minibatch_id = heapq.heappop(queues.forward)
        state.inflight += 1
        state.admitted += 1
    else:
        return None
    state.last_direction = direction
    return WorkItem(
        minibatch_id=minibatch_id,
        stage_index=state.slot.stage_index,
        replica_index=state.slot.replica_index,
        direction=direction,
    )


@dataclass(frozen=True)
class Schedule:
    """
    Immutable per-worker work order for one plan.
    """

    plan: Plan
    num_minibatches: int
    depths: Tuple[int, ...]
    workers: Tuple[WorkerSlot, ...]
    sequences: Dict[int, Tuple[WorkItem, ...]]

    def worker_of(self, stage_index: int, replica_index: int) -> int:
        offset = sum(stage.replication for stage in self.plan.stages[:stage_index])
        return offset + replica_index

    def worker_items(self, worker_id: int) -> Tuple[WorkItem, ...]:
        return self.sequences[worker_id]

    def labels(self, worker_id: int) -> List[str]:
        return [item.label for item in self.sequences[worker_id]]

    def rows(self):
        for slot in self.workers:
            for seq, item in enumerate(self.sequences[slot.worker_id]):
                yield (
                    slot.worker_id,
                    seq,
                    item.minibatch_id,
                    item.stage_index,
                    item.direction.value,
                )


def worker_slots(plan: Plan) -> Tuple[WorkerSlot, ...]:
    slots = []
    for stage_index, stage in enumerate(plan.stages):
        for replica_index in range(stage.replication):
            slots.append(WorkerSlot(len(slots), stage_index, replica_index))
    return tuple(slots)


def build_schedule(plan: Plan, num_minibatches: int, max_inflight: Optional[int] = None) -> Schedule:
    """
    Generate the static 1F1B order of every worker.

    :param plan: The pipeline plan.
    :param num_minibatches: Number of minibatches to schedule.
    :param max_inflight: Cap on held minibatches per worker; defaults to NOAM.
    :return: The schedule.
    :rtype: Schedule
    :raises ValidationError: On invalid arguments.
    :raises DeadlockError: If the lock-step replay stops making progress.
    """
    is_positive_integer(num_minibatches)
    depths = admission_depths(plan, max_inflight)
    slots = worker_slots(plan)
    index = {(slot.stage_index, slot.replica_index): slot.worker_id for slot in slots}
    states = [WorkerState(slot, depths[slot.stage_index]) for slot in slots]
    queues = [WorkQueues() for _ in slots]
    sequences: Dict[int, List[WorkItem]] = {slot.worker_id: [] for slot in slots}
    last_stage = plan.num_stages - 1

    input_replication = plan.stages[0].replication
    for minibatch_id in range(1, num_minibatches + 1):
        worker = index[(0, replica_for(minibatch_id, input_replication))]
        queues[worker].forward.append(minibatch_id)

    completed = 0
    tick = 0
    while completed < num_minibatches:
        deliveries = []
        for state, queue in zip(states, queues):
            item = next_work(state, queue)
            if item is None:
                continue
            sequences[state.slot.worker_id].append(item)
            deliveries.append(item)
        if not deliveries:
            blocked = next(
                (state for state, queue in zip(states, queues) if queue.forward),
                states[0],
            )
            raise DeadlockError(
                f"Schedule stalled at tick {tick} with {completed} of "
                f"{num_minibatches} minibatches complete; worker "
                f"{blocked.slot.worker_id} holds {blocked.inflight} of {blocked.depth}.",
                worker=blocked.slot.worker_id,
            )
        for item in deliveries:
            s = item.stage_index
            if item.direction is Direction.FORWARD:
                if s == last_stage:
                    target = index[(s, item.replica_index)]
                    queues[target].push(Direction.BACKWARD, item.minibatch_id)
                else:
                    replica = replica_for(item.minibatch_id, plan.stages[s + 1].replication)
                    queues[index[(s + 1, replica)]].push(Direction.FORWARD, item.minibatch_id)
            elif s == 0:
                completed += 1
            else:
                replica = replica_for(item.minibatch_id, plan.stages[s - 1].replication)
                queues[index[(s - 1, replica)]].push(Direction.BACKWARD, item.minibatch_id)
        tick += 1

    logger.debug("Built schedule for %d minibatches in %d ticks", num_minibatches, tick)
    return Schedule(
        plan=plan,
        num_minibatches=num_minibatches,
        depths=tuple(depths),
        workers=slots,
        sequences={worker: tuple(items) for worker, items in sequences.items()},
    )


def write_schedule_csv(schedule: Schedule, path):
    return write_csv(SCHEDULE_CSV_HEADER, schedule.rows(), path)
