import pytest

from pipebrew.exceptions import ValidationError
from pipebrew.partitioner import Plan, Stage
from pipebrew.schedule import (
    SCHEDULE_CSV_HEADER,
    Direction,
    WorkerSlot,
    WorkerState,
    WorkQueues,
    admission_depths,
    build_schedule,
    next_work,
    replica_for,
    write_schedule_csv,
)


@pytest.fixture
def straight_four():
    return Plan.from_stages([Stage(i, i) for i in range(1, 5)], 1.0)


@pytest.fixture
def replicated():
    return Plan.from_stages([Stage(1, 2, 2), Stage(3, 3, 1)], 1.0)


@pytest.fixture
def state():
    return WorkerState(WorkerSlot(0, 0, 0), depth=2)


class TestReplicaFor:
    def test_single_replica(self):
        assert replica_for(1, 1) == 0

    def test_round_robin(self):
        assert replica_for(5, 2) == 0
        assert replica_for(6, 2) == 1

    def test_invalid_minibatch(self):
        with pytest.raises(ValidationError):
            replica_for(0, 2)


class TestAdmissionDepths:
    def test_straight(self, straight_four):
        assert admission_depths(straight_four) == [4, 3, 2, 1]

    def test_capped(self, straight_four):
        assert admission_depths(straight_four, 1) == [1, 1, 1, 1]

    def test_replicated(self, replicated):
        assert admission_depths(replicated) == [2, 1]

    def test_above_noam(self, straight_four):
        with pytest.raises(ValidationError, match="max_inflight"):
            admission_depths(straight_four, 5)


class TestNextWork:
    def test_idle(self, state):
        assert next_work(state, WorkQueues()) is None

    def test_forward_until_depth(self, state):
        queues = WorkQueues(forward=[1, 2, 3])
        assert next_work(state, queues).label == "F1"
        assert next_work(state, queues).label == "F2"
        assert next_work(state, queues) is None
        assert state.inflight == 2

    def test_backward_wins(self, state):
        queues = WorkQueues(forward=[2], backward=[1])
        state.inflight = 1
        state.admitted = 2
        item = next_work(state, queues)
        assert item.direction is Direction.BACKWARD
        assert state.inflight == 0

    def test_alternates_after_backward(self, state):
        queues = WorkQueues(forward=[3], backward=[2])
        state.inflight = 1
        state.admitted = 2
        state.last_direction = Direction.BACKWARD
        assert next_work(state, queues).label == "F3"
        assert next_work(state, queues).label == "B2"

    def test_warm_up_prefers_forward(self, state):
        queues = WorkQueues(forward=[2], backward=[1])
        state.inflight = 1
        state.admitted = 1
        assert next_work(state, queues).label == "F2"
        assert next_work(state, queues).label == "B1"

    def test_smallest_minibatch_first(self, state):
        queues = WorkQueues()
        for minibatch_id in (4, 2, 3):
            queues.push(Direction.FORWARD, minibatch_id)
        assert next_work(state, queues).minibatch_id == 2


class TestBuildSchedule:
    def test_input_stage_order(self, straight_four):
        schedule = build_schedule(straight_four, 12)
        assert schedule.labels(0)[:10] == [
            "F1", "F2", "F3", "F4", "B1", "F5", "B2", "F6", "B3", "F7",
        ]

    def test_output_stage_order(self, straight_four):
        schedule = build_schedule(straight_four, 12)
        assert schedule.labels(3)[:6] == ["F1", "B1", "F2", "B2", "F3", "B3"]

    def test_replicated_output_stage_admits_noam(self):
        plan = Plan.from_stages([Stage(1, 2, 1), Stage(3, 5, 5)], 1.0)
        assert plan.noam == 6
        schedule = build_schedule(plan, 30)
        assert schedule.labels(0)[:9] == [
            "F1", "F2", "F3", "F4", "F5", "F6", "B1", "F7", "B2",
        ]

    def test_model_parallel_order(self, straight_four):
        schedule = build_schedule(straight_four, 3, max_inflight=1)
        assert schedule.labels(0) == ["F1", "B1", "F2", "B2", "F3", "B3"]

    def test_data_parallel(self):
        plan = Plan.from_stages([Stage(1, 4, 3)], 1.0)
        schedule = build_schedule(plan, 9)
        assert schedule.labels(0) == ["F1", "B1", "F4", "B4", "F7", "B7"]
        assert schedule.labels(2) == ["F3", "B3", "F6", "B6", "F9", "B9"]

    def test_worker_numbering(self, replicated):
        schedule = build_schedule(replicated, 20)
        assert [slot.stage_index for slot in schedule.workers] == [0, 0, 1]
        assert schedule.worker_of(1, 0) == 2

    @pytest.mark.parametrize("num_minibatches", [1, 7, 30])
    def test_every_pass_once(self, replicated, num_minibatches):
        schedule = build_schedule(replicated, num_minibatches)
        for stage_index, stage in enumerate(replicated.stages):
            items = [
                item
                for replica in range(stage.replication)
                for item in schedule.worker_items(schedule.worker_of(stage_index, replica))
            ]
            assert len(items) == 2 * num_minibatches
            for item in items:
                assert item.replica_index == replica_for(item.minibatch_id, stage.replication)

    def test_forward_before_backward(self, replicated):
        schedule = build_schedule(replicated, 25)
        for slot in schedule.workers:
            seen = set()
            for item in schedule.worker_items(slot.worker_id):
                if item.direction is Direction.FORWARD:
                    seen.add(item.minibatch_id)
                else:
                    assert item.minibatch_id in seen

    def test_backward_in_order(self, straight_four):
        schedule = build_schedule(straight_four, 25)
        for slot in schedule.workers:
            backward = [
                item.minibatch_id
                for item in schedule.worker_items(slot.worker_id)
                if item.direction is Direction.BACKWARD
            ]
            assert backward == sorted(backward)

    def test_admitted_never_exceeds_noam(self, straight_four):
        schedule = build_schedule(straight_four, 25)
        active = 0
        for item in schedule.worker_items(0):
            active += 1 if item.direction is Direction.FORWARD else -1
            assert active <= straight_four.noam

    def test_deterministic(self, replicated):
        assert build_schedule(replicated, 15) == build_schedule(replicated, 15)

    def test_zero_minibatches(self, straight_four):
        with pytest.raises(ValidationError):
            build_schedule(straight_four, 0)


class TestWriteScheduleCsv:
    def test_write_schedule_csv(self, straight_four, tmp_path):
        schedule = build_schedule(straight_four, 2)
        path = write_schedule_csv(schedule, tmp_path / "schedule.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == ",".join(SCHEDULE_CSV_HEADER)
        assert lines[1] == "0,0,1,0,forward"
        assert len(lines) == 1 + 2 * 2 * 4
