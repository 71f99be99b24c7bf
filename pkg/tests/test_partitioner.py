import numpy as np
import pytest

from pipebrew.costmodel import comm_reduction
from pipebrew.exceptions import PlanMismatchError, ProfileFormatError, ValidationError
from pipebrew.partitioner import (
    BruteForceSolver,
    PartitionSolver,
    Plan,
    Stage,
    brute_force,
    data_parallel,
    load_plan,
    noam,
    parse_config,
    save_plan,
    solve,
    straight_pipeline,
)
from pipebrew.profile import synth_profile
from tests.factories import build_context, build_profile, random_context


@pytest.fixture
def split_example():
    # per-layer sync at m=2 is 3.0 and 2 * C_1 is 1.0
    profile = build_profile([2.0, 2.0], activations=[1, 0], params=[12, 12])
    return build_context(profile, 2, bandwidth=8)


@pytest.fixture
def brute_force_limits():
    yield BruteForceSolver
    BruteForceSolver._max_layers = 12
    BruteForceSolver._max_machines = 8


@pytest.fixture
def solver_tolerance():
    yield PartitionSolver
    PartitionSolver._tolerance = 1e-12


class TestStage:
    def test_stage_layers(self):
        assert Stage(3, 5).num_layers == 3

    def test_stage_backwards(self):
        with pytest.raises(ValidationError, match="after last_layer"):
            Stage(5, 3)

    def test_stage_zero_replication(self):
        with pytest.raises(ValidationError):
            Stage(1, 2, 0)


class TestNoam:
    def test_straight_four(self):
        plan = Plan.from_stages([Stage(i, i) for i in range(1, 5)], 1.0)
        assert noam(plan) == plan.noam == 4

    def test_seven_one(self):
        plan = Plan.from_stages([Stage(1, 13, 7), Stage(14, 16, 1)], 1.0)
        assert plan.noam == 2
        assert plan.config_string == "7-1"

    def test_data_parallel(self):
        plan = Plan.from_stages([Stage(1, 16, 8)], 1.0)
        assert plan.noam == 1


class TestParseConfig:
    def test_parse_config(self):
        assert parse_config("2-1-1") == [2, 1, 1]
        assert parse_config("9-5-1-1") == [9, 5, 1, 1]

    @pytest.mark.parametrize("text", ["0-1", "", "2--1", "a-b", "1-1-"])
    def test_parse_config_malformed(self, text):
        with pytest.raises(ValidationError):
            parse_config(text)

    def test_parse_config_too_many_stages(self):
        with pytest.raises(ValidationError, match="3 stages for 2 layers"):
            parse_config("1-1-1", n_layers=2)


class TestPlanValidate:
    def test_gap(self):
        plan = Plan.from_stages([Stage(1, 2), Stage(4, 5)], 1.0)
        with pytest.raises(PlanMismatchError, match="starts at layer 4"):
            plan.validate(5)

    def test_machine_budget(self):
        plan = Plan.from_stages([Stage(1, 5, 3)], 1.0)
        with pytest.raises(PlanMismatchError):
            plan.validate(5, machines=2)

    def test_round_trip(self, tmp_path):
        ctx = build_context(synth_profile("vgg_like", 8), 4, bandwidth=4e8)
        plan = solve(ctx)
        path = save_plan(plan, tmp_path / "plan.json", manifest={"command": "plan"})
        assert load_plan(path) == plan

    def test_malformed_document(self, tmp_path):
        path = tmp_path / "plan.json"
        path.write_text('{"stages": []}')
        with pytest.raises(ProfileFormatError, match="Malformed plan"):
            load_plan(path)


class TestSolve:
    def test_split_beats_replication(self, split_example):
        plan = solve(split_example)
        assert plan.bottleneck_time == pytest.approx(2.0)
        assert plan.stages == (Stage(1, 1, 1), Stage(2, 2, 1))
        assert data_parallel(split_example, 2).bottleneck_time == pytest.approx(3.0)

    def test_single_machine(self):
        ctx = build_context(build_profile([1.0, 2.0, 3.0]), 1)
        plan = solve(ctx)
        assert plan.stages == (Stage(1, 3, 1),)
        assert plan.bottleneck_time == pytest.approx(6.0)
        assert plan.noam == 1

    def test_inception_like_is_data_parallel(self):
        ctx = build_context(synth_profile("inception_like", 16), 8, bandwidth=1.25e9)
        assert solve(ctx).config_string == "8"

    def test_vgg_like_pipelines(self):
        ctx = build_context(synth_profile("vgg_like", 16), 8, bandwidth=4e8)
        plan = solve(ctx)
        assert plan.num_stages > 1
        assert comm_reduction(ctx, plan) >= 0.90

    def test_more_machines_never_hurt(self):
        profile = synth_profile("vgg_like", 10, seed=4)
        values = [solve(build_context(profile, m, bandwidth=4e8)).bottleneck_time for m in range(1, 9)]
        for fewer, more in zip(values, values[1:]):
            assert more <= fewer + 1e-9

    def test_force_all_machines(self):
        # the second machine cannot help a single layer with heavy sync
        ctx = build_context(build_profile([1.0], params=10**6), 2, bandwidth=1.0)
        assert solve(ctx).machines_used == 1
        assert solve(ctx, force_all_machines=True).machines_used == 2

    def test_ties_prefer_fewer_stages(self):
        ctx = build_context(build_profile([1.0] * 4), 4)
        assert solve(ctx).config_string == "4"

    def test_set_tolerance(self, solver_tolerance):
        solver_tolerance.set_tolerance(1e-6)
        assert PartitionSolver(build_context(build_profile([1.0]), 1)).tolerance == 1e-6

    def test_set_tolerance_negative(self, solver_tolerance):
        with pytest.raises(ValidationError):
            solver_tolerance.set_tolerance(-1.0)

    def test_evaluation_count(self):
        ctx = build_context(synth_profile("vgg_like", 12), 6, bandwidth=4e8)
        solver = PartitionSolver(ctx)
        solver.solve()
        assert 0 < solver.evaluations <= 12**2 * 6**2

    def test_plans_are_valid(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            ctx = random_context(rng, 8, 6)
            plan = solve(ctx)
            assert plan.validate(ctx.num_layers, ctx.num_machines)


class TestStraightPipeline:
    def test_straight_pipeline(self):
        ctx = build_context(build_profile([1.0, 1.0, 2.0, 2.0]), 4)
        plan = straight_pipeline(ctx, 3)
        assert plan.is_straight
        assert plan.num_stages == 3
        assert plan.bottleneck_time == pytest.approx(2.0)

    def test_too_many_stages(self):
        ctx = build_context(build_profile([1.0, 1.0]), 4)
        with pytest.raises(ValidationError):
            straight_pipeline(ctx, 3)


class TestBruteForce:
    def test_split_example(self, split_example):
        assert brute_force(split_example).bottleneck_time == pytest.approx(2.0)

    def test_guard(self, brute_force_limits):
        brute_force_limits.set_max_layers(4)
        ctx = build_context(build_profile([1.0] * 5), 2)
        with pytest.raises(ValidationError, match="too large"):
            brute_force(ctx)

    def test_machine_guard(self, brute_force_limits):
        brute_force_limits.set_max_machines(2)
        ctx = build_context(build_profile([1.0] * 3), 3)
        with pytest.raises(ValidationError, match="too large"):
            brute_force(ctx)

    def test_partitions_count(self):
        ctx = build_context(build_profile([1.0] * 5), 2)
        assert len(list(BruteForceSolver(ctx).partitions())) == 2**4

    def test_agrees_on_small_instances(self):
        rng = np.random.default_rng(2024)
        for _ in range(200):
            ctx = random_context(rng, 6, 4)
            assert solve(ctx).bottleneck_time == pytest.approx(
                brute_force(ctx).bottleneck_time, abs=1e-9
            )

    def test_agrees_on_larger_instances(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            ctx = random_context(rng, 10, 6)
            assert solve(ctx).bottleneck_time == pytest.approx(
                brute_force(ctx).bottleneck_time, abs=1e-9
            )

