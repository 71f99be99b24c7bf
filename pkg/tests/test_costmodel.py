import numpy as np
import pytest

from pipebrew.costmodel import (
    boundary_time,
    comm_reduction,
    comm_time_activations,
    comm_volume_bsp,
    comm_volume_pp,
    stage_bwd_time,
    stage_time,
    weight_sync_time,
)
from pipebrew.exceptions import PlanMismatchError, ValidationError
from pipebrew.partitioner import Plan, Stage, data_parallel, plan_from_stages
from pipebrew.profile import synth_profile
from tests.factories import build_context, build_profile


@pytest.fixture
def two_layers():
    # two layers of total time 2, 1000 parameters each
    return build_profile([2.0, 2.0], activations=[1000, 0], params=[1000, 1000])


class TestCostContext:
    def test_prefix_arrays(self, two_layers):
        ctx = build_context(two_layers, 2)
        assert ctx.prefix_T.shape == (3,)
        assert ctx.prefix_T[0] == 0.0
        assert np.all(np.diff(ctx.prefix_W_bytes) >= 0)
        assert ctx.param_bytes(1, 2) == 8000.0

    def test_bad_span(self, two_layers):
        ctx = build_context(two_layers, 2)
        with pytest.raises(ValidationError):
            ctx.compute_time(2, 1)


class TestCommTimeActivations:
    def test_comm_time(self):
        ctx = build_context(build_profile([1.0, 1.0], activations=[1000, 0]), 1, bandwidth=4000)
        assert comm_time_activations(ctx, 1) == 1.0
        assert boundary_time(ctx, 1) == 2.0

    def test_small_comm_time(self):
        ctx = build_context(build_profile([1.0, 1.0], activations=[3, 0]), 1, bandwidth=6)
        assert comm_time_activations(ctx, 1) == 2.0

    def test_zero_activations(self):
        ctx = build_context(build_profile([1.0, 1.0]), 1)
        assert comm_time_activations(ctx, 1) == 0.0

    @pytest.mark.parametrize("layer", [0, 2])
    def test_out_of_range(self, layer):
        ctx = build_context(build_profile([1.0, 1.0]), 1)
        with pytest.raises(ValidationError, match="boundary layer"):
            comm_time_activations(ctx, layer)


class TestWeightSyncTime:
    def test_single_machine(self, two_layers):
        ctx = build_context(two_layers, 4)
        assert weight_sync_time(ctx, 1, 2, 1) == 0.0

    def test_two_machines(self):
        ctx = build_context(build_profile([1.0], params=1000), 2, bandwidth=2000)
        assert weight_sync_time(ctx, 1, 1, 2) == pytest.approx(1.0)

    def test_four_machines(self):
        ctx = build_context(build_profile([1.0], params=1000), 4, bandwidth=1000)
        assert weight_sync_time(ctx, 1, 1, 4) == pytest.approx(3.0)

    def test_zero_replication(self, two_layers):
        ctx = build_context(two_layers, 2)
        with pytest.raises(ValidationError):
            weight_sync_time(ctx, 1, 2, 0)


class TestStageTime:
    def test_sync_dominated(self):
        # per-layer sync at m=2 is 3.0
        profile = build_profile([2.0, 2.0], params=[12, 12])
        ctx = build_context(profile, 2, bandwidth=8)
        assert weight_sync_time(ctx, 1, 1, 2) == pytest.approx(3.0)
        assert stage_time(ctx, 1, 2, 2) == pytest.approx(3.0)

    def test_compute_dominated(self):
        profile = build_profile([5.0], params=3)
        ctx = build_context(profile, 3, bandwidth=6)
        assert weight_sync_time(ctx, 1, 1, 3) == pytest.approx(4.0 / 3.0)
        assert stage_time(ctx, 1, 1, 3) == pytest.approx(5.0 / 3.0)

    def test_single_machine_is_compute(self, two_layers):
        ctx = build_context(two_layers, 1)
        assert stage_time(ctx, 1, 2, 1) == ctx.compute_time(1, 2)

    def test_backward_absorbs_excess_sync(self):
        profile = build_profile([2.0, 2.0], params=[12, 12])
        ctx = build_context(profile, 2, bandwidth=8)
        # one replica spends max(compute, sync) per minibatch
        fwd = ctx.fwd_time(1, 2)
        assert fwd + stage_bwd_time(ctx, 1, 2, 2) == pytest.approx(6.0)
        assert stage_bwd_time(ctx, 1, 2, 1) == ctx.bwd_time(1, 2)


class TestCommVolume:
    def test_bsp(self):
        ctx = build_context(build_profile([1.0], params=1000), 2)
        assert comm_volume_bsp(ctx, 1) == 0.0
        assert comm_volume_bsp(ctx, 2) == 4000.0

    def test_bsp_monotone(self):
        ctx = build_context(synth_profile("vgg_like", 8), 16)
        volumes = [comm_volume_bsp(ctx, m) for m in range(1, 17)]
        assert volumes == sorted(volumes)

    def test_pp_straight(self):
        ctx = build_context(build_profile([1.0, 1.0], activations=[1000, 0]), 2)
        plan = plan_from_stages(ctx, [Stage(1, 1), Stage(2, 2)])
        assert comm_volume_pp(ctx, plan) == 8000.0

    def test_pp_data_parallel_equals_bsp(self, two_layers):
        ctx = build_context(two_layers, 4)
        assert comm_volume_pp(ctx, data_parallel(ctx, 4)) == comm_volume_bsp(ctx, 4)
        assert comm_volume_pp(ctx, data_parallel(ctx, 1)) == 0.0

    def test_pp_plan_mismatch(self, two_layers):
        ctx = build_context(two_layers, 2)
        plan = Plan.from_stages([Stage(1, 3)], 1.0)
        with pytest.raises(PlanMismatchError, match="covers 3 layers"):
            comm_volume_pp(ctx, plan)

    def test_pp_too_many_machines(self, two_layers):
        ctx = build_context(two_layers, 2)
        plan = Plan.from_stages([Stage(1, 2, 3)], 1.0)
        with pytest.raises(PlanMismatchError, match="3 machines"):
            comm_volume_pp(ctx, plan)


class TestCommReduction:
    def test_single_machine(self, two_layers):
        ctx = build_context(two_layers, 1)
        assert comm_reduction(ctx, data_parallel(ctx, 1)) is None

    def test_data_parallel_saves_nothing(self, two_layers):
        ctx = build_context(two_layers, 4)
        assert comm_reduction(ctx, data_parallel(ctx, 4)) == pytest.approx(0.0)
