"""
Analytic time and volume estimates.

Every quantity is a pure function of the profile, the hardware description
and the arguments. Communication time is data size divided by the link
bandwidth; parameter-server traffic for a layer replicated on ``m`` machines
is ``bytes_per_elem * (m - 1) * |w_l| / m`` per worker and minibatch.
"""
import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np

from pipebrew.exceptions import PlanMismatchError
from pipebrew.profile import HardwareSpec, ModelProfile
from pipebrew.validation import is_positive_integer, validate_range

if TYPE_CHECKING:
    from pipebrew.partitioner import Plan

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CostContext:
    """
    Profile, hardware and prefix sums over the layer chain.

    Every prefix array has length N + 1 with a leading 0, so the sum over
    layers ``i..j`` (1-based, inclusive) is ``prefix[j] - prefix[i - 1]``.
    """

    profile: ModelProfile
    hw: HardwareSpec
    prefix_T: np.ndarray
    prefix_W_bytes: np.ndarray
    prefix_fwd: np.ndarray
    prefix_bwd: np.ndarray

    @classmethod
    def build(cls, profile: ModelProfile, hw: HardwareSpec) -> "CostContext":
        layers = profile.layers
        fwd = np.array([layer.fwd_time for layer in layers], dtype=float)
        bwd = np.array([layer.bwd_time for layer in layers], dtype=float)
        total = np.array([layer.total_time for layer in layers], dtype=float)
        param_bytes = np.array(
            [layer.param_elems * hw.bytes_per_elem for layer in layers], dtype=float
        )
        return cls(
            profile=profile,
            hw=hw,
            prefix_T=_prefix(total),
            prefix_W_bytes=_prefix(param_bytes),
            prefix_fwd=_prefix(fwd),
            prefix_bwd=_prefix(bwd),
        )

    @property
    def num_layers(self) -> int:
        return self.profile.num_layers

    @property
    def num_machines(self) -> int:
        return self.hw.num_machines

    def check_span(self, i: int, j: int) -> None:
        validate_range(i, 1, self.num_layers, "first layer")
        validate_range(j, i, self.num_layers, "last layer")

    def compute_time(self, i: int, j: int) -> float:
        self.check_span(i, j)
        return float(self.prefix_T[j] - self.prefix_T[i - 1])

    def fwd_time(self, i: int, j: int) -> float:
        self.check_span(i, j)
        return float(self.prefix_fwd[j] - self.prefix_fwd[i - 1])

    def bwd_time(self, i: int, j: int) -> float:
        self.check_span(i, j)
        return float(self.prefix_bwd[j] - self.prefix_bwd[i - 1])

    def param_bytes(self, i: int, j: int) -> float:
        self.check_span(i, j)
        return float(self.prefix_W_bytes[j] - self.prefix_W_bytes[i - 1])


def _prefix(values: np.ndarray) -> np.ndarray:
    return np.concatenate(([0.0], np.cumsum(values)))


def comm_time_activations(ctx: CostContext, l: int) -> float:
    """
    Time C_l to send the activations of layer ``l`` to layer ``l + 1``.

    :param ctx: The cost context.
    :param l: Layer index, ``1 <= l <= N - 1``.
    :return: ``a_l * bytes_per_elem / bandwidth`` in seconds.
    :rtype: float
    :raises ValidationError: If `l` is out of range.
    """
    validate_range(l, 1, ctx.num_layers - 1, "boundary layer")
    layer = ctx.profile.layer(l)
    return layer.activation_elems * ctx.hw.bytes_per_elem / ctx.hw.bandwidth


def boundary_time(ctx: CostContext, l: int) -> float:
    # activations forward plus gradients backward, both of size a_l
    return 2.0 * comm_time_activations(ctx, l)


def weight_sync_time(ctx: CostContext, i: int, j: int, m: int) -> float:
    """
    Total weight-synchronization time of layers ``i..j`` replicated ``m`` ways.

    :return: ``bytes_per_elem * (m - 1) / m * sum(param_elems) / bandwidth``;
             exactly 0 when ``m == 1``.
    :rtype: float
    :raises ValidationError: If the span or the replication is invalid.
    """
    is_positive_integer(m)
    if m == 1:
        ctx.check_span(i, j)
        return 0.0
    return (m - 1) / m * ctx.param_bytes(i, j) / ctx.hw.bandwidth


def stage_time(ctx: CostContext, i: int, j: int, m: int) -> float:
    """
    Per-minibatch time T(i -> j, m) of one stage replicated over ``m`` machines.

    Both terms of the max are stage totals; the replication divides the larger.

    :return: ``max(sum T_l, sum W_l^m) / m``.
    :rtype: float
    """
    compute = ctx.compute_time(i, j)
    sync = weight_sync_time(ctx, i, j, m)
    return max(compute, sync) / m


def stage_fwd_time(ctx: CostContext, i: int, j: int) -> float:
    return ctx.fwd_time(i, j)


def stage_bwd_time(ctx: CostContext, i: int, j: int, m: int = 1) -> float:
    """
    Backward occupancy of one replica for one minibatch.

    Weight synchronization that exceeds the stage's compute extends the
    backward pass, so one replica spends ``max(compute, sync)`` per minibatch.
    """
    compute = ctx.compute_time(i, j)
    sync = weight_sync_time(ctx, i, j, m)
    return ctx.bwd_time(i, j) + max(0.0, sync - compute)


def comm_volume_bsp(ctx: CostContext, m: int) -> float:
    """
    Bytes crossing the network per minibatch when all layers run data parallel.

    Aggregated over ``m`` workers: ``m * bytes_per_elem * (m - 1) / m * sum |w_l|``.

    :param m: Number of machines.
    :return: Bytes per minibatch; 0 for a single machine.
    :rtype: float
    """
    is_positive_integer(m)
    return (m - 1) * float(ctx.prefix_W_bytes[-1])


def comm_volume_pp(ctx: CostContext, plan: "Plan") -> float:
    """
    Bytes crossing the network per minibatch under a pipeline plan.

    Each stage boundary after layer ``i`` moves activations forward and
    gradients backward (``2 * a_i * bytes_per_elem``). A replicated stage adds
    its own data-parallel synchronization volume, counted per round in which
    each of its ``r`` replicas finishes one minibatch, like `comm_volume_bsp`.

    :param plan: A plan covering the profile's layers.
    :return: Bytes per minibatch.
    :rtype: float
    :raises PlanMismatchError: If the plan does not fit the context.
    """
    check_plan(ctx, plan)
    volume = 0.0
    for stage in plan.stages[:-1]:
        layer = ctx.profile.layer(stage.last_layer)
        volume += 2.0 * layer.activation_elems * ctx.hw.bytes_per_elem
    for stage in plan.stages:
        if stage.replication > 1:
            volume += (stage.replication - 1) * ctx.param_bytes(
                stage.first_layer, stage.last_layer
            )
    return volume


def comm_reduction(ctx: CostContext, plan: "Plan") -> Optional[float]:
    """
    Fractional communication saving of ``plan`` over data parallelism on all
    ``M`` machines of the context.

    :return: ``1 - pp / bsp``, or None when data parallelism moves no bytes.
    :rtype: Optional[float]
    """
    bsp = comm_volume_bsp(ctx, ctx.num_machines)
    if bsp == 0:
        return None
    return 1.0 - comm_volume_pp(ctx, plan) / bsp


def check_plan(ctx: CostContext, plan: "Plan") -> None:
    try:
        plan.validate(ctx.num_layers)
    except PlanMismatchError:
        raise
    except Exception as e:
        raise PlanMismatchError(e)
    if plan.machines_used > ctx.num_machines:
        raise PlanMismatchError(
            f"Plan uses {plan.machines_used} machines, hardware has {ctx.num_machines}."
        )
