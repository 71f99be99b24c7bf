"""
Numeric replay of weight-version ledgers on a linear least-squares model.

The model parameters are split into one block per pipeline stage. `replay`
applies per-stage updates in the order the simulator committed them, with
gradients evaluated at exactly the versions the ledger recorded, and
`equation_oracle` iterates the closed-form update recurrences directly.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from pipebrew.exceptions import ConsistencyError, ValidationError
from pipebrew.schedule import Direction
from pipebrew.simulator import Mode, VersionLedger, expected_version
from pipebrew.utils import write_csv
from pipebrew.validation import is_non_negative, is_positive_integer, validate_range

logger = logging.getLogger(__name__)

VANILLA = "vanilla"
TRAJECTORY_CSV_HEADER = ("step", "loss", "weight_norm")


@dataclass(frozen=True, eq=False)
class ToyModel:
    """
    ``f(w) = 0.5 * ||X_b w - y_b||^2`` where minibatch ``m`` uses row block
    ``(m - 1) mod n_blocks`` of the seeded data.

    :param stage_sizes: Parameter count of each stage's block.
    :param X: Design matrix with ``sum(stage_sizes)`` columns.
    :param y: Targets.
    :param batch_size: Rows per minibatch.
    :param learning_rate: Step size; 0 keeps the weights constant.
    :param initial_weights: Starting point, shared by every mode.
    """

    stage_sizes: tuple
    X: np.ndarray
    y: np.ndarray
    batch_size: int
    learning_rate: float
    initial_weights: np.ndarray

    @classmethod
    def create(
        cls,
        stage_sizes: Sequence[int],
        n_rows: int = 64,
        batch_size: int = 8,
        learning_rate: float = 0.05,
        seed: int = 0,
    ) -> "ToyModel":
        stage_sizes = tuple(stage_sizes)
        if not stage_sizes:
            raise ValidationError("A toy model needs at least one stage.")
        for size in stage_sizes:
            is_positive_integer(size)
        is_positive_integer(batch_size)
        validate_range(n_rows, batch_size, 10**7, "n_rows")
        is_non_negative(learning_rate, "learning_rate")

        rng = np.random.default_rng(seed)
        dim = sum(stage_sizes)
        X = rng.normal(size=(n_rows, dim)) / np.sqrt(dim)
        target = rng.normal(size=dim)
        y = X @ target + 0.1 * rng.normal(size=n_rows)
        initial = 0.1 * rng.normal(size=dim)
        return cls(stage_sizes, X, y, batch_size, float(learning_rate), initial)

    @property
    def num_stages(self) -> int:
        return len(self.stage_sizes)

    @property
    def dim(self) -> int:
        return int(self.X.shape[1])

    @property
    def n_blocks(self) -> int:
        return self.X.shape[0] // self.batch_size

    def stage_slice(self, stage: int) -> slice:
        start = sum(self.stage_sizes[:stage])
        return slice(start, start + self.stage_sizes[stage])

    def split(self, w: np.ndarray) -> List[np.ndarray]:
        return [w[self.stage_slice(s)].copy() for s in range(self.num_stages)]

    def rows(self, minibatch_id: int):
        is_positive_integer(minibatch_id)
        block = (minibatch_id - 1) % self.n_blocks
        rows = slice(block * self.batch_size, (block + 1) * self.batch_size)
        return self.X[rows], self.y[rows]

    def loss(self, w: np.ndarray, minibatch_id: int) -> float:
        X, y = self.rows(minibatch_id)
        residual = X @ w - y
        return 0.5 * float(residual @ residual)

    def full_loss(self, w: np.ndarray) -> float:
        residual = self.X @ w - self.y
        return 0.5 * float(residual @ residual) / self.n_blocks

    def gradient(self, w: np.ndarray, minibatch_id: int) -> np.ndarray:
        X, y = self.rows(minibatch_id)
        return X.T @ (X @ w - y)


def finite_difference_gradient(
    model: ToyModel, w: np.ndarray, minibatch_id: int, eps: float = 1e-6
) -> np.ndarray:
    """Central differences of `ToyModel.loss`, one coordinate at a time."""
    grad = np.zeros_like(w, dtype=float)
    for k in range(w.shape[0]):
        step = np.zeros_like(w, dtype=float)
        step[k] = eps
        grad[k] = (model.loss(w + step, minibatch_id) - model.loss(w - step, minibatch_id)) / (
            2 * eps
        )
    return grad


@dataclass(frozen=True)
class Trajectory:
    """
    Per-stage weight histories. ``stage_weights[s][v]`` is stage ``s`` after
    ``v`` updates.
    """

    model: ToyModel
    stage_weights: tuple

    @property
    def steps(self) -> int:
        return min(len(history) for history in self.stage_weights) - 1

    def weights_after(self, step: int) -> np.ndarray:
        return np.concatenate([history[step] for history in self.stage_weights])

    @property
    def final_weights(self) -> np.ndarray:
        return self.weights_after(self.steps)

    def as_array(self) -> np.ndarray:
        return np.stack([self.weights_after(t) for t in range(self.steps + 1)])

    def losses(self) -> List[float]:
        return [self.model.full_loss(self.weights_after(t)) for t in range(self.steps + 1)]


def _stage_update(model: ToyModel, point: List[np.ndarray], stage: int, minibatch_id: int):
    grad = model.gradient(np.concatenate(point), minibatch_id)
    return model.learning_rate * grad[model.stage_slice(stage)]


def replay(ledger: VersionLedger, model: ToyModel, num_minibatches: int = None) -> Trajectory:
    """
    Re-run the updates of a simulated ledger on `model`.

    The update for minibatch ``m`` at stage ``i`` is the stage-``i`` block of
    the gradient at the point built from the forward versions every stage
    recorded for ``m``, except that block ``i`` takes the version stage ``i``
    read in its backward pass. Updates apply in commit order.

    :param ledger: Ledger of a finished simulation.
    :param model: Toy model with one block per stage.
    :param num_minibatches: Only replay updates of minibatches up to this id.
    :return: The trajectory of every stage.
    :rtype: Trajectory
    :raises ValidationError: If the stage counts differ.
    :raises ConsistencyError: If an entry is missing or references a version
                              not yet committed.
    """
    if model.num_stages != ledger.n_stages:
        raise ValidationError(
            f"Model has {model.num_stages} stages, ledger has {ledger.n_stages}."
        )
    histories: List[List[np.ndarray]] = [[block] for block in model.split(model.initial_weights)]

    def version_of(stage: int, minibatch_id: int, direction: Direction) -> np.ndarray:
        try:
            version = ledger.version(stage, minibatch_id, direction)
        except KeyError:
            raise ConsistencyError(
                f"No {direction.value} entry for minibatch {minibatch_id} at stage {stage}."
            )
        if version >= len(histories[stage]):
            raise ConsistencyError(
                f"Minibatch {minibatch_id} at stage {stage} uses version {version}, "
                f"only {len(histories[stage]) - 1} committed."
            )
        return histories[stage][version]

    for stage, m in ledger.history:
        if num_minibatches is not None and m > num_minibatches:
            continue
        point = [version_of(s, m, Direction.FORWARD) for s in range(model.num_stages)]
        point[stage] = version_of(stage, m, Direction.BACKWARD)
        histories[stage].append(histories[stage][-1] - _stage_update(model, point, stage, m))

    logger.debug("Replayed %d updates over %d stages", len(ledger.history), model.num_stages)
    return Trajectory(model, tuple(tuple(history) for history in histories))


def equation_oracle(mode, n: int, model: ToyModel, steps: int) -> Trajectory:
    """
    Iterate the update recurrence of `mode` for a straight pipeline of ``n``
    stages.

    ``vanilla`` is sequential SGD. Weight stashing evaluates stage ``i`` of
    minibatch ``m`` at versions ``m - n + j - 1`` of every stage ``j``,
    vertical sync at version ``m - n`` everywhere, and the naive pipeline as
    weight stashing except that block ``i`` is the latest version ``m - 1``.
    Negative versions read the initial weights.

    :raises ValidationError: If `steps < n` or the model has not ``n`` stages.
    """
    is_positive_integer(n)
    validate_range(steps, n, 10**7, "steps")
    if model.num_stages != n:
        raise ValidationError(f"Model has {model.num_stages} stages, expected {n}.")
    histories = [[block] for block in model.split(model.initial_weights)]

    if mode == VANILLA:
        for m in range(1, steps + 1):
            w = np.concatenate([history[-1] for history in histories])
            grad = model.gradient(w, m)
            for stage in range(n):
                histories[stage].append(
                    histories[stage][-1] - model.learning_rate * grad[model.stage_slice(stage)]
                )
        return Trajectory(model, tuple(tuple(history) for history in histories))

    mode = Mode(mode)
    for m in range(1, steps + 1):
        read_as = Mode.STASH if mode is Mode.NAIVE else mode
        versions = [expected_version(read_as, n, s, m) for s in range(n)]
        updates = []
        for stage in range(n):
            point = [histories[s][versions[s]] for s in range(n)]
            if mode is Mode.NAIVE:
                point[stage] = histories[stage][m - 1]
            updates.append(_stage_update(model, point, stage, m))
        for stage in range(n):
            histories[stage].append(histories[stage][-1] - updates[stage])
    return Trajectory(model, tuple(tuple(history) for history in histories))


def max_deviation(left: Trajectory, right: Trajectory) -> float:
    steps = min(left.steps, right.steps)
    return float(
        np.max(np.abs(left.as_array()[: steps + 1] - right.as_array()[: steps + 1]))
    )


def write_trajectory_csv(trajectory: Trajectory, path):
    rows = (
        (step, repr(loss), repr(float(np.linalg.norm(trajectory.weights_after(step)))))
        for step, loss in enumerate(trajectory.losses())
    )
    return write_csv(TRAJECTORY_CSV_HEADER, rows, path)


def oracle_trajectories(n: int, model: ToyModel, steps: int) -> Dict[str, Trajectory]:
    """Every recurrence for ``n`` stages, keyed by mode name."""
    return {
        name: equation_oracle(name, n, model, steps)
        for name in (VANILLA, Mode.STASH.value, Mode.VSYNC.value)
    }
