import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple

from pipebrew.exceptions import IntError, ProfileFormatError, ValidationError
from pipebrew.utils import write_json
from pipebrew.validation import (
    is_integer,
    is_non_negative,
    is_positive_integer,
    is_positive_number,
)

logger = logging.getLogger(__name__)

LAYER_FIELDS = ("name", "fwd_time", "bwd_time", "activation_elems", "param_elems")


@dataclass(frozen=True)
class LayerProfile:
    """
    Measured quantities of one layer for one minibatch.

    ``total_time`` is the T_l used by the partitioner; the forward/backward
    split is kept because the simulator schedules the two passes separately.
    """

    layer_id: int
    name: str
    fwd_time: float
    bwd_time: float
    activation_elems: int
    param_elems: int

    def __post_init__(self) -> None:
        try:
            is_positive_integer(self.layer_id)
            is_non_negative(self.fwd_time, "fwd_time")
            is_non_negative(self.bwd_time, "bwd_time")
            is_integer(self.activation_elems)
            is_integer(self.param_elems)
            is_non_negative(self.activation_elems, "activation_elems")
            is_non_negative(self.param_elems, "param_elems")
        except (ValidationError, IntError) as e:
            raise ValidationError(f"Layer {self.layer_id} ({self.name!r}): {e}")
        if self.fwd_time + self.bwd_time <= 0:
            raise ValidationError(
                f"Layer {self.layer_id} ({self.name!r}): "
                "fwd_time + bwd_time must be positive."
            )

    @property
    def total_time(self) -> float:
        return self.fwd_time + self.bwd_time

    def to_dict(self) -> dict:
        return {key: getattr(self, key) for key in LAYER_FIELDS}


@dataclass(frozen=True)
class ModelProfile:
    """
    An ordered chain of layer profiles.

    :param layers: Layers in chain order; ``layer_id`` must run 1..N.
    :param minibatch_size: Samples per minibatch. Metadata only.
    """

    layers: Tuple[LayerProfile, ...]
    minibatch_size: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ValidationError("A profile needs at least one layer.")
        for position, layer in enumerate(self.layers, start=1):
            if layer.layer_id != position:
                raise ValidationError(
                    f"Layer {layer.name!r} has layer_id {layer.layer_id}, "
                    f"expected {position}."
                )
        is_positive_integer(self.minibatch_size)

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def total_time(self) -> float:
        return sum(layer.total_time for layer in self.layers)

    @property
    def total_params(self) -> int:
        return sum(layer.param_elems for layer in self.layers)

    def layer(self, layer_id: int) -> LayerProfile:
        return self.layers[layer_id - 1]

    def to_dict(self) -> dict:
        return {
            "minibatch_size": self.minibatch_size,
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelProfile":
        """
        Build a profile from its JSON form.

        :param payload: Mapping with ``minibatch_size`` and ``layers``.
        :return: A validated profile.
        :rtype: ModelProfile
        :raises ProfileFormatError: If a field is missing or has the wrong shape.
        :raises ValidationError: If a layer breaks an invariant.
        """
        if not isinstance(payload, dict):
            raise ProfileFormatError("Profile document must be a JSON object.")
        for key in ("minibatch_size", "layers"):
            if key not in payload:
                raise ProfileFormatError(f"Missing top-level field '{key}'.")
        raw_layers = payload["layers"]
        if not isinstance(raw_layers, list):
            raise ProfileFormatError("Field 'layers' must be a list.")

        layers: List[LayerProfile] = []
        for index, raw in enumerate(raw_layers):
            if not isinstance(raw, dict):
                raise ProfileFormatError(f"layers[{index}] must be an object.")
            missing = [key for key in LAYER_FIELDS if key not in raw]
            if missing:
                raise ProfileFormatError(f"layers[{index}] is missing field '{missing[0]}'.")
            layer_id = raw.get("layer_id", index + 1)
            layers.append(
                LayerProfile(
                    layer_id=layer_id,
                    name=str(raw["name"]),
                    fwd_time=raw["fwd_time"],
                    bwd_time=raw["bwd_time"],
                    activation_elems=raw["activation_elems"],
                    param_elems=raw["param_elems"],
                )
            )
        return cls(layers=tuple(layers), minibatch_size=payload["minibatch_size"])


@dataclass(frozen=True)
class HardwareSpec:
    """
    Cluster description used by the cost model.

    :param num_machines: Machine count M.
    :param bandwidth: Inter-machine link bandwidth in bytes per second.
    :param bytes_per_elem: Bytes per tensor element.
    """

    num_machines: int
    bandwidth: float
    bytes_per_elem: int = field(default=4)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> bool:
        is_positive_integer(self.num_machines)
        is_positive_number(self.bandwidth, "bandwidth")
        is_positive_number(self.bytes_per_elem, "bytes_per_elem")
        return True


def load_profile(path) -> ModelProfile:
    """
    Load and validate a profile JSON file.

    :param path: Path of the profile document.
    :return: The validated profile.
    :rtype: ModelProfile
    :raises ProfileFormatError: If the file is not valid JSON or misses fields.
    :raises ValidationError: If a layer violates an invariant.
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as e:
        raise ProfileFormatError(
            f"{path}: line {e.lineno} column {e.colno}: {e.msg}"
        )
    profile = ModelProfile.from_dict(payload)
    logger.info("Loaded profile %s with %d layers", path, profile.num_layers)
    return profile


def save_profile(profile: ModelProfile, path) -> Path:
    return write_json(profile.to_dict(), path)


def synth_profile(kind: str, n_layers: int, seed: int = 0) -> ModelProfile:
    """
    Generate a synthetic profile of the given kind.

    :param kind: One of ``uniform``, ``vgg_like``, ``inception_like``.
    :param n_layers: Number of layers, at least 2.
    :param seed: Seed for the generator; equal arguments give equal profiles.
    :return: The generated profile.
    :rtype: ModelProfile
    :raises ValidationError: On an unknown kind or a bad layer count.
    """
    from pipebrew.generators import GENERATORS

    if kind not in GENERATORS:
        raise ValidationError(
            f"Unknown profile kind {kind!r}. Expected one of {sorted(GENERATORS)}."
        )
    return GENERATORS[kind]().generate(n_layers, seed)
