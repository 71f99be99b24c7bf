from typing import List

import numpy as np

from pipebrew.exceptions import ExceedsMaximumError, IntError, ValidationError
from pipebrew.profile import LayerProfile, ModelProfile
from pipebrew.validation import (
    is_greater_than,
    is_integer,
    is_less_than,
    is_positive_integer,
    validate_range,
)


class BaseProfileGenerator:
    """
    A base class for synthetic layer-profile generators.

    Subclasses describe one model shape by implementing `_build_layers`.
    The base class owns the layer-count bounds, argument validation and the
    seeded random generator.

    Attributes
    ----------
    min_layers : int
        The smallest layer count a generator accepts.
    max_layers : int
        The largest layer count a generator accepts.

    Methods
    -------
    set_min_layers(value: int) -> None
        Sets the minimum layer count.
    set_max_layers(value: int) -> None
        Sets the maximum layer count.
    validate_input(value: int) -> bool
        Validates a requested layer count.
    generate(n_layers: int, seed: int) -> ModelProfile
        Builds a profile.
    """

    kind = "base"
    minibatch_size = 32

    _min_layers = 2
    _max_layers = 1024

    @property
    def min_layers(self) -> int:
        return self._min_layers

    @classmethod
    def set_min_layers(kls, value: int) -> None:
        """
        Set the minimum layer count.

        :param value: The new minimum. Default is 2.
        :type value: int
        :raises ValidationError: If the value is not a positive integer or
                                 is not below the maximum.
        """
        try:
            if is_positive_integer(value) and is_less_than(value, kls._max_layers):
                kls._min_layers = value
        except ValidationError as e:
            raise ValidationError(e)
        except ExceedsMaximumError as e:
            raise ValidationError(e)

    @property
    def max_layers(self) -> int:
        return self._max_layers

    @classmethod
    def set_max_layers(kls, value: int) -> None:
        """
        Set the maximum layer count.

        :param value: The new maximum. Default is 1024.
        :type value: int
        :raises ValidationError: If the value is not a positive integer or
                                 is not above the minimum.
        """
        try:
            if is_positive_integer(value) and is_greater_than(value, kls._min_layers):
                kls._max_layers = value
        except ValidationError as e:
            raise ValidationError(e)
        except ValueError as e:
            raise ValidationError(e)

    def validate_input(self, value) -> bool:
        """
        Validate a requested layer count against the configured bounds.

        :param value: The layer count.
        :type value: int
        :return: True if the value is an integer within the bounds.
        :rtype: bool
        :raises ValidationError: Otherwise.
        """
        return validate_range(value, self.min_layers, self.max_layers, "n_layers")

    def generate(self, n_layers: int, seed: int = 0) -> ModelProfile:
        """
        Build a deterministic profile.

        :param n_layers: Number of layers.
        :type n_layers: int
        :param seed: Seed of the numpy generator.
        :type seed: int
        :return: A validated profile; equal arguments give equal profiles.
        :rtype: ModelProfile
        :raises ValidationError: If `n_layers` or `seed` is invalid.
        """
        self.validate_input(n_layers)
        try:
            is_integer(seed)
        except IntError as e:
            raise ValidationError(e)
        rng = np.random.default_rng(seed)
        return ModelProfile(
            layers=tuple(self._build_layers(n_layers, rng)),
            minibatch_size=self.minibatch_size,
        )

    def _build_layers(self, n_layers: int, rng: np.random.Generator) -> List[LayerProfile]:
        raise NotImplementedError

    @staticmethod
    def _layer(layer_id: int, name: str, fwd_time: float, activation_elems, param_elems) -> LayerProfile:
        # backward is twice the forward for every synthetic layer
        return LayerProfile(
            layer_id=layer_id,
            name=name,
            fwd_time=float(fwd_time),
            bwd_time=float(2.0 * fwd_time),
            activation_elems=int(activation_elems),
            param_elems=int(param_elems),
        )
