from typing import List

import numpy as np

from pipebrew.generators.base_generator import BaseProfileGenerator
from pipebrew.profile import LayerProfile


class UniformProfileGenerator(BaseProfileGenerator):
    """
    Identical layers. The seed is accepted and ignored.
    """

    kind = "uniform"

    fwd_time = 0.01
    activation_elems = 100_000
    param_elems = 100_000

    def _build_layers(self, n_layers: int, rng: np.random.Generator) -> List[LayerProfile]:
        return [
            self._layer(
                layer_id,
                f"layer{layer_id}",
                self.fwd_time,
                self.activation_elems,
                self.param_elems,
            )
            for layer_id in range(1, n_layers + 1)
        ]
