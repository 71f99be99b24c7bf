import math
from typing import List

import numpy as np

from pipebrew.generators.base_generator import BaseProfileGenerator
from pipebrew.profile import LayerProfile


class VggLikeProfileGenerator(BaseProfileGenerator):
    """
    A VGG-shaped chain: convolution-like layers followed by fully-connected-like
    layers.

    The last ``ceil(n_layers / 4)`` layers are fully connected. They carry at
    least 85% of all parameters and emit small activations. The convolution
    layers carry few parameters and emit activations that shrink with depth
    but stay larger than every fully-connected activation.
    """

    kind = "vgg_like"

    conv_fwd_time = 0.010
    fc_fwd_time = 0.005
    conv_activation_elems = 100_000
    fc_activation_elems = 16_000
    conv_param_elems = 100_000
    fc_param_elems = 25_000_000

    def fc_layer_count(self, n_layers: int) -> int:
        return math.ceil(n_layers / 4)

    def _build_layers(self, n_layers: int, rng: np.random.Generator) -> List[LayerProfile]:
        n_fc = self.fc_layer_count(n_layers)
        n_conv = n_layers - n_fc
        layers = []
        for c in range(n_conv):
            # activations halve twice from the first to the last conv layer
            decay = 0.5 ** (2.0 * c / max(n_conv - 1, 1))
            layers.append(
                self._layer(
                    len(layers) + 1,
                    f"conv{c + 1}",
                    self.conv_fwd_time * rng.uniform(0.9, 1.1),
                    self.conv_activation_elems * decay * rng.uniform(0.9, 1.1),
                    self.conv_param_elems * rng.uniform(0.5, 1.5),
                )
            )
        for k in range(n_fc):
            layers.append(
                self._layer(
                    len(layers) + 1,
                    f"fc{k + 1}",
                    self.fc_fwd_time * rng.uniform(0.9, 1.1),
                    self.fc_activation_elems * 0.5**k * rng.uniform(0.9, 1.1),
                    self.fc_param_elems * rng.uniform(0.9, 1.1),
                )
            )
        return layers
