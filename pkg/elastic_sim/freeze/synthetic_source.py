import logging
import numpy as np
from typing import Literal

from .rule import GradNormVector

log = logging.getLogger(__name__)


class SyntheticGradNormSource:
    """
    Seeded gradient-norm generator.

    "monotone": norms strictly decrease with depth, so the minimum sits at the top layer
    and the freeze bound alone decides how many layers freeze.
    "early_random": before `switchover` the norms are noisy and one layer in the top
    quarter of the stack is forced to be the minimum; afterwards the profile is monotone.
    """

    def __init__(self, layer_count: int, profile: Literal["monotone", "early_random"] = "monotone",
                 seed: int = 0, switchover: int = 3, scale: float = 1.0, decay: float = 0.9):
        self.layer_count = layer_count
        self.profile = profile
        self.seed = seed
        self.switchover = switchover
        self.scale = scale
        self.decay = decay

    def norms(self, timestep: int, epoch: int) -> GradNormVector:
        rng = np.random.default_rng([self.seed, timestep])
        magnitude = self.scale * self.decay ** timestep
        L = self.layer_count

        if self.profile == "early_random" and timestep < self.switchover:
            values = rng.uniform(1.0, 2.0, L) * magnitude
            top_quarter = max(1, L // 4)
            j = int(rng.integers(L - top_quarter, L))
            values[j] = 0.5 * magnitude
        else:
            values = np.sort(rng.uniform(1.0, 2.0, L))[::-1] * magnitude

        return GradNormVector(timestep=timestep, values=[float(v) for v in values])
