from typing import Protocol

from .rule import GradNormVector


class GradNormSource(Protocol):
    """
    Defines the standard interface for a per-layer gradient-norm source.

    Any class implementing this protocol must return a GradNormVector of length
    `layer_count` for a freeze timestep T, given the epoch whose norms are observed.
    """

    layer_count: int

    def norms(self, timestep: int, epoch: int) -> GradNormVector:
        """
        Returns the gradient norms used by freeze evaluation number `timestep`.

        Args:
            timestep: Freeze timestep T >= 1.
            epoch: The 0-based training epoch the norms were accumulated over.

        Returns:
            A GradNormVector with one non-negative entry per layer.
        """
        ...
