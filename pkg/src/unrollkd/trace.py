"""Per-stage trace emitted by unrolled network forward passes."""

from dataclasses import dataclass, field

from .errors import DimensionError


@dataclass
class StageTrace:
    """Stage-indexed intermediate estimates and fidelity gradients.

    estimates[l] is the signal estimate after the update of stage l;
    gradients[l] is A_k^T (A_k x_l - y) evaluated at the estimate the stage
    started from. Both lists have one entry per stage.
    """

    estimates: list = field(default_factory=list)
    gradients: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.estimates) != len(self.gradients):
            raise DimensionError(
                f"trace lists disagree: {len(self.estimates)} estimates vs "
                f"{len(self.gradients)} gradients")

    def __len__(self) -> int:
        return len(self.estimates)
