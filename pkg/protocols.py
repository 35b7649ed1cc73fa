from typing import Protocol

import numpy as np

from managers.kernel_manager import KernelSpec


class StepRule(Protocol):
    """One exclusion step: previous heights, wall, kernel and this step's noise."""

    def __call__(
        self, prev: np.ndarray, wall: np.ndarray, kernel: KernelSpec, noise: np.ndarray
    ) -> np.ndarray: ...
