import numpy as np
import pytest

from managers.experiment_manager import ExperimentSetup
from managers.kernel_manager import KernelSpec, apply_kernel, srw_kernel
from managers.noise_manager import NoiseSpec, NoiseStream
from managers.wall_manager import WallFamily, WallSpec


@pytest.fixture
def srw1() -> KernelSpec:
    return srw_kernel(1)


@pytest.fixture
def srw2() -> KernelSpec:
    return srw_kernel(2)


@pytest.fixture
def srw3() -> KernelSpec:
    return srw_kernel(3)


@pytest.fixture
def gaussian_stream() -> NoiseStream:
    return NoiseStream(seed=11, spec=NoiseSpec())


def make_setup(
    kernel: KernelSpec,
    side: int,
    wall: WallSpec | None = None,
    noise: NoiseSpec | None = None,
    exact: bool = False,
    seed: int = 11,
) -> ExperimentSetup:
    return ExperimentSetup(
        kernel=kernel,
        noise=NoiseStream(seed=seed, spec=noise or NoiseSpec()),
        wall=wall or WallSpec(family=WallFamily.GAUSSIAN),
        wall_seed=seed + 1,
        shape=(side,) * kernel.dim,
        exact=exact,
    )


def reflecting_step(
    prev: np.ndarray, wall: np.ndarray, kernel: KernelSpec, noise: np.ndarray
) -> np.ndarray:
    """Broken engine: a binding wall pushes the height below the free value."""
    free = apply_kernel(kernel, prev) + noise
    wall = np.broadcast_to(wall, free.shape)
    return np.where(free >= wall, free, 2.0 * free - wall)


def wall_free_step(
    prev: np.ndarray, wall: np.ndarray, kernel: KernelSpec, noise: np.ndarray
) -> np.ndarray:
    """Broken engine: the wall maximum is dropped."""
    return apply_kernel(kernel, prev) + noise
