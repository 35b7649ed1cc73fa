from __future__ import annotations

from dataclasses import dataclass
from enum import StrEnum
from functools import cached_property
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import integrate, special

from managers.kernel_manager import Offset, site_index
from utils import derive_key
from validation import ValidationError

NOISE_TAG = 'noise'


class NoiseError(ValidationError):
    pass


class NoiseFamily(StrEnum):
    GAUSSIAN = 'gaussian'
    STRETCHED_EXPONENTIAL = 'stretched_exponential'
    LAPLACE = 'laplace'


class NoiseSpec(BaseModel):
    """Symmetric law with unbounded support; ``alpha`` only matters for stretched exponentials."""

    model_config = ConfigDict(frozen=True)

    family: NoiseFamily = NoiseFamily.GAUSSIAN
    alpha: float = Field(default=2.0, gt=0)
    sigma: float = Field(default=1.0, gt=0)

    @property
    def tail_exponent(self) -> float:
        if self.family is NoiseFamily.GAUSSIAN:
            return 2.0
        if self.family is NoiseFamily.LAPLACE:
            return 1.0
        return self.alpha

    def fingerprint(self) -> str:
        return f'{self.family.value}(alpha={self.tail_exponent!r},sigma={self.sigma!r})'


def counter_uniforms(
    key: np.ndarray, step: int, replicates: range, size: int, lanes: int = 1
) -> np.ndarray:
    """
    Open-interval uniforms of shape (len(replicates), lanes * size) from a Philox stream.

    Replicate r owns counter blocks [r·blocks, (r+1)·blocks) at counter word 1 = step,
    so any chunking of replicates reproduces the same values.
    """
    draws = lanes * size
    blocks = -(-draws // 4)
    counter = np.array([replicates.start * blocks, step, 0, 0], dtype=np.uint64)
    bit_generator = np.random.Philox(key=key, counter=counter)
    raw = bit_generator.random_raw(len(replicates) * blocks * 4)
    raw = raw.reshape(len(replicates), blocks * 4)[:, :draws]
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def inverse_cdf(spec: NoiseSpec, u: np.ndarray) -> np.ndarray:
    if spec.family is NoiseFamily.GAUSSIAN:
        return spec.sigma * special.ndtri(u)

    # |ε| = σ(−log V)^{1/α} with V = 2·min(u, 1−u); the sign comes from the half u falls in.
    v = 2.0 * np.minimum(u, 1.0 - u)
    magnitude = spec.sigma * (-np.log(v)) ** (1.0 / spec.tail_exponent)
    return np.where(u < 0.5, -magnitude, magnitude)


@dataclass(frozen=True)
class NoiseStream:
    seed: int
    spec: NoiseSpec

    @cached_property
    def key(self) -> np.ndarray:
        return derive_key(self.seed, NOISE_TAG)

    def field(
        self, n: int, shape: tuple[int, ...], replicates: range = range(1)
    ) -> np.ndarray:
        """ε_n over the whole torus for each replicate, shape (R, *shape)."""
        size = math.prod(shape)
        u = counter_uniforms(self.key, n, replicates, size)
        return inverse_cdf(self.spec, u).reshape((len(replicates), *shape))

    def fingerprint(self) -> str:
        return f'seed={self.seed},{self.spec.fingerprint()}'


def sample_noise(
    stream: NoiseStream, n: int, site: Offset, shape: tuple[int, ...], replicate: int = 0
) -> float:
    """ε_n(i) for one site, read straight from its counter block."""
    if n < 1:
        raise NoiseError(f'Noise is indexed from n = 1, got {n}')
    size = math.prod(shape)
    blocks = -(-size // 4)
    flat = int(np.ravel_multi_index(site_index(site, shape), shape))
    counter = np.array([replicate * blocks + flat // 4, n, 0, 0], dtype=np.uint64)
    raw = np.random.Philox(key=stream.key, counter=counter).random_raw(4)[flat % 4]
    u = ((int(raw) >> 11) + 0.5) * 2.0**-53
    return float(inverse_cdf(stream.spec, np.array([u]))[0])


def upper_tail(spec: NoiseSpec, x: float) -> float:
    """F̄(x) = P(ε > x) for x ≥ 0."""
    if x < 0:
        raise NoiseError(f'upper_tail is defined for x >= 0, got {x}')
    if spec.family is NoiseFamily.GAUSSIAN:
        return float(special.ndtr(-x / spec.sigma))
    return 0.5 * math.exp(-((x / spec.sigma) ** spec.tail_exponent))


def expected_excess(spec: NoiseSpec, x: float, method: str = 'auto') -> float:
    """
    G(x) = E(ε − x)^+.

    Gaussian noise uses the closed form; other laws integrate the tail,
    G(x) = ∫_x^∞ F̄(t) dt, and negative x goes through G(−y) = y + G(y).
    """
    if x < 0:
        return -x + expected_excess(spec, -x, method)

    if spec.family is NoiseFamily.GAUSSIAN and method == 'auto':
        z = x / spec.sigma
        density = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        return spec.sigma * density - x * float(special.ndtr(-z))

    value, _ = integrate.quad(
        lambda t: upper_tail(spec, t), x, math.inf, epsabs=1e-12, epsrel=1e-12, limit=200
    )
    return value
