from __future__ import annotations

from enum import StrEnum
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from managers.kernel_manager import Offset, site_index, torus_distance
from managers.noise_manager import NoiseFamily, NoiseSpec, counter_uniforms, inverse_cdf
from utils import derive_key
from validation import ValidationError

WALL_TAG = 'wall'
NEG_INF = -np.inf


class WallError(ValidationError):
    pass


class DomainTooSmallError(WallError):
    pass


class WallFamily(StrEnum):
    GAUSSIAN = 'gaussian'
    STRETCHED_EXPONENTIAL = 'stretched_exponential'
    LAPLACE = 'laplace'
    FLAT = 'flat'
    NEG_INFINITY = 'neg_infinity'


class WallSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    family: WallFamily = WallFamily.NEG_INFINITY
    theta: float = Field(default=1.0, gt=0)
    sigma: float = Field(default=1.0, gt=0)
    height: float = 0.0
    q_neginf: float = Field(default=0.0, ge=0, lt=1)

    @property
    def finite_law(self) -> NoiseSpec | None:
        if self.family in (WallFamily.FLAT, WallFamily.NEG_INFINITY):
            return None
        return NoiseSpec(family=NoiseFamily(self.family.value), alpha=self.theta, sigma=self.sigma)

    @property
    def tail_exponent(self) -> float:
        law = self.finite_law
        return law.tail_exponent if law is not None else math.inf

    def fingerprint(self) -> str:
        if self.family is WallFamily.FLAT:
            body = f'flat(height={self.height!r})'
        elif self.family is WallFamily.NEG_INFINITY:
            body = 'neg_infinity'
        else:
            body = f'{self.family.value}(theta={self.tail_exponent!r},sigma={self.sigma!r})'
        return f'{body},q_neginf={self.q_neginf!r}'


def nonnegative_probability(spec: WallSpec) -> float:
    """q = P(W(i) ≥ 0), counting the −∞ atom."""
    if spec.family is WallFamily.NEG_INFINITY:
        return 0.0
    if spec.family is WallFamily.FLAT:
        finite = 1.0 if spec.height >= 0 else 0.0
    else:
        finite = 0.5
    return finite * (1.0 - spec.q_neginf)


def sample_walls(
    spec: WallSpec, seed: int, shape: tuple[int, ...], replicates: range = range(1)
) -> np.ndarray:
    """I.i.d. wall fields for each replicate, shape (R, *shape); −∞ allowed."""
    count = len(replicates)
    if spec.family is WallFamily.NEG_INFINITY:
        return np.full((count, *shape), NEG_INF)

    size = math.prod(shape)
    u = counter_uniforms(derive_key(seed, WALL_TAG), 0, replicates, size, lanes=2)
    values_u, atom_u = u[:, :size], u[:, size:]

    law = spec.finite_law
    if law is None:
        values = np.full((count, size), float(spec.height))
    else:
        values = inverse_cdf(law, values_u)
    if spec.q_neginf > 0:
        values = np.where(atom_u < spec.q_neginf, NEG_INF, values)
    return values.reshape((count, *shape))


def sample_wall(
    spec: WallSpec, seed: int, shape: tuple[int, ...], replicate: int = 0
) -> np.ndarray:
    return sample_walls(spec, seed, shape, range(replicate, replicate + 1))[0]


def hat_transform(wall: np.ndarray) -> np.ndarray:
    """Ŵ: 0 where W ≥ 0, −∞ elsewhere."""
    return np.where(wall >= 0, 0.0, NEG_INF)


def tilde_transform(wall: np.ndarray) -> np.ndarray:
    """W̃: keeps nonnegative heights, −∞ elsewhere."""
    return np.where(wall >= 0, wall, NEG_INF)


def decompose_at(wall: np.ndarray, site: Offset) -> tuple[np.ndarray, np.ndarray]:
    """(W̃^i, W̃_i): the wall with site i removed, and the wall reduced to site i."""
    index = site_index(site, wall.shape)
    without = wall.copy()
    without[index] = NEG_INF
    only = np.full_like(wall, NEG_INF)
    only[index] = wall[index]
    return without, only


def running_max(wall: np.ndarray, n: int, kernel_range: int) -> float:
    """R_n = max{W(i) : |i| ≤ vn} over the graph-distance ball around the origin."""
    radius = kernel_range * n
    if min(wall.shape) < 2 * radius + 1:
        raise DomainTooSmallError(
            f'Ball of radius vn = {radius} does not fit a torus of side {min(wall.shape)}'
        )
    ball = torus_distance(wall.shape) <= radius
    return float(wall[ball].max())
