from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
import math
from typing import Callable, Mapping

import numpy as np

from validation import BaseValidator, Errors, ValidationError, noop_on_errors

Offset = tuple[int, ...]


class KernelError(ValidationError):
    pass


class NonStochasticError(KernelError):
    pass


class AsymmetricError(KernelError):
    pass


class RangeViolationError(KernelError):
    pass


class NotFullDimensionalError(KernelError):
    pass


class InfiniteValueError(KernelError):
    pass


class RadiusTooSmallError(KernelError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    """Finite-range symmetric stochastic kernel p(j) on Z^d, keyed by offset."""

    dim: int
    range: int
    weights: Mapping[Offset, float]
    source: str = 'table'

    @cached_property
    def offsets(self) -> list[Offset]:
        return sorted(j for j, p in self.weights.items() if p != 0.0)

    @cached_property
    def probs(self) -> list[float]:
        return [float(self.weights[j]) for j in self.offsets]

    def p(self, offset: Offset) -> float:
        return float(self.weights.get(tuple(offset), 0.0))

    def fingerprint(self) -> str:
        body = ';'.join(f'{",".join(map(str, j))}:{self.weights[j]!r}' for j in self.offsets)
        return f'd={self.dim},v={self.range},{body}'


def graph_norm(offset: Offset) -> int:
    return sum(abs(c) for c in offset)


def srw_kernel(dim: int) -> KernelSpec:
    """Nearest-neighbour simple random walk, p(±e_k) = 1/(2d)."""
    if dim < 1:
        raise RangeViolationError(f'Dimension must be positive, got {dim}')
    weights: dict[Offset, float] = {}
    for axis in range(dim):
        for sign in (1, -1):
            unit = [0] * dim
            unit[axis] = sign
            weights[tuple(unit)] = 1.0 / (2 * dim)
    return KernelSpec(dim=dim, range=1, weights=weights, source='srw')


def parse_weights(text: str, dim: int) -> KernelSpec:
    """
    Parse an offset/weight table such as ``"1:1/2; -1:1/2"``.

    Weights are exact decimal or fraction strings; the kernel range is the
    largest graph norm among nonzero offsets.
    """
    weights: dict[Offset, float] = {}
    for entry in text.split(';'):
        entry = entry.strip()
        if not entry:
            continue
        if ':' not in entry:
            raise KernelError(f"Kernel entry '{entry}' is missing ':' between offset and weight")
        coords, weight = entry.split(':', 1)
        try:
            offset = tuple(int(c) for c in coords.split(','))
            value = float(Fraction(weight.strip()))
        except ValueError as e:
            raise KernelError(f"Kernel entry '{entry}' is not 'i1,...,id:weight'") from e
        if len(offset) != dim:
            raise RangeViolationError(f'Offset {offset} does not have {dim} coordinates')
        weights[offset] = weights.get(offset, 0.0) + value

    reach = max((graph_norm(j) for j, p in weights.items() if p != 0.0), default=0)
    return KernelSpec(dim=dim, range=max(reach, 1), weights=weights)


def _lattice_index(vectors: list[Offset], dim: int) -> int:
    """
    Index of the integer span of `vectors` in Z^d, 0 when the span has lower rank.

    Row-reduces to Hermite form with Euclid steps; the index is the product of
    the pivots.
    """
    rows = [list(v) for v in vectors if any(v)]
    index = 1
    for col in range(dim):
        active = [r for r in rows if r[col] != 0]
        rest = [r for r in rows if r[col] == 0]
        if not active:
            return 0
        while len(active) > 1:
            active.sort(key=lambda r: abs(r[col]))
            pivot = active[0]
            reduced = [pivot]
            for r in active[1:]:
                q = r[col] // pivot[col]
                r = [a - q * b for a, b in zip(r, pivot)]
                if r[col] != 0:
                    reduced.append(r)
                elif any(r):
                    rest.append(r)
            active = reduced
        index *= abs(active[0][col])
        rows = rest
    return index


class KernelValidator(BaseValidator):
    def __init__(
        self,
        spec: KernelSpec,
        raises: bool | type[Exception] = True,
        on_errors: Callable[[Errors], None] = noop_on_errors,
        tol: float = 1e-12,
    ):
        super().__init__(raises, on_errors)
        self._spec = spec
        self._tol = tol

    def offsets_well_formed(self) -> KernelValidator:
        for j in self._spec.weights:
            if len(j) != self._spec.dim:
                self._add_error(
                    RangeViolationError(f'Offset {j} does not have {self._spec.dim} coordinates')
                )
        return self

    def stochastic(self) -> KernelValidator:
        negative = [j for j, p in self._spec.weights.items() if p < 0]
        if negative:
            self._add_error(NonStochasticError(f'Negative weights at offsets {negative}'))
            return self
        total = math.fsum(self._spec.weights.values())
        if abs(total - 1.0) > self._tol:
            self._add_error(NonStochasticError(f'Weights sum to {total!r}, not 1'))
        return self

    def symmetric(self) -> KernelValidator:
        for j, p in self._spec.weights.items():
            mirror = self._spec.p(tuple(-c for c in j))
            if abs(p - mirror) > self._tol:
                message = f'p({j}) = {p!r} differs from p(-j) = {mirror!r}'
                self._add_error(AsymmetricError(message))
                break
        return self

    def finite_range(self) -> KernelValidator:
        far = [
            j
            for j, p in self._spec.weights.items()
            if p != 0 and graph_norm(j) > self._spec.range
        ]
        if far:
            self._add_error(
                RangeViolationError(f'Offsets {far} lie beyond range v={self._spec.range}')
            )
        return self

    def full_dimensional(self) -> KernelValidator:
        support = [j for j, p in self._spec.weights.items() if p != 0 and len(j) == self._spec.dim]
        index = _lattice_index(support, self._spec.dim)
        if index != 1:
            detail = 'lower rank' if index == 0 else f'a sublattice of index {index}'
            self._add_error(
                NotFullDimensionalError(f'Support generates {detail}, not Z^{self._spec.dim}')
            )
        return self


def validate_kernel(
    spec: KernelSpec, on_errors: Callable[[Errors], None] = noop_on_errors
) -> KernelSpec:
    if not spec.weights:
        raise NonStochasticError('Kernel weights are empty')
    validator = KernelValidator(spec, raises=True, on_errors=on_errors)
    validator.offsets_well_formed().execute()
    validator.stochastic().symmetric().finite_range().full_dimensional().execute()
    return spec


def origin(dim: int) -> tuple[int, ...]:
    return (0,) * dim


def site_index(site: Offset, shape: tuple[int, ...]) -> tuple[int, ...]:
    """Array index of a lattice site on the torus (origin at index 0)."""
    return tuple(int(s) % n for s, n in zip(site, shape))


def torus_distance(shape: tuple[int, ...]) -> np.ndarray:
    """Graph distance from every torus site to the origin."""
    axes = [np.minimum(np.arange(n), n - np.arange(n)) for n in shape]
    return sum(np.ix_(*axes)[k] for k in range(len(shape)))  # type: ignore[return-value]


def apply_kernel(kernel: KernelSpec, field: np.ndarray) -> np.ndarray:
    """
    (𝒫f)(i) = Σ_j p(j) f(i+j) with periodic wrap over the last `dim` axes.

    Leading axes (replicates) are carried through untouched. Offsets are summed
    in a fixed order, so results are bit-reproducible.
    """
    spatial = field.shape[-kernel.dim :]
    if min(spatial) < 2 * kernel.range + 1:
        raise RadiusTooSmallError(
            f'Torus side {min(spatial)} is below 2v+1 = {2 * kernel.range + 1}'
        )
    if not np.isfinite(field).all():
        raise InfiniteValueError('Kernel applied to a field with non-finite heights')

    axes = tuple(range(field.ndim - kernel.dim, field.ndim))
    out = np.zeros_like(field, dtype=np.float64)
    for offset, p in zip(kernel.offsets, kernel.probs):
        out += p * np.roll(field, shift=tuple(-c for c in offset), axis=axes)
    return out


def m_step_probs(kernel: KernelSpec, m: int, radius: int) -> dict[Offset, float]:
    """p_m(j) for |j| ≤ v·m, by m-fold convolution of the delta field (support only)."""
    if m < 0:
        raise ValueError('m must be nonnegative')
    if radius < kernel.range * m:
        raise RadiusTooSmallError(f'Radius {radius} is below v·m = {kernel.range * m}')

    side = 2 * max(radius, kernel.range) + 1
    dist = np.zeros((side,) * kernel.dim)
    dist[origin(kernel.dim)] = 1.0
    for _ in range(m):
        dist = apply_kernel(kernel, dist)

    probs: dict[Offset, float] = {}
    for index in zip(*np.nonzero(dist)):
        offset = tuple(int(k) if k <= side // 2 else int(k) - side for k in index)
        probs[offset] = float(dist[index])
    return probs
