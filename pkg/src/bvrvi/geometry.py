"""Block-structured Bregman geometries.

A geometry bundles a constraint set (product of probability simplices,
product of Euclidean balls, or the free space) with the mirror map that
generates its Bregman divergence.  Three kinds are supported:

* ``EntropySimplex``: negative entropy on a product of simplices.  The
  divergence is the blockwise KL divergence, the primal norm is the
  blockwise l1 norm (combined in l2 across blocks) and the dual norm is
  the blockwise max norm.  The mirror map gradient is unbounded, so its
  Lipschitz constant is reported as infinity.
* ``EuclideanBall``: half squared norm on a product of centered balls.
* ``EuclideanFree``: half squared norm on the whole space.

All operations are pure functions over :class:`BlockVector`.  The fused
inertial prox applies the update

    z_plus = argmin_{z in K} { <alpha*v, z> + gamma*D(z, x_cur)
                               + (1 - gamma)*D(z, x_prev) }

in a single pass.  For the entropy kind this is done entirely in log
space: the convex combination of mirror images is never mapped back to
the simplex before the prox, which avoids underflow for tiny weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, LayoutError, ParameterError

ENTROPY_SIMPLEX = "EntropySimplex"
EUCLIDEAN_BALL = "EuclideanBall"
EUCLIDEAN_FREE = "EuclideanFree"

_KINDS = (ENTROPY_SIMPLEX, EUCLIDEAN_BALL, EUCLIDEAN_FREE)

#: Lower clamp applied before logarithms of simplex coordinates.
DEFAULT_FLOOR = 1e-300


@dataclass(frozen=True)
class BlockVector:
    """An ordered tuple of dense real blocks.

    Blocks are float64 arrays.  Instances are cheap containers; the
    arithmetic helpers allocate fresh vectors except for the in-place
    accumulator :meth:`add_scaled_`.
    """

    blocks: tuple[np.ndarray, ...]

    @classmethod
    def from_arrays(cls, arrays) -> "BlockVector":
        return cls(tuple(np.asarray(a, dtype=np.float64) for a in arrays))

    @classmethod
    def from_flat(cls, flat, block_dims) -> "BlockVector":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != sum(block_dims):
            raise LayoutError(
                f"flat vector of size {flat.size} cannot be split into blocks {block_dims}"
            )
        out, off = [], 0
        for d in block_dims:
            out.append(flat[off : off + d].copy())
            off += d
        return cls(tuple(out))

    @classmethod
    def zeros(cls, block_dims) -> "BlockVector":
        return cls(tuple(np.zeros(d) for d in block_dims))

    @classmethod
    def full(cls, block_dims, value: float) -> "BlockVector":
        return cls(tuple(np.full(d, float(value)) for d in block_dims))

    @property
    def block_dims(self) -> tuple[int, ...]:
        return tuple(b.size for b in self.blocks)

    def flat(self) -> np.ndarray:
        return np.concatenate(self.blocks)

    def copy(self) -> "BlockVector":
        return BlockVector(tuple(b.copy() for b in self.blocks))

    def dot(self, other: "BlockVector") -> float:
        _check_same_layout(self, other)
        return float(sum(float(a @ b) for a, b in zip(self.blocks, other.blocks)))

    def add_scaled_(self, other: "BlockVector", coeff: float) -> "BlockVector":
        """In-place ``self += coeff * other``; returns self."""
        _check_same_layout(self, other)
        for a, b in zip(self.blocks, other.blocks):
            a += coeff * b
        return self

    def scaled(self, coeff: float) -> "BlockVector":
        return BlockVector(tuple(coeff * b for b in self.blocks))

    def __add__(self, other: "BlockVector") -> "BlockVector":
        _check_same_layout(self, other)
        return BlockVector(tuple(a + b for a, b in zip(self.blocks, other.blocks)))

    def __sub__(self, other: "BlockVector") -> "BlockVector":
        _check_same_layout(self, other)
        return BlockVector(tuple(a - b for a, b in zip(self.blocks, other.blocks)))

    def allclose(self, other: "BlockVector", rtol=1e-12, atol=0.0) -> bool:
        _check_same_layout(self, other)
        return all(
            np.allclose(a, b, rtol=rtol, atol=atol)
            for a, b in zip(self.blocks, other.blocks)
        )


#: Dual-space vectors share the container; the alias marks intent.
DualVector = BlockVector


@dataclass(frozen=True)
class GeometrySpec:
    """Immutable description of a constraint set and its mirror map."""

    kind: str
    block_dims: tuple[int, ...]
    radius: float = 1.0
    floor: float = DEFAULT_FLOOR

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ParameterError(f"unknown geometry kind {self.kind!r}; expected one of {_KINDS}")
        if not self.block_dims or any(d < 1 for d in self.block_dims):
            raise ParameterError(f"block_dims must be positive, got {self.block_dims}")
        if self.kind == EUCLIDEAN_BALL and self.radius <= 0:
            raise ParameterError(f"ball radius must be positive, got {self.radius}")
        object.__setattr__(self, "block_dims", tuple(int(d) for d in self.block_dims))

    @property
    def dim(self) -> int:
        return sum(self.block_dims)

    @property
    def mirror_lipschitz(self) -> float:
        """Lipschitz constant of the mirror map gradient (L_f).

        Unbounded for the entropy kind, 1 for the Euclidean kinds.
        """
        return math.inf if self.kind == ENTROPY_SIMPLEX else 1.0


def _check_same_layout(a: BlockVector, b: BlockVector) -> None:
    if a.block_dims != b.block_dims:
        raise LayoutError(f"block layouts differ: {a.block_dims} vs {b.block_dims}")


def check_layout(spec: GeometrySpec, vec: BlockVector, name: str = "vector") -> None:
    if vec.block_dims != spec.block_dims:
        raise LayoutError(
            f"{name} has blocks {vec.block_dims}, geometry expects {spec.block_dims}"
        )


def _entropy_guard(spec: GeometrySpec, x: BlockVector, name: str) -> list[np.ndarray]:
    """Clamp simplex blocks at the floor; negative coordinates are a domain error."""
    out = []
    for b in x.blocks:
        if np.any(b < 0):
            raise DomainError(f"{name} has negative coordinates; entropy domain is x >= 0")
        out.append(np.maximum(b, spec.floor))
    return out


def mirror_map(spec: GeometrySpec, x: BlockVector) -> DualVector:
    """Gradient of the distance-generating function at x."""
    check_layout(spec, x, "x")
    if spec.kind == ENTROPY_SIMPLEX:
        return BlockVector(tuple(1.0 + np.log(b) for b in _entropy_guard(spec, x, "x")))
    return x.copy()


def mirror_inverse(spec: GeometrySpec, d: DualVector) -> BlockVector:
    """Inverse of :func:`mirror_map` on its image."""
    check_layout(spec, d, "d")
    if spec.kind == ENTROPY_SIMPLEX:
        out = []
        for b in d.blocks:
            with np.errstate(over="ignore"):
                v = np.exp(b - 1.0)
            if not np.all(np.isfinite(v)):
                raise DomainError("mirror_inverse overflow: exp(d - 1) is not finite")
            out.append(v)
        return BlockVector(tuple(out))
    return d.copy()


def bregman_divergence(spec: GeometrySpec, x: BlockVector, y: BlockVector) -> float:
    """D(x, y) = f(x) - f(y) - <grad f(y), x - y>.

    Entropy kind: blockwise KL divergence sum(x log(x/y) + y - x) with the
    convention 0 log 0 = 0; y must be strictly positive.  Euclidean kinds:
    half squared distance.
    """
    check_layout(spec, x, "x")
    check_layout(spec, y, "y")
    if spec.kind == ENTROPY_SIMPLEX:
        total = 0.0
        for bx, by in zip(x.blocks, y.blocks):
            if np.any(bx < 0):
                raise DomainError("x has negative coordinates; KL domain is x >= 0")
            if np.any(by <= 0):
                raise DomainError("y has nonpositive coordinates; KL needs y > 0")
            pos = bx > 0
            total += float(np.sum(bx[pos] * np.log(bx[pos] / by[pos])))
            total += float(np.sum(by) - np.sum(bx))
        return total
    diff = x.flat() - y.flat()
    return 0.5 * float(diff @ diff)


def _check_step_params(gamma: float, alpha: float) -> None:
    if not (0.0 < gamma <= 1.0):
        raise ParameterError(f"gamma must lie in (0, 1], got {gamma}")
    if not (alpha > 0.0):
        raise ParameterError(f"alpha must be positive, got {alpha}")


def fused_inertial_prox(
    spec: GeometrySpec,
    x_cur: BlockVector,
    x_prev: BlockVector,
    gamma: float,
    v: DualVector,
    alpha: float,
) -> BlockVector:
    """Single-pass inertial Bregman proximal step.

    Solves argmin_{z in K} <alpha*v, z> + gamma*D(z, x_cur)
    + (1 - gamma)*D(z, x_prev).  Inputs must be interior to the domain of
    the mirror map (strictly positive up to flooring for the entropy
    kind); they need not be feasible, the output always is.
    """
    _check_step_params(gamma, alpha)
    check_layout(spec, x_cur, "x_cur")
    check_layout(spec, x_prev, "x_prev")
    check_layout(spec, v, "v")

    if spec.kind == ENTROPY_SIMPLEX:
        cur = _entropy_guard(spec, x_cur, "x_cur")
        prev = _entropy_guard(spec, x_prev, "x_prev")
        out = []
        for bc, bp, bv in zip(cur, prev, v.blocks):
            # Log-space combination; the max shift makes the exponentials safe.
            t = gamma * np.log(bc) + (1.0 - gamma) * np.log(bp) - alpha * bv
            t -= np.max(t)
            e = np.exp(t)
            out.append(e / np.sum(e))
        return BlockVector(tuple(out))

    out = []
    for bc, bp, bv in zip(x_cur.blocks, x_prev.blocks, v.blocks):
        y = gamma * bc + (1.0 - gamma) * bp - alpha * bv
        if spec.kind == EUCLIDEAN_BALL:
            nrm = float(np.linalg.norm(y))
            if nrm > spec.radius:
                y = y * (spec.radius / nrm)
        out.append(y)
    return BlockVector(tuple(out))


def prox_inequality_check(
    spec: GeometrySpec,
    z_plus: BlockVector,
    z: BlockVector,
    z1: BlockVector,
    z2: BlockVector,
    gamma: float,
    alpha: float,
    v: DualVector,
    tol: float = 1e-8,
) -> bool:
    """Three-point optimality test for the fused prox output.

    With z_plus the prox of direction v anchored at (z1, z2), every
    feasible z must satisfy

        alpha*<v, z - z_plus> >= D(z, z_plus)
            + gamma*(D(z_plus, z1) - D(z, z1))
            + (1 - gamma)*(D(z_plus, z2) - D(z, z2))

    up to the tolerance.  Returns True when the inequality holds.
    """
    _check_step_params(gamma, alpha)
    lhs = alpha * v.dot(z - z_plus)
    rhs = bregman_divergence(spec, z, z_plus)
    rhs += gamma * (bregman_divergence(spec, z_plus, z1) - bregman_divergence(spec, z, z1))
    rhs += (1.0 - gamma) * (
        bregman_divergence(spec, z_plus, z2) - bregman_divergence(spec, z, z2)
    )
    return lhs >= rhs - tol


def primal_norm(spec: GeometrySpec, x: BlockVector) -> float:
    """Blockwise primal norm, combined in l2 across blocks."""
    check_layout(spec, x, "x")
    if spec.kind == ENTROPY_SIMPLEX:
        return math.sqrt(sum(float(np.sum(np.abs(b))) ** 2 for b in x.blocks))
    return math.sqrt(sum(float(b @ b) for b in x.blocks))


def dual_norm(spec: GeometrySpec, d: DualVector) -> float:
    """Norm dual to :func:`primal_norm` (blockwise max norm for entropy)."""
    check_layout(spec, d, "d")
    if spec.kind == ENTROPY_SIMPLEX:
        return math.sqrt(sum(float(np.max(np.abs(b))) ** 2 for b in d.blocks))
    return math.sqrt(sum(float(b @ b) for b in d.blocks))


def is_feasible(spec: GeometrySpec, x: BlockVector, tol: float = 1e-9) -> bool:
    check_layout(spec, x, "x")
    if spec.kind == ENTROPY_SIMPLEX:
        return all(
            np.all(b >= -tol) and abs(float(np.sum(b)) - 1.0) <= tol for b in x.blocks
        )
    if spec.kind == EUCLIDEAN_BALL:
        return all(float(np.linalg.norm(b)) <= spec.radius + tol for b in x.blocks)
    return True


def _project_simplex_block(y: np.ndarray) -> np.ndarray:
    """Euclidean projection of y onto the probability simplex (sort based)."""
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, y.size + 1)
    cond = u - css / idx > 0
    rho = int(np.nonzero(cond)[0][-1])
    lam = css[rho] / (rho + 1)
    return np.maximum(y - lam, 0.0)


def euclidean_project(spec: GeometrySpec, x: BlockVector) -> BlockVector:
    """Euclidean projection onto the constraint set, blockwise."""
    check_layout(spec, x, "x")
    if spec.kind == ENTROPY_SIMPLEX:
        return BlockVector(tuple(_project_simplex_block(b) for b in x.blocks))
    if spec.kind == EUCLIDEAN_BALL:
        out = []
        for b in x.blocks:
            nrm = float(np.linalg.norm(b))
            out.append(b * (spec.radius / nrm) if nrm > spec.radius else b.copy())
        return BlockVector(tuple(out))
    return x.copy()


def uniform_start(spec: GeometrySpec) -> BlockVector:
    """Canonical start: uniform blocks on simplices, origin otherwise."""
    if spec.kind == ENTROPY_SIMPLEX:
        return BlockVector(tuple(np.full(d, 1.0 / d) for d in spec.block_dims))
    return BlockVector.zeros(spec.block_dims)
