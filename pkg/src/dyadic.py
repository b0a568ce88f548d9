# ─────────────────────────────────────────────────────────────
# dyadic.py
# Local Tb Verification Harness — Dyadic geometry
#
# Dyadic cubes of the reference cube Q⁰ = [0,1)^d (d = 1, 2) and
# piecewise-constant functions at finest depth N.
#
# Grid layout: a GridFunction holds an array of shape (2^N,)*d,
# row-major, one value per finest cell. Cube averages at level k
# are block reductions of that array, so every tree quantity is a
# reshape + sum rather than a Python loop over cells.
# ─────────────────────────────────────────────────────────────

import itertools
import logging
import os
import sys
from dataclasses import dataclass, field

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from src.errors import ConfigError, DimensionMismatchError, LeafCubeError, SupportError

logger = logging.getLogger(__name__)


# ── Dyadic cubes ──────────────────────────────────────────────
@dataclass(frozen=True, order=True)
class DyadicCube:
    """Node (level, index) of the dyadic tree over [0,1)^d."""

    level: int
    index: tuple

    def __post_init__(self):
        index = tuple(int(i) for i in self.index)
        if self.level < 0:
            raise ConfigError(f"negative cube level {self.level}")
        if any(i < 0 or i >= 2 ** self.level for i in index):
            raise ConfigError(f"cube index {index} outside level {self.level}")
        object.__setattr__(self, "index", index)

    @classmethod
    def root(cls, dim):
        return cls(0, (0,) * dim)

    @property
    def dim(self):
        return len(self.index)

    @property
    def side(self):
        return 2.0 ** (-self.level)

    @property
    def volume(self):
        return 2.0 ** (-self.dim * self.level)

    @property
    def lower(self):
        return np.array(self.index, dtype=float) * self.side

    @property
    def center(self):
        return self.lower + 0.5 * self.side

    @property
    def flat_index(self):
        """Row-major position among the cubes of the same level."""
        flat = 0
        for i in self.index:
            flat = flat * 2 ** self.level + i
        return flat

    def children(self):
        return [
            DyadicCube(self.level + 1, tuple(2 * i + o for i, o in zip(self.index, offs)))
            for offs in itertools.product((0, 1), repeat=self.dim)
        ]

    def parent(self):
        if self.level == 0:
            return None
        return DyadicCube(self.level - 1, tuple(i // 2 for i in self.index))

    def ancestor(self, level):
        if level > self.level:
            raise ConfigError(f"level {level} is below cube level {self.level}")
        shift = self.level - level
        return DyadicCube(level, tuple(i >> shift for i in self.index))

    def contains(self, other):
        """Q ⊇ Q′ in the tree order (equality included)."""
        if other.level < self.level:
            return False
        return other.ancestor(self.level) == self

    def translate(self, m):
        """Q + ℓ(Q)m, or None when the translate leaves Q⁰."""
        index = tuple(i + int(s) for i, s in zip(self.index, m))
        if any(i < 0 or i >= 2 ** self.level for i in index):
            return None
        return DyadicCube(self.level, index)

    def cell_range(self, depth):
        """Per-axis (start, stop) of finest cells covered by the cube."""
        L = 2 ** (depth - self.level)
        return [(i * L, (i + 1) * L) for i in self.index]

    def cell_slices(self, depth):
        return tuple(slice(a, b) for a, b in self.cell_range(depth))

    def triple_box(self):
        """Concentric 3Q as a (lo, hi) box; may stick out of Q⁰."""
        lo = self.lower - self.side
        return lo, lo + 3.0 * self.side

    def key(self):
        return f"{self.level}:" + ",".join(str(i) for i in self.index)

    @classmethod
    def from_key(cls, key):
        level, index = key.split(":")
        return cls(int(level), tuple(int(i) for i in index.split(",")))


def children(cube, depth):
    """
    Dyadic children of a cube at finest depth N.

    Raises LeafCubeError when the cube sits at depth N.
    """
    if cube.level >= depth:
        raise LeafCubeError(f"cube {cube.key()} is a leaf at depth {depth}")
    return cube.children()


def cubes_at_level(dim, level):
    """All cubes of a level in row-major order."""
    for index in itertools.product(range(2 ** level), repeat=dim):
        yield DyadicCube(level, index)


def iter_cubes(dim, depth, top=None, max_level=None):
    """Top-down, level by level, every cube inside `top` (default Q⁰)."""
    top = top or DyadicCube.root(dim)
    last = depth if max_level is None else min(depth, max_level)
    current = [top]
    while current and current[0].level <= last:
        yield from current
        if current[0].level == last:
            break
        current = [child for cube in current for child in cube.children()]


# ── Block reductions ──────────────────────────────────────────
def block_sum(values, level, dim):
    """
    Sum of `values` over each cube of `level`.

    `values` has shape lead + (2^N,)*dim; the result has shape
    lead + (2^level,)*dim. Leading axes are carried through, which
    is how batches of functions are reduced in one call.
    """
    values = np.asarray(values)
    lead = values.shape[: values.ndim - dim]
    n = values.shape[-1]
    k = 2 ** level
    L = n // k
    view = values.reshape(lead + (k, L) * dim)
    axes = tuple(len(lead) + 2 * a + 1 for a in range(dim))
    return view.sum(axis=axes)


def block_mean(values, level, dim):
    n = np.asarray(values).shape[-1]
    L = n // 2 ** level
    return block_sum(values, level, dim) / float(L ** dim)


def block_max(values, level, dim):
    values = np.asarray(values)
    lead = values.shape[: values.ndim - dim]
    k = 2 ** level
    L = values.shape[-1] // k
    view = values.reshape(lead + (k, L) * dim)
    return view.max(axis=tuple(len(lead) + 2 * a + 1 for a in range(dim)))


def power_mean(values, level, dim, p):
    """(⨍|v|^p)^{1/p} over every cube of a level; p = ∞ gives the block max."""
    if np.isinf(p):
        return block_max(np.abs(values), level, dim)
    return block_mean(np.abs(values) ** p, level, dim) ** (1.0 / p)


def sum_children(arr, dim):
    """Collapse per-cube arrays at level k+1 onto their parents at level k.

    `arr` has shape (2^{k+1},)*dim + trailing; trailing axes are kept.
    """
    arr = np.asarray(arr)
    k1 = arr.shape[0]
    trailing = arr.shape[dim:]
    view = arr.reshape((k1 // 2, 2) * dim + trailing)
    return view.sum(axis=tuple(2 * a + 1 for a in range(dim)))


# ── Cell geometry ─────────────────────────────────────────────
def cell_coords(dim, depth):
    """Integer cell coordinates, shape (2^{dN}, d), row-major."""
    n = 2 ** depth
    grids = np.meshgrid(*([np.arange(n)] * dim), indexing="ij")
    return np.stack([g.reshape(-1) for g in grids], axis=1)


def cell_centers(dim, depth):
    return (cell_coords(dim, depth) + 0.5) * 2.0 ** (-depth)


def padded_coords(dim, depth):
    """Integer coordinates of the cells of the padded box 3Q⁰ = [-1,2)^d."""
    n = 2 ** depth
    grids = np.meshgrid(*([np.arange(-n, 2 * n)] * dim), indexing="ij")
    return np.stack([g.reshape(-1) for g in grids], axis=1)


def padded_centers(dim, depth):
    return (padded_coords(dim, depth) + 0.5) * 2.0 ** (-depth)


def cube_mask(cube, dim, depth):
    mask = np.zeros((2 ** depth,) * dim, dtype=bool)
    mask[cube.cell_slices(depth)] = True
    return mask


def union_mask(cubes, dim, depth):
    mask = np.zeros((2 ** depth,) * dim, dtype=bool)
    for cube in cubes:
        mask[cube.cell_slices(depth)] = True
    return mask


def triple_mask(cube, dim, depth):
    """Cells of Q⁰ inside the concentric triple 3Q."""
    L = 2 ** (depth - cube.level)
    n = 2 ** depth
    mask = np.zeros((n,) * dim, dtype=bool)
    slices = tuple(slice(max(0, i * L - L), min(n, i * L + 2 * L)) for i in cube.index)
    mask[slices] = True
    return mask


def subtree_level_mask(cubes, level, dim):
    """Cubes of `level` contained in any of `cubes` (as a level array)."""
    mask = np.zeros((2 ** level,) * dim, dtype=bool)
    for cube in cubes:
        if cube.level > level:
            continue
        L = 2 ** (level - cube.level)
        mask[tuple(slice(i * L, (i + 1) * L) for i in cube.index)] = True
    return mask


def maximal_cubes(top, depth, fires):
    """
    Maximal cubes inside `top` on which a stopping condition fires.

    `fires[level]` is a boolean array over the cubes of that level.
    Single top-down breadth-first scan: a firing cube is selected and
    its subtree is not visited; containment is a tree order so there
    are no ties.
    """
    selected = []
    frontier = [top]
    while frontier:
        nxt = []
        for cube in frontier:
            if fires[cube.level][cube.index]:
                selected.append(cube)
            elif cube.level < depth:
                nxt.extend(cube.children())
        frontier = nxt
    return selected


# ── Grid functions ────────────────────────────────────────────
@dataclass(frozen=True, eq=False)
class GridFunction:
    """Piecewise-constant function on the finest cells of Q⁰."""

    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim not in (1, 2) or len(set(values.shape)) != 1:
            raise DimensionMismatchError(f"grid values must be a square array, got {values.shape}")
        n = values.shape[0]
        if n < 1 or n & (n - 1):
            raise DimensionMismatchError(f"grid side {n} is not a power of two")
        object.__setattr__(self, "values", values)

    # ── construction
    @classmethod
    def zeros(cls, dim, depth):
        return cls(np.zeros((2 ** depth,) * dim))

    @classmethod
    def constant(cls, c, dim, depth):
        return cls(np.full((2 ** depth,) * dim, float(c)))

    @classmethod
    def indicator(cls, cube, depth):
        return cls(cube_mask(cube, cube.dim, depth).astype(float))

    @classmethod
    def from_flat(cls, flat, dim, depth):
        return cls(np.asarray(flat, dtype=float).reshape((2 ** depth,) * dim))

    # ── shape
    @property
    def dim(self):
        return self.values.ndim

    @property
    def n_side(self):
        return self.values.shape[0]

    @property
    def depth(self):
        return int(self.n_side).bit_length() - 1

    @property
    def n_cells(self):
        return self.values.size

    @property
    def cell_volume(self):
        return 2.0 ** (-self.dim * self.depth)

    @property
    def flat(self):
        return self.values.reshape(-1)

    def refine(self, depth):
        """The same function on the finer grid of `depth`."""
        return GridFunction(refine_batch(self.flat, self.dim, self.depth, depth).reshape((2 ** depth,) * self.dim))

    # ── calculus
    def integral(self):
        return float(self.values.sum() * self.cell_volume)

    def average(self, cube):
        return average(self, cube)

    def restrict(self, cube):
        return GridFunction(np.where(cube_mask(cube, self.dim, self.depth), self.values, 0.0))

    def masked(self, mask):
        return GridFunction(np.where(mask, self.values, 0.0))

    def norm(self, p):
        if np.isinf(p):
            return float(np.abs(self.values).max())
        return float((np.abs(self.values) ** p).sum() * self.cell_volume) ** (1.0 / p)

    def supported_in(self, cube):
        outside = ~cube_mask(cube, self.dim, self.depth)
        return not np.any(self.values[outside] != 0.0)

    # ── arithmetic
    def _other(self, other):
        if isinstance(other, GridFunction):
            if other.values.shape != self.values.shape:
                raise DimensionMismatchError("grid functions live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return GridFunction(self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return GridFunction(self.values - self._other(other))

    def __mul__(self, other):
        return GridFunction(self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return GridFunction(self.values / scalar)

    def __neg__(self):
        return GridFunction(-self.values)

    def __abs__(self):
        return GridFunction(np.abs(self.values))

    # ── serialization
    def to_csv(self, path):
        """One value per cell, row-major."""
        np.savetxt(path, self.flat, fmt="%.17g")

    @classmethod
    def from_csv(cls, path, dim):
        flat = np.loadtxt(path, dtype=float, ndmin=1)
        n_side = round(flat.size ** (1.0 / dim))
        return cls(flat.reshape((n_side,) * dim))


def refine_batch(batch, dim, depth, target):
    """Flat rows on the grid of `depth`, repeated onto the grid of `target`."""
    if target < depth:
        raise ConfigError(f"cannot refine depth {depth} down to {target}")
    arr = np.asarray(batch, dtype=float).reshape((-1,) + (2 ** depth,) * dim)
    for axis in range(1, dim + 1):
        arr = np.repeat(arr, 2 ** (target - depth), axis=axis)
    return arr.reshape(arr.shape[0], -1)


def inner(f, g):
    """⟨f, g⟩ = ∫ f g over Q⁰."""
    return float((f.values * g.values).sum() * f.cell_volume)


def average(f, cube):
    """Exact mean of f over a cube (arithmetic mean of its cells)."""
    if cube.dim != f.dim:
        raise DimensionMismatchError(f"cube dimension {cube.dim} != function dimension {f.dim}")
    if cube.level > f.depth:
        raise ConfigError(f"cube level {cube.level} is below depth {f.depth}")
    return float(f.values[cube.cell_slices(f.depth)].mean())


# ── Maximal function ──────────────────────────────────────────
def _shifted_window_means(a, L, offsets, dim):
    """Means of `a` over windows of L cells whose lattice is shifted by `offsets`."""
    n = a.shape[0]
    pads = []
    for o in offsets:
        total = -(-(n + o) // L) * L
        pads.append((o, total - n - o))
    padded = np.pad(a, pads)
    shape = []
    for size in padded.shape:
        shape.extend((size // L, L))
    means = padded.reshape(shape).sum(axis=tuple(2 * k + 1 for k in range(dim))) / float(L ** dim)
    for axis in range(dim):
        means = np.repeat(means, L, axis=axis)
    return means[tuple(slice(o, o + n) for o in offsets)]


def maximal_function(f, exponent=1.0, shifted=True):
    """
    Grid maximal function M_p f(x) = sup_{Q ∋ x} (⨍_Q |f|^p)^{1/p}.

    How it works:
    1. Start from |f|^p itself (the finest cells).
    2. For every coarser level, take window averages over the dyadic
       grid and over the translated grids with offsets round(jL/3),
       j ∈ {0,1,2}^d, which stand in for balls of comparable size.
    3. Keep the pointwise maximum and take the 1/p power.

    Windows sticking out of Q⁰ are averaged over their full volume
    (f vanishes outside Q⁰).
    """
    if exponent < 1:
        raise ConfigError(f"maximal function exponent must be >= 1, got {exponent}")
    dim, depth = f.dim, f.depth
    a = np.abs(f.values) ** exponent
    best = a.copy()
    for level in range(depth):
        L = 2 ** (depth - level)
        axis_offsets = sorted({int(round(j * L / 3.0)) % L for j in (0, 1, 2)}) if shifted else [0]
        for offsets in itertools.product(axis_offsets, repeat=dim):
            np.maximum(best, _shifted_window_means(a, L, offsets, dim), out=best)
    return GridFunction(best ** (1.0 / exponent))


# ── Hardy inequality ──────────────────────────────────────────
def hardy_check(f, cube, u):
    """
    Hardy-type estimate on the annulus 3Q∖Q.

    Computes
        lhs = ∫_{3Q∖Q} (∫_Q |f(y)| / |x−y|^d dy)^u dx
        rhs = ‖1_Q f‖_u^u
    by midpoint sums on the finest cells; 3Q may leave Q⁰ and is
    evaluated on the padded lattice.

    Returns:
        {"lhs": float, "rhs": float, "ratio": float}
    """
    if u <= 1:
        raise ConfigError(f"Hardy exponent must exceed 1, got {u}")
    if not f.supported_in(cube):
        raise SupportError(f"function is not supported in {cube.key()}")

    dim, depth = f.dim, f.depth
    h = 2.0 ** (-depth)
    L = 2 ** (depth - cube.level)
    ranges = [np.arange(i * L - L, i * L + 2 * L) for i in cube.index]
    grids = np.meshgrid(*ranges, indexing="ij")
    coords = np.stack([g.reshape(-1) for g in grids], axis=1)
    inside = np.all([(coords[:, a] >= i * L) & (coords[:, a] < (i + 1) * L)
                     for a, i in enumerate(cube.index)], axis=0)
    x = (coords[~inside] + 0.5) * h

    src = np.abs(f.values[cube.cell_slices(depth)]).reshape(-1)
    src_ranges = [np.arange(i * L, (i + 1) * L) for i in cube.index]
    src_grids = np.meshgrid(*src_ranges, indexing="ij")
    y = (np.stack([g.reshape(-1) for g in src_grids], axis=1) + 0.5) * h

    dist2 = np.zeros((x.shape[0], y.shape[0]))
    for a in range(dim):
        dist2 += (x[:, a][:, None] - y[:, a][None, :]) ** 2
    inner_integral = (src[None, :] / dist2 ** (dim / 2.0)).sum(axis=1) * h ** dim

    lhs = float((inner_integral ** u).sum() * h ** dim)
    rhs = float((src ** u).sum() * h ** dim)
    ratio = lhs / rhs if rhs > 0 else 0.0
    return {"lhs": lhs, "rhs": rhs, "ratio": ratio}


# ── Exponents ─────────────────────────────────────────────────
def conjugate(x):
    """Hölder conjugate x′ with 1/x + 1/x′ = 1."""
    if np.isinf(x):
        return 1.0
    if x == 1:
        return float("inf")
    return x / (x - 1.0)


@dataclass(frozen=True)
class ExponentConfig:
    p: float = 1.5
    q: float = 1.5
    u: float = 1.5
    v: float = 1.5
    s: float = 1.5
    t: float = 1.5
    r: float = 2.0

    def __post_init__(self):
        for name in ("p", "q", "u", "v", "s", "t", "r"):
            value = getattr(self, name)
            if not value > 1:
                raise ConfigError(f"exponent {name} must exceed 1, got {value}")

    @property
    def p_prime(self):
        return conjugate(self.p)

    @property
    def q_prime(self):
        return conjugate(self.q)

    @property
    def v_prime(self):
        return conjugate(self.v)

    @property
    def t_prime(self):
        return conjugate(self.t)

    def check_baby_tb(self, s_prime):
        """s′ must exceed max{t′, 2} for the baby Tb bound."""
        needed = max(self.t_prime, 2.0)
        if not s_prime > needed:
            raise ConfigError(f"s' = {s_prime} must exceed max(t', 2) = {needed}")
        return True
