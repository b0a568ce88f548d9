# ─────────────────────────────────────────────────────────────
# accretive.py
# Local Tb Verification Harness — Accretive systems
#
# Test-function systems {b_Q}: construction (indicator and rough
# generators), restriction to sparse families, validation of the
# nondegeneracy / size / testing constants, serialization.
# ─────────────────────────────────────────────────────────────

import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from config import P_EXPONENT, U_EXPONENT
from src.dyadic import (
    DyadicCube,
    GridFunction,
    block_mean,
    cube_mask,
    iter_cubes,
    power_mean,
    subtree_level_mask,
    union_mask,
)
from src.errors import ConfigError, DimensionMismatchError, SparsenessError, SupportError

logger = logging.getLogger(__name__)


# ── Status Codes
PASS = "PASS"
FAIL = "FAIL"


# ── System ────────────────────────────────────────────────────
@dataclass(eq=False)
class AccretiveSystem:
    """
    Map cube -> b_Q with exponents (p, u).

    A sparse-variant system carries its family and τ; every cube then
    uses the function of its minimal family ancestor Q^a.
    """

    functions: dict
    p: float
    u: float
    buffered: bool = True
    family: Optional[frozenset] = None
    tau: Optional[float] = None
    c0: float = 1.0
    name: str = "system"
    _ancestors: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.functions:
            raise ConfigError("accretive system has no test functions")
        first = next(iter(self.functions.values()))
        self.dim, self.depth = first.dim, first.depth
        for cube, b in self.functions.items():
            if b.dim != self.dim or b.depth != self.depth:
                raise DimensionMismatchError(f"b_Q for {cube.key()} lives on a different grid")
            if not b.supported_in(cube):
                raise SupportError(f"b_Q is not supported in {cube.key()}")

    def __getitem__(self, cube):
        return self.functions[cube]

    def __contains__(self, cube):
        return cube in self.functions

    def __len__(self):
        return len(self.functions)

    def items(self):
        return sorted(self.functions.items(), key=lambda kv: kv[0])

    @property
    def cubes(self):
        return sorted(self.functions)

    @property
    def is_sparse(self):
        return self.family is not None

    @property
    def members(self):
        return self.family if self.family is not None else frozenset(self.functions)

    def ancestor(self, cube):
        """Q^a: the minimal member containing Q."""
        if cube not in self._ancestors:
            members = self.members
            for level in range(cube.level, -1, -1):
                candidate = cube.ancestor(level)
                if candidate in members:
                    self._ancestors[cube] = candidate
                    break
            else:
                raise ConfigError(f"no family member contains {cube.key()}")
        return self._ancestors[cube]

    def adapted(self, cube):
        """b_{Q^a} for any cube."""
        return self.functions[self.ancestor(cube)]

    def stacked(self, cubes=None):
        cubes = self.cubes if cubes is None else cubes
        return np.stack([self.functions[c].flat for c in cubes])

    def nondegeneracy_defect(self):
        """max over members |⨍_Q b_Q − 1|."""
        return max(abs(b.average(c) - 1.0) for c, b in self.functions.items())


# ── Generators ────────────────────────────────────────────────
def make_indicator_system(dim, depth, p=P_EXPONENT, u=U_EXPONENT):
    """b_Q = 1_Q for every cube down to depth N."""
    functions = {cube: GridFunction.indicator(cube, depth) for cube in iter_cubes(dim, depth)}
    return AccretiveSystem(functions, p, u, name="indicator")


def _spike_depth(dim, p, roughness, available):
    """Smallest j ≥ 1 with 2^{-dj} ≤ 2^p roughness^{-p/(p−1)}, capped by the depth left."""
    bound = 2.0 ** p * roughness ** (-p / (p - 1.0))
    j = 1
    while 2.0 ** (-dim * j) > bound and j < available:
        j += 1
    return min(j, available)


def make_rough_system(dim, depth, p=P_EXPONENT, roughness=4.0, seed=0, u=U_EXPONENT, base_depth=None):
    """
    Unit-mean test functions with a large L^∞ / L^p gap.

    b_Q = 1_Q + λ(1_E − |E|/|Q∖E| · 1_{Q∖E}) with E a random dyadic
    subcube of relative measure ρ = 2^{-dj}. λ is taken as

        min(roughness·ρ^{-1/p} − 1,  (1+roughness)(1−ρ)/ρ,  2·roughness^{p/(p−1)} − 1)

    so that ⨍_Q b_Q = 1 exactly, (⨍|b_Q|^p)^{1/p} ≤ 2·roughness, and
    ‖b_Q‖_∞ ≥ roughness^{p/(p−1)}/2 whenever the spike fits above
    `base_depth` (default: `depth`). Cubes at level ≥ base_depth get
    b_Q = 1_Q, so a system built at depth N + 1 with base_depth N is the
    system of depth N refined cell by cell, plus indicators on the two
    finest levels.
    """
    if roughness < 1:
        raise ConfigError(f"roughness must be >= 1, got {roughness}")
    if not p > 1:
        raise ConfigError(f"size exponent must exceed 1, got {p}")
    base = depth if base_depth is None else base_depth
    if not 0 <= base <= depth:
        raise ConfigError(f"base depth {base} must lie in [0, {depth}]")
    rng = np.random.default_rng(seed)
    functions = {}
    for cube in iter_cubes(dim, depth):
        b = cube_mask(cube, dim, depth).astype(float)
        available = base - cube.level
        if available >= 1:
            j = _spike_depth(dim, p, roughness, available)
            rho = 2.0 ** (-dim * j)
            lam = min(roughness * rho ** (-1.0 / p) - 1.0,
                      (1.0 + roughness) * (1.0 - rho) / rho,
                      2.0 * roughness ** (p / (p - 1.0)) - 1.0)
            lam = max(lam, 0.0)
            offset = rng.integers(0, 2 ** j, size=dim)
            spike = DyadicCube(cube.level + j, tuple(int(i) * 2 ** j + int(o) for i, o in zip(cube.index, offset)))
            e = cube_mask(spike, dim, depth)
            b = b + lam * np.where(e, 1.0, -rho / (1.0 - rho) * b)
        functions[cube] = GridFunction(b)
    return AccretiveSystem(functions, p, u, name="rough")


# ── Sparse families ───────────────────────────────────────────
def strict_members(family, cube):
    return [r for r in family if r != cube and cube.contains(r)]


def admissible_masks(cube, inner, depth):
    """Per level ≥ level(Q): admissible sub-cubes Q′ ⊆ Q not inside a smaller member."""
    dim = cube.dim
    masks = {}
    for level in range(cube.level, depth + 1):
        inside = subtree_level_mask([cube], level, dim)
        blocked = subtree_level_mask(inner, level, dim)
        masks[level] = inside & ~blocked
    return masks


def restrict_to_sparse(system, family, tau):
    """
    Restrict a system to a sparse family.

    Checks Q⁰ ∈ family and, for every member Q,
        |∪{Q̃ ∈ family, Q̃ ⊊ Q}| ≤ (1−τ)|Q|;
    nondegeneracy c₀ is re-measured on admissible cubes only.

    Raises SparsenessError naming the offending cube.
    """
    family = frozenset(family)
    root = DyadicCube.root(system.dim)
    if root not in family:
        raise SparsenessError("sparse family must contain the top cube", cube=root)
    if not 0 < tau <= 1:
        raise ConfigError(f"tau must lie in (0, 1], got {tau}")
    h = 2.0 ** (-system.dim * system.depth)
    for cube in sorted(family):
        inner = strict_members(family, cube)
        covered = union_mask(inner, system.dim, system.depth).sum() * h if inner else 0.0
        if covered > (1.0 - tau) * cube.volume + 1e-12:
            raise SparsenessError(
                f"members inside {cube.key()} cover {covered / cube.volume:.4f} of it (> 1 - tau)",
                cube=cube)
    missing = [c for c in family if c not in system]
    if missing:
        raise ConfigError(f"system has no function for {missing[0].key()}")
    functions = {c: system[c] for c in family}
    c0 = admissible_nondegeneracy(functions, family, system.depth)
    return AccretiveSystem(functions, system.p, system.u, system.buffered, family, tau, c0,
                           name=f"{system.name}-sparse")


def admissible_nondegeneracy(functions, family, depth):
    """min over members Q and admissible Q′ ⊆ Q of |⨍_{Q′} b_Q|."""
    worst = np.inf
    for cube, b in functions.items():
        masks = admissible_masks(cube, strict_members(family, cube), depth)
        for level, mask in masks.items():
            if mask.any():
                worst = min(worst, float(np.abs(block_mean(b.values, level, b.dim)[mask]).min()))
    return worst


def as_exponents(system, t):
    """A (p,u) system read as a (t,t) system, t ≤ min{p, u}."""
    if t > min(system.p, system.u):
        raise ConfigError(f"t = {t} exceeds min(p, u) = {min(system.p, system.u)}")
    return replace(system, p=t, u=t, _ancestors={})


# ── Validation ────────────────────────────────────────────────
def _double_slices(cube, depth):
    """Padded-lattice slices of the cells whose centers lie in 2Q."""
    n = 2 ** depth
    L = 2 ** (depth - cube.level)
    return tuple(slice(int(np.ceil((i - 0.5) * L - 0.5)) + n, int(np.ceil((i + 1.5) * L - 0.5)) + n)
                 for i in cube.index)


def _inner_slices(cube, depth):
    n = 2 ** depth
    return tuple(slice(a + n, b + n) for a, b in cube.cell_range(depth))


def _normalized(values, p):
    """(⨍|v|^p)^{1/p} of an array; sup norm for p = ∞."""
    if np.isinf(p):
        return float(np.abs(values).max())
    return float(np.mean(np.abs(values) ** p)) ** (1.0 / p)


def validate(system, op):
    """
    Measure the accretive constants of a system for an operator.

    How it works:
    1. Apply T to every b_Q at once on the padded grid.
    2. Standard systems: for each Q compute ⨍_Q b_Q, (⨍_Q|b_Q|^p)^{1/p},
       (⨍_Q|Tb_Q|^u)^{1/u} and the buffered (⨍_{2Q}|Tb_Q|^u)^{1/u}.
    3. Sparse systems: the first three are measured on every admissible
       Q′ ⊆ Q (not inside a smaller member); buffered stays on 2Q.

    Returns a dictionary:
    {
        "status"         : "PASS",
        "worst_nondeg"   : min |average|,
        "nondeg_defect"  : max |⨍_Q b_Q − 1| over members,
        "worst_size"     : max normalized L^p size,
        "worst_testing"  : max normalized L^u testing,
        "worst_buffered" : max normalized L^u testing on 2Q
    }
    """
    if op.dim != system.dim or op.depth != system.depth:
        raise DimensionMismatchError("operator and system grids differ")
    cubes = system.cubes
    dim, depth = system.dim, system.depth
    p, u = system.p, system.u
    n = 2 ** depth
    tb_padded = op.apply_batch(system.stacked(cubes), padded=True).reshape((len(cubes),) + (3 * n,) * dim)

    worst_nondeg, worst_size, worst_testing, worst_buffered = np.inf, 0.0, 0.0, 0.0
    for k, cube in enumerate(cubes):
        b = system[cube].values
        tb = tb_padded[k]
        worst_buffered = max(worst_buffered, _normalized(tb[_double_slices(cube, depth)], u))
        if system.is_sparse:
            tb_grid = tb[tuple(slice(n, 2 * n) for _ in range(dim))]
            masks = admissible_masks(cube, strict_members(system.family, cube), depth)
            for level, mask in masks.items():
                if not mask.any():
                    continue
                worst_nondeg = min(worst_nondeg, float(np.abs(block_mean(b, level, dim)[mask]).min()))
                worst_size = max(worst_size, float(power_mean(b, level, dim, p)[mask].max()))
                worst_testing = max(worst_testing, float(power_mean(tb_grid, level, dim, u)[mask].max()))
        else:
            inside = cube.cell_slices(depth)
            worst_nondeg = min(worst_nondeg, abs(float(b[inside].mean())))
            worst_size = max(worst_size, _normalized(b[inside], p))
            worst_testing = max(worst_testing, _normalized(tb[_inner_slices(cube, depth)], u))

    return {
        "status": PASS,
        "worst_nondeg": float(worst_nondeg),
        "nondeg_defect": system.nondegeneracy_defect(),
        "worst_size": worst_size,
        "worst_testing": worst_testing,
        "worst_buffered": worst_buffered,
    }


def global_testing_check(system, op, u=None):
    """max_Q ‖Tb_Q‖_{L^u(3Q⁰)} / |Q|^{1/u}: local testing improved to a global bound."""
    u = system.u if u is None else u
    cubes = system.cubes
    tb = op.apply_batch(system.stacked(cubes), padded=True)
    norms = ((np.abs(tb) ** u).sum(axis=1) * op.cell_volume) ** (1.0 / u)
    volumes = np.array([c.volume for c in cubes])
    return {"status": PASS, "worst_global_testing": float((norms / volumes ** (1.0 / u)).max())}


def sup_norm(system):
    return max(float(np.abs(b.values).max()) for b in system.functions.values())


# ── Serialization ─────────────────────────────────────────────
def save_system(system, directory):
    """Per-cube CSVs plus manifest.json."""
    os.makedirs(directory, exist_ok=True)
    entries = []
    for cube, b in system.items():
        filename = "b_" + cube.key().replace(":", "_").replace(",", "-") + ".csv"
        b.to_csv(os.path.join(directory, filename))
        entries.append({"cube": cube.key(), "file": filename})
    manifest = {
        "name": system.name,
        "dim": system.dim,
        "depth": system.depth,
        "p": system.p,
        "u": system.u,
        "buffered": system.buffered,
        "family": sorted(c.key() for c in system.family) if system.family is not None else None,
        "tau": system.tau,
        "c0": system.c0,
        "functions": entries,
    }
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest


def load_system(directory):
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    functions = {
        DyadicCube.from_key(e["cube"]): GridFunction.from_csv(os.path.join(directory, e["file"]), manifest["dim"])
        for e in manifest["functions"]
    }
    family = manifest["family"]
    return AccretiveSystem(
        functions, manifest["p"], manifest["u"], manifest["buffered"],
        frozenset(DyadicCube.from_key(k) for k in family) if family is not None else None,
        manifest["tau"], manifest["c0"], manifest["name"],
    )
