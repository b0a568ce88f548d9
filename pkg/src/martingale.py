# ─────────────────────────────────────────────────────────────
# martingale.py
# Local Tb Verification Harness — Adapted martingale differences
#
# 𝔼_Q^b, 𝔻_Q^b and the coefficient functions φ_{Q,i}, ω_Q of a
# (sparse) accretive system, the square functions of the pieces and
# the Carleson-norm verifiers used by the paraproduct estimate.
#
# Non-leaf cubes are kept in level order, row-major inside a level,
# so per-level child averages reshape straight into (cubes, 2^d).
# ─────────────────────────────────────────────────────────────

import logging
import os
import sys
from dataclasses import dataclass, field

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from config import CARLESON_S, IDENTITY_TOL
from src.dyadic import DyadicCube, GridFunction, block_mean, block_sum, cubes_at_level, cube_mask
from src.errors import ConfigError, DegenerateDenominatorError, DimensionMismatchError, SupportError

logger = logging.getLogger(__name__)


# ── Status Codes
PASS = "PASS"
FAIL = "FAIL"


# ── Level helpers ─────────────────────────────────────────────
def nonleaf_cubes(dim, depth):
    """Cubes of levels 0..N−1, level by level, row-major inside a level."""
    return [cube for level in range(depth) for cube in cubes_at_level(dim, level)]


def grouped_child_means(batch, dim, depth):
    """
    Child averages of every non-leaf cube.

    `batch` has shape (B, n_cells); the result has shape
    (B, n_nonleaf, 2^d) with children in DyadicCube.children() order.
    """
    batch = np.atleast_2d(batch)
    B = batch.shape[0]
    grid = batch.reshape((B,) + (2 ** depth,) * dim)
    blocks = []
    for level in range(depth):
        means = block_mean(grid, level + 1, dim)
        k = 2 ** level
        view = means.reshape((B,) + (k, 2) * dim)
        order = (0,) + tuple(1 + 2 * a for a in range(dim)) + tuple(2 + 2 * a for a in range(dim))
        blocks.append(view.transpose(order).reshape(B, k ** dim, 2 ** dim))
    return np.concatenate(blocks, axis=1)


# ── Martingale ────────────────────────────────────────────────
@dataclass(eq=False)
class AdaptedMartingale:
    """
    Coefficient functions of the adapted differences of one system.

    phi[q, 0] = ω_Q and phi[q, i] = φ_{Q,i} (i = 1..2^d) as flat grid
    functions, so that 𝔻_Q f = Σ_{i≥1} φ_{Q,i}⟨f⟩_{Q_i}.
    """

    system: object
    cubes: list = field(init=False)
    index: dict = field(init=False, repr=False)
    phi: np.ndarray = field(init=False, repr=False)
    has_stopping_child: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        system = self.system
        dim, depth = system.dim, system.depth
        if depth < 1:
            raise ConfigError("adapted differences need depth >= 1")
        self.dim, self.depth = dim, depth
        self.cubes = nonleaf_cubes(dim, depth)
        self.index = {q: k for k, q in enumerate(self.cubes)}
        n = 2 ** (dim * depth)
        self.phi = np.zeros((len(self.cubes), 2 ** dim + 1, n))
        self.child_masks = np.zeros((len(self.cubes), 2 ** dim, n))
        self.has_stopping_child = np.zeros(len(self.cubes), dtype=bool)
        self.denominators = {}
        floor = 0.5 * system.c0 if np.isfinite(system.c0) else 0.0

        for k, cube in enumerate(self.cubes):
            anc = system.ancestor(cube)
            b_anc = system[anc].values
            m_anc = self._denominator(cube, anc, b_anc, floor)
            parent_part = np.where(cube_mask(cube, dim, depth), b_anc, 0.0).reshape(-1) / m_anc
            for i, child in enumerate(cube.children(), start=1):
                c_anc = system.ancestor(child)
                b_child = system[c_anc].values
                m_child = self._denominator(child, c_anc, b_child, floor)
                inside = cube_mask(child, dim, depth)
                self.child_masks[k, i - 1] = inside.reshape(-1)
                self.phi[k, i] = np.where(inside, b_child, 0.0).reshape(-1) / m_child - parent_part / 2 ** dim
                if c_anc != anc:
                    self.has_stopping_child[k] = True
                    ratio = float(b_anc[inside].mean()) / m_child
                    self.phi[k, 0] += np.where(inside, ratio * b_child - b_anc, 0.0).reshape(-1) / m_anc
        self.child_volumes = self.child_masks.sum(axis=2) / n
        self.child_phi_means = self.own_child_means(self.phi)
        root = DyadicCube.root(dim)
        self.top_function = system[root].flat / float(system[root].values.mean())
        logger.debug("martingale: %d cubes, %d with stopping children", len(self.cubes),
                     int(self.has_stopping_child.sum()))

    def _denominator(self, cube, anc, b, floor):
        key = (cube, anc)
        if key not in self.denominators:
            value = float(b[cube.cell_slices(self.depth)].mean())
            if abs(value) < floor or value == 0.0:
                raise DegenerateDenominatorError(
                    f"|<b_{anc.key()}>_{cube.key()}| = {abs(value):.3g} below c0/2 = {floor:.3g}")
            self.denominators[key] = value
        return self.denominators[key]

    @property
    def n_cells(self):
        return self.phi.shape[-1]

    @property
    def omega(self):
        return self.phi[:, 0]

    def _flat(self, f):
        values = f.flat if isinstance(f, GridFunction) else np.asarray(f, dtype=float)
        if values.shape[-1] != self.n_cells:
            raise DimensionMismatchError(f"expected {self.n_cells} cells, got {values.shape[-1]}")
        return np.atleast_2d(values)

    # ── pieces
    def child_means(self, f):
        return grouped_child_means(self._flat(f), self.dim, self.depth)

    def differences(self, f):
        """𝔻_Q f for every non-leaf cube, shape (B, n_cubes, n_cells)."""
        means = self.child_means(f)
        return np.einsum("bqi,qin->bqn", means, self.phi[:, 1:])

    def coefficients(self, f):
        """
        a[q, i] = ⟨𝔻_{Q,i} f⟩_{Q_i}, so that 𝔻_Q f = Σ_{i=0}^{2^d} φ_{Q,i} a[q, i].

        a[q, 0] = ⟨f⟩_Q when Q has a stopping child and 0 otherwise.
        """
        means = self.child_means(f)
        out = np.empty(means.shape[:2] + (2 ** self.dim + 1,))
        out[:, :, 1:] = np.einsum("bqj,qji->bqi", means, self.child_phi_means[:, 1:])
        out[:, :, 0] = means.mean(axis=2) * self.has_stopping_child
        return out

    def zero_pieces(self, f):
        """𝔻_{Q,0} f = 1_Q⟨f⟩_Q on cubes with a stopping child, zero elsewhere."""
        means = self.child_means(f).mean(axis=2) * self.has_stopping_child
        return means[:, :, None] * self.indicators()[None]

    def indicators(self):
        return self.child_masks.sum(axis=1)

    def own_child_means(self, rows):
        """Averages of rows[q, ...] over the children of cube q; rows has shape (n_cubes, ..., n_cells)."""
        sums = np.einsum("q...n,qin->q...i", rows, self.child_masks)
        shape = (len(self.cubes),) + (1,) * (rows.ndim - 2) + (2 ** self.dim,)
        return sums / (self.child_volumes * self.n_cells).reshape(shape)

    def top_expectation(self, f):
        """𝔼_{Q⁰}^b f = b_{Q⁰}⟨f⟩_{Q⁰}/⟨b_{Q⁰}⟩_{Q⁰}."""
        flat = self._flat(f)
        return flat.mean(axis=1)[:, None] * self.top_function[None, :]

    def adjoint_differences(self, g):
        """(𝔻_Q)* g = Σ_i 1_{Q_i}/|Q_i| ∫ φ_{Q,i} g, shape (B, n_cubes, n_cells)."""
        flat = self._flat(g)
        weights = np.einsum("qin,bn->bqi", self.phi[:, 1:], flat) / self.n_cells
        return self.spread_children(weights)

    def adjoint_rows(self, rows):
        """(𝔻_Q)* rows[q] for each cube q, shape (n_cubes, n_cells)."""
        weights = np.einsum("qin,qn->qi", self.phi[:, 1:], rows) / self.n_cells
        return self.spread_children(weights[None])[0]

    def spread_children(self, weights):
        """Σ_i w[b, q, i] 1_{Q_i}/|Q_i| as flat grid functions."""
        return np.einsum("bqi,qin->bqn", weights / self.child_volumes[None], self.child_masks)

    def pieces(self, f, i=1, adjoint=False):
        """𝔻_{Q,i} f (or its adjoint); every i ≥ 1 gives 𝔻_Q f."""
        if not 0 <= i <= 2 ** self.dim:
            raise ConfigError(f"piece index must lie in 0..{2 ** self.dim}, got {i}")
        if i == 0:
            return self.zero_pieces(f)
        return self.adjoint_differences(f) if adjoint else self.differences(f)


# ── Decomposition ─────────────────────────────────────────────
@dataclass(eq=False)
class AdaptedDecomposition:
    martingale: AdaptedMartingale
    function: GridFunction
    pieces: np.ndarray
    top: np.ndarray

    @property
    def system(self):
        return self.martingale.system

    @property
    def cubes(self):
        return self.martingale.cubes

    def ancestor(self, cube):
        return self.system.ancestor(cube)

    def piece(self, cube):
        return GridFunction.from_flat(self.pieces[self.martingale.index[cube]], self.martingale.dim,
                                      self.martingale.depth)

    def redefined_pieces(self):
        """Pieces with 𝔼_{Q⁰}^b f folded into the top cube, so Σ_Q alone rebuilds f."""
        out = self.pieces.copy()
        out[0] += self.top
        return out

    def reconstruction_residual(self):
        f = self.function.flat
        scale = max(1.0, float(np.abs(f).max()))
        return float(np.abs(f - self.pieces.sum(axis=0) - self.top).max()) / scale

    def square_identity_residual(self):
        """max_Q |(𝔻_Q)² f − 𝔻_Q f + ω_Q⟨f⟩_Q| relative to max|f|."""
        mart = self.martingale
        inner = mart.own_child_means(self.pieces)
        twice = np.einsum("qi,qin->qn", inner, mart.phi[:, 1:])
        means = mart.child_means(self.function)[0].mean(axis=1)
        expected = self.pieces - mart.omega * means[:, None]
        scale = max(1.0, float(np.abs(self.function.flat).max()))
        return float(np.abs(twice - expected).max()) / scale

    def coefficient_residual(self):
        """max_Q |Σ_{i=0}^{2^d} φ_{Q,i}⟨𝔻_{Q,i} f⟩_{Q_i} − 𝔻_Q f|."""
        mart = self.martingale
        a = mart.coefficients(self.function)[0]
        rebuilt = np.einsum("qi,qin->qn", a, mart.phi)
        scale = max(1.0, float(np.abs(self.function.flat).max()))
        return float(np.abs(rebuilt - self.pieces).max()) / scale

    def localization_defect(self):
        """Largest |𝔻_Q f| outside Q."""
        outside = 1.0 - self.martingale.indicators()
        return float(np.abs(self.pieces * outside).max()) if self.pieces.size else 0.0

    def omega_support_defect(self):
        """Largest |ω_Q| on cubes without a stopping child."""
        mart = self.martingale
        idle = ~mart.has_stopping_child
        return float(np.abs(mart.omega[idle]).max()) if idle.any() else 0.0

    def summary(self):
        residuals = {
            "reconstruction": self.reconstruction_residual(),
            "square_identity": self.square_identity_residual(),
            "coefficients": self.coefficient_residual(),
            "localization": self.localization_defect(),
            "omega_support": self.omega_support_defect(),
        }
        return {
            "status": PASS if max(residuals.values()) <= IDENTITY_TOL else FAIL,
            "cubes": len(self.cubes),
            "stopping_parents": int(self.martingale.has_stopping_child.sum()),
            **residuals,
        }


def decompose(f, system, martingale=None):
    """
    Adapted martingale decomposition f = 𝔼_{Q⁰}^b f + Σ_Q 𝔻_Q^b f.

    Raises DegenerateDenominatorError when some |⟨b_{Q^a}⟩_Q| falls
    below c₀/2.
    """
    if f.dim != system.dim or f.depth != system.depth:
        raise DimensionMismatchError("function and system live on different grids")
    mart = martingale or AdaptedMartingale(system)
    pieces = mart.differences(f)[0]
    top = mart.top_expectation(f)[0]
    return AdaptedDecomposition(mart, f, pieces, top)


# ── Square functions ──────────────────────────────────────────
def square_function(pieces, r, cell_volume):
    """‖(Σ_Q |pieces_Q|²)^{1/2}‖_r for pieces of shape (n_cubes, n_cells)."""
    s = np.sqrt((pieces ** 2).sum(axis=0))
    if np.isinf(r):
        return float(s.max())
    return float((s ** r).sum() * cell_volume) ** (1.0 / r)


def square_function_norm(dec, r, variant="direct", i=1):
    """
    ‖(Σ_Q |𝔻_{Q,i} f|²)^{1/2}‖_r, or the same with (𝔻_{Q,i})* f.

    The ratio to ‖f‖_r is the Littlewood–Paley constant measured on f.
    """
    if not r > 1:
        raise ConfigError(f"square function exponent must exceed 1, got {r}")
    if variant not in ("direct", "adjoint"):
        raise ConfigError(f"unknown square function variant {variant!r}")
    mart = dec.martingale
    pieces = mart.pieces(dec.function, i=i, adjoint=variant == "adjoint")[0]
    return square_function(pieces, r, dec.function.cell_volume)


def littlewood_paley_ratios(martingale, functions, exponents):
    """max over f of the square-function norm / ‖f‖_r, per r, variant and i ∈ {0, 1}."""
    result = {}
    for r in exponents:
        for variant in ("direct", "adjoint"):
            for i in (0, 1):
                worst = 0.0
                for f in functions:
                    norm = f.norm(r)
                    if norm == 0:
                        continue
                    pieces = martingale.pieces(f, i=i, adjoint=variant == "adjoint")[0]
                    worst = max(worst, square_function(pieces, r, f.cell_volume) / norm)
                result[f"r={r:g}/{variant}/i={i}"] = worst
    return result


# ── Carleson embedding ────────────────────────────────────────
def _theta_array(theta, dim, depth):
    """Stack θ_R (dict cube -> GridFunction or flat array) checking supp θ_R ⊆ R."""
    cubes = sorted(theta)
    n = 2 ** (dim * depth)
    values = np.zeros((len(cubes), n))
    for k, cube in enumerate(cubes):
        t = theta[cube]
        flat = t.flat if isinstance(t, GridFunction) else np.asarray(t, dtype=float).reshape(-1)
        if flat.size != n:
            raise DimensionMismatchError(f"θ for {cube.key()} has {flat.size} cells, expected {n}")
        if np.any(flat[~cube_mask(cube, dim, depth).reshape(-1)] != 0.0):
            raise SupportError(f"θ for {cube.key()} is not supported in the cube")
        values[k] = flat
    return cubes, values


def carleson_norm(cubes, values, dim, depth, s):
    """
    sup_S |S|^{-1/s} ‖(Σ_{R⊆S} |θ_R|²)^{1/2}‖_s over every dyadic S.

    A_k(x) = Σ_{R∋x, level(R)≥k} θ_R(x)² is accumulated bottom-up; for
    S of level k the inner norm is the block sum of A_k^{s/2} over S.
    """
    h = 2.0 ** (-dim * depth)
    squares = values ** 2
    levels = np.array([c.level for c in cubes], dtype=int)
    acc = np.zeros(2 ** (dim * depth))
    worst = 0.0
    for level in range(depth, -1, -1):
        acc = acc + squares[levels == level].sum(axis=0)
        sums = block_sum((acc ** (s / 2.0)).reshape((2 ** depth,) * dim), level, dim) * h
        side = 2.0 ** (-dim * level)
        worst = max(worst, float((sums / side).max()) ** (1.0 / s))
    return worst


def carleson_embedding_check(theta, g, s=CARLESON_S):
    """
    Both sides of the L^s Carleson embedding for coefficients θ_R.

    lhs = ‖(Σ_R |θ_R⟨g⟩_R|²)^{1/2}‖_s, and the ratio is
    lhs / (‖g‖_s · carleson_norm).
    """
    if not 1 < s <= 2:
        raise ConfigError(f"Carleson exponent must lie in (1, 2], got {s}")
    dim, depth = g.dim, g.depth
    cubes, values = _theta_array(theta, dim, depth)
    averages = np.array([g.average(c) for c in cubes])
    weighted = values * averages[:, None]
    lhs = square_function(weighted, s, g.cell_volume) if cubes else 0.0
    norm = carleson_norm(cubes, values, dim, depth, s) if cubes else 0.0
    g_norm = g.norm(s)
    ratio = lhs / (g_norm * norm) if g_norm > 0 and norm > 0 else 0.0
    return {"lhs": lhs, "carleson_norm": norm, "g_norm": g_norm, "ratio": ratio,
            "status": PASS if np.isfinite(ratio) else FAIL}


# ── Paraproduct coefficients ──────────────────────────────────
def family_generations(system):
    """Generation of each member: the number of strictly larger members containing it."""
    members = system.members
    return {q: sum(1 for r in members if r != q and r.contains(q)) for q in members}


def paraproduct_carleson_norms(martingale1, system2, op, s=CARLESON_S):
    """
    Carleson norms of θ^a_R = (𝔻_R^{b₁})* T* b²_{R^{a,2}} and θ^b_R = ω_R¹ T* b²_{R^{a,2}}.

    Also splits the S = Q⁰ square sums by the stopping generation of
    R^{a,2}, next to the measure of each generation.
    """
    if not 1 < s <= 2:
        raise ConfigError(f"Carleson exponent must lie in (1, 2], got {s}")
    dim, depth = martingale1.dim, martingale1.depth
    members = sorted(system2.members)
    tstar = op.adjoint().apply_batch(system2.stacked(members))
    row = {q: k for k, q in enumerate(members)}
    anc = [row[system2.ancestor(q)] for q in martingale1.cubes]
    tb = tstar[anc]

    theta_a = martingale1.adjoint_rows(tb)
    theta_b = martingale1.omega * tb

    norm_a = carleson_norm(martingale1.cubes, theta_a, dim, depth, s)
    norm_b = carleson_norm(martingale1.cubes, theta_b, dim, depth, s)

    generations = family_generations(system2)
    gen_of = np.array([generations[system2.ancestor(q)] for q in martingale1.cubes])
    h = 2.0 ** (-dim * depth)
    split = []
    for k in range(int(gen_of.max()) + 1 if gen_of.size else 0):
        chosen = gen_of == k
        split.append({
            "generation": k,
            "theta_a": square_function(theta_a[chosen], s, h),
            "theta_b": square_function(theta_b[chosen], s, h),
            "measure": float(sum(q.volume for q, g in generations.items() if g == k)),
        })
    logger.debug("paraproduct Carleson norms: a=%.4g b=%.4g", norm_a, norm_b)
    return {
        "status": PASS if np.isfinite(norm_a) and np.isfinite(norm_b) else FAIL,
        "norm_a": norm_a,
        "norm_b": norm_b,
        "generations": split,
        "theta_a": dict(zip(martingale1.cubes, theta_a)),
    }
