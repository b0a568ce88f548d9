# ─────────────────────────────────────────────────────────────
# stopping.py
# Local Tb Verification Harness — Stopping construction
#
# Calderón–Zygmund decomposition of test functions, b-stopping and
# Tb-stopping cubes, the generation-by-generation iteration that
# yields a sparse family, and the suppression profile Φ built from
# all bad cubes.
#
# Every selection is a top-down scan (dyadic.maximal_cubes) over
# per-level condition arrays, so maximality is exact on the grid.
# ─────────────────────────────────────────────────────────────

import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from config import C_SIGMA, DELTA, EPSILON, ETA, SIGMA, STOP_C, SUPPRESSION_POWER, USE_OFFDIAG
from src.accretive import AccretiveSystem, admissible_masks, restrict_to_sparse, strict_members
from src.dyadic import (
    DyadicCube,
    GridFunction,
    block_mean,
    cell_centers,
    conjugate,
    cube_mask,
    iter_cubes,
    maximal_cubes,
    maximal_function,
    padded_centers,
    power_mean,
    triple_mask,
    union_mask,
)
from src.errors import ConfigError, ModeMismatchError, NoSparsenessMarginError, SupportError
from src.kernels import SuppressionProfile
from src.operators import apply, cube_rows, maximal_truncation, offdiag_average

logger = logging.getLogger(__name__)


# ── Status Codes
PASS = "PASS"
FAIL = "FAIL"


# ── Parameters ────────────────────────────────────────────────
@dataclass(frozen=True)
class StoppingParameters:
    """
    δ, C, η, ε, σ, C_σ of the construction.

    `size_const` (C_b) and `testing_mass` (A) are filled in by
    stopping_parameters() from a pass over the whole system.
    """

    delta: float = DELTA
    stop_c: float = STOP_C
    eta: float = ETA
    epsilon: Optional[float] = EPSILON
    sigma: Optional[float] = SIGMA
    c_sigma: Optional[float] = C_SIGMA
    use_offdiag: bool = USE_OFFDIAG
    suppression_power: Optional[int] = SUPPRESSION_POWER
    size_const: Optional[float] = None
    testing_mass: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta}")
        if not 0 < self.eta <= 1:
            raise ConfigError(f"eta must lie in (0, 1], got {self.eta}")
        if self.stop_c <= 0:
            raise ConfigError(f"stopping constant C must be positive, got {self.stop_c}")
        for name in ("epsilon", "sigma"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")

    @property
    def threshold(self):
        """b-stopping level C/δ for ⨍|b|^p."""
        return self.stop_c / self.delta

    def margin(self, p, size_const=None):
        """((1−η)/C_b)^{p′}: the part of Q not covered by degenerate cubes."""
        c = size_const if size_const is not None else self.size_const
        if c is None:
            raise ConfigError("size constant unknown; run stopping_parameters() first")
        return max(0.0, (1.0 - self.eta) / c) ** conjugate(p)

    def tau(self, p):
        """τ = margin − ε·A − σ from the measured constants."""
        if None in (self.epsilon, self.sigma, self.testing_mass):
            raise ConfigError("epsilon, sigma and A must be set to compute tau")
        return self.margin(p) - self.epsilon * self.testing_mass - self.sigma


# ── Calderón–Zygmund decomposition ────────────────────────────
@dataclass(eq=False)
class CZDecomposition:
    """b = b̃ + Σ_{Q∈ℬ₁} d_Q with d_Q = (b − ⟨b⟩_Q)1_Q."""

    original: GridFunction
    good: GridFunction
    cube: DyadicCube
    bad_cubes: list
    threshold: float
    p: float
    alpha: float
    vacuous: bool = False
    depth_truncated: bool = False

    @property
    def dim(self):
        return self.original.dim

    @property
    def depth(self):
        return self.original.depth

    @property
    def degenerate(self):
        """Q₀ itself stops and cannot be subdivided."""
        return self.vacuous and self.cube.level == self.depth

    def bad_part(self, cube):
        mask = cube_mask(cube, self.dim, self.depth)
        b = self.original.values
        return GridFunction(np.where(mask, b - b[mask].mean(), 0.0))

    def bad_parts(self):
        return {q: self.bad_part(q) for q in self.bad_cubes}

    @property
    def bad_measure(self):
        return float(sum(q.volume for q in self.bad_cubes))

    @property
    def bad_fraction(self):
        return self.bad_measure / self.cube.volume

    def chebyshev_fraction(self):
        """⨍_{Q₀}|b|^p / threshold: the weak-type bound on the bad fraction."""
        return float(np.mean(np.abs(self.original.values[self.cube.cell_slices(self.depth)]) ** self.p)) / self.threshold

    def identity_residual(self):
        """max |b − b̃ − Σ d_Q| over the grid."""
        total = self.good.values.copy()
        for d in self.bad_parts().values():
            total += d.values
        return float(np.abs(self.original.values - total).max())

    def envelope(self, points=None):
        """e = Σ φ_Q with φ_Q(x) = (ℓ(Q)/(ℓ(Q)+|x−c_Q|))^{d+α}, at `points` (default cell centers)."""
        if points is None:
            points = cell_centers(self.dim, self.depth)
        points = np.asarray(points, dtype=float)
        out = np.zeros(points.shape[0])
        if not self.bad_cubes:
            return out
        centers = np.array([q.center for q in self.bad_cubes])
        sides = np.array([q.side for q in self.bad_cubes])
        power = self.dim + self.alpha
        for start in range(0, len(self.bad_cubes), 256):
            c = centers[start:start + 256]
            s = sides[start:start + 256]
            dist = np.sqrt(((points[:, None, :] - c[None, :, :]) ** 2).sum(axis=-1))
            out += ((s[None, :] / (s[None, :] + dist)) ** power).sum(axis=1)
        return out

    def envelope_function(self):
        return GridFunction.from_flat(self.envelope(), self.dim, self.depth)


def cz_decompose(b, cube, p, threshold, alpha):
    """
    Calderón–Zygmund decomposition of b at level `threshold` for ⨍|b|^p.

    Bad cubes are the maximal Q ⊆ Q₀ with ⨍_Q |b|^p ≥ threshold; the
    good part keeps b off their union and replaces b by ⟨b⟩_Q on each.

    When Q₀ itself stops the decomposition is vacuous (ℬ₁ = {Q₀}); a
    bad cube at the finest depth flags the result depth-truncated.
    """
    if not b.supported_in(cube):
        raise SupportError(f"function is not supported in {cube.key()}")
    if threshold <= 0:
        raise ConfigError(f"stopping threshold must be positive, got {threshold}")
    dim, depth = b.dim, b.depth
    power = np.abs(b.values) ** p
    fires = {level: block_mean(power, level, dim) >= threshold for level in range(cube.level, depth + 1)}
    bad = maximal_cubes(cube, depth, fires)

    good = b.values.copy()
    for q in bad:
        sl = q.cell_slices(depth)
        good[sl] = b.values[sl].mean()
    vacuous = bad == [cube]
    truncated = any(q.level == depth for q in bad)
    if bad:
        logger.debug("cz %s: %d bad cubes, measure %.4g", cube.key(), len(bad), sum(q.volume for q in bad))
    return CZDecomposition(b, GridFunction(good), cube, bad, threshold, p, alpha, vacuous, truncated)


def error_envelope_norm(dec, u):
    """‖e‖_{L^u} of the error envelope on the padded box 3Q⁰."""
    if u < 1:
        raise ConfigError(f"envelope exponent must be >= 1, got {u}")
    if not dec.bad_cubes:
        return 0.0
    values = dec.envelope(padded_centers(dec.dim, dec.depth))
    return float((values ** u).sum() * dec.original.cell_volume) ** (1.0 / u)


# ── Tb-stopping ───────────────────────────────────────────────
def testing_density(op, b, cube, dec, p):
    """G = (T_# b + Mb + e)^p on the cells of Q (zero elsewhere)."""
    dim, depth = b.dim, b.depth
    mask = cube_mask(cube, dim, depth)
    sharp = np.zeros(b.n_cells)
    sharp[cube_rows(cube, depth)] = maximal_truncation(op, b, rows=cube_rows(cube, depth))
    total = sharp.reshape(b.values.shape) + maximal_function(b).values + dec.envelope_function().values
    return np.where(mask, total ** p, 0.0)


def offdiag_levels(op, b, cube, sharp=True):
    """⨍_{Q′} T_#(1_{(3Q′)^c} b) for every Q′ ⊆ Q, as per-level arrays (zero outside Q)."""
    dim, depth = op.dim, op.depth
    levels = {level: np.zeros((2 ** level,) * dim) for level in range(cube.level, depth + 1)}
    for sub in iter_cubes(dim, depth, top=cube):
        levels[sub.level][sub.index] = offdiag_average(op, b, sub, sharp=sharp)
    return levels


def _maximal_measure(cube, depth, fires):
    return float(sum(q.volume for q in maximal_cubes(cube, depth, fires)))


def calibrate_c_sigma(levels, cube, depth, sigma):
    """Smallest C_σ among the observed averages whose violators cover at most σ|Q|."""
    values = np.unique(np.concatenate([a.reshape(-1) for a in levels.values()]))
    budget = sigma * cube.volume + 1e-15
    lo, hi = 0, values.size - 1
    while lo < hi:
        mid = (lo + hi) // 2
        fires = {level: a > values[mid] for level, a in levels.items()}
        if _maximal_measure(cube, depth, fires) <= budget:
            hi = mid
        else:
            lo = mid + 1
    return float(values[lo])


@dataclass(eq=False)
class TbStopping:
    cube: DyadicCube
    cubes: list
    tau: float
    fraction: float
    margin: float
    testing_mass: float
    offdiag_fraction: float
    by_condition: dict
    c_sigma: Optional[float] = None
    depth_truncated: bool = False


def tb_stopping_cubes(cube, b, dec, op, params, p, density=None):
    """
    Tb-stopping cubes of Q: maximal Q′ ⊆ Q where any active condition fires

        ⨍_{Q′} G > 1/ε,   G = (T_# b + Mb + e)^p
        ⨍_{Q′} T_#(1_{(3Q′)^c} b) > C_σ     (only with use_offdiag)
        |⨍_{Q′} b̃| ≤ η

    The measure certificate Σ|Q′| ≤ (1−τ)|Q| uses
        τ = ((|⨍_Q b̃| − η)/C)^{p′} − ε ⨍_Q G − σ_Q
    with C = (⨍_Q |b̃|^p)^{1/p} and σ_Q the measured off-diagonal fraction.

    Raises:
        ModeMismatchError:       off-diagonal condition dropped for a non-antisymmetric kernel
        NoSparsenessMarginError: τ ≤ 0, or the selected cubes exceed (1−τ)|Q|
    """
    if not params.use_offdiag and not op.kernel.antisymmetric:
        raise ModeMismatchError("the off-diagonal stopping condition is required for non-antisymmetric kernels")
    if params.epsilon is None or params.sigma is None:
        raise ConfigError("epsilon and sigma must be set; run stopping_parameters() first")
    dim, depth = b.dim, b.depth
    if density is None:
        density = testing_density(op, b, cube, dec, p)
    levels = range(cube.level, depth + 1)

    fires_tb = {level: block_mean(density, level, dim) > 1.0 / params.epsilon for level in levels}
    fires_deg = {level: np.abs(block_mean(dec.good.values, level, dim)) <= params.eta for level in levels}
    fires_off = {level: np.zeros((2 ** level,) * dim, dtype=bool) for level in levels}
    c_sigma = None
    if params.use_offdiag:
        off = offdiag_levels(op, b, cube)
        c_sigma = params.c_sigma
        if c_sigma is None:
            c_sigma = calibrate_c_sigma(off, cube, depth, params.sigma)
        fires_off = {level: off[level] > c_sigma for level in levels}

    combined = {level: fires_tb[level] | fires_deg[level] | fires_off[level] for level in levels}
    selected = maximal_cubes(cube, depth, combined)
    fraction = float(sum(q.volume for q in selected)) / cube.volume

    inside = cube.cell_slices(depth)
    good = dec.good.values[inside]
    size = float(np.mean(np.abs(good) ** p)) ** (1.0 / p)
    mean = abs(float(good.mean()))
    margin = max(0.0, (mean - params.eta) / size) ** conjugate(p) if size > 0 else 0.0
    mass = float(density[inside].mean())
    off_fraction = _maximal_measure(cube, depth, fires_off) / cube.volume
    tau = margin - params.epsilon * mass - off_fraction
    by_condition = {
        "testing": _maximal_measure(cube, depth, fires_tb) / cube.volume,
        "offdiag": off_fraction,
        "degenerate": _maximal_measure(cube, depth, fires_deg) / cube.volume,
    }

    if tau <= 0:
        raise NoSparsenessMarginError(f"no sparseness margin at {cube.key()}: tau = {tau:.4g}")
    if fraction > 1.0 - tau + 1e-12:
        raise NoSparsenessMarginError(
            f"Tb-stopping cubes of {cube.key()} cover {fraction:.4g} > 1 - tau = {1 - tau:.4g}")
    return TbStopping(cube, selected, tau, fraction, margin, mass, off_fraction, by_condition, c_sigma,
                      any(q.level == depth for q in selected))


def stopping_parameters(system, op, params=None):
    """
    Choose ε and σ from a pass over every cube of the system.

    Measures C_b = max_Q (⨍_Q|b_Q|^p)^{1/p} and A = max_Q ⨍_Q G_Q, then
    takes ε = margin/(3A) and σ = margin/3 (unless set), so every cube
    keeps τ ≥ margin/3 with margin = ((1−η)/C_b)^{p′}.
    """
    params = params or StoppingParameters()
    if system.is_sparse:
        raise ConfigError("the stopping construction needs a system on every dyadic cube")
    p = system.p
    size_const, mass = 0.0, 0.0
    for cube, b in system.items():
        dec = cz_decompose(b, cube, p, params.threshold, op.kernel.alpha)
        density = testing_density(op, b, cube, dec, p)
        mass = max(mass, float(density[cube.cell_slices(b.depth)].mean()))
        size_const = max(size_const, float(np.mean(np.abs(b.values[cube.cell_slices(b.depth)]) ** p)) ** (1.0 / p))
    margin = params.margin(p, size_const)
    if margin <= 0:
        raise NoSparsenessMarginError(f"eta = {params.eta} leaves no sparseness margin")
    epsilon = params.epsilon if params.epsilon is not None else margin / (3.0 * max(mass, 1e-300))
    sigma = params.sigma if params.sigma is not None else margin / 3.0
    chosen = replace(params, epsilon=epsilon, sigma=sigma, size_const=size_const, testing_mass=mass)
    logger.info("stopping parameters: C_b=%.4g A=%.4g eps=%.3g sigma=%.3g tau>=%.3g",
                size_const, mass, epsilon, sigma, chosen.tau(p))
    return chosen


# ── Iteration ─────────────────────────────────────────────────
@dataclass(eq=False)
class StoppingForest:
    """Generations 𝒯₀ = {Q⁰}, 𝒯₁, … and ℬ₁, ℬ₂, … with per-top data."""

    system: AccretiveSystem
    params: StoppingParameters
    tops: list
    bad: list
    decompositions: dict
    stoppings: dict
    tau: float
    partner: Optional["StoppingForest"] = field(default=None, repr=False)

    @property
    def dim(self):
        return self.system.dim

    @property
    def depth(self):
        return self.system.depth

    @property
    def p(self):
        return self.system.p

    @property
    def family(self):
        return frozenset(q for generation in self.tops for q in generation)

    @property
    def all_bad(self):
        return [q for generation in self.bad for q in generation]

    @property
    def depth_truncated(self):
        return (any(d.depth_truncated for d in self.decompositions.values())
                or any(s.depth_truncated for s in self.stoppings.values()))

    def tree_measures(self):
        return [float(sum(q.volume for q in generation)) for generation in self.tops]

    def bad_measures(self):
        return [float(sum(q.volume for q in generation)) for generation in self.bad]

    @property
    def delta_effective(self):
        """δ, or the largest measured b-stopping fraction when it exceeds δ."""
        worst = max((d.bad_fraction for d in self.decompositions.values()), default=0.0)
        return max(self.params.delta, worst)

    def rho(self):
        """ϱ = 3^d δ/τ; doubled when a partner forest is merged into Φ."""
        delta = self.delta_effective
        tau = self.tau
        if self.partner is not None:
            delta = max(delta, self.partner.delta_effective)
            tau = min(tau, self.partner.tau)
        rho = 3 ** self.dim * delta / tau
        return 2.0 * rho if self.partner is not None else rho

    def certificates(self, profile=None):
        """Measure certificates of the construction, all exact on the grid."""
        tree = self.tree_measures()
        bad = self.bad_measures()
        delta = self.delta_effective
        tol = 1e-12
        result = {
            "tree_decay": all(m <= (1 - self.tau) ** k + tol for k, m in enumerate(tree)),
            "bad_decay": all(m <= delta * (1 - self.tau) ** k + tol for k, m in enumerate(bad)),
            "total_bad": sum(bad) <= delta / self.tau + tol,
            "delta_bound": all(d.bad_fraction <= self.params.delta + tol for d in self.decompositions.values()),
            "chebyshev": all(d.bad_fraction <= d.chebyshev_fraction() + tol for d in self.decompositions.values()),
        }
        if profile is not None:
            result["phi_measure"] = profile.positive_measure() <= self.rho() + tol
            result["phi_lipschitz"] = profile.lipschitz_defect() <= 1e-12
        return result

    def suppressed_system(self):
        """The sparse system {b̃_Q : Q ∈ 𝒯} of good parts, (∞, p) for T_Φ."""
        functions = {q: self.decompositions[q].good for q in self.family}
        base = AccretiveSystem(functions, np.inf, self.p, self.system.buffered, name=f"{self.system.name}-good")
        return restrict_to_sparse(base, self.family, self.tau)

    def summary(self, profile=None):
        return {
            "tau": self.tau,
            "delta_effective": self.delta_effective,
            "rho": self.rho(),
            "generations": len(self.tops),
            "family_size": len(self.family),
            "bad_cubes": len(self.all_bad),
            "tree_measures": self.tree_measures(),
            "bad_measures": self.bad_measures(),
            "depth_truncated": self.depth_truncated,
            "certificates": self.certificates(profile),
        }


def _build_forest(system, op, params):
    if params.epsilon is None or params.sigma is None or params.testing_mass is None:
        params = stopping_parameters(system, op, params)
    p = system.p
    root = DyadicCube.root(system.dim)
    tops, bad = [[root]], []
    decompositions, stoppings = {}, {}
    current = [root]
    while current:
        next_tops, next_bad = [], []
        for cube in current:
            b = system[cube]
            dec = cz_decompose(b, cube, p, params.threshold, op.kernel.alpha)
            stop = tb_stopping_cubes(cube, b, dec, op, params, p, density=testing_density(op, b, cube, dec, p))
            decompositions[cube] = dec
            stoppings[cube] = stop
            next_bad.extend(dec.bad_cubes)
            next_tops.extend(stop.cubes)
        bad.append(sorted(next_bad))
        if next_tops:
            tops.append(sorted(next_tops))
        logger.debug("generation %d: %d tops, %d bad cubes", len(bad), len(next_tops), len(next_bad))
        current = next_tops
    tau = min(s.tau for s in stoppings.values())
    return StoppingForest(system, params, tops, bad, decompositions, stoppings, tau)


def iterate_forest(system, op, params=None, partner_system=None):
    """
    Run the stopping iteration and build the suppression profile.

    With `partner_system` (test functions for T*), a second forest is
    built for the adjoint and both sets of bad cubes enter Φ.

    Returns:
        (StoppingForest, SuppressionProfile)
    """
    params = params or StoppingParameters()
    forest = _build_forest(system, op, params)
    cubes = list(forest.all_bad)
    if partner_system is not None:
        forest.partner = _build_forest(partner_system, op.adjoint(), params)
        cubes.extend(forest.partner.all_bad)
    m = params.suppression_power or system.dim
    profile = SuppressionProfile.from_cubes(sorted(set(cubes)), system.dim, system.depth, m)
    logger.info("forest: %d generations, %d tops, %d bad cubes, |{Phi>0}| = %.4g (rho = %.4g)",
                len(forest.tops), len(forest.family), len(cubes), profile.positive_measure(), forest.rho())
    return forest, profile


# ── Verifiers ─────────────────────────────────────────────────
def offdiag_verify(system, op, cube, lam, q_prime=None):
    """
    Off-diagonal averages over the ample collection of subcubes of Q.

    Violators are the maximal Q′ ⊆ Q with ⨍_{Q′} (M_p b + M_{q′}(Tb)) > λ;
    their measure obeys the Chebyshev bound ∫_Q (M_p b + M_{q′}Tb)/λ. On
    every Q′ not inside a violator the averages ⨍_{Q′} T_#(1_{(3Q′)^c} b)
    and sup_{Q′} |T(1_{(3Q′)^c} b)| are measured.
    """
    if lam <= 0:
        raise ConfigError(f"lambda must be positive, got {lam}")
    b = system[cube]
    dim, depth = b.dim, b.depth
    q_prime = system.u if q_prime is None else q_prime
    control = maximal_function(b, system.p).values + maximal_function(apply(op, b), q_prime).values
    control = np.where(cube_mask(cube, dim, depth), control, 0.0)
    fires = {level: block_mean(control, level, dim) > lam for level in range(cube.level, depth + 1)}
    violators = maximal_cubes(cube, depth, fires)
    measure = float(sum(q.volume for q in violators))
    chebyshev = float(control.sum() * b.cell_volume) / lam

    worst_avg, worst_sup = 0.0, 0.0
    blocked = union_mask(violators, dim, depth)
    for sub in iter_cubes(dim, depth, top=cube):
        if blocked[sub.cell_slices(depth)].any():
            continue
        worst_avg = max(worst_avg, offdiag_average(op, b, sub, sharp=True))
        far = b.masked(~triple_mask(sub, dim, depth))
        if np.any(far.values):
            values = op.apply_batch(far.flat[None, :], rows=cube_rows(sub, depth))[0]
            worst_sup = max(worst_sup, float(np.abs(values).max()))
    return {
        "status": PASS if measure <= chebyshev + 1e-12 else FAIL,
        "lam": lam,
        "violator_measure": measure,
        "chebyshev_bound": chebyshev,
        "ample_fraction": 1.0 - measure / cube.volume,
        "worst_average": worst_avg,
        "worst_sup": worst_sup,
    }


def suppressed_testfn_verify(forest, profile, op_phi, u=None):
    """
    Measure the modified system {b̃_Q : Q ∈ 𝒯} against T_Φ.

    For every family member Q and admissible Q′ ⊆ Q (not inside a
    smaller member):
        (⨍_{Q′}|T_Φ b̃_Q|^p)^{1/p} and the same with min(p, u),
        ⨍_{Q′}|T_Φ(1_{(3Q′)^c} b̃_Q)|,
        |⨍_{Q′} b̃_Q|,
    plus ‖b̃_Q‖_∞ against (2^d C/δ)^{1/p} and the pointwise ratio
    |T_Φ b̃_Q| / (T_# b_Q + M b_Q + e_Q) on Q.
    """
    dim, depth = forest.dim, forest.depth
    p = forest.p
    u = forest.system.u if u is None else u
    t = min(p, u)
    family = forest.family
    members = sorted(family)
    goods = np.stack([forest.decompositions[q].good.flat for q in members])
    tphi = op_phi.apply_batch(goods).reshape((len(members),) + (2 ** depth,) * dim)

    worst = {"testing_p": 0.0, "testing_t": 0.0, "offdiag": 0.0, "nondeg": np.inf, "domination": 0.0}
    sup_norm = 0.0
    base = op_phi.with_profile(None)
    for k, cube in enumerate(members):
        dec = forest.decompositions[cube]
        good = dec.good
        sup_norm = max(sup_norm, float(np.abs(good.values).max()))
        masks = admissible_masks(cube, strict_members(family, cube), depth)
        for level, mask in masks.items():
            if not mask.any():
                continue
            worst["testing_p"] = max(worst["testing_p"], float(power_mean(tphi[k], level, dim, p)[mask].max()))
            worst["testing_t"] = max(worst["testing_t"], float(power_mean(tphi[k], level, dim, t)[mask].max()))
            worst["nondeg"] = min(worst["nondeg"], float(np.abs(block_mean(good.values, level, dim)[mask]).min()))
            for index in zip(*np.nonzero(mask)):
                sub = DyadicCube(level, tuple(int(i) for i in index))
                worst["offdiag"] = max(worst["offdiag"], offdiag_average(op_phi, good, sub))
        dominant = testing_density(base, dec.original, cube, dec, 1.0)
        inside = cube_mask(cube, dim, depth)
        ratio = np.where(inside & (dominant > 0), np.abs(tphi[k]) / np.where(dominant > 0, dominant, 1.0), 0.0)
        worst["domination"] = max(worst["domination"], float(ratio.max()))

    sup_bound = (2 ** dim * forest.params.threshold) ** (1.0 / p)
    return {
        "status": PASS if sup_norm <= sup_bound * (1 + 1e-9) else FAIL,
        "worst_testing_p": worst["testing_p"],
        "worst_testing_t": worst["testing_t"],
        "t": t,
        "worst_offdiag": worst["offdiag"],
        "worst_nondeg": float(worst["nondeg"]),
        "worst_domination": worst["domination"],
        "sup_norm": sup_norm,
        "sup_bound": sup_bound,
        "members": len(members),
        "phi_measure": profile.positive_measure(),
    }


# ── Serialization ─────────────────────────────────────────────
def save_forest(forest, directory, profile=None):
    """Manifest (generations, parameters, certificates), b̃_Q CSVs and Φ CSV."""
    os.makedirs(directory, exist_ok=True)
    files = {}
    for cube in sorted(forest.family):
        name = "good_" + cube.key().replace(":", "_").replace(",", "-") + ".csv"
        forest.decompositions[cube].good.to_csv(os.path.join(directory, name))
        files[cube.key()] = name
    if profile is not None:
        profile.values.to_csv(os.path.join(directory, "phi.csv"))
    params = {k: v for k, v in forest.params.__dict__.items()}
    manifest = {
        "dim": forest.dim,
        "depth": forest.depth,
        "params": params,
        "tops": [[q.key() for q in g] for g in forest.tops],
        "bad": [[q.key() for q in g] for g in forest.bad],
        "good_parts": files,
        "phi": "phi.csv" if profile is not None else None,
        "summary": forest.summary(profile),
    }
    with open(os.path.join(directory, "forest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest
