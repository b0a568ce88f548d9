# ─────────────────────────────────────────────────────────────
# kernels.py
# Local Tb Verification Harness — Calderón–Zygmund kernels
#
# Concrete kernels with declared constants, the suppression
# profile Φ, the suppressed kernel K_Φ and sampling verifiers for
# the standard size / Hölder estimates.
#
# Kernels are evaluated on point arrays of shape (..., d) with
# numpy broadcasting; nothing loops over points in Python.
# ─────────────────────────────────────────────────────────────

import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from config import CAUCHY_LIPSCHITZ, DEFAULT_ALPHA
from src.dyadic import GridFunction
from src.errors import ConfigError, DimensionMismatchError

logger = logging.getLogger(__name__)


# ── Status Codes
PASS = "PASS"
FAIL = "FAIL"

KERNEL_NAMES = ("hilbert", "riesz_1", "riesz_2", "cauchy_lipschitz", "zero")


def _points(x, dim):
    arr = np.asarray(x, dtype=float)
    if dim == 1 and (arr.ndim == 0 or arr.shape[-1] != 1):
        arr = arr[..., None]
    if arr.shape[-1] != dim:
        raise DimensionMismatchError(f"points of dimension {arr.shape[-1]} for a {dim}-d kernel")
    return arr


# ── Suppression profile ───────────────────────────────────────
def distance_profile(points, boxes, chunk=256):
    """max over boxes of dist(x, box^c); zero outside every box."""
    points = np.asarray(points, dtype=float)
    flat = points.reshape(-1, points.shape[-1])
    out = np.zeros(flat.shape[0])
    if len(boxes) == 0:
        return out.reshape(points.shape[:-1])
    lo = np.array([b[0] for b in boxes], dtype=float)
    hi = np.array([b[1] for b in boxes], dtype=float)
    for start in range(0, lo.shape[0], chunk):
        l = lo[start:start + chunk][None, :, :]
        h = hi[start:start + chunk][None, :, :]
        x = flat[:, None, :]
        gap = np.minimum(x - l, h - x).min(axis=-1)
        np.maximum(out, np.clip(gap, 0.0, None).max(axis=1), out=out)
    return out.reshape(points.shape[:-1])


@dataclass(frozen=True, eq=False)
class SuppressionProfile:
    """
    Nonnegative 1-Lipschitz profile Φ with suppression power m.

    `values` holds Φ at the finest cell centers. When `boxes` (the
    triples of bad cubes) are present, Φ is evaluated anywhere with
    the exact distance formula; otherwise by cell lookup, clamped to
    the nearest cell of Q⁰.
    """

    values: GridFunction
    m: int
    lipschitz: float = 1.0
    boxes: tuple = ()

    def __post_init__(self):
        if np.any(self.values.values < 0):
            raise ConfigError("suppression profile must be nonnegative")
        if self.m < self.values.dim / 2.0:
            raise ConfigError(f"suppression power m = {self.m} is below d/2")
        if self.lipschitz > 1.0:
            raise ConfigError(f"declared Lipschitz constant {self.lipschitz} exceeds 1")

    @classmethod
    def zero(cls, dim, depth, m=None):
        return cls(GridFunction.zeros(dim, depth), m if m is not None else dim)

    @classmethod
    def from_cubes(cls, cubes, dim, depth, m=None):
        """Φ(x) = sup over cubes of dist(x, (3Q)^c)."""
        from src.dyadic import cell_centers

        boxes = tuple(tuple(np.asarray(b).tolist() for b in c.triple_box()) for c in cubes)
        values = distance_profile(cell_centers(dim, depth), boxes).reshape((2 ** depth,) * dim)
        return cls(GridFunction(values), m if m is not None else dim, 1.0, boxes)

    @property
    def dim(self):
        return self.values.dim

    @property
    def is_zero(self):
        return not np.any(self.values.values > 0)

    def with_power(self, m):
        return SuppressionProfile(self.values, m, self.lipschitz, self.boxes)

    def evaluate(self, points):
        pts = _points(points, self.dim)
        if self.boxes:
            return distance_profile(pts, self.boxes)
        n = self.values.n_side
        idx = np.clip(np.floor(pts * n).astype(int), 0, n - 1)
        return self.values.values[tuple(idx[..., a] for a in range(self.dim))]

    def lipschitz_defect(self):
        """max over axis-adjacent cells of |ΔΦ| − L·h (≤ 0 when Lipschitz)."""
        v = self.values.values
        h = 1.0 / self.values.n_side
        worst = -np.inf
        for axis in range(self.dim):
            if v.shape[axis] > 1:
                worst = max(worst, float(np.abs(np.diff(v, axis=axis)).max()) - self.lipschitz * h)
        return worst if np.isfinite(worst) else 0.0

    def positive_measure(self):
        return float((self.values.values > 0).sum() * self.values.cell_volume)


# ── Kernels ───────────────────────────────────────────────────
@dataclass(frozen=True, eq=False)
class CZKernel:
    """
    Calderón–Zygmund kernel with declared constants.

    `evaluator` is the raw K(x, y) on point arrays; calling the kernel
    applies the qualitative cap K·1_{|x−y| > cap}.
    """

    name: str
    dim: int
    alpha: float
    size_const: float
    holder_const: float
    antisymmetric: bool
    evaluator: Callable = field(repr=False)
    cap: float = 0.0
    profile: Optional[SuppressionProfile] = field(default=None, repr=False)

    def __call__(self, x, y):
        x = _points(x, self.dim)
        y = _points(y, self.dim)
        r = np.sqrt(((x - y) ** 2).sum(axis=-1))
        with np.errstate(divide="ignore", invalid="ignore"):
            values = self.evaluator(x, y)
        return np.where(r > self.cap, values, 0.0)

    @property
    def is_zero(self):
        return self.name == "zero"


def _hilbert(x, y):
    return 1.0 / (x[..., 0] - y[..., 0])


def _riesz(j):
    def evaluate(x, y):
        diff = x - y
        r = np.sqrt((diff ** 2).sum(axis=-1))
        return diff[..., j - 1] / r ** (x.shape[-1] + 1)
    return evaluate


def _graph(lipschitz):
    return lambda t: lipschitz * np.sin(2.0 * np.pi * t) / (2.0 * np.pi)


def _cauchy(lipschitz, part):
    graph = _graph(lipschitz)

    def evaluate(x, y):
        dx = x[..., 0] - y[..., 0]
        da = graph(x[..., 0]) - graph(y[..., 0])
        den = dx ** 2 + da ** 2
        return dx / den if part == "real" else -da / den
    return evaluate


def _zero(x, y):
    return np.zeros(np.broadcast_shapes(x.shape[:-1], y.shape[:-1]))


def make_kernel(name, dim, alpha=DEFAULT_ALPHA, depth=None, part="real", lipschitz=CAUCHY_LIPSCHITZ):
    """
    Build a named kernel with its declared constants.

    hilbert            K = 1/(x−y)                           d = 1
    riesz_j            K = (x_j−y_j)/|x−y|^{d+1}             d = 2
    cauchy_lipschitz   real/imag part of 1/((x−y)+i(A(x)−A(y))),
                       A(t) = L sin(2πt)/(2π)               d = 1
    zero               K ≡ 0                                 any d

    With `depth` given, the cap η₀ is half the finest cell side.
    """
    if not 0 < alpha < 1:
        raise ConfigError(f"Hölder exponent must lie in (0,1), got {alpha}")
    cap = 0.5 * 2.0 ** (-depth) if depth is not None else 0.0
    half = 2.0 ** (alpha - 1.0)

    if name == "hilbert":
        if dim != 1:
            raise DimensionMismatchError("hilbert kernel requires d = 1")
        return CZKernel(name, 1, alpha, 1.0, 2.0 * half, True, _hilbert, cap)
    if name in ("riesz_1", "riesz_2"):
        if dim != 2:
            raise DimensionMismatchError(f"{name} kernel requires d = 2")
        j = int(name[-1])
        return CZKernel(name, 2, alpha, 1.0, 16.0 * half, True, _riesz(j), cap)
    if name == "cauchy_lipschitz":
        if dim != 1:
            raise DimensionMismatchError("cauchy_lipschitz kernel requires d = 1")
        if part not in ("real", "imag"):
            raise ConfigError(f"cauchy part must be 'real' or 'imag', got {part}")
        holder = 4.0 * np.sqrt(1.0 + lipschitz ** 2) * half
        return CZKernel(f"{name}_{part}", 1, alpha, 1.0, holder, True, _cauchy(lipschitz, part), cap)
    if name == "zero":
        return CZKernel(name, dim, alpha, 0.0, 0.0, True, _zero, cap)
    raise ConfigError(f"unknown kernel '{name}', expected one of {KERNEL_NAMES}")


def adjoint(kernel):
    """K*(x, y) = K(y, x)."""
    raw = kernel.evaluator
    name = kernel.name[:-1] if kernel.name.endswith("*") else kernel.name + "*"
    return CZKernel(name, kernel.dim, kernel.alpha, kernel.size_const, kernel.holder_const,
                    kernel.antisymmetric, lambda x, y: raw(y, x), kernel.cap, kernel.profile)


def suppress(kernel, profile):
    """
    K_Φ(x,y) = |x−y|^{2m} K(x,y) / (|x−y|^{2m} + Φ(x)^m Φ(y)^m).

    The denominator is symmetric in (x, y), so antisymmetry and the
    declared constants carry over; |K_Φ| ≤ |K| pointwise.
    """
    if profile.dim != kernel.dim:
        raise DimensionMismatchError("profile and kernel dimensions differ")
    raw = kernel.evaluator
    m = profile.m

    def evaluate(x, y):
        base = raw(x, y)
        num = ((x - y) ** 2).sum(axis=-1) ** m
        damp = (profile.evaluate(x) * profile.evaluate(y)) ** m
        return num * base / (num + damp)

    return CZKernel(kernel.name, kernel.dim, kernel.alpha, kernel.size_const, kernel.holder_const,
                    kernel.antisymmetric, evaluate, kernel.cap, profile)


# ── Verifiers ─────────────────────────────────────────────────
def cz_ratios(kernel, x, xp, y, yp):
    """
    Normalized size and Hölder ratios for quadruples (x, x′, y, y′).

    Ratios with zero displacement are 0.

    Returns:
        (size, holder_x, holder_y) arrays
    """
    d, a = kernel.dim, kernel.alpha
    x, xp, y, yp = (_points(v, d) for v in (x, xp, y, yp))
    r = np.sqrt(((x - y) ** 2).sum(axis=-1))
    dx = np.sqrt(((x - xp) ** 2).sum(axis=-1))
    dy = np.sqrt(((y - yp) ** 2).sum(axis=-1))
    kxy = kernel(x, y)
    size = r ** d * np.abs(kxy)
    with np.errstate(divide="ignore", invalid="ignore"):
        hx = np.where(dx > 0, r ** (d + a) * np.abs(kxy - kernel(xp, y)) / dx ** a, 0.0)
        hy = np.where(dy > 0, r ** (d + a) * np.abs(kxy - kernel(x, yp)) / dy ** a, 0.0)
    return size, hx, hy


def _unit_vectors(rng, n, dim):
    v = rng.standard_normal((n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def verify_cz_estimates(kernel, samples, seed=0):
    """
    Sample admissible quadruples and measure the CZ estimates.

    How it works:
    1. Draw x, y uniformly in Q⁰ (pairs closer than four caps are dropped).
    2. Draw displacements with |x−x′| + |y−y′| < ½|x−y|.
    3. Report the max size ratio |x−y|^d|K| and the max Hölder ratio
       |x−y|^{d+α}|ΔK|/|Δ|^α, plus the antisymmetry defect.

    Returns a dictionary:
    {
        "status"                  : "PASS" / "FAIL",
        "max_size_ratio"          : float,
        "max_holder_ratio"        : float,
        "max_antisymmetry_defect" : float,
        "size_const"              : declared size constant,
        "holder_const"            : declared Hölder constant,
        "samples"                 : admissible samples used
    }
    """
    if samples <= 0:
        raise ConfigError("samples must be positive")
    rng = np.random.default_rng(seed)
    d = kernel.dim
    x = rng.random((samples, d))
    y = rng.random((samples, d))
    r = np.linalg.norm(x - y, axis=1)
    keep = r > max(4.0 * kernel.cap, 1e-9)
    x, y, r = x[keep], y[keep], r[keep]

    t = rng.uniform(0.0, 0.5, r.size) * r * (1.0 - 1e-9)
    w = rng.random(r.size)
    xp = x + (t * w)[:, None] * _unit_vectors(rng, r.size, d)
    yp = y + (t * (1.0 - w))[:, None] * _unit_vectors(rng, r.size, d)

    size, hx, hy = cz_ratios(kernel, x, xp, y, yp)
    max_size = float(size.max()) if size.size else 0.0
    max_holder = float(max(hx.max(), hy.max())) if hx.size else 0.0
    defect = 0.0
    if kernel.antisymmetric and r.size:
        defect = float((r ** d * np.abs(kernel(x, y) + kernel(y, x))).max())

    ok = (max_size <= kernel.size_const * (1 + 1e-9) + 1e-12
          and max_holder <= kernel.holder_const * (1 + 1e-9) + 1e-12
          and defect <= 1e-9)
    logger.debug("kernel %s: size %.4g holder %.4g", kernel.name, max_size, max_holder)
    return {
        "status": PASS if ok else FAIL,
        "kernel": kernel.name,
        "max_size_ratio": max_size,
        "max_holder_ratio": max_holder,
        "max_antisymmetry_defect": defect,
        "size_const": kernel.size_const,
        "holder_const": kernel.holder_const,
        "samples": int(r.size),
    }


def suppressed_size_check(kernel, profile, cube, samples=1000, seed=0):
    """
    Size of K_Φ deep inside a cube where Φ ≥ dist(·, (3Q)^c).

    Samples x, y ∈ Q and reports max ℓ(Q)^d |K_Φ(x,y)| together with
    the bound d^{m−d/2}·size_const that follows from
    |K_Φ| ≤ |x−y|^{2m−d}/ℓ(Q)^{2m}, and the smallest observed margin
    Φ(x) − dist(x, (3Q)^c) (should be ≥ 0).
    """
    rng = np.random.default_rng(seed)
    d, m = kernel.dim, profile.m
    x = cube.lower + cube.side * rng.random((samples, d))
    y = cube.lower + cube.side * rng.random((samples, d))
    suppressed = suppress(kernel, profile)
    values = np.abs(suppressed(x, y)) * cube.side ** d

    lo, hi = cube.triple_box()
    margin = profile.evaluate(x) - distance_profile(x, ((tuple(lo), tuple(hi)),))
    bound = d ** (m - d / 2.0) * kernel.size_const
    worst = float(values.max())
    return {
        "status": PASS if worst <= bound * (1 + 1e-9) else FAIL,
        "max_scaled_size": worst,
        "bound": bound,
        "min_profile_margin": float(margin.min()),
    }
