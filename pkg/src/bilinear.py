# ─────────────────────────────────────────────────────────────
# bilinear.py
# Local Tb Verification Harness — Bilinear form
#
# Regroups ⟨Tf, g⟩ = Σ_{Q,R} ⟨T𝔻_Q f, 𝔻_R g⟩ into disjoint, nested
# (paraproduct + remainder) and diagonal parts, measures the
# coefficient kernels behind each part, and runs the weak
# boundedness and baby Tb verifiers.
#
# All pairings come from one dense product TD₁ D₂ᵀ·|cell|; the
# parts are index bookkeeping over that matrix, so they re-sum to
# the direct pairing up to floating-point reordering.
# ─────────────────────────────────────────────────────────────

import csv
import logging
import os
import sys
from dataclasses import dataclass, field

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from config import BABY_TB_S_PRIME, BABY_TB_SAMPLES, IDENTITY_TOL, K_MAX, K_SLOPE_BAND, M_MAX, M_SLOPE_MARGIN, RESUM_TOL
from src.dyadic import (
    DyadicCube,
    GridFunction,
    cell_centers,
    conjugate,
    cube_mask,
    hardy_check,
    iter_cubes,
    refine_batch,
    triple_mask,
)
from src.errors import ConfigError, DimensionMismatchError, ModeMismatchError
from src.martingale import AdaptedMartingale, decompose

logger = logging.getLogger(__name__)


# ── Status Codes
PASS = "PASS"
FAIL = "FAIL"


# ── Index geometry ────────────────────────────────────────────
def _relative_position(row_cubes, col_cubes):
    """
    For every pair (Q, R): k = level(Q) − level(R) and, where k ≥ 0,
    m = index(Q^{(k)}) − index(R) with Q^{(k)} the ancestor of Q at the
    level of R.
    """
    lq = np.array([q.level for q in row_cubes])
    lr = np.array([r.level for r in col_cubes])
    iq = np.array([q.index for q in row_cubes])
    ir = np.array([r.index for r in col_cubes])
    k = lq[:, None] - lr[None, :]
    shift = np.clip(k, 0, None)
    m = (iq[:, None, :] >> shift[:, :, None]) - ir[None, :, :]
    return k, m


def _split_half(pairings, row_cubes, col_cubes, strict):
    """Sum pairings[q, r] over ℓ(Q) ≤ ℓ(R) (strict: <) by (k, m)."""
    k, m = _relative_position(row_cubes, col_cubes)
    active = k >= (1 if strict else 0)
    nested_mask = active & np.all(m == 0, axis=-1)
    diagonal = float(pairings[nested_mask & (k == 0)].sum())
    nested = float(pairings[nested_mask & (k > 0)].sum())
    disjoint_mask = active & ~np.all(m == 0, axis=-1)
    by_km = {}
    if disjoint_mask.any():
        ks = k[disjoint_mask]
        ms = m[disjoint_mask]
        values = pairings[disjoint_mask]
        keys = np.concatenate([ks[:, None], ms], axis=1)
        unique, inverse = np.unique(keys, axis=0, return_inverse=True)
        sums = np.zeros(len(unique))
        np.add.at(sums, inverse.reshape(-1), values)
        for key, value in zip(unique, sums):
            by_km[(int(key[0]), tuple(int(v) for v in key[1:]))] = float(value)
    return {"diagonal": diagonal, "nested": nested, "disjoint": float(sum(by_km.values())), "by_km": by_km}


# ── ψ functions ───────────────────────────────────────────────
def psi_functions(martingale):
    """
    ψ_{R,j;S} for every non-leaf R, child S of R and j = 0..2^d.

    Shape (n_cubes, 2^d [S], 2^d + 1 [j], n_cells):
        j = 0:            ω_R − (⟨b_{R^a}⟩_S/⟨b_{S^a}⟩_S · b_{S^a} − b_{R^a})/⟨b_{R^a}⟩_R
        j ≥ 1, R_j = S:   φ_{R,j} − b_{S^a}/⟨b_{S^a}⟩_S
        otherwise:        φ_{R,j}
    """
    system = martingale.system
    depth = martingale.depth
    n_children = 2 ** martingale.dim
    psi = np.repeat(martingale.phi[:, None], n_children, axis=1)
    for k, cube in enumerate(martingale.cubes):
        anc = system.ancestor(cube)
        b_anc = system[anc].flat
        m_anc = martingale.denominators[(cube, anc)]
        for s, child in enumerate(cube.children()):
            c_anc = system.ancestor(child)
            b_child = system[c_anc].flat
            m_child = martingale.denominators[(child, c_anc)]
            psi[k, s, s + 1] -= b_child / m_child
            if c_anc != anc:
                ratio = float(system[anc].values[child.cell_slices(depth)].mean()) / m_child
                psi[k, s, 0] -= (ratio * b_child - b_anc) / m_anc
    return psi


def _child_positions(martingale):
    """For every (R, child S): row of S among the non-leaf cubes, or −1 for leaves."""
    out = np.full((len(martingale.cubes), 2 ** martingale.dim), -1, dtype=int)
    for k, cube in enumerate(martingale.cubes):
        for s, child in enumerate(cube.children()):
            out[k, s] = martingale.index.get(child, -1)
    return out


def subtree_sums(martingale, pieces):
    """Σ_{Q ⊆ S} pieces[Q] for every non-leaf S (bottom-up over the levels)."""
    sums = pieces.copy()
    positions = _child_positions(martingale)
    for k in range(len(martingale.cubes) - 1, -1, -1):
        for row in positions[k]:
            if row >= 0:
                sums[k] += sums[row]
    return sums


# ── Nested split ──────────────────────────────────────────────
def nested_split(op, f, g, system1, system2, martingale1=None, martingale2=None):
    """
    Σ_R Σ_{Q⊊R} ⟨T𝔻_Q f, 𝔻_R g⟩ = paraproduct + remainder with

        paraproduct = Σ_{Q≠Q⁰} ⟨T𝔻_Q f, b²_{Q^a}⟩ ⟨g⟩_Q / ⟨b²_{Q^a}⟩_Q
        remainder   = Σ_R Σ_{S child} Σ_j ⟨T𝔻_S^{·} f, 1_{S^c} ψ_{R,j;S}⟩ ⟨𝔻_{R,j} g⟩_{R_j}

    where 𝔻_S^{·} f sums 𝔻_Q f over every Q ⊆ S.
    """
    m1 = martingale1 or AdaptedMartingale(system1)
    m2 = martingale2 or AdaptedMartingale(system2)
    if m1.cubes != m2.cubes:
        raise DimensionMismatchError("systems live on different grids")
    h = 1.0 / m1.n_cells

    pieces1 = m1.differences(f)[0]
    tpieces = op.apply_batch(pieces1) if len(pieces1) else pieces1
    pieces2 = decompose(g, system2, m2).redefined_pieces()

    # direct nested sum from the pairing matrix
    pairings = tpieces @ pieces2.T * h
    k, m = _relative_position(m1.cubes, m2.cubes)
    nested_direct = float(pairings[(k > 0) & np.all(m == 0, axis=-1)].sum())

    # paraproduct
    paraproduct = 0.0
    for q, cube in enumerate(m1.cubes):
        if cube.level == 0:
            continue
        anc = system2.ancestor(cube)
        b = system2[anc]
        mean_b = m2.denominators[(cube, anc)]
        paraproduct += float(tpieces[q] @ b.flat) * h * g.average(cube) / mean_b

    # remainder via ψ
    psi = psi_functions(m2)
    coeffs = m2.coefficients(g)[0]
    outside = 1.0 - m2.child_masks
    y = np.einsum("qsjn,qj->qsn", psi, coeffs) * outside
    u = op.apply_batch(subtree_sums(m1, pieces1)) if len(pieces1) else pieces1
    positions = _child_positions(m1)
    remainder = 0.0
    for r in range(len(m2.cubes)):
        for s, row in enumerate(positions[r]):
            if row >= 0:
                remainder += float(u[row] @ y[r, s]) * h

    scale = max(abs(nested_direct), abs(paraproduct), abs(remainder), 1e-300)
    residual = abs(nested_direct - paraproduct - remainder) / scale
    return {
        "status": PASS if residual <= RESUM_TOL else FAIL,
        "nested_direct": nested_direct,
        "paraproduct_sum": paraproduct,
        "remainder_sum": remainder,
        "residual": residual,
        "psi_sup": float(np.abs(psi).max()) if psi.size else 0.0,
        "psi": psi,
    }


def telescoping_check(system2, g, cube, martingale2=None):
    """
    Σ_{R⊋Q} X_R(R_Q) = b_{Q^a}⟨g⟩_Q/⟨b_{Q^a}⟩_Q for the first nested summand

        X_R(S) = 𝔻_R g − Σ_j ψ_{R,j;S}⟨𝔻_{R,j} g⟩_{R_j}

    (with the redefined top piece for R = Q⁰), summed along the chain of
    strict ancestors of Q.
    """
    if cube.level == 0:
        raise ConfigError("telescoping needs a cube strictly inside the top cube")
    mart = martingale2 or AdaptedMartingale(system2)
    if cube.level >= mart.depth + 1:
        raise ConfigError(f"cube {cube.key()} is below depth {mart.depth}")
    pieces = decompose(g, system2, mart).redefined_pieces()
    coeffs = mart.coefficients(g)[0]
    psi = psi_functions(mart)

    total = np.zeros(g.n_cells)
    for level in range(cube.level):
        r = mart.index[cube.ancestor(level)]
        s = cube.ancestor(level + 1)
        child = mart.cubes[r].children().index(s)
        total += pieces[r] - psi[r, child].T @ coeffs[r]
    anc = system2.ancestor(cube)
    target = system2[anc].flat * g.average(cube) / system2[anc].average(cube)
    scale = max(1.0, float(np.abs(target).max()))
    residual = float(np.abs(total - target).max()) / scale
    return {"status": PASS if residual <= IDENTITY_TOL else FAIL, "residual": residual, "chain_length": cube.level}


# ── Pairing decomposition ─────────────────────────────────────
@dataclass(eq=False)
class PairingDecomposition:
    total: float
    direct: float
    parts: dict
    disjoint_by_km: dict
    transposed_by_km: dict
    psi_sup: float
    nested_checks: dict = field(default_factory=dict)

    @property
    def resummation_residual(self):
        scale = max(abs(self.direct), 1e-300)
        return abs(sum(self.parts.values()) - self.direct) / scale

    def rows(self):
        """(part, k, m, contribution) rows, (k, m) only for disjoint parts."""
        out = []
        for name, value in self.parts.items():
            out.append({"part": name, "k": "", "m": "", "contribution": value})
        for label, table in (("disjoint", self.disjoint_by_km), ("transposed_disjoint", self.transposed_by_km)):
            for (k, m), value in sorted(table.items()):
                out.append({"part": label, "k": k, "m": " ".join(str(v) for v in m), "contribution": value})
        return out

    def summary(self):
        return {
            "status": PASS if self.resummation_residual <= RESUM_TOL else FAIL,
            "total": self.total,
            "direct": self.direct,
            "resummation_residual": self.resummation_residual,
            "parts": dict(self.parts),
            "psi_sup": self.psi_sup,
            "nested": {k: {kk: vv for kk, vv in v.items() if kk != "psi"} for k, v in self.nested_checks.items()},
        }


def decompose_pairing(op, f, g, system1, system2):
    """
    ⟨Tf, g⟩ split into disjoint / nested paraproduct / nested remainder
    / diagonal over ℓ(Q) ≤ ℓ(R), plus the ℓ(Q) > ℓ(R) half obtained by
    running the same split on (T*, g, f).
    """
    if f.dim != system1.dim or g.dim != system2.dim or system1.depth != system2.depth:
        raise DimensionMismatchError("functions and systems live on different grids")
    m1, m2 = AdaptedMartingale(system1), AdaptedMartingale(system2)
    h = f.cell_volume
    d1 = decompose(f, system1, m1).redefined_pieces()
    d2 = decompose(g, system2, m2).redefined_pieces()
    pairings = op.apply_batch(d1) @ d2.T * h
    direct = float(op.apply_batch(f.flat)[0] @ g.flat) * h

    first = _split_half(pairings, m1.cubes, m2.cubes, strict=False)
    second = _split_half(pairings.T, m2.cubes, m1.cubes, strict=True)
    adjoint = op.adjoint()
    nested_first = nested_split(op, f, g, system1, system2, m1, m2)
    nested_second = nested_split(adjoint, g, f, system2, system1, m2, m1)

    parts = {
        "diagonal": first["diagonal"],
        "disjoint": first["disjoint"],
        "nested_paraproduct": nested_first["paraproduct_sum"],
        "nested_remainder": nested_first["remainder_sum"],
        "transposed_disjoint": second["disjoint"],
        "transposed_paraproduct": nested_second["paraproduct_sum"],
        "transposed_remainder": nested_second["remainder_sum"],
    }
    logger.debug("pairing: direct=%.6g parts=%s", direct, parts)
    return PairingDecomposition(
        total=float(pairings.sum()),
        direct=direct,
        parts=parts,
        disjoint_by_km=first["by_km"],
        transposed_by_km=second["by_km"],
        psi_sup=max(nested_first["psi_sup"], nested_second["psi_sup"]),
        nested_checks={"first": nested_first, "transposed": nested_second},
    )


def save_parts_csv(decomposition, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["part", "k", "m", "contribution"])
        writer.writeheader()
        for row in decomposition.rows():
            writer.writerow(row)
    return path


# ── Coefficient kernels ───────────────────────────────────────
def _slope(xs, ys):
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    keep = ys > 0
    if keep.sum() < 2:
        return None
    return float(-np.polyfit(xs[keep], np.log2(ys[keep]), 1)[0])


def coefficient_kernel_norms(op, system1, system2, k_max=K_MAX, m_max=M_MAX):
    """
    L² norms of the coefficient kernels

        K^{i,j;k}_{R,S}(x,y) = Σ_{Q⊆S, ℓ(Q)=2^{-k}ℓ(S)} 1_{Q_i}(y)/|Q_i| ⟨Tφ¹_{Q,i}, φ²_{R,j}⟩ 1_{R_j}(x)/|R_j|

    for S = R + ℓ(R)m, 0 < |m|_∞ ≤ m_max, k ≤ k_max, and of the nested
    remainder kernels K̃ built with 1_{S^c}ψ_{R,j;S} for S a child of R.
    ‖K‖² = Σ_Q c²/(|Q_i||R_j|) with |Q_0| = |Q|.

    Fits the decay 2^{-k·slope} at |m|_∞ = 1 and |m|^{-slope} at k = 0.
    """
    m1, m2 = AdaptedMartingale(system1), AdaptedMartingale(system2)
    if k_max > m1.depth:
        raise ConfigError(f"k_max = {k_max} exceeds the depth {m1.depth}")
    dim = m1.dim
    nc, nj = len(m1.cubes), 2 ** dim + 1
    h = 1.0 / m1.n_cells
    tphi = op.apply_batch(m1.phi.reshape(nc * nj, -1))
    coeff = (tphi @ m2.phi.reshape(nc * nj, -1).T * h).reshape(nc, nj, nc, nj)

    def vol(cube, i):
        return cube.volume if i == 0 else cube.volume / 2 ** dim

    inv_vol1 = np.array([[1.0 / vol(q, i) for i in range(nj)] for q in m1.cubes])
    inv_vol2 = np.array([[1.0 / vol(r, j) for j in range(nj)] for r in m2.cubes])
    k_rel, m_rel = _relative_position(m1.cubes, m2.cubes)
    m_inf = np.abs(m_rel).max(axis=-1)

    norms = {}
    for r, cube in enumerate(m2.cubes):
        for k in range(0, k_max + 1):
            if cube.level + k >= m1.depth:
                break
            for ring in range(1, m_max + 1):
                rows = np.nonzero((k_rel[:, r] == k) & (m_inf[:, r] == ring))[0]
                if rows.size == 0:
                    continue
                ms = m_rel[rows, r]
                for m in {tuple(v) for v in ms}:
                    sel = rows[np.all(ms == np.array(m), axis=1)]
                    c2 = coeff[sel, :, r, :] ** 2 * inv_vol1[sel][:, :, None] * inv_vol2[r][None, None, :]
                    value = float(np.sqrt(c2.sum(axis=0)).max())
                    key = (k, m)
                    norms[key] = max(norms.get(key, 0.0), value)

    by_k = {k: max((v for (kk, m), v in norms.items() if kk == k and max(abs(x) for x in m) == 1), default=0.0)
            for k in range(k_max + 1)}
    by_ring = {ring: max((v for (kk, m), v in norms.items() if kk == 0 and max(abs(x) for x in m) == ring),
                         default=0.0) for ring in range(1, m_max + 1)}
    k_slope = _slope(list(by_k), list(by_k.values()))
    m_slope = _slope(np.log2(list(by_ring)), list(by_ring.values()))

    tilde = _remainder_kernel_norms(m1, m2, tphi.reshape(nc, nj, -1), k_max, inv_vol1, inv_vol2)
    tilde_slope = _slope(list(tilde), list(tilde.values()))

    alpha = op.kernel.alpha
    k_ok = k_slope is None or (alpha + K_SLOPE_BAND[0] <= k_slope <= K_SLOPE_BAND[1])
    m_ok = m_slope is None or m_slope >= dim + alpha - M_SLOPE_MARGIN
    zero = all(v == 0.0 for v in norms.values())
    return {
        "status": PASS if zero or (k_ok and m_ok) else FAIL,
        "norms": {f"k={k},m={','.join(map(str, m))}": v for (k, m), v in sorted(norms.items())},
        "by_k": by_k,
        "by_ring": by_ring,
        "k_slope": k_slope,
        "m_slope": m_slope,
        "remainder_by_k": tilde,
        "remainder_k_slope": tilde_slope,
    }


def _remainder_kernel_norms(m1, m2, tphi, k_max, inv_vol1, inv_vol2):
    """max over R, S child, i, j of ‖K̃^{i,j;k}_{R,S}‖, per k."""
    psi = psi_functions(m2) * (1.0 - m2.child_masks)[:, :, None, :]
    h = 1.0 / m1.n_cells
    out = {k: 0.0 for k in range(k_max + 1)}
    for r, cube in enumerate(m2.cubes):
        for s, child in enumerate(cube.children()):
            for k in range(k_max + 1):
                level = child.level + k
                if level >= m1.depth:
                    break
                rows = [m1.index[q] for q in iter_cubes(m1.dim, level, top=child) if q.level == level]
                c = np.einsum("qin,jn->qij", tphi[rows], psi[r, s]) * h
                c2 = c ** 2 * inv_vol1[rows][:, :, None] * inv_vol2[r][None, None, :]
                out[k] = max(out[k], float(np.sqrt(c2.sum(axis=0)).max()))
    return out


# ── Weak boundedness ──────────────────────────────────────────
WBP_MODES = ("antisymmetric", "special_offdiag", "all_cubes")


def _hardy_weights(dim, depth):
    """W[i,j] = |cell| / |c_i − c_j|^d off the diagonal."""
    centers = cell_centers(dim, depth)
    dist2 = np.zeros((centers.shape[0],) * 2)
    for a in range(dim):
        dist2 += (centers[:, a, None] - centers[None, :, a]) ** 2
    with np.errstate(divide="ignore"):
        w = np.where(dist2 > 0, dist2 ** (-dim / 2.0), 0.0)
    return w * 2.0 ** (-dim * depth)


def diagonal_hardy_check(op, system1, system2):
    """
    Sibling terms ⟨T(1_{R_i} b¹_R), 1_{R_j} b²_R⟩, i ≠ j, against hardy_check.

    R_j sits in 3R_i∖R_i, so each term is at most
    size_const·‖1_{R_j} b²_R‖₂·lhs^{1/2} with lhs from hardy_check(1_{R_i} b¹_R, R_i, 2).

    Returns:
        {"status", "worst_term", "worst_domination", "hardy_constant", "pairs"}
    """
    dim, depth = system1.dim, system1.depth
    h = 2.0 ** (-dim * depth)
    parents = list(iter_cubes(dim, depth - 1))
    rows, sources, targets = [], [], []
    for cube in parents:
        b1, b2 = system1.adapted(cube).flat, system2.adapted(cube).flat
        for child in cube.children():
            mask = cube_mask(child, dim, depth).reshape(-1)
            rows.append(child)
            sources.append(b1 * mask)
            targets.append(b2 * mask)
    sources, targets = np.stack(sources), np.stack(targets)
    t = op.apply_batch(sources)
    k = 2 ** dim

    worst_term = worst_domination = constant = 0.0
    pairs = 0
    for start in range(0, len(rows), k):
        for i in range(start, start + k):
            hardy = hardy_check(GridFunction.from_flat(sources[i], dim, depth), rows[i], 2.0)
            constant = max(constant, hardy["ratio"])
            for j in range(start, start + k):
                if i == j:
                    continue
                term = abs(float((t[i] * targets[j]).sum() * h))
                bound = op.kernel.size_const * np.sqrt((targets[j] ** 2).sum() * h) * np.sqrt(hardy["lhs"])
                worst_term = max(worst_term, term)
                if term > 0:
                    worst_domination = max(worst_domination, term / bound if bound > 0 else np.inf)
                pairs += 1
    return {
        "status": PASS if worst_domination <= 1 + 1e-9 else FAIL,
        "worst_term": worst_term,
        "worst_domination": worst_domination,
        "hardy_constant": constant,
        "pairs": pairs,
    }


def wbp_check(op, system1, system2, mode):
    """
    |⟨T(1_Q b¹_{Q^{a,1}}), 1_Q b²_{Q^{a,2}}⟩| / |Q| over every dyadic Q.

    antisymmetric:   needs an antisymmetric kernel and one system; each
                     pairing must vanish to rounding
    special_offdiag: also reports the chain terms ⨍_Q|Tb¹|·‖b²‖_∞,
                     the annulus term, ⨍_Q|T(1_{(3Q)^c}b¹)|·‖b²‖_∞
    all_cubes:       systems on every cube; adds sup_Q |T(1_{(3Q)^c}b¹_Q)|

    Whenever the kernel is antisymmetric and both systems are the same
    object the pairing cancels exactly, so `cancels` is set and every
    pairing must vanish relative to ‖Tφ¹‖₂‖φ²‖₂. The annulus term is
    bounded per cube by size_const·‖1_A b¹‖₂·‖1_A H|φ²|‖₂ with
    H g(y) = ∫_Q |g(x)|/|x−y|^d dx, A = 3Q∖Q, and the sibling terms are
    checked against hardy_check by diagonal_hardy_check.
    """
    if mode not in WBP_MODES:
        raise ConfigError(f"unknown weak boundedness mode {mode!r}")
    cancels = bool(op.kernel.antisymmetric and system1 is system2)
    if mode == "antisymmetric" and not cancels:
        raise ModeMismatchError("antisymmetric mode needs an antisymmetric kernel and a single system")
    if mode == "all_cubes" and (system1.is_sparse or system2.is_sparse):
        raise ModeMismatchError("all_cubes mode needs accretive systems on every dyadic cube")
    dim, depth = system1.dim, system1.depth
    cubes = list(iter_cubes(dim, depth))
    h = 2.0 ** (-dim * depth)
    masks = np.stack([cube_mask(q, dim, depth).reshape(-1) for q in cubes])
    b1 = np.stack([system1.adapted(q).flat for q in cubes])
    b2 = np.stack([system2.adapted(q).flat for q in cubes])
    phi1, phi2 = b1 * masks, b2 * masks
    tphi = op.apply_batch(phi1)
    volumes = np.array([q.volume for q in cubes])
    pairings = (tphi * phi2).sum(axis=1) * h
    ratios = np.abs(pairings) / volumes

    def l2(batch):
        return np.sqrt((batch ** 2).sum(axis=1) * h)

    phi2_norm = l2(phi2)
    relative = np.abs(pairings) / np.maximum(l2(tphi) * phi2_norm, 1e-300)
    result = {
        "mode": mode,
        "cubes": len(cubes),
        "cancels": cancels,
        "worst_ratio": float(ratios.max()),
        "worst_relative": float(relative.max()),
    }
    cancelled = not cancels or result["worst_relative"] <= IDENTITY_TOL

    if mode == "antisymmetric":
        result["status"] = PASS if cancelled else FAIL
        return result

    triples = np.stack([triple_mask(q, dim, depth).reshape(-1) for q in cubes])
    annulus = triples & ~masks.astype(bool)
    far = ~triples
    t_full = op.apply_batch(b1)
    t_annulus = op.apply_batch(b1 * annulus)
    t_far = op.apply_batch(b1 * far)
    sup2 = np.abs(phi2).max(axis=1)
    counts = masks.sum(axis=1)
    testing = (np.abs(t_full) * masks).sum(axis=1) / counts * sup2
    offdiag = (np.abs(t_far) * masks).sum(axis=1) / counts * sup2
    annulus_pair = np.abs((t_annulus * phi2).sum(axis=1) * h) / volumes

    hardy = (np.abs(phi2) @ _hardy_weights(dim, depth).T) * annulus
    hardy_norm = l2(hardy)
    hardy_bound = op.kernel.size_const * l2(b1 * annulus) * hardy_norm / volumes
    hardy_constant = hardy_norm ** 2 / np.maximum(phi2_norm ** 2, 1e-300)
    siblings = diagonal_hardy_check(op, system1, system2)
    dominated = bool(np.all(annulus_pair <= hardy_bound * (1 + 1e-9) + 1e-300)) and siblings["status"] == PASS

    pieces = ((t_full - t_annulus - t_far) * phi2).sum(axis=1) * h
    scale = (l2(t_full * masks) + l2(t_annulus * masks) + l2(t_far * masks) + l2(tphi * masks)) * phi2_norm
    linearity = float((np.abs(pieces - pairings) / np.maximum(scale, 1e-300)).max())
    result.update({
        "worst_testing": float(testing.max()),
        "worst_annulus": float(annulus_pair.max()),
        "worst_hardy_bound": float(hardy_bound.max()),
        "hardy_constant": float(hardy_constant.max()),
        "sibling_domination": siblings["worst_domination"],
        "sibling_hardy_constant": siblings["hardy_constant"],
        "hardy_dominates": dominated,
        "worst_offdiag": float(offdiag.max()),
        "linearity_residual": linearity,
    })
    ok = np.isfinite(result["worst_ratio"]) and linearity <= RESUM_TOL and dominated and cancelled
    if mode == "all_cubes":
        result["offdiag_sup"] = float((np.abs(t_far) * masks).max())
    result["status"] = PASS if ok else FAIL
    return result


# ── Baby Tb ───────────────────────────────────────────────────
def _lacunary(rng, dim, depth, count):
    """Σ_j c_j cos(2π 2^j x_a) along a random axis, j < N."""
    centers = cell_centers(dim, depth)
    out = np.empty((count, centers.shape[0]))
    for n in range(count):
        axis = int(rng.integers(0, dim))
        c = rng.standard_normal(depth)
        out[n] = sum(c[j] * np.cos(2 * np.pi * 2 ** j * centers[:, axis]) for j in range(depth))
    return out


def _normalize(batch, s, h):
    norms = ((np.abs(batch) ** s).sum(axis=1) * h) ** (1.0 / s)
    return batch / np.where(norms > 0, norms, 1.0)[:, None]


def baby_tb_bound(op, system1, system2, s_prime=BABY_TB_S_PRIME, samples=BABY_TB_SAMPLES, seed=0,
                  sample_depth=None):
    """
    max |⟨Tf, g⟩| / (‖f‖_{s′}‖g‖_{s′}|Q⁰|^{1−2/s′}) over seeded samples.

    Samples: mean-zero white noise pairs, lacunary comb pairs and the
    pair (b¹_{Q⁰}, b²_{Q⁰}). Noise and combs are drawn on the grid of
    `sample_depth` (default: the operator depth) and refined, so runs
    at two depths pair the same functions.

    The systems are taken as validated and weakly bounded; callers run
    accretive.validate and wbp_check first.
    """
    t = min(system1.p, system1.u, system2.p, system2.u)
    needed = max(conjugate(t), 2.0)
    if not s_prime > needed:
        raise ConfigError(f"s' = {s_prime} must exceed max(t', 2) = {needed}")
    dim, depth = system1.dim, system1.depth
    coarse = depth if sample_depth is None else sample_depth
    if not 1 <= coarse <= depth:
        raise ConfigError(f"sample depth {coarse} must lie in [1, {depth}]")
    h = 2.0 ** (-dim * depth)
    rng = np.random.default_rng(seed)

    noise = rng.standard_normal((2 * samples, 2 ** (dim * coarse)))
    noise -= noise.mean(axis=1, keepdims=True)
    noise = refine_batch(noise, dim, coarse, depth)
    combs = refine_batch(_lacunary(rng, dim, coarse, 2 * samples), dim, coarse, depth)
    root = DyadicCube.root(dim)
    families = {
        "white_noise": (noise[:samples], noise[samples:]),
        "lacunary": (combs[:samples], combs[samples:]),
        "top_test_functions": (system1[root].flat[None, :], system2[root].flat[None, :]),
    }
    worst = {}
    for name, (f, g) in families.items():
        f, g = _normalize(f, s_prime, h), _normalize(g, s_prime, h)
        pairings = (op.apply_batch(f) * g).sum(axis=1) * h
        worst[name] = float(np.abs(pairings).max())
    value = max(worst.values())
    return {
        "status": PASS if np.isfinite(value) else FAIL,
        "s_prime": s_prime,
        "worst_normalized_pairing": value,
        "by_family": worst,
        "samples": samples,
    }
