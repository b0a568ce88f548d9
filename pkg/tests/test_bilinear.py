# ─────────────────────────────────────────────────────────────
# tests/test_bilinear.py
# Local Tb Verification Harness — Bilinear form tests
#
# Run:  python -m pytest tests/test_bilinear.py -v
# ─────────────────────────────────────────────────────────────

import csv
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from src.accretive import make_indicator_system, make_rough_system, restrict_to_sparse
from src.dyadic import DyadicCube, GridFunction, cube_mask, hardy_check, triple_mask
from src.errors import ConfigError, DimensionMismatchError, ModeMismatchError
from src.kernels import make_kernel
from src.martingale import AdaptedMartingale, decompose
from src.operators import DiscreteOperator
from src.bilinear import (
    WBP_MODES,
    _hardy_weights,
    baby_tb_bound,
    coefficient_kernel_norms,
    decompose_pairing,
    diagonal_hardy_check,
    nested_split,
    save_parts_csv,
    telescoping_check,
    wbp_check,
)

ROOT = DyadicCube.root(1)


def _random(dim, depth, seed=0):
    return GridFunction(np.random.default_rng(seed).standard_normal((2 ** depth,) * dim))


def _sparse_rough(depth=4, seed=1):
    base = make_rough_system(1, depth, p=1.5, roughness=2.0, seed=seed)
    return restrict_to_sparse(base, [ROOT, DyadicCube(2, (1,))], 0.5)


def _regroup_by_containment(op, f, g, system1, system2):
    """Double loop over (Q, R) pairs of ⟨T𝔻_Q f, 𝔻_R g⟩ sorted into the four groups."""
    m1, m2 = AdaptedMartingale(system1), AdaptedMartingale(system2)
    d1 = decompose(f, system1, m1).redefined_pieces()
    d2 = decompose(g, system2, m2).redefined_pieces()
    td1 = op.apply_batch(d1)
    h = f.cell_volume
    groups = {"diagonal": 0.0, "disjoint": 0.0, "nested": 0.0, "transposed_disjoint": 0.0,
              "transposed_nested": 0.0}
    for a, q in enumerate(m1.cubes):
        for b, r in enumerate(m2.cubes):
            value = float(td1[a] @ d2[b]) * h
            if q == r:
                groups["diagonal"] += value
            elif q.level >= r.level:
                groups["nested" if r.contains(q) else "disjoint"] += value
            else:
                groups["transposed_nested" if q.contains(r) else "transposed_disjoint"] += value
    return groups


# ── Pairing decomposition ─────────────────────────────────────
class TestDecomposePairing:
    @pytest.mark.parametrize("name,dim,depth", [("hilbert", 1, 4), ("cauchy_lipschitz", 1, 4), ("riesz_1", 2, 2)])
    def test_resums_to_direct_pairing(self, name, dim, depth):
        op = DiscreteOperator(make_kernel(name, dim), depth)
        system = make_indicator_system(dim, depth)
        dec = decompose_pairing(op, _random(dim, depth, 1), _random(dim, depth, 2), system, system)
        assert dec.resummation_residual <= 1e-8
        assert dec.summary()["status"] == "PASS"

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_brute_force_regrouping(self, seed):
        op = DiscreteOperator(make_kernel("hilbert", 1), 4)
        system1, system2 = _sparse_rough(seed=seed), make_indicator_system(1, 4)
        f, g = _random(1, 4, 10 + seed), _random(1, 4, 20 + seed)
        dec = decompose_pairing(op, f, g, system1, system2)
        oracle = _regroup_by_containment(op, f, g, system1, system2)
        scale = max(abs(v) for v in oracle.values())
        parts = dec.parts
        assert parts["diagonal"] == pytest.approx(oracle["diagonal"], abs=1e-9 * scale)
        assert parts["disjoint"] == pytest.approx(oracle["disjoint"], abs=1e-9 * scale)
        assert parts["nested_paraproduct"] + parts["nested_remainder"] == pytest.approx(
            oracle["nested"], abs=1e-8 * scale)
        assert parts["transposed_disjoint"] == pytest.approx(oracle["transposed_disjoint"], abs=1e-9 * scale)
        assert parts["transposed_paraproduct"] + parts["transposed_remainder"] == pytest.approx(
            oracle["transposed_nested"], abs=1e-8 * scale)

    def test_disjoint_table_sums_to_part(self):
        op = DiscreteOperator(make_kernel("hilbert", 1), 4)
        system = make_indicator_system(1, 4)
        dec = decompose_pairing(op, _random(1, 4, 3), _random(1, 4, 4), system, system)
        assert sum(dec.disjoint_by_km.values()) == pytest.approx(dec.parts["disjoint"])
        assert all(k >= 0 and any(m) for k, m in dec.disjoint_by_km)

    def test_grid_mismatch(self):
        op = DiscreteOperator(make_kernel("hilbert", 1), 3)
        with pytest.raises(DimensionMismatchError):
            decompose_pairing(op, _random(1, 3), _random(1, 3), make_indicator_system(1, 3),
                              make_indicator_system(1, 4))

    def test_parts_csv(self, tmp_path):
        op = DiscreteOperator(make_kernel("hilbert", 1), 3)
        system = make_indicator_system(1, 3)
        dec = decompose_pairing(op, _random(1, 3, 5), _random(1, 3, 6), system, system)
        path = save_parts_csv(dec, str(tmp_path / "parts.csv"))
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == len(dec.parts) + len(dec.disjoint_by_km) + len(dec.transposed_by_km)
        assert rows[0]["part"] == "diagonal"


# ── Nested split ──────────────────────────────────────────────
class TestNestedSplit:
    @pytest.mark.parametrize("seed", [0, 3])
    def test_paraproduct_plus_remainder(self, seed):
        op = DiscreteOperator(make_kernel("hilbert", 1), 4)
        system = _sparse_rough(seed=seed)
        result = nested_split(op, _random(1, 4, seed), _random(1, 4, seed + 1), system, system)
        assert result["status"] == "PASS"
        assert result["residual"] <= 1e-8

    @pytest.mark.parametrize("cube", [DyadicCube(1, (1,)), DyadicCube(2, (1,)), DyadicCube(3, (2,))])
    def test_telescoping(self, cube):
        result = telescoping_check(_sparse_rough(), _random(1, 4, 7), cube)
        assert result["status"] == "PASS"
        assert result["chain_length"] == cube.level

    def test_telescoping_needs_strict_subcube(self):
        with pytest.raises(ConfigError):
            telescoping_check(make_indicator_system(1, 3), _random(1, 3), ROOT)


# ── Coefficient kernels ───────────────────────────────────────
class TestCoefficientKernels:
    def test_zero_kernel(self):
        op = DiscreteOperator(make_kernel("zero", 1), 4)
        system = make_indicator_system(1, 4)
        result = coefficient_kernel_norms(op, system, system, k_max=2, m_max=2)
        assert result["status"] == "PASS"
        assert all(v == 0.0 for v in result["norms"].values())

    def test_hilbert_norms_decay_in_m(self):
        op = DiscreteOperator(make_kernel("hilbert", 1), 5)
        system = make_indicator_system(1, 5)
        result = coefficient_kernel_norms(op, system, system, k_max=3, m_max=3)
        assert result["by_ring"][3] < result["by_ring"][1]
        assert set(result["remainder_by_k"]) == {0, 1, 2, 3}

    def test_k_max_bounded_by_depth(self):
        op = DiscreteOperator(make_kernel("hilbert", 1), 3)
        system = make_indicator_system(1, 3)
        with pytest.raises(ConfigError):
            coefficient_kernel_norms(op, system, system, k_max=4)


# ── Weak boundedness ──────────────────────────────────────────
class TestWeakBoundedness:
    def test_antisymmetric_cancellation(self):
        op = DiscreteOperator(make_kernel("hilbert", 1), 4)
        system = _sparse_rough()
        assert wbp_check(op, system, system, "antisymmetric")["status"] == "PASS"

    def test_antisymmetric_needs_one_system(self):
        op = DiscreteOperator(make_kernel("hilbert", 1), 3)
        with pytest.raises(ModeMismatchError):
            wbp_check(op, make_indicator_system(1, 3), make_indicator_system(1, 3), "antisymmetric")

    @pytest.mark.parametrize("mode", ["special_offdiag", "all_cubes"])
    def test_pieces_add_up(self, mode):
        op = DiscreteOperator(make_kernel("hilbert", 1), 4)
        system = make_rough_system(1, 4, roughness=2.0, seed=2)
        result = wbp_check(op, system, system, mode)
        assert result["status"] == "PASS"
        assert result["linearity_residual"] <= 1e-8
        assert ("offdiag_sup" in result) == (mode == "all_cubes")

    def test_shared_system_cancels_in_every_mode(self):
        op = DiscreteOperator(make_kernel("hilbert", 1), 5)
        system = make_rough_system(1, 5, roughness=4.0, seed=0)
        for mode in WBP_MODES:
            result = wbp_check(op, system, system, mode)
            assert result["cancels"]
            assert result["worst_relative"] <= 1e-10
            assert result["status"] == "PASS"

    def test_distinct_systems_report_chain_terms(self):
        op = DiscreteOperator(make_kernel("riesz_1", 2), 3)
        system1 = make_rough_system(2, 3, roughness=4.0, seed=1)
        system2 = make_rough_system(2, 3, roughness=4.0, seed=2)
        result = wbp_check(op, system1, system2, "special_offdiag")
        assert not result["cancels"]
        assert result["status"] == "PASS"
        assert result["linearity_residual"] <= 1e-8
        assert result["hardy_dominates"]
        assert 0 < result["worst_annulus"] <= result["worst_hardy_bound"] * (1 + 1e-9)
        assert 0 < result["hardy_constant"] < np.inf

    def test_annulus_weights_match_hardy_check(self):
        # 3Q stays inside Q⁰, so both sums run over the same annulus
        depth = 5
        cube = DyadicCube(2, (1,))
        g = _random(1, depth, 4).restrict(cube)
        annulus = triple_mask(cube, 1, depth) & ~cube_mask(cube, 1, depth)
        values = (np.abs(g.flat) @ _hardy_weights(1, depth).T) * annulus.reshape(-1)
        lhs = float((values ** 2).sum() * g.cell_volume)
        assert lhs == pytest.approx(hardy_check(g, cube, 2.0)["lhs"], rel=1e-9)

    def test_sibling_terms_dominated_by_hardy(self):
        op = DiscreteOperator(make_kernel("cauchy_lipschitz", 1), 5)
        system = make_rough_system(1, 5, roughness=4.0, seed=3)
        result = diagonal_hardy_check(op, system, system)
        assert result["status"] == "PASS"
        assert result["pairs"] == 31 * 2
        assert 0 < result["worst_domination"] <= 1 + 1e-9
        assert 0 < result["hardy_constant"] < np.inf

    def test_sibling_terms_of_zero_kernel(self):
        system = make_indicator_system(2, 3)
        result = diagonal_hardy_check(DiscreteOperator(make_kernel("zero", 2), 3), system, system)
        assert result["worst_term"] == 0.0
        assert result["status"] == "PASS"
        assert result["pairs"] == 21 * 12

    def test_all_cubes_rejects_sparse(self):
        op = DiscreteOperator(make_kernel("hilbert", 1), 4)
        system = _sparse_rough()
        with pytest.raises(ModeMismatchError):
            wbp_check(op, system, system, "all_cubes")

    def test_unknown_mode(self):
        system = make_indicator_system(1, 3)
        with pytest.raises(ConfigError):
            wbp_check(DiscreteOperator(make_kernel("hilbert", 1), 3), system, system, "sideways")


# ── Baby Tb ───────────────────────────────────────────────────
class TestBabyTb:
    def test_bound_is_finite(self):
        op = DiscreteOperator(make_kernel("hilbert", 1), 5)
        system = make_indicator_system(1, 5)
        result = baby_tb_bound(op, system, system, s_prime=4.0, samples=8, seed=1)
        assert result["status"] == "PASS"
        assert set(result["by_family"]) == {"white_noise", "lacunary", "top_test_functions"}

    def test_top_pair_vanishes_for_antisymmetric_kernel(self):
        op = DiscreteOperator(make_kernel("hilbert", 1), 5)
        system = make_indicator_system(1, 5)
        result = baby_tb_bound(op, system, system, samples=4)
        assert result["by_family"]["top_test_functions"] <= 1e-12

    def test_default_sample_depth_is_operator_depth(self):
        op = DiscreteOperator(make_kernel("hilbert", 1), 5)
        system = make_indicator_system(1, 5)
        default = baby_tb_bound(op, system, system, samples=4, seed=2)
        assert baby_tb_bound(op, system, system, samples=4, seed=2, sample_depth=5) == default

    def test_coarse_samples_are_stable_under_refinement(self):
        results = []
        for depth in (5, 6):
            op = DiscreteOperator(make_kernel("hilbert", 1), depth)
            system = make_indicator_system(1, depth)
            results.append(baby_tb_bound(op, system, system, samples=8, seed=3, sample_depth=3))
        for family in ("white_noise", "lacunary"):
            coarse, fine = results[0]["by_family"][family], results[1]["by_family"][family]
            assert abs(coarse - fine) <= 0.25 * max(coarse, fine)

    def test_sample_depth_out_of_range(self):
        system = make_indicator_system(1, 3)
        with pytest.raises(ConfigError):
            baby_tb_bound(DiscreteOperator(make_kernel("hilbert", 1), 3), system, system, sample_depth=4)

    def test_exponent_too_small(self):
        system = make_indicator_system(1, 3)
        with pytest.raises(ConfigError):
            baby_tb_bound(DiscreteOperator(make_kernel("hilbert", 1), 3), system, system, s_prime=2.5)
