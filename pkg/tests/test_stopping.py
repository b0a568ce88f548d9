# ─────────────────────────────────────────────────────────────
# tests/test_stopping.py
# Local Tb Verification Harness — Stopping construction tests
#
# Run:  python -m pytest tests/test_stopping.py -v
# ─────────────────────────────────────────────────────────────

import dataclasses
import json
import os
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from src.accretive import AccretiveSystem, make_indicator_system, restrict_to_sparse
from src.dyadic import DyadicCube, GridFunction, block_mean, maximal_cubes
from src.errors import ConfigError, ModeMismatchError, NoSparsenessMarginError, SupportError
from src.kernels import make_kernel
from src.operators import DiscreteOperator
from src.stopping import (
    StoppingParameters,
    calibrate_c_sigma,
    cz_decompose,
    error_envelope_norm,
    iterate_forest,
    offdiag_levels,
    offdiag_verify,
    save_forest,
    stopping_parameters,
    suppressed_testfn_verify,
    tb_stopping_cubes,
)

DEPTH = 5
ROOT = DyadicCube.root(1)


def _spiky_system():
    """Indicator system whose top function has one bad cube at threshold 32."""
    base = make_indicator_system(1, DEPTH)
    values = np.ones(2 ** DEPTH)
    values[0], values[1] = 16.0, -14.0
    functions = dict(base.functions)
    functions[ROOT] = GridFunction(values)
    return AccretiveSystem(functions, 1.5, 1.5, name="spiky")


SPIKY_PARAMS = StoppingParameters(delta=0.25, stop_c=8.0)


# ── Calderón–Zygmund decomposition ────────────────────────────
class TestCZDecompose:
    def test_single_bad_cube(self):
        b = _spiky_system()[ROOT]
        dec = cz_decompose(b, ROOT, 1.5, 32.0, 0.4)
        assert dec.bad_cubes == [DyadicCube(4, (0,))]
        assert np.allclose(dec.good.values, 1.0)
        assert not dec.vacuous and not dec.depth_truncated

    @given(st.integers(min_value=0, max_value=10_000), st.floats(min_value=1.5, max_value=20.0))
    @settings(max_examples=30, deadline=None)
    def test_identity_and_chebyshev(self, seed, threshold):
        rng = np.random.default_rng(seed)
        b = GridFunction(rng.standard_normal(2 ** 6) * 3)
        dec = cz_decompose(b, ROOT, 1.5, threshold, 0.4)
        assert dec.identity_residual() <= 1e-12
        assert dec.bad_fraction <= dec.chebyshev_fraction() + 1e-12

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=20, deadline=None)
    def test_bad_cubes_are_maximal(self, seed):
        rng = np.random.default_rng(seed)
        b = GridFunction(rng.standard_normal(2 ** 6) * 3)
        threshold = 10.0
        dec = cz_decompose(b, ROOT, 1.5, threshold, 0.4)
        power = np.abs(b.values) ** 1.5
        for cube in dec.bad_cubes:
            assert block_mean(power, cube.level, 1)[cube.index] >= threshold
            for level in range(cube.level):
                assert block_mean(power, level, 1)[cube.ancestor(level).index] < threshold

    def test_good_part_keeps_averages(self):
        b = GridFunction(np.random.default_rng(3).standard_normal(64) * 4)
        dec = cz_decompose(b, ROOT, 1.5, 8.0, 0.4)
        for cube in dec.bad_cubes:
            assert dec.good.average(cube) == pytest.approx(b.average(cube))

    def test_vacuous(self):
        b = GridFunction.constant(10.0, 1, 4)
        dec = cz_decompose(b, ROOT, 1.5, 2.0, 0.4)
        assert dec.vacuous
        assert dec.bad_cubes == [ROOT]

    def test_no_bad_cubes(self):
        dec = cz_decompose(GridFunction.constant(1.0, 1, 4), ROOT, 1.5, 2.0, 0.4)
        assert dec.bad_cubes == []
        assert error_envelope_norm(dec, 2.0) == 0.0
        assert np.all(dec.envelope() == 0.0)

    def test_envelope_at_least_one_term_inside_bad_cube(self):
        b = _spiky_system()[ROOT]
        dec = cz_decompose(b, ROOT, 1.5, 32.0, 0.4)
        e = dec.envelope_function()
        assert np.all(e.values[:2] >= (1 / 1.5) ** 1.4 - 1e-12)
        assert error_envelope_norm(dec, 1.5) > 0.0

    def test_support_violation(self):
        with pytest.raises(SupportError):
            cz_decompose(GridFunction.constant(1.0, 1, 4), DyadicCube(1, (0,)), 1.5, 2.0, 0.4)

    def test_threshold_must_be_positive(self):
        with pytest.raises(ConfigError):
            cz_decompose(GridFunction.constant(1.0, 1, 4), ROOT, 1.5, 0.0, 0.4)

    def test_envelope_exponent(self):
        dec = cz_decompose(GridFunction.constant(1.0, 1, 4), ROOT, 1.5, 2.0, 0.4)
        with pytest.raises(ConfigError):
            error_envelope_norm(dec, 0.5)


# ── Parameters ────────────────────────────────────────────────
class TestStoppingParameters:
    @pytest.mark.parametrize("kwargs", [{"delta": 0.0}, {"delta": 1.5}, {"eta": 0.0}, {"stop_c": -1.0},
                                        {"epsilon": 0.0}, {"sigma": -0.1}])
    def test_rejects_out_of_range(self, kwargs):
        with pytest.raises(ConfigError):
            StoppingParameters(**kwargs)

    def test_threshold(self):
        assert StoppingParameters(delta=0.25, stop_c=8.0).threshold == 32.0

    def test_margin_needs_size_constant(self):
        with pytest.raises(ConfigError):
            StoppingParameters().margin(1.5)

    def test_chosen_parameters_leave_margin(self):
        system = make_indicator_system(1, 4)
        op = DiscreteOperator(make_kernel("hilbert", 1), 4)
        params = stopping_parameters(system, op)
        assert params.size_const == pytest.approx(1.0)
        assert params.margin(1.5) == pytest.approx(0.5 ** 3)
        assert params.tau(1.5) == pytest.approx(params.margin(1.5) / 3)

    def test_eta_one_has_no_margin(self):
        system = make_indicator_system(1, 3)
        op = DiscreteOperator(make_kernel("hilbert", 1), 3)
        with pytest.raises(NoSparsenessMarginError):
            stopping_parameters(system, op, StoppingParameters(eta=1.0))

    def test_sparse_system_rejected(self):
        system = restrict_to_sparse(make_indicator_system(1, 3), [ROOT], 1.0)
        with pytest.raises(ConfigError):
            stopping_parameters(system, DiscreteOperator(make_kernel("hilbert", 1), 3))


# ── Tb-stopping ───────────────────────────────────────────────
class TestTbStopping:
    def test_offdiag_required_without_antisymmetry(self):
        kernel = dataclasses.replace(make_kernel("hilbert", 1), antisymmetric=False)
        op = DiscreteOperator(kernel, 3)
        b = GridFunction.constant(1.0, 1, 3)
        dec = cz_decompose(b, ROOT, 1.5, 2.0, 0.4)
        with pytest.raises(ModeMismatchError):
            tb_stopping_cubes(ROOT, b, dec, op, StoppingParameters(epsilon=0.1, sigma=0.1), 1.5)

    def test_needs_epsilon_and_sigma(self):
        op = DiscreteOperator(make_kernel("hilbert", 1), 3)
        b = GridFunction.constant(1.0, 1, 3)
        dec = cz_decompose(b, ROOT, 1.5, 2.0, 0.4)
        with pytest.raises(ConfigError):
            tb_stopping_cubes(ROOT, b, dec, op, StoppingParameters(), 1.5)

    def test_measure_certificate(self):
        system = make_indicator_system(1, DEPTH)
        op = DiscreteOperator(make_kernel("hilbert", 1), DEPTH)
        params = stopping_parameters(system, op, StoppingParameters(use_offdiag=True))
        b = system[ROOT]
        dec = cz_decompose(b, ROOT, 1.5, params.threshold, 0.4)
        stop = tb_stopping_cubes(ROOT, b, dec, op, params, 1.5)
        assert stop.tau > 0
        assert stop.fraction <= 1 - stop.tau + 1e-12
        assert stop.offdiag_fraction <= params.sigma + 1e-12
        assert stop.c_sigma is not None

    def test_calibrated_c_sigma_respects_budget(self):
        op = DiscreteOperator(make_kernel("hilbert", 1), 4)
        b = GridFunction(np.random.default_rng(2).standard_normal(16))
        levels = offdiag_levels(op, b, ROOT)
        sigma = 0.2
        c = calibrate_c_sigma(levels, ROOT, 4, sigma)
        fires = {level: a > c for level, a in levels.items()}
        assert sum(q.volume for q in maximal_cubes(ROOT, 4, fires)) <= sigma + 1e-12


# ── Iteration ─────────────────────────────────────────────────
class TestIterateForest:
    def test_indicator_system_certificates(self):
        system = make_indicator_system(1, 4)
        op = DiscreteOperator(make_kernel("hilbert", 1), 4)
        forest, profile = iterate_forest(system, op)
        assert forest.all_bad == []
        assert profile.is_zero
        assert ROOT in forest.family
        assert all(forest.certificates(profile).values())

    def test_spiky_system_suppresses_bad_cube(self):
        system = _spiky_system()
        op = DiscreteOperator(make_kernel("hilbert", 1), DEPTH)
        forest, profile = iterate_forest(system, op, SPIKY_PARAMS)
        assert forest.bad[0] == [DyadicCube(4, (0,))]
        assert profile.positive_measure() == pytest.approx(0.125)
        assert forest.delta_effective == 0.25
        assert all(forest.certificates(profile).values())

    def test_tree_measures_decay(self):
        system = _spiky_system()
        op = DiscreteOperator(make_kernel("hilbert", 1), DEPTH)
        forest, _ = iterate_forest(system, op, SPIKY_PARAMS)
        for k, measure in enumerate(forest.tree_measures()):
            assert measure <= (1 - forest.tau) ** k + 1e-12

    def test_partner_doubles_rho(self):
        system = make_indicator_system(1, 4)
        op = DiscreteOperator(make_kernel("hilbert", 1), 4)
        forest, _ = iterate_forest(system, op)
        alone = forest.rho()
        paired, _ = iterate_forest(system, op, partner_system=system)
        assert paired.rho() == pytest.approx(2 * alone)

    def test_suppressed_system_is_sparse(self):
        forest, _ = iterate_forest(_spiky_system(), DiscreteOperator(make_kernel("hilbert", 1), DEPTH),
                                   SPIKY_PARAMS)
        good = forest.suppressed_system()
        assert good.is_sparse
        assert np.allclose(good[ROOT].values, 1.0)

    def test_save_forest(self, tmp_path):
        forest, profile = iterate_forest(_spiky_system(), DiscreteOperator(make_kernel("hilbert", 1), DEPTH),
                                         SPIKY_PARAMS)
        save_forest(forest, str(tmp_path), profile)
        with open(tmp_path / "forest.json") as fh:
            manifest = json.load(fh)
        assert manifest["bad"][0] == ["4:0"]
        assert (tmp_path / "phi.csv").exists()
        assert np.allclose(GridFunction.from_csv(str(tmp_path / "phi.csv"), 1).values, profile.values.values)


# ── Verifiers ─────────────────────────────────────────────────
class TestVerifiers:
    @pytest.mark.parametrize("lam", [10.0, 100.0, 1000.0])
    def test_offdiag_chebyshev(self, lam):
        system = make_indicator_system(1, 4)
        op = DiscreteOperator(make_kernel("hilbert", 1), 4)
        result = offdiag_verify(system, op, ROOT, lam)
        assert result["status"] == "PASS"
        assert 0.0 <= result["ample_fraction"] <= 1.0

    def test_offdiag_lambda_positive(self):
        system = make_indicator_system(1, 3)
        with pytest.raises(ConfigError):
            offdiag_verify(system, DiscreteOperator(make_kernel("hilbert", 1), 3), ROOT, 0.0)

    def test_suppressed_test_functions(self):
        system = _spiky_system()
        kernel = make_kernel("hilbert", 1)
        forest, profile = iterate_forest(system, DiscreteOperator(kernel, DEPTH), SPIKY_PARAMS)
        op_phi = DiscreteOperator(kernel, DEPTH, profile=profile)
        result = suppressed_testfn_verify(forest, profile, op_phi)
        assert result["status"] == "PASS"
        assert result["worst_nondeg"] == pytest.approx(1.0)
        assert result["sup_norm"] == pytest.approx(1.0)
        assert result["members"] == len(forest.family)
