# ─────────────────────────────────────────────────────────────
# tests/test_verifier.py
# Local Tb Verification Harness — Pipeline tests
#
# Small grids (d = 1, N ≤ 4) apart from one N = 8 / 9 end-to-end run.
# Run:  python -m pytest tests/test_verifier.py -v
# ─────────────────────────────────────────────────────────────

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from src.errors import ConfigError
from src.reports import PASS
from src.run_config import STAGES, RunConfig
from verifier import DEPENDS, DepthRun, plan_stages, run_pipeline, verify, verify_batch


def _config(**kwargs):
    base = {"dim": 1, "depth": 3, "system": "indicator", "kernel_samples": 200, "baby_tb_samples": 4}
    base.update(kwargs)
    return RunConfig(**base)


# ── Stage planning ────────────────────────────────────────────
class TestPlanStages:
    def test_dependencies_are_added(self):
        assert plan_stages(["suppress"]) == ["kernel", "systems", "stopping", "suppress"]

    def test_pipeline_order_kept(self):
        assert plan_stages(["final", "kernel", "decompose"]) == ["kernel", "systems", "decompose", "stopping", "final"]

    def test_baby_tb_runs_after_wbp(self):
        assert plan_stages(["baby_tb"]) == ["kernel", "systems", "stopping", "wbp", "baby_tb"]

    def test_every_stage_is_planned(self):
        assert plan_stages(STAGES) == list(STAGES)
        assert set(DEPENDS) == set(STAGES)

    def test_unknown_stage(self):
        with pytest.raises(ConfigError):
            plan_stages(["magic"])


# ── Pipeline ──────────────────────────────────────────────────
class TestRunPipeline:
    def test_single_depth_kernel_and_systems_pass(self):
        report = run_pipeline(_config(stages=("kernel", "systems"), two_depths=False))
        assert report.passed
        assert report.depths == [3]
        assert report.record("adjoint-identity").status == PASS
        assert report.record("nondegeneracy").value_n == pytest.approx(0.0, abs=1e-12)
        assert all(r.value_n1 is None for r in report.records)

    def test_two_depths_pair_records(self):
        report = run_pipeline(_config(stages=("kernel",)))
        assert report.depths == [3, 4]
        record = report.record("adjoint-identity")
        assert record.value_n1 is not None
        assert record.status == PASS
        assert set(report.timings) == {"3", "4"}

    def test_only_selected_stages_report(self):
        report = run_pipeline(_config(stages=("systems",), two_depths=False))
        names = {r.name for r in report.records}
        assert "nondegeneracy" in names
        assert "adjoint-identity" not in names
        assert report.provenance["selected"] == ["systems"]
        assert report.provenance["stages"]["systems"] == ["kernel"]

    def test_zero_kernel_stays_at_zero(self):
        report = run_pipeline(_config(kernel="zero", stages=("kernel", "systems")))
        assert report.record("local-testing").value_n == 0.0
        assert report.record("local-testing").stability == 1.0
        assert report.record("adjoint-identity").status == PASS

    def test_runs_are_deterministic(self):
        config = _config(stages=("kernel", "systems", "decompose"), two_depths=False)
        assert run_pipeline(config).to_dict() == run_pipeline(config).to_dict()

    def test_artifacts_written(self, tmp_path):
        out = str(tmp_path)
        run_pipeline(_config(stages=("systems",), two_depths=False), output_dir=out)
        assert (tmp_path / "report.json").is_file()
        assert (tmp_path / "report.csv").is_file()
        assert (tmp_path / "depth-3").is_dir()

    def test_full_pipeline_completes(self):
        report = run_pipeline(_config(depth=4, two_depths=False))
        names = {r.name for r in report.records}
        assert {"cz-size", "sparseness-tau", "pairing-resummation", "baby-tb-final"} <= names
        assert report.record("pairing-resummation").status == PASS
        assert report.record("martingale-reconstruction").status == PASS
        assert report.provenance["runs"]["4"]["wbp_modes"][0] == "antisymmetric"

    def test_random_functions_agree_across_depths(self):
        config = _config()
        coarse, fine = DepthRun(config, 3, 3), DepthRun(config.with_depth(4), 4, 3)
        coarse.stage = fine.stage = "martingale"
        f = coarse.random_function(coarse.rng(0))
        assert np.array_equal(fine.random_function(fine.rng(0)).values, f.refine(4).values)

    def test_rough_two_depth_pipeline_passes(self):
        # the default end-to-end run: hilbert kernel, rough system, N = 8 against N = 9
        report = run_pipeline(RunConfig(dim=1, depth=8, system="rough", kernel="hilbert"))
        assert report.depths == [8, 9]
        assert report.passed, [(r.name, r.value_n, r.value_n1) for r in report.failures]
        assert report.record("wbp-special-offdiag").kind == "identity"
        assert report.record("wbp-special-offdiag-annulus").status == PASS
        assert report.record("baby-tb-suppressed").status == PASS


# ── Result envelope ───────────────────────────────────────────
class TestVerify:
    def test_success_envelope(self):
        result = verify(_config(stages=("kernel",), two_depths=False))
        assert result["valid"] is True
        assert result["reason"] == "SUCCESS"
        assert result["details"]["status"] == PASS
        assert "inference_time_ms" in result

    def test_invalid_config(self):
        result = verify(_config(delta=1.5))
        assert result["valid"] is False
        assert result["reason"] == "CONFIG_ERROR"
        assert result["details"]["stage"] is None

    def test_structural_error_names_stage(self):
        result = verify(_config(kernel="riesz_1", stages=("kernel",)))
        assert result["reason"] == "DIMENSION_MISMATCH"
        assert result["details"]["stage"] == "kernel"
        assert result["details"]["depth"] in (3, 4)

    def test_no_margin_stops_at_stopping(self):
        result = verify(_config(eta=1.0, stages=("stopping",), two_depths=False))
        assert result["reason"] == "NO_SPARSENESS_MARGIN"
        assert result["details"]["stage"] == "stopping"

    def test_batch(self):
        results = verify_batch([_config(stages=("kernel",), two_depths=False), _config(alpha=2.0)])
        assert [r["reason"] for r in results] == ["SUCCESS", "CONFIG_ERROR"]
