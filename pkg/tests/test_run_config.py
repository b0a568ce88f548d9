# ─────────────────────────────────────────────────────────────
# tests/test_run_config.py
# Local Tb Verification Harness — Run configuration tests
#
# Run:  python -m pytest tests/test_run_config.py -v
# ─────────────────────────────────────────────────────────────

import json
import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from config import DEFAULT_DEPTH, DELTA, MAX_DEPTH
from src.errors import ConfigError
from src.run_config import STAGES, RunConfig, env_overrides, load_config


# ── Defaults ──────────────────────────────────────────────────
class TestDefaults:
    def test_defaults_validate(self):
        config = RunConfig().validate()
        assert config.depth == DEFAULT_DEPTH[1]
        assert config.stages == STAGES
        assert config.delta == DELTA

    def test_default_depth_follows_dimension(self):
        assert RunConfig(dim=2).depth == DEFAULT_DEPTH[2]

    def test_with_depth(self):
        config = RunConfig(depth=4)
        assert config.with_depth(5).depth == 5
        assert config.depth == 4


# ── Validation ────────────────────────────────────────────────
class TestValidate:
    @pytest.mark.parametrize("kwargs", [
        {"dim": 3},
        {"depth": 0},
        {"depth": MAX_DEPTH[1]},
        {"kernel": "beurling"},
        {"alpha": 1.0},
        {"system": "smooth"},
        {"roughness": 0.5},
        {"p": 1.0},
        {"lp_exponents": (2.0, 0.9)},
        {"carleson_s": 2.5},
        {"delta": 1.5},
        {"eta": 0.0},
        {"epsilon": -1.0},
        {"suppression_power": 0},
        {"depth": 4, "k_max": 5},
        {"wbp_mode": "sideways"},
        {"stages": ("kernel", "magic")},
        {"stability_band": 1.0},
    ])
    def test_rejects(self, kwargs):
        with pytest.raises(ConfigError):
            RunConfig(**kwargs).validate()

    def test_single_depth_allows_max_depth(self):
        assert RunConfig(depth=MAX_DEPTH[1], two_depths=False).validate().depth == MAX_DEPTH[1]


# ── Serialization ─────────────────────────────────────────────
class TestSerialization:
    def test_nested_layout(self):
        data = RunConfig(depth=4).to_dict()
        assert data["grid"]["depth"] == 4
        assert data["stopping"]["delta"] == DELTA
        assert data["run"]["stages"] == list(STAGES)

    def test_from_nested_and_flat_agree(self):
        nested = RunConfig.from_dict({"grid": {"depth": 5}, "kernel": {"alpha": 0.3}})
        flat = RunConfig.from_dict({"depth": 5, "alpha": 0.3})
        assert nested == flat

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"stopping": {"delta": 0.1, "gamma": 2}})

    def test_save_and_reload(self, tmp_path):
        config = RunConfig(dim=2, depth=3, kernel="riesz_1", lp_exponents=(2.0,))
        path = config.save(str(tmp_path / "run.json"))
        assert load_config(path) == config


# ── Layering ──────────────────────────────────────────────────
class TestLoadConfig:
    def test_file_env_cli_order(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"grid": {"depth": 4}, "run": {"seed": 1}}))
        environ = {"LOCALTB_SEED": "2", "LOCALTB_DEPTH": "5"}
        config = load_config(str(path), overrides={"seed": 3, "kernel": None}, environ=environ)
        assert config.depth == 5
        assert config.seed == 3
        assert config.kernel == "hilbert"

    def test_dim_override_resets_depth(self):
        config = load_config(overrides={"dim": 2, "kernel": "riesz_2"}, environ={})
        assert config.depth == DEFAULT_DEPTH[2]

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(str(tmp_path / "absent.json"), environ={})

    def test_bad_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(str(path), environ={})

    def test_invalid_values_rejected_before_running(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"stopping": {"delta": 1.5}}))
        with pytest.raises(ConfigError):
            load_config(str(path), environ={})

    def test_env_coercion(self):
        out = env_overrides({
            "LOCALTB_USE_OFFDIAG": "true",
            "LOCALTB_LP_EXPONENTS": "1.5,3",
            "LOCALTB_STAGES": "kernel, systems",
            "LOCALTB_EPSILON": "none",
            "LOCALTB_ALPHA": "0.25",
            "UNRELATED": "x",
        })
        assert out == {
            "use_offdiag": True,
            "lp_exponents": (1.5, 3.0),
            "stages": ("kernel", "systems"),
            "epsilon": None,
            "alpha": 0.25,
        }

    def test_env_parse_error(self):
        with pytest.raises(ConfigError):
            env_overrides({"LOCALTB_DEPTH": "deep"})
