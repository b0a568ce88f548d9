# ─────────────────────────────────────────────────────────────
# tests/test_cli.py
# Local Tb Verification Harness — Command line tests
#
# Run:  python -m pytest tests/test_cli.py -v
# ─────────────────────────────────────────────────────────────

import json
import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from main import EXIT_CONFIG, EXIT_INTERNAL, EXIT_PASS, EXIT_TOLERANCE, main
from src.reports import FAIL, PASS, VerificationRecord, VerificationReport


def _save_report(directory, status):
    record = VerificationRecord("cotlar-domination", "cotlar-domination", "stability", 1.0, 1.1, 1.1, status)
    report = VerificationReport({"depth": 4}, [4, 5], [record], {})
    json_path, _ = report.save(str(directory))
    return json_path


class TestRunCommands:
    def test_verify_kernel_passes(self, tmp_path, capsys):
        code = main(["verify-kernel", "--depth", "3", "--single-depth", "--out", str(tmp_path)])
        assert code == EXIT_PASS
        out = capsys.readouterr().out
        assert "adjoint-identity" in out
        assert "SUCCESS" in out
        with open(tmp_path / "report.json") as fh:
            assert json.load(fh)["depths"] == [3]

    def test_stage_flag_overrides_command(self, tmp_path, capsys):
        code = main(["pipeline", "--depth", "3", "--single-depth", "--stage", "kernel", "--out", str(tmp_path)])
        assert code == EXIT_PASS
        with open(tmp_path / "report.json") as fh:
            assert json.load(fh)["provenance"]["selected"] == ["kernel"]

    def test_config_error(self, tmp_path, capsys):
        assert main(["pipeline", "--depth", "0", "--out", str(tmp_path)]) == EXIT_CONFIG
        assert "Config error" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert main(["pipeline", "--config", str(tmp_path / "absent.json")]) == EXIT_CONFIG

    def test_structural_error(self, tmp_path, capsys):
        code = main(["verify-kernel", "--kernel", "riesz_1", "--depth", "3", "--out", str(tmp_path)])
        assert code == EXIT_INTERNAL
        out = capsys.readouterr().out
        assert "DIMENSION_MISMATCH" in out
        assert "Stage  : kernel" in out

    def test_unknown_stage_rejected_by_parser(self):
        with pytest.raises(SystemExit):
            main(["pipeline", "--stage", "magic"])


class TestReportCommand:
    def test_merge_passing(self, tmp_path, capsys):
        first = _save_report(tmp_path / "a", PASS)
        second = _save_report(tmp_path / "b", PASS)
        code = main(["report", "--merge", first, second, "--out", str(tmp_path / "merged")])
        assert code == EXIT_PASS
        assert (tmp_path / "merged" / "merged.json").is_file()
        assert (tmp_path / "merged" / "merged.csv").is_file()
        assert "Merged 2 report(s)" in capsys.readouterr().out

    def test_merge_failing(self, tmp_path):
        first = _save_report(tmp_path / "a", PASS)
        second = _save_report(tmp_path / "b", FAIL)
        assert main(["report", "--merge", first, second]) == EXIT_TOLERANCE

    def test_merge_missing_file(self, tmp_path):
        assert main(["report", "--merge", str(tmp_path / "absent.json")]) == EXIT_CONFIG
