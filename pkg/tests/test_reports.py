# ─────────────────────────────────────────────────────────────
# tests/test_reports.py
# Local Tb Verification Harness — Report tests
#
# Run:  python -m pytest tests/test_reports.py -v
# ─────────────────────────────────────────────────────────────

import csv
import json
import math
import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from src.errors import ConfigError
from src.reports import (
    FAIL,
    PASS,
    Measurement,
    VerificationRecord,
    VerificationReport,
    combine,
    judge,
    load_report,
    merge_reports,
    stability_ratio,
)


def _report(records, depths=(4, 5)):
    return VerificationReport({"depth": depths[0]}, list(depths), records, {"stages": ["kernel"]})


# ── Judging ───────────────────────────────────────────────────
class TestJudge:
    def test_stability_ratio_edge_cases(self):
        assert stability_ratio(0.0, 0.0) == 1.0
        assert stability_ratio(0.0, 2.0) == math.inf
        assert stability_ratio(2.0, 3.0) == 1.5
        assert stability_ratio(2.0, None) is None

    def test_identity(self):
        assert judge("identity", [1e-12, 1e-11], [PASS, PASS], None) == PASS
        assert judge("identity", [1e-12, 1e-6], [PASS, PASS], None) == FAIL
        assert judge("identity", [1e-6], [PASS], None, tolerance=1e-5) == PASS

    def test_certificate(self):
        assert judge("certificate", [1.0, 1.0], [PASS, PASS], 1.0) == PASS
        assert judge("certificate", [1.0, 0.0], [PASS, PASS], 0.0) == FAIL

    @pytest.mark.parametrize("ratio,expected", [(1.0, PASS), (1.2, PASS), (0.8, PASS), (1.3, FAIL),
                                                (0.7, FAIL), (math.inf, FAIL)])
    def test_stability_band(self, ratio, expected):
        assert judge("stability", [1.0, ratio], [PASS, PASS], ratio, band=0.25) == expected

    def test_stability_single_depth(self):
        assert judge("stability", [3.0], [PASS], None) == PASS
        assert judge("stability", [math.nan], [PASS], None) == FAIL

    def test_status_and_info(self):
        assert judge("status", [1.0, 2.0], [PASS, FAIL], 2.0) == FAIL
        assert judge("info", [1e9, -1e9], [PASS, PASS], -1.0) == PASS

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            Measurement("x", "a", "vibes", 1.0)

    def test_bool_values(self):
        assert Measurement("x", "a", "certificate", True).value == 1.0
        assert Measurement("x", "a", "certificate", False).value == 0.0


# ── Combining depths ──────────────────────────────────────────
class TestCombine:
    def test_pairs_by_name(self):
        at_n = [Measurement("cotlar", "cotlar-domination", "stability", 2.0),
                Measurement("reconstruction", "martingale-reconstruction", "identity", 1e-14)]
        at_n1 = [Measurement("reconstruction", "martingale-reconstruction", "identity", 2e-14),
                 Measurement("cotlar", "cotlar-domination", "stability", 2.2)]
        records = combine(at_n, at_n1, band=0.25)
        assert [r.name for r in records] == ["cotlar", "reconstruction"]
        assert records[0].stability == pytest.approx(1.1)
        assert all(r.status == PASS for r in records)

    def test_single_depth(self):
        records = combine([Measurement("c", "a", "stability", 5.0)])
        assert records[0].value_n1 is None and records[0].stability is None
        assert records[0].status == PASS

    def test_unstable_constant_fails(self):
        records = combine([Measurement("c", "a", "stability", 1.0)], [Measurement("c", "a", "stability", 2.0)])
        assert records[0].status == FAIL


# ── Persistence ───────────────────────────────────────────────
class TestReport:
    def test_save_writes_json_and_csv(self, tmp_path):
        report = _report([VerificationRecord("c", "a", "stability", 1.0, 1.1, 1.1, PASS),
                          VerificationRecord("s", "b", "info", 2.0)])
        json_path, csv_path = report.save(str(tmp_path))
        with open(json_path) as fh:
            data = json.load(fh)
        assert data["status"] == PASS
        assert "timings" not in data
        with open(csv_path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["name"] for r in rows] == ["c", "s"]
        assert rows[1]["value_n1"] == ""

    def test_identical_reports_are_identical_files(self, tmp_path):
        records = [VerificationRecord("c", "a", "stability", 1.0, 1.1, 1.1)]
        a = _report(records)
        b = _report(records)
        b.timings = {"4": {"kernel": 12.0}}
        a.save(str(tmp_path / "a"))
        b.save(str(tmp_path / "b"))
        assert (tmp_path / "a" / "report.json").read_text() == (tmp_path / "b" / "report.json").read_text()

    def test_load_round_trip(self, tmp_path):
        report = _report([VerificationRecord("c", "a", "identity", 0.0, 0.0, 1.0, PASS)])
        json_path, _ = report.save(str(tmp_path))
        assert load_report(json_path) == report

    def test_failures(self):
        report = _report([VerificationRecord("c", "a", "stability", 1.0, 3.0, 3.0, FAIL)])
        assert not report.passed
        assert report.failures[0].name == "c"
        assert report.record("c").value_n1 == 3.0
        with pytest.raises(KeyError):
            report.record("missing")

    def test_load_errors(self, tmp_path):
        with pytest.raises(ConfigError):
            load_report(str(tmp_path / "absent.json"))
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"records": [{"nom": 1}]}))
        with pytest.raises(ConfigError):
            load_report(str(bad))


# ── Merge ─────────────────────────────────────────────────────
class TestMerge:
    def test_worst_values_and_status(self, tmp_path):
        first = _report([VerificationRecord("c", "a", "stability", 1.0, 1.1, 1.1, PASS)], depths=(4, 5))
        second = _report([VerificationRecord("c", "a", "stability", 2.0, 1.0, 0.5, FAIL)], depths=(5, 6))
        p1, _ = first.save(str(tmp_path / "one"))
        p2, _ = second.save(str(tmp_path / "two"))
        merged = merge_reports([p1, p2])
        record = merged.record("c")
        assert record.value_n == 2.0
        assert record.value_n1 == 1.1
        assert record.stability == 0.5
        assert record.status == FAIL
        assert merged.depths == [4, 5, 6]
        assert merged.provenance == {"runs": 2}

    def test_nothing_to_merge(self):
        with pytest.raises(ConfigError):
            merge_reports([])
