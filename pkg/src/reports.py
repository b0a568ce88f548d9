# ─────────────────────────────────────────────────────────────
# reports.py
# Local Tb Verification Harness — Verification reports
#
# A report is a flat list of records, one per measured constant:
#
#   name      unique key, e.g. "cotlar-domination"
#   anchor    descriptive tag of the estimate the record measures
#   kind      how the record is judged (see KINDS)
#   value_n   measured at depth N
#   value_n1  measured at depth N+1 (None for single-depth runs)
#   stability value_n1 / value_n
#   status    PASS / FAIL
#
# Reports are written as JSON plus a CSV side table. Timings never
# enter the report, so identical configs give identical files.
# ─────────────────────────────────────────────────────────────

import csv
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from typing import Optional

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from config import IDENTITY_TOL, STABILITY_BAND
from src.errors import ConfigError

logger = logging.getLogger(__name__)


# ── Status Codes
PASS = "PASS"
FAIL = "FAIL"

# identity     residual of an exact identity; both depths ≤ tolerance
# stability    implicit constant; value_n1 / value_n within the band
# certificate  boolean measure certificate; 1.0 means it holds
# status       verifier's own PASS/FAIL verdict at every depth
# info         recorded only
KINDS = ("identity", "stability", "certificate", "status", "info")

CSV_FIELDS = ["name", "anchor", "kind", "value_n", "value_n1", "stability", "status"]


# ── Records ───────────────────────────────────────────────────
@dataclass
class Measurement:
    """One measured value at one depth, as produced by a pipeline stage."""

    name: str
    anchor: str
    kind: str
    value: float
    status: str = PASS
    tolerance: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown record kind {self.kind!r}")
        self.value = _as_float(self.value)


@dataclass
class VerificationRecord:
    name: str
    anchor: str
    kind: str
    value_n: Optional[float]
    value_n1: Optional[float] = None
    stability: Optional[float] = None
    status: str = PASS

    def to_dict(self):
        return asdict(self)


def _as_float(value):
    if value is None:
        return None
    if isinstance(value, bool):
        return 1.0 if value else 0.0
    return float(value)


def stability_ratio(value_n, value_n1):
    """const(N+1)/const(N); 1 when both vanish, inf when only N vanishes."""
    if value_n is None or value_n1 is None:
        return None
    if value_n == 0.0:
        return 1.0 if value_n1 == 0.0 else math.inf
    return value_n1 / value_n


def judge(kind, values, statuses, stability, band=STABILITY_BAND, tolerance=None):
    """Pass/fail verdict of a record from its per-depth values."""
    if any(s == FAIL for s in statuses):
        return FAIL
    if kind == "identity":
        tol = IDENTITY_TOL if tolerance is None else tolerance
        return PASS if all(v is not None and v <= tol for v in values) else FAIL
    if kind == "certificate":
        return PASS if all(v == 1.0 for v in values) else FAIL
    if kind == "stability":
        if any(v is None or not math.isfinite(v) for v in values):
            return FAIL
        if stability is None:
            return PASS
        return PASS if 1.0 - band <= stability <= 1.0 + band else FAIL
    return PASS


def combine(measurements_n, measurements_n1=None, band=STABILITY_BAND):
    """Pair the measurements of two depths into records, keeping the order of depth N."""
    by_name = {m.name: m for m in (measurements_n1 or [])}
    records = []
    for m in measurements_n:
        other = by_name.get(m.name)
        values = [m.value] + ([other.value] if other is not None else [])
        statuses = [m.status] + ([other.status] if other is not None else [])
        ratio = stability_ratio(m.value, other.value) if other is not None else None
        records.append(VerificationRecord(
            name=m.name,
            anchor=m.anchor,
            kind=m.kind,
            value_n=m.value,
            value_n1=other.value if other is not None else None,
            stability=ratio,
            status=judge(m.kind, values, statuses, ratio, band, m.tolerance),
        ))
    return records


# ── Report ────────────────────────────────────────────────────
@dataclass
class VerificationReport:
    config: dict
    depths: list
    records: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    # per-stage milliseconds; kept out of to_dict()
    timings: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def passed(self):
        return all(r.status == PASS for r in self.records)

    @property
    def failures(self):
        return [r for r in self.records if r.status == FAIL]

    def record(self, name):
        for r in self.records:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self):
        return {
            "status": PASS if self.passed else FAIL,
            "depths": list(self.depths),
            "config": self.config,
            "records": [r.to_dict() for r in self.records],
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data):
        try:
            records = [VerificationRecord(**r) for r in data["records"]]
            return cls(data.get("config", {}), data.get("depths", []), records, data.get("provenance", {}))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"not a verification report: {exc}") from exc

    def save(self, directory, stem="report"):
        """Write <stem>.json and <stem>.csv; returns both paths."""
        os.makedirs(directory, exist_ok=True)
        json_path = os.path.join(directory, f"{stem}.json")
        csv_path = os.path.join(directory, f"{stem}.csv")
        with open(json_path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True, default=_json_default)
        save_records_csv(self.records, csv_path)
        logger.info("report written to %s", json_path)
        return json_path, csv_path


def _json_default(value):
    if hasattr(value, "item"):
        return value.item()
    if isinstance(value, (set, frozenset, tuple)):
        return list(value)
    raise TypeError(f"cannot serialize {type(value).__name__}")


def save_records_csv(records, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for r in records:
            writer.writerow({k: ("" if v is None else v) for k, v in r.to_dict().items()})
    return path


def load_report(path):
    try:
        with open(path) as fh:
            return VerificationReport.from_dict(json.load(fh))
    except FileNotFoundError as exc:
        raise ConfigError(f"report not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"report {path} is not valid JSON: {exc}") from exc


# ── Merge ─────────────────────────────────────────────────────
def _worst(values):
    finite = [v for v in values if v is not None]
    return max(finite) if finite else None


def merge_reports(paths):
    """
    Merge prior JSON reports into one summary.

    Records are grouped by name; each summary row carries the worst
    (largest) value at N and N+1, the stability ratio furthest from 1,
    and FAIL if any run failed.
    """
    if not paths:
        raise ConfigError("nothing to merge: no report files given")
    reports = [load_report(p) for p in sorted(paths)]
    grouped = {}
    order = []
    for report in reports:
        for r in report.records:
            if r.name not in grouped:
                grouped[r.name] = []
                order.append(r.name)
            grouped[r.name].append(r)

    merged = []
    for name in order:
        rows = grouped[name]
        ratios = [r.stability for r in rows if r.stability is not None]
        merged.append(VerificationRecord(
            name=name,
            anchor=rows[0].anchor,
            kind=rows[0].kind,
            value_n=_worst(r.value_n for r in rows),
            value_n1=_worst(r.value_n1 for r in rows),
            stability=max(ratios, key=lambda s: abs(math.log(s)) if 0 < s < math.inf else math.inf) if ratios else None,
            status=FAIL if any(r.status == FAIL for r in rows) else PASS,
        ))
    summary = VerificationReport(
        config={"merged_from": [os.path.basename(p) for p in sorted(paths)]},
        depths=sorted({d for report in reports for d in report.depths}),
        records=merged,
        provenance={"runs": len(reports)},
    )
    logger.info("merged %d reports, %d records, %d failing", len(reports), len(merged), len(summary.failures))
    return summary
