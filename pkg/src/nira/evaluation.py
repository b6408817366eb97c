"""Error metrics, box-plot statistics and per-condition reports."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import EmptyDataset, FormatError, JoinFailure, NonPositiveTruth

REPORT_FORMAT = "nira-eval-report"
REPORT_VERSION = 1
TARGET_COLUMNS = {"drr": "drr_db", "t60": "t60_s"}
DEFAULT_SLICE_KEYS = ("noise_type", "snr_db")


def _pair(truth, est):
    truth = np.asarray(truth, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if truth.shape != est.shape or truth.ndim != 1 or truth.size == 0:
        raise ValueError("truth and estimate must be equal-length non-empty 1-D sequences")
    return truth, est


def errors_drr(truth, est) -> np.ndarray:
    truth, est = _pair(truth, est)
    return est - truth


def errors_t60(truth, est) -> np.ndarray:
    """Percentage errors relative to the true value."""
    truth, est = _pair(truth, est)
    if np.any(truth <= 0):
        raise NonPositiveTruth("T60 ground truth must be positive")
    return 100.0 * (est - truth) / truth


def quadratic_mean(errors) -> float:
    errors = np.asarray(errors, dtype=np.float64)
    return float(np.sqrt(np.mean(errors * errors)))


def rmsd_drr(truth, est) -> float:
    """Root mean square deviation in dB."""
    return quadratic_mean(errors_drr(truth, est))


def rmsd_t60(truth, est) -> float:
    """Root mean square of the percentage errors."""
    return quadratic_mean(errors_t60(truth, est))


ERROR_FUNCTIONS = {"drr": errors_drr, "t60": errors_t60}


class BoxStats(NamedTuple):
    median: float
    q1: float
    q3: float
    iqr: float
    whisker_low: float
    whisker_high: float


def box_stats(errors) -> BoxStats:
    """Quartiles by linear interpolation; whiskers at the most extreme points within 1.5 IQR."""
    x = np.asarray(errors, dtype=np.float64)
    if x.size == 0:
        raise ValueError("box_stats needs at least one value")
    q1, med, q3 = np.quantile(x, [0.25, 0.5, 0.75], method="linear")
    iqr = q3 - q1
    inside = x[(x >= q1 - 1.5 * iqr) & (x <= q3 + 1.5 * iqr)]
    return BoxStats(float(med), float(q1), float(q3), float(iqr), float(inside.min()), float(inside.max()))


def weighted_quadratic_mean(values, weights) -> float:
    """Recombine per-slice RMSDs into the RMSD of the union."""
    values = np.asarray(values, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    return float(np.sqrt(np.sum(weights * values * values) / np.sum(weights)))


@dataclass
class SliceStats:
    n: int
    rmsd: float
    mean_error: float
    box: BoxStats

    @classmethod
    def of(cls, errors) -> "SliceStats":
        errors = np.asarray(errors, dtype=np.float64)
        return cls(int(errors.size), quadratic_mean(errors), float(errors.mean()), box_stats(errors))


@dataclass
class ReportRow:
    utterance_id: str
    tags: dict
    truth: float
    estimate: float
    error: float


@dataclass
class EvalReport:
    target: str
    rows: list
    overall: SliceStats
    slices: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def rmsd(self) -> float:
        return self.overall.rmsd

    def to_dict(self) -> dict:
        def stats(s: SliceStats):
            return {"n": s.n, "rmsd": s.rmsd, "mean_error": s.mean_error, "box": s.box._asdict()}

        unit = "db" if self.target == "drr" else "pct"
        return {
            "format": REPORT_FORMAT,
            "version": REPORT_VERSION,
            "target": self.target,
            f"rmsd_{self.target}_{unit}": self.overall.rmsd,
            "overall": stats(self.overall),
            "slices": {k: stats(v) for k, v in sorted(self.slices.items())},
            "meta": self.meta,
        }


def evaluate_rows(target: str, rows: list[ReportRow], slice_keys=DEFAULT_SLICE_KEYS, meta=None) -> EvalReport:
    rows = sorted(rows, key=lambda r: r.utterance_id)
    overall = SliceStats.of([r.error for r in rows])
    groups = defaultdict(list)
    for r in rows:
        for key in slice_keys:
            if key in r.tags:
                groups[f"{key}={r.tags[key]}"].append(r.error)
    slices = {k: SliceStats.of(v) for k, v in groups.items()}
    return EvalReport(target, rows, overall, slices, dict(meta or {}))


def evaluate_report(estimates, labels, target: str, slice_keys=DEFAULT_SLICE_KEYS, meta=None) -> EvalReport:
    """Join estimates to labels and compute global and per-slice statistics.

    ``estimates`` is an iterable of ``(utterance_id, estimate)`` pairs (or a
    path to an estimates CSV); ``labels`` maps utterance ids to dicts holding
    the ground truth (``t60_s`` / ``drr_db``) and the condition tags.
    """
    if target not in ERROR_FUNCTIONS:
        raise ValueError(f"unknown target {target!r}")
    if isinstance(estimates, (str, Path)):
        estimates = [(u, e) for u, kind, e in read_estimates(estimates) if kind == target]
    estimates = list(estimates)
    missing = [u for u, _ in estimates if u not in labels]
    if missing:
        raise JoinFailure(f"{len(missing)} estimates without labels, e.g. {missing[:3]}")
    if not estimates:
        raise EmptyDataset("no estimates to evaluate")
    column = TARGET_COLUMNS[target]
    truth = [float(labels[u][column]) for u, _ in estimates]
    est = [float(e) for _, e in estimates]
    errs = ERROR_FUNCTIONS[target](truth, est)
    rows = [
        ReportRow(u, {k: labels[u][k] for k in slice_keys if k in labels[u]}, t, e, float(err))
        for (u, _), t, e, err in zip(estimates, truth, est, errs)
    ]
    return evaluate_rows(target, rows, slice_keys, meta)


def write_estimates(path, rows, target: str) -> None:
    """CSV with header ``utterance_id,target_kind,estimate``."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["utterance_id", "target_kind", "estimate"])
        for utt, est in sorted(rows):
            out.writerow([utt, target, repr(float(est))])


def read_estimates(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["utterance_id", "target_kind", "estimate"]:
            raise FormatError(f"{path}: unexpected estimates header {reader.fieldnames}")
        return [(r["utterance_id"], r["target_kind"], float(r["estimate"])) for r in reader]


def write_report(report: EvalReport, json_path, csv_path=None) -> None:
    json_path = Path(json_path)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    if csv_path is None:
        return
    tag_keys = sorted({k for r in report.rows for k in r.tags})
    with open(csv_path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["utterance_id", *tag_keys, "truth", "estimate", "error"])
        for r in report.rows:
            out.writerow([r.utterance_id, *(r.tags.get(k, "") for k in tag_keys),
                          repr(r.truth), repr(r.estimate), repr(r.error)])

