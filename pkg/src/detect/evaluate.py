"""Treatment Effect Score, the NRS-calibrated threshold and cohort reports.

All accuracies are percentages and TES values are percentage points.
Significance is decided on unrounded values; rounding to two decimals
happens only when a report is rendered.
"""
from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import CalibrationError, ContractError, EvaluationError, IngestionError
from .model import predict

log = logging.getLogger(__name__)

CI_Z = 1.96

REPORT_COLUMNS = (
    "patient_id", "acc_pre", "acc_post", "tes", "tes_threshold",
    "nrs_pre", "nrs_post", "sig_nrs", "sig_detect",
)
SUMMARY_FIELDS = ("acc_pre", "acc_post", "tes", "nrs_pre", "nrs_post")


@dataclass(frozen=True)
class PatientOutcome:
    patient_id: str
    acc_pre: float
    acc_post: float
    tes: float
    nrs_pre: int
    nrs_post: int
    sig_nrs: bool
    sig_detect: bool = False


@dataclass(frozen=True)
class ColumnSummary:
    mean: float
    sd: float
    ci_low: float
    ci_high: float


@dataclass(frozen=True)
class CohortReport:
    outcomes: tuple
    tes_threshold: float
    consistency_rate: float
    summary: dict  # field name -> ColumnSummary; empty when n < 2


def patient_accuracy(bundle, windows):
    """Percentage of windows whose predicted class matches the label."""
    if len(windows) == 0:
        raise EvaluationError("cannot compute accuracy on an empty window set")
    if not windows.normalized:
        raise ContractError("windows must be normalized with the training stats")
    predicted, _ = predict(bundle, windows.values)
    return 100.0 * float(np.mean(predicted == windows.labels))


def compute_tes(acc_pre, acc_post):
    for v in (acc_pre, acc_post):
        if not 0.0 <= v <= 100.0:
            raise ContractError(f"accuracy {v} outside [0, 100]")
    return acc_pre - acc_post


def nrs_improved(nrs_pre, nrs_post, mode="and"):
    """Meaningful NRS improvement.

    ``mode="and"`` requires a drop of at least 2 points *and* at least 33%;
    ``mode="or"`` accepts either.  A worsening score is never an improvement.
    """
    drop = nrs_pre - nrs_post
    if drop <= 0:
        return False
    points = drop >= 2
    relative = nrs_pre >= 1 and drop / nrs_pre >= 0.33
    if mode == "and":
        return points and relative
    if mode == "or":
        return points or relative
    raise ContractError(f"unknown NRS predicate mode {mode!r}")


def make_outcome(patient_id, acc_pre, acc_post, nrs_pre, nrs_post, mode="and"):
    return PatientOutcome(
        str(patient_id), acc_pre, acc_post, compute_tes(acc_pre, acc_post),
        int(nrs_pre), int(nrs_post), nrs_improved(nrs_pre, nrs_post, mode),
    )


def compute_threshold(outcomes):
    """Mean TES over the NRS-improved patients (full precision)."""
    improved = [o.tes for o in outcomes if o.sig_nrs]
    if not improved:
        raise CalibrationError("no NRS-improved patients: no threshold defined")
    return math.fsum(improved) / len(improved)


def flag_significance(outcomes, threshold):
    return [replace(o, sig_detect=o.tes >= threshold) for o in outcomes]


def summarize(values):
    x = np.asarray(values, dtype=np.float64)
    n = len(x)
    mean = math.fsum(x) / n
    sd = math.sqrt(math.fsum((x - mean) ** 2) / (n - 1))
    half = CI_Z * sd / math.sqrt(n)
    return ColumnSummary(mean, sd, mean - half, mean + half)


def build_report(outcomes):
    """Threshold, flags, consistency rate and per-column summaries."""
    outcomes = list(outcomes)
    if not outcomes:
        raise EvaluationError("no patient outcomes to report")
    threshold = compute_threshold(outcomes)
    flagged = flag_significance(outcomes, threshold)
    agree = sum(o.sig_nrs == o.sig_detect for o in flagged)
    consistency = 100.0 * agree / len(flagged)
    summary = {}
    if len(flagged) >= 2:
        for name in SUMMARY_FIELDS:
            summary[name] = summarize([getattr(o, name) for o in flagged])
    else:
        log.warning("fewer than 2 patients: summary statistics omitted")
    return CohortReport(tuple(flagged), threshold, consistency, summary)


# rendering ------------------------------------------------------------------

def _yn(flag):
    return "yes" if flag else "no"


def report_csv(report):
    buf = io.StringIO()
    buf.write(",".join(REPORT_COLUMNS) + "\n")
    for o in report.outcomes:
        buf.write(
            f"{o.patient_id},{o.acc_pre:.2f},{o.acc_post:.2f},{o.tes:.2f},"
            f"{report.tes_threshold:.2f},{o.nrs_pre},{o.nrs_post},"
            f"{_yn(o.sig_nrs)},{_yn(o.sig_detect)}\n"
        )
    return buf.getvalue()


def summary_csv(report):
    buf = io.StringIO()
    buf.write("statistic," + ",".join(SUMMARY_FIELDS) + ",consistency_rate\n")
    if report.summary:
        s = report.summary
        rows = [
            ("mean", [s[f].mean for f in SUMMARY_FIELDS], f"{report.consistency_rate:.2f}"),
            ("sd", [s[f].sd for f in SUMMARY_FIELDS], ""),
            ("ci95_low", [s[f].ci_low for f in SUMMARY_FIELDS], ""),
            ("ci95_high", [s[f].ci_high for f in SUMMARY_FIELDS], ""),
        ]
        for label, vals, extra in rows:
            buf.write(label + "," + ",".join(f"{v:.2f}" for v in vals) + f",{extra}\n")
    else:
        buf.write(f"mean,,,,,,{report.consistency_rate:.2f}\n")
    return buf.getvalue()


def report_markdown(report):
    lines = [
        "# DETECT cohort report",
        "",
        f"TES threshold: {report.tes_threshold:.2f} "
        f"(mean TES of {sum(o.sig_nrs for o in report.outcomes)} NRS-improved patients)",
        f"Consistency with NRS: {report.consistency_rate:.2f}% "
        f"({sum(o.sig_nrs == o.sig_detect for o in report.outcomes)} of {len(report.outcomes)})",
        "",
        "| Patient | Pre acc (%) | Post acc (%) | TES | Pre NRS | Post NRS | Sig. NRS | Sig. DETECT |",
        "|---|---:|---:|---:|---:|---:|:-:|:-:|",
    ]
    for o in report.outcomes:
        lines.append(
            f"| {o.patient_id} | {o.acc_pre:.2f} | {o.acc_post:.2f} | {o.tes:.2f} | "
            f"{o.nrs_pre} | {o.nrs_post} | {_yn(o.sig_nrs)} | {_yn(o.sig_detect)} |"
        )
    if report.summary:
        lines += ["", "| Summary | " + " | ".join(SUMMARY_FIELDS) + " |",
                  "|---|" + "---:|" * len(SUMMARY_FIELDS)]
        s = report.summary
        lines.append("| Mean (SD) | " + " | ".join(
            f"{s[f].mean:.2f} ({s[f].sd:.2f})" for f in SUMMARY_FIELDS) + " |")
        lines.append("| 95% CI | " + " | ".join(
            f"[{s[f].ci_low:.2f}, {s[f].ci_high:.2f}]" for f in SUMMARY_FIELDS) + " |")
    return "\n".join(lines) + "\n"


def write_report(report, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_bytes(report_csv(report).encode("utf-8"))
    (out / "summary.csv").write_bytes(summary_csv(report).encode("utf-8"))
    (out / "report.md").write_bytes(report_markdown(report).encode("utf-8"))
    return out


def read_accuracy_table(path):
    """Rows of ``patient_id,acc_pre,acc_post,nrs_pre,nrs_post``."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    expected = ("patient_id", "acc_pre", "acc_post", "nrs_pre", "nrs_post")
    if not lines or tuple(h.strip() for h in lines[0].split(",")) != expected:
        raise IngestionError("header must be " + ",".join(expected), path, 1)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        f = [x.strip() for x in line.split(",")]
        if len(f) != 5:
            raise IngestionError("expected 5 columns", path, lineno)
        try:
            rows.append((f[0], float(f[1]), float(f[2]), int(f[3]), int(f[4])))
        except ValueError:
            raise IngestionError("malformed numeric field", path, lineno) from None
    return rows


def accuracy_table_csv(rows):
    buf = io.StringIO()
    buf.write("patient_id,acc_pre,acc_post,nrs_pre,nrs_post\n")
    for pid, pre, post, npre, npost in rows:
        buf.write(f"{pid},{pre!r},{post!r},{npre},{npost}\n")
    return buf.getvalue()
