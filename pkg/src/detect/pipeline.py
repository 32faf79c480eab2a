"""End-to-end DETECT runs: windows -> model -> per-patient accuracies -> report."""
from __future__ import annotations

import dataclasses
import logging

from .datapipe import apply_norm, build_windows, stratified_split
from .errors import EvaluationError, SplitError
from .evaluate import build_report, make_outcome, patient_accuracy
from .simgen import generate_recording
from .train import train_classifier

log = logging.getLogger(__name__)


def windows_from_recordings(recordings, config):
    return build_windows(recordings, trim_s=config.trim_s, window=config.window, step=config.step)


def train_on_pre(windows, config, on_epoch=None):
    """Pool every patient's pre-treatment windows, split 80/20 and train.

    The validation windows' source ids are stored in the bundle metadata so
    per-patient pre-treatment accuracy can be measured on held-out data.
    """
    pre = windows.where(lambda s: s[1] == "pre")
    if len(pre) == 0:
        raise SplitError("no pre-treatment windows to train on")
    for name, count in zip(pre.class_names, pre.class_counts()):
        if count == 0:
            raise SplitError(f"class {name!r} has no pre-treatment windows")
    train, val = stratified_split(pre, config.train_fraction, config.seed,
                                  by=config.split_granularity)
    bundle, history = train_classifier(train, val, config, on_epoch)
    bundle.metadata = {
        "holdout": [list(s) for s in val.sources],
        "train_windows": len(train),
        "val_windows": len(val),
        "final_val_acc": history[-1].val_acc,
        "epochs_run": len(history),
        "seed": config.seed,
    }
    return bundle, history


def _holdout_ids(bundle):
    return {tuple(s) for s in bundle.metadata.get("holdout", [])}


def patient_accuracies(bundle, windows):
    """``{patient_id: (acc_pre, acc_post)}`` for every patient with both phases.

    Pre accuracy uses the patient's held-out pre windows recorded in the
    bundle (all pre windows when the bundle carries no holdout list).
    """
    holdout = _holdout_ids(bundle)
    patients = sorted({s[0] for s in windows.sources})
    result = {}
    for pid in patients:
        pre = windows.where(lambda s: s[0] == pid and s[1] == "pre"
                            and (not holdout or s in holdout))
        post = windows.where(lambda s: s[0] == pid and s[1] == "post")
        if len(pre) == 0 or len(post) == 0:
            log.warning("patient %s lacks pre or post windows; skipped", pid)
            continue
        acc_pre = patient_accuracy(bundle, apply_norm(pre, bundle.norm_stats))
        acc_post = patient_accuracy(bundle, apply_norm(post, bundle.norm_stats))
        result[pid] = (acc_pre, acc_post)
    return result


def accuracy_rows(accuracies, nrs_table):
    """Join accuracies with NRS pairs; patients without NRS are reported apart."""
    rows, missing = [], []
    for pid, (acc_pre, acc_post) in accuracies.items():
        if pid not in nrs_table:
            missing.append(pid)
            continue
        rows.append((pid, acc_pre, acc_post, *nrs_table[pid]))
    for pid in missing:
        log.warning("patient %s has no NRS entry; excluded from the threshold", pid)
    return rows, missing


def report_from_rows(rows, mode="and"):
    if not rows:
        raise EvaluationError("no patients with both accuracies and NRS scores")
    return build_report([make_outcome(*row, mode=mode) for row in rows])


def evaluate_cohort(bundle, windows, nrs_table, mode="and"):
    rows, missing = accuracy_rows(patient_accuracies(bundle, windows), nrs_table)
    return report_from_rows(rows, mode), rows, missing


def tes_sweep(bundle, windows, profile, effects, spec):
    """TES of ``profile`` with its post data regenerated at each effect size.

    The model, the pre-treatment accuracy and every random seed stay fixed;
    only the treatment effect applied to the post recordings changes.
    """
    holdout = _holdout_ids(bundle)
    pre = windows.where(lambda s: s[0] == profile.patient_id and s[1] == "pre"
                        and (not holdout or s in holdout))
    acc_pre = patient_accuracy(bundle, apply_norm(pre, bundle.norm_stats))
    out = {}
    for effect in effects:
        variant = dataclasses.replace(profile, effect_size=effect)
        recs = [
            generate_recording(variant, "post", activity, placement, trial,
                               spec.trial_duration_s, spec.rate_hz, spec.constants)
            for activity in spec.activities
            for placement in spec.placements
            for trial in range(spec.trials_per_condition)
        ]
        post = build_windows(recs, windows.class_names)
        out[effect] = acc_pre - patient_accuracy(bundle, apply_norm(post, bundle.norm_stats))
    return out
