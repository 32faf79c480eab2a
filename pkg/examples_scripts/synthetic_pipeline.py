"""
A small synthetic study end to end
==================================

Simulate three patients, train on their pre-treatment windows and score the
post-treatment data.  A three-patient cohort and eight epochs keep this to
about two minutes; the CLI runs the full-size study.
"""

import tempfile
from pathlib import Path

from detect.config import RunConfig
from detect.datapipe import load_recordings, read_nrs_table
from detect.pipeline import evaluate_cohort, train_on_pre, windows_from_recordings
from detect.simgen import CohortSpec, PatientProfile, generate_cohort

# Effect size 0 means post data comes from the same generator as pre data.
# Patient "c" reports less pain but does not move differently.
spec = CohortSpec(
    [
        PatientProfile("a", nrs_pre=6, nrs_post=2, effect_size=2.5, gait_freq_hz=1.8, seed=1),
        PatientProfile("b", nrs_pre=5, nrs_post=5, effect_size=0.0, gait_freq_hz=1.7, seed=2),
        PatientProfile("c", nrs_pre=4, nrs_post=1, effect_size=0.0, gait_freq_hz=1.9, seed=3),
    ],
    trials_per_condition=2,
    trial_duration_s=30.0,
)

out = Path(tempfile.mkdtemp())
manifest = generate_cohort(spec, out)
print(f"wrote {len(manifest)} files to {out}")

# Trim 2.5 s from each end, then cut 100-sample windows every 50 samples.
config = RunConfig(epochs=8)
windows = windows_from_recordings(load_recordings(out), config)
print(len(windows), "windows; per class:", dict(zip(windows.class_names, windows.class_counts())))

bundle, history = train_on_pre(windows, config, on_epoch=lambda r: print(r.log_line(config.epochs)))

# Pre accuracy comes from each patient's held-out pre windows, post accuracy
# from all of their post windows.
report, _, _ = evaluate_cohort(bundle, windows, read_nrs_table(out / "nrs.csv"))
for o in report.outcomes:
    print(f"{o.patient_id}: pre {o.acc_pre:6.2f}  post {o.acc_post:6.2f}  TES {o.tes:6.2f}  "
          f"pain improved {o.sig_nrs!s:5}  flagged {o.sig_detect}")
print(f"threshold {report.tes_threshold:.2f}, consistency {report.consistency_rate:.1f}%")

