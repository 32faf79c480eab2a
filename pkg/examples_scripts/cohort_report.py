"""
From per-patient accuracies to a cohort report
==============================================

No model is needed once accuracies are known: the decision layer is plain
arithmetic on them.
"""

from detect.evaluate import build_report, make_outcome, report_markdown

# (patient, pre accuracy %, post accuracy %, pain score before, after)
rows = [
    ("p01", 97.5, 81.0, 6, 2),
    ("p02", 98.2, 96.8, 4, 4),
    ("p03", 96.9, 84.4, 7, 3),
    ("p04", 98.0, 95.1, 3, 2),
    ("p05", 97.1, 93.3, 2, 0),
]

# The treatment effect score is the accuracy drop pre -> post.  A patient
# counts as improved on the pain scale with a drop of >= 2 points and >= 33%.
outcomes = [make_outcome(*row) for row in rows]
for o in outcomes:
    print(f"{o.patient_id}: TES {o.tes:5.2f}  pain improved: {o.sig_nrs}")

# The threshold is the mean TES of the pain-improved patients; everyone at or
# above it is flagged.
report = build_report(outcomes)
print()
print(report_markdown(report))

# The "or" reading of the pain predicate flags p04 (3 -> 2 is a 33% drop).
loose = build_report([make_outcome(*row, mode="or") for row in rows])
print("threshold and/or:", round(report.tes_threshold, 2), round(loose.tes_threshold, 2))
