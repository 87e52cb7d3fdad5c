"""
Group-fairness metrics from confusion counts
============================================

A walkthrough of the metric layer: build per-group confusion counts,
compute the eight group-fairness metrics, and read off who (if anyone)
is harmed.  Group 0 is always the unprivileged (minority) group and
group 1 the privileged (majority) group.
"""

from fairaudit.metrics import (
    ConfusionCounts,
    GroupOutcomes,
    all_metrics,
    disparate_impact_ratio,
    rates,
    selection_outcomes,
    verdict,
)

# ---------------------------------------------------------------------
# Why the error-rate ratio (ERR) can mislead on imbalanced data
# ---------------------------------------------------------------------
# A classifier that predicts "low activity" for everyone in a cohort of
# 3000 women (1000 of whom are actually high-activity) misses every
# positive woman, yet its *error rate* looks unremarkable next to the
# men's.

women = ConfusionCounts(tp=0, fp=0, fn=1000, tn=2000)
men = ConfusionCounts(tp=1860, fp=0, fn=2640, tn=3500)

print("error rate, women:", rates(women)["error_rate"])   # 1/3
print("error rate, men:  ", rates(men)["error_rate"])     # 0.33

outcomes = GroupOutcomes(g0=women, g1=men)
err = all_metrics(outcomes)["ERR"]
print("ERR:", round(err.value, 4), "-> looks like parity (~1.0)")

# ...but the selection-rate disparate impact ratio exposes the failure:
# zero women were ever selected for the high-activity class.
dir_sel = disparate_impact_ratio(outcomes)
print("selection-rate DIR:", dir_sel.value, "-> maximum disparity")

# ---------------------------------------------------------------------
# The full metric battery and its verdicts
# ---------------------------------------------------------------------
# Ratio metrics are read against the [0.8, 1.25] band, differences
# against [-0.1, 0.1].  Out-of-band values harm either the unprivileged
# or the privileged group depending on the metric's orientation.

for name, m in all_metrics(outcomes).items():
    if not m.defined:
        print(f"{name:>10}: undefined (zero denominator)")
        continue
    v = verdict(m)
    note = " (reading applied by analogy)" if v.analogical else ""
    print(f"{name:>10}: {m.value:8.4f}  harmed: {v.harmed.value}{note}")

# ---------------------------------------------------------------------
# Selection-only outcomes
# ---------------------------------------------------------------------
# When only selection counts are known (no ground-truth labels), build
# outcomes where base and selection rates coincide: 30/100 minority
# users selected vs 60/100 majority users.

sel = selection_outcomes(30, 100, 60, 100)
print("selection-only DIR:", disparate_impact_ratio(sel).value)  # 0.5

# Undefined metrics are reported as undefined, never coerced to 0 or
# infinity: here nobody in the majority group is selected.
empty = disparate_impact_ratio(selection_outcomes(5, 10, 0, 10))
print("DIR with zero majority selections -> defined:", empty.defined)
