"""
Auditing a step-count dataset for data bias
===========================================

Generate a synthetic corpus with known injected biases, then run the
three representation audits (misrepresentation, underrepresentation,
uneven sampling) and the measurement audit against it.  Because the
generator writes its ground truth alongside the data, every finding can
be checked against what was actually injected.
"""

from pathlib import Path

from fairaudit.data_audit import (
    ReferencePopulation,
    audit_measurement,
    audit_misrepresentation,
    audit_underrepresentation,
    audit_uneven_sampling,
)
from fairaudit.datasets import LabelRule, binarize_all, build_windows, partition
from fairaudit.synth import SynthSpec, generate, inject_measurement_skew

# ---------------------------------------------------------------------
# A corpus with three injected problems
# ---------------------------------------------------------------------
# - women are undersampled (20% of the cohort instead of ~50%)
# - women's high-activity base rate is half the men's (0.3 vs 0.6)
# - women's step counts come mostly from phones, men's from watches

spec = SynthSpec(
    n_users=400,
    n_days=6,
    seed=7,
    bias_attribute="gender",
    minority_probability={**{a: 0.3 for a in SynthSpec().minority_probability},
                          "gender": 0.2},
    base_rate_g0=0.3,
    base_rate_g1=0.6,
    source_ownership_g0={"Phone": 1.0, "Watch": 0.1, "ThirdParty": 0.2},
    source_ownership_g1={"Phone": 0.6, "Watch": 0.9, "ThirdParty": 0.2},
)
result = generate(spec)
binarized = binarize_all(result.profiles)
print("injected base-rate DIR:", round(result.ground_truth.base_rate_dir, 3))

# ---------------------------------------------------------------------
# Misrepresentation: cohort vs a reference population
# ---------------------------------------------------------------------
# The reference file lists real-world minority-per-majority ratios; an
# attribute is flagged when the cohort ratio deviates by more than 50%.

reference = ReferencePopulation.from_csv(
    Path(__file__).with_name("reference_population.csv")
)
for finding in audit_misrepresentation(binarized, reference):
    flag = ", ".join(sorted(f.value for f in finding.flags)) or "ok"
    print(f"misrepresentation {finding.attribute:>15}: "
          f"cohort {finding.dataset_ratio:.2f} vs reference "
          f"{finding.reference_ratio:.2f} -> {flag}")

# ---------------------------------------------------------------------
# Underrepresentation: is the minority simply too small?
# ---------------------------------------------------------------------
# An attribute is flagged when the minority share drops below 20%; with
# women at ~20% of this cohort the gender attribute sits right at the
# edge, so print every share rather than only the flagged ones.
for finding in audit_underrepresentation(binarized):
    share = finding.minority_count / (finding.minority_count + finding.majority_count)
    flag = "UNDERREPRESENTED" if finding.flags else "ok"
    print(f"underrepresentation {finding.attribute:>15}: "
          f"minority share {share:.2f} -> {flag}")

# ---------------------------------------------------------------------
# Uneven sampling: do the groups behave differently in the data?
# ---------------------------------------------------------------------
# Windows pair two observed days of hourly counts with the next day's
# high/low-activity label; the base-rate DIR between groups quantifies
# the behavioral gap.

windows = build_windows(result.records, LabelRule(kind="fixed", threshold=8000))
gender = partition(binarized, "gender")
finding = audit_uneven_sampling(windows, gender)
print("uneven sampling: base-rate DIR =",
      round(finding.base_rate_dir.value, 3),
      "flags:", sorted(f.value for f in finding.flags))

# ---------------------------------------------------------------------
# Measurement bias: per-source ownership differences
# ---------------------------------------------------------------------
# The audit compares, per source, the share of users in each group with
# any record from that source, using a two-proportion test (Fisher's
# exact test when counts are small).

for m in audit_measurement(result.records, gender):
    marker = "SIGNIFICANT" if m.significant else "not significant"
    print(f"measurement {m.source:>10}: {m.proportion_g0:.2f} vs "
          f"{m.proportion_g1:.2f} (p={m.p_value:.3g}, {m.test}) -> {marker}")

# A measurement skew can also be injected directly: here watch counts
# are scaled down by 30%, which depresses the watch-owning group's
# apparent activity.
skewed = inject_measurement_skew(result.records, "Watch", factor=0.7, noise=0.05)
skewed_windows = build_windows(skewed, LabelRule(kind="fixed", threshold=8000))
after = audit_uneven_sampling(skewed_windows, gender)
print("base-rate DIR after skewing watch counts:",
      round(after.base_rate_dir.value, 3))
