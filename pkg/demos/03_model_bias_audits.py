"""
Auditing a trained activity model for bias
==========================================

Train the from-scratch recurrent classifier on a biased synthetic
corpus, then walk the three model audits: aggregation (does one shared
model propagate or amplify the data bias?), learning (does per-group
personalization amplify it?) and evaluation (does the test set hide
it?).
"""

import numpy as np

from fairaudit.datasets import (
    LabelRule,
    PartitionStrategy,
    binarize_all,
    build_windows,
    partition,
    split,
)
from fairaudit.model_audit import (
    audit_aggregation,
    audit_evaluation,
    audit_intersectional,
    audit_learning,
    make_parity_benchmark,
)
from fairaudit.models import ModelConfig, personalize, train_shared
from fairaudit.synth import SynthSpec, generate

# ---------------------------------------------------------------------
# Biased training data: women's high-activity base rate is 0.1, men's 0.7
# ---------------------------------------------------------------------
spec = SynthSpec(
    n_users=240,
    n_days=6,
    seed=0,
    base_rate_g0=0.1,
    base_rate_g1=0.7,
    minority_probability={**{a: 0.3 for a in SynthSpec().minority_probability},
                          "gender": 0.5},
)
result = generate(spec)
binarized = binarize_all(result.profiles)
windows = build_windows(result.records, LabelRule(kind="fixed", threshold=8000))
train, test = split(windows, test_fraction=0.3, seed=0)
gender = partition(binarized, "gender")

# ---------------------------------------------------------------------
# One shared, attribute-unaware model
# ---------------------------------------------------------------------
# The classifier sees only the 48 hourly counts; protected attributes
# never enter.  Even so, the window shape is a proxy for the group.

config = ModelConfig(
    input_length=48, hidden_size=8, recurrent_layers=1,
    dropout_rate=0.0, epochs=12, learning_rate=0.01, seed=0,
)
model = train_shared(train.features, train.labels.astype(int), config)
pred = model.predict_label(test.features)
print("test accuracy:", round(float((pred == test.labels).mean()), 3))

# ---------------------------------------------------------------------
# Aggregation audit: data DIR vs model DIR
# ---------------------------------------------------------------------
(finding,) = audit_aggregation(pred, test, [gender])
print("aggregation:", f"data DIR {finding.data_dir.value:.3f},",
      f"model DIR {finding.dir.value:.3f} ->", finding.classification)

# Intersectional subgroups (e.g. diabetic women vs everyone else) can
# fare worse than either constituent group alone.
pair = partition(binarized, ("diabetes", "gender"),
                 PartitionStrategy.MINORITY_MINORITY_VS_REST)
for f in audit_intersectional(pred, test, [pair], [gender]):
    print("intersectional:", f.partition_name, "model DIR",
          round(f.dir.value, 3) if f.defined else "undefined")

# ---------------------------------------------------------------------
# Learning audit: does personalization amplify the bias?
# ---------------------------------------------------------------------
# Personalization freezes the recurrent layers and fine-tunes one output
# layer per group.  Each head fits its own group's (biased) base rate,
# typically pushing the disparity further from parity.

pers = personalize(model, gender, train.features, train.labels.astype(int),
                   train.user_ids, epochs=100, learning_rate=0.05)
pers_pred = pers.predict_label(test.features, test.user_ids)
lf = audit_learning(pred, pers_pred, test, gender)
print("learning:", f"shared DIR {lf.dir_shared.value:.3f},",
      f"personalized DIR {lf.dir_personalized.value:.3f},",
      f"delta-bias {lf.delta_bias:+.3f}",
      "(> 0 means personalization amplified the bias)")

# ---------------------------------------------------------------------
# Evaluation audit: a demographically balanced test subset
# ---------------------------------------------------------------------
# The benchmark removes the fewest windows from a single (group, label)
# cell to bring the test set's base rates to parity.  Comparing a
# model's DIR on the full set vs the parity subset shows whether the
# evaluation data itself was masking (or exaggerating) the disparity.

bench = make_parity_benchmark(test, gender, tolerance=0.05, seed=0)
print("benchmark: removed", bench.removed_count, "windows",
      f"(group {bench.removed_group}, label {bench.removed_label});",
      "achieved DIR", round(bench.achieved_dir, 3))

preds = {"Unaware": (model.predict_label(bench.t1.features),
                     model.predict_label(bench.t0.features))}
for f in audit_evaluation(preds, bench, gender):
    print("evaluation:", f.model_name,
          f"DIR on full test {f.dir_t1.value:.3f},",
          f"on parity subset {f.dir_t0.value:.3f} ->",
          "hiding" if f.hiding else "no hiding")
