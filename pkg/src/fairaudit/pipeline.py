"""End-to-end audit orchestration used by the CLI.

The full audit chains: ingest -> data audits -> train aware/unaware ->
personalize per attribute -> aggregation/intersectional/learning audits ->
parity benchmarks -> evaluation audit -> one consolidated report. The
whole chain is deterministic under the configured seed. Per-attribute
personalization runs on a thread pool capped by FAIRAUDIT_THREADS
(default 1); all inputs are immutable so ordering is the only source of
nondeterminism and results are collected in attribute order.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import data_audit, model_audit, models, report
from .datasets import (
    ATTRIBUTES,
    GroupPartition,
    LabelRule,
    PartitionStrategy,
    WindowSet,
    aware_feature_matrix,
    binarize_all,
    build_windows,
    partition,
    split,
)


class DegenerateAuditError(RuntimeError):
    """At least one audit was degenerate (e.g. an empty group) under --strict."""

    def __init__(self, events: list):
        super().__init__("; ".join(events))
        self.events = events


@dataclass
class AuditConfig:
    label_rule: LabelRule = field(default_factory=LabelRule)
    test_fraction: float = 0.25
    model: dict = field(default_factory=dict)
    attributes: tuple = ATTRIBUTES
    pairs: tuple = ()
    deviation_tol: float = data_audit.DEFAULT_DEVIATION_TOL
    min_fraction: float = data_audit.DEFAULT_MIN_FRACTION
    alpha: float = data_audit.DEFAULT_ALPHA
    parity_tolerance: float = model_audit.DEFAULT_PARITY_TOL
    amplification_tol: float = model_audit.DEFAULT_AMPLIFICATION_TOL
    seed: int = 0

    def __post_init__(self):
        self.attributes = tuple(self.attributes)
        if not self.pairs:
            # the reference analysis keeps one health condition fixed and
            # pairs it with every other audited attribute
            self.pairs = tuple(
                ("diabetes", a) for a in self.attributes if a != "diabetes"
            )
        self.pairs = tuple(tuple(p) for p in self.pairs)

    @classmethod
    def from_json(cls, payload: dict, seed: Optional[int] = None) -> "AuditConfig":
        kwargs = dict(payload)
        if "label_rule" in kwargs:
            kwargs["label_rule"] = LabelRule(**kwargs["label_rule"])
        if seed is not None:
            kwargs["seed"] = seed
        return cls(**kwargs)

    def to_json(self) -> dict:
        return {
            "label_rule": {
                "kind": self.label_rule.kind,
                "threshold": self.label_rule.threshold,
            },
            "test_fraction": self.test_fraction,
            "model": dict(self.model),
            "attributes": list(self.attributes),
            "pairs": [list(p) for p in self.pairs],
            "deviation_tol": self.deviation_tol,
            "min_fraction": self.min_fraction,
            "alpha": self.alpha,
            "parity_tolerance": self.parity_tolerance,
            "amplification_tol": self.amplification_tol,
            "seed": self.seed,
        }

    def model_config(self, input_length: int) -> models.ModelConfig:
        return models.ModelConfig(
            input_length=input_length, seed=self.seed, **self.model
        )


def max_threads() -> int:
    try:
        return max(1, int(os.environ.get("FAIRAUDIT_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items):
    """Order-preserving map over a pool capped by FAIRAUDIT_THREADS."""
    items = list(items)
    workers = min(max_threads(), max(1, len(items)))
    if workers == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def dataset_fingerprint(records, profiles, binarized, windows) -> dict:
    from .datasets import GroupLabel

    group_sizes = {}
    for attr in ATTRIBUTES:
        labels = [b[attr] for b in binarized.values()]
        group_sizes[attr] = {
            "minority": sum(1 for l in labels if l is GroupLabel.MINORITY),
            "majority": sum(1 for l in labels if l is GroupLabel.MAJORITY),
            "missing": sum(1 for l in labels if l is GroupLabel.MISSING),
        }
    return {
        "n_records": int(len(records)),
        "n_users": len(profiles),
        "n_windows": int(len(windows)),
        "group_sizes": group_sizes,
    }


def run_data_audits(
    records, binarized, windows: WindowSet, cfg: AuditConfig, reference=None
):
    """(representation dict, measurement list, degenerate events)."""
    events = []
    misrep = []
    if reference is not None:
        misrep = data_audit.audit_misrepresentation(
            binarized, reference, cfg.deviation_tol
        )
    underrep = data_audit.audit_underrepresentation(binarized, cfg.min_fraction)
    uneven = []
    measurement = []
    for attr in cfg.attributes:
        part = partition(binarized, attr)
        finding = data_audit.audit_uneven_sampling(windows, part)
        uneven.append(finding)
        if finding.degenerate:
            events.append(f"uneven-sampling audit degenerate for {attr}")
        found = data_audit.audit_measurement(records, part, cfg.alpha)
        if not found:
            events.append(f"measurement audit skipped for {attr}: empty group")
        measurement.extend(found)
    representation = {
        "misrepresentation": [report.representation_json(f) for f in misrep],
        "underrepresentation": [
            report.representation_json(f)
            for f in underrep
            if f.attribute in cfg.attributes
        ],
        "uneven_sampling": [report.representation_json(f) for f in uneven],
    }
    return representation, [report.measurement_json(f) for f in measurement], events


def train_models(train: WindowSet, binarized, cfg: AuditConfig):
    """(unaware SharedModel, aware SharedModel or None)."""
    unaware = models.train_shared(
        train.features, train.labels, cfg.model_config(input_length=48)
    )
    aware_matrix, keep = aware_feature_matrix(train, binarized)
    aware = None
    if keep.any() and len(np.unique(train.labels[keep])) == 2:
        aware = models.train_shared(
            aware_matrix, train.labels[keep], cfg.model_config(input_length=56)
        )
    return unaware, aware


def run_full_audit(
    records,
    profiles,
    cfg: AuditConfig,
    reference=None,
    provenance: Optional[dict] = None,
):
    """Run the whole chain; returns (report dict, degenerate event list)."""
    events = []
    binarized = binarize_all(profiles)
    windows = build_windows(records, cfg.label_rule)
    train, test = split(windows, cfg.test_fraction, cfg.seed)
    threshold = cfg.label_rule.resolve(train.raw_next_day_total)
    fixed = LabelRule(kind="fixed", threshold=threshold)
    train = train.relabeled(fixed)
    test = test.relabeled(fixed)
    windows = windows.relabeled(fixed)

    representation, measurement, data_events = run_data_audits(
        records, binarized, windows, cfg, reference
    )
    events.extend(data_events)

    singles = {}
    for attr in cfg.attributes:
        part = partition(binarized, attr)
        singles[attr] = part
        if part.degenerate:
            events.append(f"partition degenerate for {attr}")

    unaware, aware = train_models(train, binarized, cfg)
    if aware is None:
        events.append("aware model skipped: no complete-profile training windows")

    unaware_pred = unaware.predict_label(test.features)
    aware_matrix_test, aware_keep = aware_feature_matrix(test, binarized)
    aware_test = test.subset(aware_keep)
    aware_pred = (
        aware.predict_label(aware_matrix_test)
        if aware is not None and aware_keep.any()
        else None
    )

    usable = [
        attr
        for attr in cfg.attributes
        if not singles[attr].degenerate
    ]

    def _personalize(attr):
        return attr, models.personalize(
            unaware, singles[attr], train.features, train.labels, train.user_ids
        )

    personalized = dict(parallel_map(_personalize, usable))
    for attr, pers in personalized.items():
        if pers.fallback_groups:
            events.append(
                f"personalization for {attr}: groups {pers.fallback_groups} kept "
                "the shared output layer (no training data)"
            )

    single_parts = [singles[a] for a in cfg.attributes]
    aggregation = model_audit.audit_aggregation(
        unaware_pred, test, single_parts, variant="Unaware", amplification_tol=cfg.amplification_tol
    )
    if aware_pred is not None:
        aggregation += model_audit.audit_aggregation(
            aware_pred, aware_test, single_parts, variant="Aware",
            amplification_tol=cfg.amplification_tol,
        )
    pers_pred = {}
    for attr in usable:
        pred = personalized[attr].predict_label(test.features, test.user_ids)
        pers_pred[attr] = pred
        aggregation += model_audit.audit_aggregation(
            pred, test, [singles[attr]], variant="Personalized",
            amplification_tol=cfg.amplification_tol,
        )
    for finding in aggregation:
        if not finding.defined:
            events.append(
                f"aggregation audit undefined for {finding.partition_name} "
                f"({finding.variant})"
            )

    pair_parts = []
    for a, b in cfg.pairs:
        for strategy in (
            PartitionStrategy.MINORITY_MINORITY_VS_REST,
            PartitionStrategy.MAJORITY_MAJORITY_VS_REST,
        ):
            pair_parts.append(partition(binarized, (a, b), strategy))
    intersectional = model_audit.audit_intersectional(
        unaware_pred, test, pair_parts, single_parts, variant="Unaware"
    )

    learning = [
        model_audit.audit_learning(unaware_pred, pers_pred[attr], test, singles[attr])
        for attr in usable
    ]

    benchmarks = []
    evaluation = []
    for attr in usable:
        part = singles[attr]
        try:
            pair = model_audit.make_parity_benchmark(
                test, part, cfg.parity_tolerance, cfg.seed
            )
        except model_audit.BenchmarkError as exc:
            events.append(f"parity benchmark for {attr}: {exc}")
            continue
        preds = {
            "Unaware": (
                unaware_pred,
                unaware.predict_label(pair.t0.features),
            ),
            f"Personalized[{attr}]": (
                pers_pred[attr],
                personalized[attr].predict_label(pair.t0.features, pair.t0.user_ids),
            ),
        }
        if aware is not None and aware_keep.all():
            t0_matrix, t0_keep = aware_feature_matrix(pair.t0, binarized)
            if t0_keep.all():
                preds["Aware"] = (aware_pred, aware.predict_label(t0_matrix))
        benchmarks.append(pair)
        evaluation.extend(model_audit.audit_evaluation(preds, pair, part))

    doc = report.assemble_report(
        seed=cfg.seed,
        config=cfg.to_json(),
        dataset_fingerprint=dataset_fingerprint(records, profiles, binarized, windows),
        representation=representation,
        measurement=measurement,
        model_bias={
            "aggregation": [report.model_bias_json(f) for f in aggregation],
            "intersectional": [report.model_bias_json(f) for f in intersectional],
            "learning": [report.learning_json(f) for f in learning],
        },
        benchmarks=[report.benchmark_json(p) for p in benchmarks],
        evaluation=[report.evaluation_json(f) for f in evaluation],
        provenance={
            **(provenance or {}),
            "label_threshold": threshold,
            "train_windows": int(len(train)),
            "test_windows": int(len(test)),
            "degenerate_events": list(events),
        },
    )
    return doc, events
