"""Aggregation, learning and evaluation bias audits for trained models.

All audits consume hard predicted labels aligned with a test WindowSet, so
the same functions serve any model variant (aware, unaware, personalized,
or a hypothetical perfect/constant predictor). The parity benchmark builds
a subset T0 of a test set T1 whose base rates satisfy demographic parity
for one targeted attribute by removing windows from a single
(group, label) cell.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from . import metrics
from .datasets import GroupPartition, WindowSet
from .data_audit import group_label_counts

DEFAULT_AMPLIFICATION_TOL = 0.05
DEFAULT_PARITY_TOL = 0.05

_CELLS = ((0, True), (0, False), (1, True), (1, False))


class BenchmarkError(ValueError):
    """Parity is unreachable within tolerance by single-cell removal."""

    def __init__(self, message: str, best_achievable_dir: Optional[float]):
        super().__init__(message)
        self.best_achievable_dir = best_achievable_dir


@dataclass(frozen=True)
class ModelBiasFinding:
    partition_name: str
    attributes: tuple
    strategy: str
    variant: str
    dir: metrics.MetricValue
    verdict: Optional[metrics.Verdict]
    data_dir: Optional[metrics.MetricValue] = None
    classification: Optional[str] = None  # Propagated | Amplified | Mitigated
    auxiliary: dict = None
    defined: bool = True


@dataclass(frozen=True)
class LearningFinding:
    partition_name: str
    dir_shared: metrics.MetricValue
    dir_personalized: metrics.MetricValue
    delta_bias: Optional[float]  # |DIR_pers - 1| - |DIR_shared - 1|


@dataclass(frozen=True)
class BenchmarkPair:
    """T1 and its parity subset T0 for one targeted partition."""

    t1: WindowSet
    t0: WindowSet
    partition_name: str
    achieved_dir: float
    removed_group: Optional[int]
    removed_label: Optional[bool]
    removed_count: int
    seed: int


@dataclass(frozen=True)
class EvaluationFinding:
    model_name: str
    partition_name: str
    dir_t1: metrics.MetricValue
    dir_t0: metrics.MetricValue
    hiding: Optional[bool]  # |DIR_T0 - 1| < |DIR_T1 - 1|


def group_confusions(
    predictions: np.ndarray, windows: WindowSet, part: GroupPartition
) -> Optional[metrics.GroupOutcomes]:
    """Per-group confusion counts of predictions against window labels.

    Returns None when either group has no windows in the set.
    """
    counts = {0: [0, 0, 0, 0], 1: [0, 0, 0, 0]}  # tp, fp, fn, tn
    for pred, truth, user in zip(predictions, windows.labels, windows.user_ids):
        g = part.group_of(user)
        if g is None:
            continue
        if pred and truth:
            counts[g][0] += 1
        elif pred and not truth:
            counts[g][1] += 1
        elif not pred and truth:
            counts[g][2] += 1
        else:
            counts[g][3] += 1
    if sum(counts[0]) == 0 or sum(counts[1]) == 0:
        return None
    return metrics.GroupOutcomes(
        g0=metrics.ConfusionCounts(*counts[0]),
        g1=metrics.ConfusionCounts(*counts[1]),
    )


def selection_dir(
    predictions: np.ndarray, windows: WindowSet, part: GroupPartition
) -> Optional[metrics.MetricValue]:
    outcomes = group_confusions(predictions, windows, part)
    if outcomes is None:
        return None
    return metrics.disparate_impact_ratio(outcomes, mode="selection")


def base_rate_dir(windows: WindowSet, part: GroupPartition) -> Optional[metrics.MetricValue]:
    (pos0, n0), (pos1, n1) = group_label_counts(windows, part)
    if n0 == 0 or n1 == 0:
        return None
    return metrics.disparate_impact_ratio(
        metrics.selection_outcomes(pos0, n0, pos1, n1), mode="base"
    )


def classify_propagation(
    dir_data: float, dir_model: float, tol: float = DEFAULT_AMPLIFICATION_TOL
) -> str:
    """Propagated/Amplified/Mitigated by distance-from-parity comparison."""
    gap = abs(dir_model - 1.0) - abs(dir_data - 1.0)
    if gap > tol:
        return "Amplified"
    if gap < -tol:
        return "Mitigated"
    return "Propagated"


def audit_aggregation(
    predictions: np.ndarray,
    windows: WindowSet,
    partitions,
    variant: str = "Unaware",
    amplification_tol: float = DEFAULT_AMPLIFICATION_TOL,
) -> list[ModelBiasFinding]:
    """Selection-rate DIR per partition, paired with the data's base-rate
    DIR and a Propagated/Amplified/Mitigated classification."""
    findings = []
    for part in partitions:
        outcomes = group_confusions(predictions, windows, part)
        data_dir = base_rate_dir(windows, part)
        if outcomes is None:
            findings.append(
                ModelBiasFinding(
                    partition_name=part.name,
                    attributes=part.attributes,
                    strategy=part.strategy.value,
                    variant=variant,
                    dir=metrics.MetricValue("DIR", float("nan"), "ratio", False),
                    verdict=None,
                    data_dir=data_dir,
                    auxiliary={},
                    defined=False,
                )
            )
            continue
        model_dir = metrics.disparate_impact_ratio(outcomes, mode="selection")
        aux = {
            name: m
            for name, m in metrics.all_metrics(outcomes).items()
            if name != "DIR"
        }
        classification = None
        if model_dir.defined and data_dir is not None and data_dir.defined:
            classification = classify_propagation(
                data_dir.value, model_dir.value, amplification_tol
            )
        findings.append(
            ModelBiasFinding(
                partition_name=part.name,
                attributes=part.attributes,
                strategy=part.strategy.value,
                variant=variant,
                dir=model_dir,
                verdict=metrics.verdict(model_dir) if model_dir.defined else None,
                data_dir=data_dir,
                classification=classification,
                auxiliary=aux,
                defined=model_dir.defined,
            )
        )
    return findings


def audit_intersectional(
    predictions: np.ndarray,
    windows: WindowSet,
    pair_partitions,
    single_partitions,
    variant: str = "Unaware",
) -> list[ModelBiasFinding]:
    """Selection-rate DIR per (pair, strategy) partition, reported next to
    the single-attribute DIRs of both constituents. Pairs with an empty
    intersection on the test set are skipped."""
    findings = []
    singles_by_attr = {p.attributes[0]: p for p in single_partitions}
    for part in pair_partitions:
        outcomes = group_confusions(predictions, windows, part)
        if outcomes is None:
            continue
        model_dir = metrics.disparate_impact_ratio(outcomes, mode="selection")
        aux = {}
        for attr in part.attributes:
            single = singles_by_attr.get(attr)
            if single is None:
                continue
            single_dir = selection_dir(predictions, windows, single)
            if single_dir is not None:
                aux[f"single:{attr}"] = single_dir
        findings.append(
            ModelBiasFinding(
                partition_name=part.name,
                attributes=part.attributes,
                strategy=part.strategy.value,
                variant=variant,
                dir=model_dir,
                verdict=metrics.verdict(model_dir) if model_dir.defined else None,
                auxiliary=aux,
                defined=model_dir.defined,
            )
        )
    return findings


def audit_learning(
    shared_predictions: np.ndarray,
    personalized_predictions: np.ndarray,
    windows: WindowSet,
    part: GroupPartition,
) -> LearningFinding:
    """Compare shared vs personalized selection-rate DIR on one test set.

    Positive delta_bias means personalization moved DIR farther from
    parity, i.e. amplified bias.
    """
    dir_shared = selection_dir(shared_predictions, windows, part)
    dir_pers = selection_dir(personalized_predictions, windows, part)
    undefined = metrics.MetricValue("DIR", float("nan"), "ratio", False)
    dir_shared = dir_shared if dir_shared is not None else undefined
    dir_pers = dir_pers if dir_pers is not None else undefined
    delta = None
    if dir_shared.defined and dir_pers.defined:
        delta = abs(dir_pers.value - 1.0) - abs(dir_shared.value - 1.0)
    return LearningFinding(
        partition_name=part.name,
        dir_shared=dir_shared,
        dir_personalized=dir_pers,
        delta_bias=delta,
    )


def _cell_indices(windows: WindowSet, part: GroupPartition):
    """(group, label) -> window index list; windows outside both groups
    are never candidates for removal."""
    cells = {cell: [] for cell in _CELLS}
    for i, (user, label) in enumerate(zip(windows.user_ids, windows.labels)):
        g = part.group_of(user)
        if g is not None:
            cells[(g, bool(label))].append(i)
    return cells


def make_parity_benchmark(
    t1: WindowSet,
    part: GroupPartition,
    tolerance: float = DEFAULT_PARITY_TOL,
    seed: int = 0,
) -> BenchmarkPair:
    """Build T0 ⊆ T1 with base-rate demographic parity for one attribute.

    Removes windows from exactly one (group, label) cell. Among single-cell
    solutions achieving exact parity the one with fewest removals wins;
    when exact parity is infeasible the closest achievable DIR is used if
    it lands within ``tolerance`` of 1, otherwise a BenchmarkError names
    the best achievable value. Which windows are removed from the chosen
    cell is seeded-random; the count and cell are deterministic.
    """
    cells = _cell_indices(t1, part)
    pos0, neg0 = len(cells[(0, True)]), len(cells[(0, False)])
    pos1, neg1 = len(cells[(1, True)]), len(cells[(1, False)])
    if pos0 == 0 or pos1 == 0:
        raise BenchmarkError(
            "parity unreachable: a group has no positive windows", None
        )

    base = {(0, True): pos0, (0, False): neg0, (1, True): pos1, (1, False): neg1}
    best_exact = None  # (k, cell)
    best_any = None  # (|dir-1|, k, cell, dir)
    for cell in _CELLS:
        g, lab = cell
        for k in range(base[cell] + 1):
            c = dict(base)
            c[cell] = base[cell] - k
            p0, n0 = c[(0, True)], c[(0, True)] + c[(0, False)]
            p1, n1 = c[(1, True)], c[(1, True)] + c[(1, False)]
            if n0 == 0 or n1 == 0 or p1 == 0:
                continue
            dir_frac = Fraction(p0, n0) / Fraction(p1, n1)
            dist = abs(dir_frac - 1)
            if dist == 0 and (best_exact is None or k < best_exact[0]):
                best_exact = (k, cell)
            if best_any is None or (dist, k) < (best_any[0], best_any[1]):
                best_any = (dist, k, cell, dir_frac)

    if best_exact is not None:
        k, cell = best_exact
        achieved = 1.0
    else:
        dist, k, cell, dir_frac = best_any
        achieved = float(dir_frac)
        if float(dist) > tolerance:
            raise BenchmarkError(
                f"parity unreachable within tolerance {tolerance}; best "
                f"achievable DIR is {achieved:.4f}",
                achieved,
            )

    keep = np.ones(len(t1), dtype=bool)
    removed_group, removed_label = (None, None)
    if k > 0:
        rng = np.random.default_rng(seed)
        drop = rng.choice(np.array(cells[cell]), size=k, replace=False)
        keep[drop] = False
        removed_group, removed_label = cell
    t0 = t1.subset(keep)

    recomputed = base_rate_dir(t0, part)
    if recomputed is None or not recomputed.defined:
        raise BenchmarkError("parity benchmark degenerate after removal", None)
    if abs(recomputed.value - 1.0) > tolerance + 1e-12:
        raise BenchmarkError(
            f"achieved DIR {recomputed.value:.4f} outside tolerance {tolerance}",
            recomputed.value,
        )
    return BenchmarkPair(
        t1=t1,
        t0=t0,
        partition_name=part.name,
        achieved_dir=recomputed.value,
        removed_group=removed_group,
        removed_label=removed_label,
        removed_count=int(k),
        seed=seed,
    )


def audit_evaluation(
    model_predictions: dict,
    pair: BenchmarkPair,
    part: GroupPartition,
) -> list[EvaluationFinding]:
    """DIR on T1 vs T0 per model, with the benchmark-hiding indicator.

    ``model_predictions`` maps a model name to a (predictions_on_t1,
    predictions_on_t0) tuple of hard labels.
    """
    findings = []
    undefined = metrics.MetricValue("DIR", float("nan"), "ratio", False)
    for name, (pred_t1, pred_t0) in model_predictions.items():
        d1 = selection_dir(pred_t1, pair.t1, part) or undefined
        d0 = selection_dir(pred_t0, pair.t0, part) or undefined
        hiding = None
        if d1.defined and d0.defined:
            hiding = abs(d0.value - 1.0) < abs(d1.value - 1.0)
        findings.append(
            EvaluationFinding(
                model_name=name,
                partition_name=part.name,
                dir_t1=d1,
                dir_t0=d0,
                hiding=hiding,
            )
        )
    return findings
