"""Representation and measurement bias audits over an ingested dataset.

Representation audits cover three failure modes: the cohort not matching a
reference population (misrepresentation), minority groups that are too
small (underrepresentation), and minority/majority groups whose recorded
behavior differs (uneven sampling, quantified by base-rate DIR).
Measurement audits compare per-group proportions of users with at least one
record from each source, with a two-sided significance test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
import pandas as pd
from scipy import stats

from . import metrics
from .datasets import (
    ATTRIBUTES,
    SOURCES,
    GroupLabel,
    GroupPartition,
    WindowSet,
)

DEFAULT_DEVIATION_TOL = 0.5
DEFAULT_MIN_FRACTION = 0.2
DEFAULT_ALPHA = 0.05

#: Below this count in any 2x2 cell the normal approximation is replaced by
#: Fisher's exact test.
EXACT_TEST_CELL_MIN = 5


class RepresentationFlag(str, Enum):
    MISREPRESENTED = "Misrepresented"
    UNDERREPRESENTED = "Underrepresented"
    UNEVENLY_SAMPLED = "UnevenlySampled"


@dataclass(frozen=True)
class ReferencePopulation:
    """Real-world minority-per-majority ratios per protected attribute."""

    ratios: dict

    def __post_init__(self):
        for attr, ratio in self.ratios.items():
            if attr not in ATTRIBUTES:
                raise ValueError(f"unknown attribute {attr!r} in reference population")
            if not ratio > 0:
                raise ValueError(f"reference ratio for {attr} must be > 0, got {ratio}")

    @classmethod
    def from_csv(cls, path) -> "ReferencePopulation":
        df = pd.read_csv(path)
        expected = ["attribute", "minority_per_majority_ratio"]
        if list(df.columns) != expected:
            raise ValueError(f"reference file {path}: expected columns {expected}")
        return cls(
            ratios=dict(
                zip(df["attribute"], df["minority_per_majority_ratio"].astype(float))
            )
        )


@dataclass(frozen=True)
class RepresentationFinding:
    attribute: str
    minority_count: int
    majority_count: int
    dataset_ratio: Optional[float]
    reference_ratio: Optional[float] = None
    base_rate_dir: Optional[metrics.MetricValue] = None
    flags: frozenset = frozenset()
    degenerate: bool = False


@dataclass(frozen=True)
class MeasurementFinding:
    attribute: str
    source: str
    proportion_g0: float
    proportion_g1: float
    n_g0: int
    n_g1: int
    p_value: float
    alpha: float
    significant: bool
    test: str  # "z" | "fisher"


def group_counts(binarized: dict, attribute: str) -> tuple[int, int]:
    """(minority, majority) user counts for one attribute, Missing excluded."""
    labels = [p[attribute] for p in binarized.values()]
    return (
        sum(1 for l in labels if l is GroupLabel.MINORITY),
        sum(1 for l in labels if l is GroupLabel.MAJORITY),
    )


def audit_misrepresentation(
    binarized: dict,
    reference: ReferencePopulation,
    deviation_tol: float = DEFAULT_DEVIATION_TOL,
) -> list[RepresentationFinding]:
    """Flag attributes whose dataset minority/majority ratio deviates from
    the reference ratio by more than ``deviation_tol`` (relative)."""
    if not deviation_tol > 0:
        raise ValueError("deviation_tol must be > 0")
    findings = []
    for attr, ref_ratio in reference.ratios.items():
        minority, majority = group_counts(binarized, attr)
        if majority == 0:
            findings.append(
                RepresentationFinding(
                    attribute=attr,
                    minority_count=minority,
                    majority_count=majority,
                    dataset_ratio=None,
                    reference_ratio=ref_ratio,
                    degenerate=True,
                )
            )
            continue
        ratio = minority / majority
        flags = set()
        if abs(ratio - ref_ratio) / ref_ratio > deviation_tol:
            flags.add(RepresentationFlag.MISREPRESENTED)
        findings.append(
            RepresentationFinding(
                attribute=attr,
                minority_count=minority,
                majority_count=majority,
                dataset_ratio=ratio,
                reference_ratio=ref_ratio,
                flags=frozenset(flags),
            )
        )
    return findings


def audit_underrepresentation(
    binarized: dict, min_fraction: float = DEFAULT_MIN_FRACTION
) -> list[RepresentationFinding]:
    """Flag attributes whose minority share of the cohort is below
    ``min_fraction``."""
    findings = []
    for attr in ATTRIBUTES:
        minority, majority = group_counts(binarized, attr)
        total = minority + majority
        flags = set()
        degenerate = False
        if total == 0:
            ratio = None
            degenerate = True
        else:
            ratio = minority / majority if majority else None
            if minority / total < min_fraction:
                flags.add(RepresentationFlag.UNDERREPRESENTED)
            if minority == 0 or majority == 0:
                degenerate = True
        findings.append(
            RepresentationFinding(
                attribute=attr,
                minority_count=minority,
                majority_count=majority,
                dataset_ratio=ratio,
                flags=frozenset(flags),
                degenerate=degenerate,
            )
        )
    return findings


def group_label_counts(windows: WindowSet, part: GroupPartition):
    """((pos0, n0), (pos1, n1)) true-label tallies per partition group."""
    pos0 = n0 = pos1 = n1 = 0
    for user, label in zip(windows.user_ids, windows.labels):
        g = part.group_of(user)
        if g == 0:
            n0 += 1
            pos0 += bool(label)
        elif g == 1:
            n1 += 1
            pos1 += bool(label)
    return (pos0, n0), (pos1, n1)


def audit_uneven_sampling(
    windows: WindowSet,
    part: GroupPartition,
    ratio_band: tuple[float, float] = (0.8, 1.25),
) -> RepresentationFinding:
    """Base-rate DIR between partition groups over labeled windows."""
    (pos0, n0), (pos1, n1) = group_label_counts(windows, part)
    attr = "+".join(part.attributes)
    if n0 == 0 or n1 == 0:
        return RepresentationFinding(
            attribute=attr,
            minority_count=n0,
            majority_count=n1,
            dataset_ratio=None,
            degenerate=True,
        )
    dir_value = metrics.disparate_impact_ratio(
        metrics.selection_outcomes(pos0, n0, pos1, n1), mode="base"
    )
    flags = set()
    if dir_value.defined:
        v = metrics.verdict(dir_value, ratio_band=ratio_band)
        if v.harmed is not metrics.Harmed.NEITHER:
            flags.add(RepresentationFlag.UNEVENLY_SAMPLED)
    return RepresentationFinding(
        attribute=attr,
        minority_count=n0,
        majority_count=n1,
        dataset_ratio=n0 / n1,
        base_rate_dir=dir_value,
        flags=frozenset(flags),
        degenerate=not dir_value.defined,
    )


def two_proportion_test(x0: int, n0: int, x1: int, n1: int) -> tuple[float, str]:
    """Two-sided test of equal proportions: (p-value, test name).

    Uses the pooled-variance z-test; when any 2x2 cell is below
    EXACT_TEST_CELL_MIN the normal approximation is unreliable and Fisher's
    exact test is used instead. The result is symmetric in the two groups.
    """
    if n0 <= 0 or n1 <= 0:
        raise ValueError("both groups need at least one user")
    cells = (x0, n0 - x0, x1, n1 - x1)
    if min(cells) < EXACT_TEST_CELL_MIN:
        table = [[x0, n0 - x0], [x1, n1 - x1]]
        return float(stats.fisher_exact(table, alternative="two-sided")[1]), "fisher"
    p0, p1 = x0 / n0, x1 / n1
    pooled = (x0 + x1) / (n0 + n1)
    var = pooled * (1 - pooled) * (1 / n0 + 1 / n1)
    if var == 0 or p0 == p1:
        return 1.0, "z"
    z = (p0 - p1) / math.sqrt(var)
    return float(2 * stats.norm.sf(abs(z))), "z"


def source_presence(records: pd.DataFrame) -> dict:
    """user_id -> set of sources with at least one record."""
    presence = {}
    for user, source in records[["user_id", "source"]].drop_duplicates().itertuples(
        index=False
    ):
        presence.setdefault(user, set()).add(source)
    return presence


def audit_measurement(
    records: pd.DataFrame,
    part: GroupPartition,
    alpha: float = DEFAULT_ALPHA,
    sources=SOURCES,
) -> list[MeasurementFinding]:
    """Per-source user-level ownership proportions per group with a
    two-sided significance test. Skips (returns nothing for) partitions
    with an empty group."""
    presence = source_presence(records)
    users0 = [u for u in presence if part.group_of(u) == 0]
    users1 = [u for u in presence if part.group_of(u) == 1]
    if not users0 or not users1:
        return []
    attr = "+".join(part.attributes)
    findings = []
    for source in sources:
        x0 = sum(1 for u in users0 if source in presence[u])
        x1 = sum(1 for u in users1 if source in presence[u])
        p_value, test = two_proportion_test(x0, len(users0), x1, len(users1))
        findings.append(
            MeasurementFinding(
                attribute=attr,
                source=source,
                proportion_g0=x0 / len(users0),
                proportion_g1=x1 / len(users1),
                n_g0=len(users0),
                n_g1=len(users1),
                p_value=p_value,
                alpha=alpha,
                significant=p_value < alpha,
                test=test,
            )
        )
    return findings
