"""Group fairness metrics computed from per-group confusion counts.

All metrics compare an unprivileged group (g0) against a privileged group
(g1) and are either ratios (g0/g1, parity at 1.0) or differences (g0 - g1,
parity at 0.0). Zero denominators never raise and never silently become 0:
they produce NaN values flagged as undefined, which downstream reports must
serialize explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

RATIO_METRICS = ("DIR", "FPR_Ratio", "FNR_Ratio", "FOR_Ratio", "ERR")
DIFFERENCE_METRICS = ("SPD", "EOD", "AOD")

#: Ratio metrics where a value above the accepted band harms the
#: unprivileged group (error-centric ratios). For DIR and the FPR ratio the
#: orientation is reversed: a high value harms the privileged group.
_HIGH_HARMS_UNPRIVILEGED = frozenset({"FNR_Ratio", "FOR_Ratio", "ERR"})


class Harmed(str, Enum):
    UNPRIVILEGED = "Unprivileged"
    PRIVILEGED = "Privileged"
    NEITHER = "Neither"


@dataclass(frozen=True)
class ConfusionCounts:
    """TP/FP/FN/TN tallies for one group."""

    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        for name in ("tp", "fp", "fn", "tn"):
            v = getattr(self, name)
            if v < 0:
                raise ValueError(f"confusion count {name} must be >= 0, got {v}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def actual_positives(self) -> int:
        return self.tp + self.fn

    @property
    def predicted_positives(self) -> int:
        return self.tp + self.fp

    def scaled(self, k: int) -> "ConfusionCounts":
        return ConfusionCounts(self.tp * k, self.fp * k, self.fn * k, self.tn * k)


@dataclass(frozen=True)
class GroupOutcomes:
    """Confusion counts for the unprivileged (g0) and privileged (g1) group."""

    g0: ConfusionCounts
    g1: ConfusionCounts

    def swapped(self) -> "GroupOutcomes":
        return GroupOutcomes(g0=self.g1, g1=self.g0)


def selection_outcomes(pos0: int, n0: int, pos1: int, n1: int) -> GroupOutcomes:
    """Build GroupOutcomes from positive-count/total pairs only.

    Base rate, selection rate, DIR and SPD are fully determined by these
    four numbers; error-based metrics on the result are meaningless.
    """
    if pos0 > n0 or pos1 > n1:
        raise ValueError("positive count exceeds group total")
    return GroupOutcomes(
        g0=ConfusionCounts(tp=pos0, fp=0, fn=0, tn=n0 - pos0),
        g1=ConfusionCounts(tp=pos1, fp=0, fn=0, tn=n1 - pos1),
    )


@dataclass(frozen=True)
class MetricValue:
    metric: str
    value: float
    kind: str  # "ratio" | "difference"
    defined: bool

    def __post_init__(self):
        if self.metric not in RATIO_METRICS + DIFFERENCE_METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")


@dataclass(frozen=True)
class Verdict:
    harmed: Harmed
    band: tuple[float, float]
    #: True for AOD, whose harmed-group reading is applied by analogy with
    #: the other difference metrics rather than from an established table.
    analogical: bool = False


def _div(num, den):
    """Elementwise num/den with NaN wherever den == 0."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(den != 0, num / np.where(den != 0, den, 1.0), np.nan)
    return out if out.ndim else float(out)


def rates_from_counts(tp, fp, fn, tn) -> dict:
    """All confusion-matrix rates, elementwise over array-like counts.

    Zero denominators yield NaN.
    """
    tp = np.asarray(tp, dtype=float)
    fp = np.asarray(fp, dtype=float)
    fn = np.asarray(fn, dtype=float)
    tn = np.asarray(tn, dtype=float)
    total = tp + fp + fn + tn
    return {
        "fdr": _div(fp, fp + tp),
        "for_": _div(fn, fn + tn),
        "fnr": _div(fn, tp + fn),
        "tnr": _div(tn, fp + tn),
        "tpr": _div(tp, tp + fn),
        "fpr": _div(fp, fp + tn),
        "base_rate": _div(tp + fn, total),
        "selection_rate": _div(tp + fp, total),
        "error_rate": _div(fp + fn, total),
    }


def rates(c: ConfusionCounts) -> dict:
    """Confusion-matrix rates for one group; NaN marks undefined rates."""
    return rates_from_counts(c.tp, c.fp, c.fn, c.tn)


def metric_arrays(tp0, fp0, fn0, tn0, tp1, fp1, fn1, tn1) -> dict:
    """All eight group-fairness metrics, elementwise over array-like counts.

    This is the single computation path behind every scalar metric function
    below. Ratios are undefined (NaN) whenever the privileged-group rate is
    zero or either component rate is undefined.
    """
    r0 = rates_from_counts(tp0, fp0, fn0, tn0)
    r1 = rates_from_counts(tp1, fp1, fn1, tn1)
    with np.errstate(invalid="ignore"):
        return {
            "DIR": _div(r0["selection_rate"], r1["selection_rate"]),
            "SPD": r0["selection_rate"] - r1["selection_rate"],
            "FPR_Ratio": _div(r0["fpr"], r1["fpr"]),
            "FNR_Ratio": _div(r0["fnr"], r1["fnr"]),
            "FOR_Ratio": _div(r0["for_"], r1["for_"]),
            "ERR": _div(r0["error_rate"], r1["error_rate"]),
            "EOD": r0["tpr"] - r1["tpr"],
            "AOD": ((r0["fpr"] - r1["fpr"]) + (r0["tpr"] - r1["tpr"])) / 2.0,
        }


def _metric(name: str, value: float) -> MetricValue:
    kind = "ratio" if name in RATIO_METRICS else "difference"
    defined = bool(np.isfinite(value))
    return MetricValue(metric=name, value=float(value), kind=kind, defined=defined)


def _all_metrics(outcomes: GroupOutcomes) -> dict:
    g0, g1 = outcomes.g0, outcomes.g1
    vals = metric_arrays(g0.tp, g0.fp, g0.fn, g0.tn, g1.tp, g1.fp, g1.fn, g1.tn)
    return {name: _metric(name, v) for name, v in vals.items()}


def disparate_impact_ratio(outcomes: GroupOutcomes, mode: str = "selection") -> MetricValue:
    """Ratio of base or selection rates, unprivileged over privileged.

    mode="base" uses true labels (tp+fn); mode="selection" uses predictions
    (tp+fp). With outcomes built by :func:`selection_outcomes` the two modes
    coincide.
    """
    if mode not in ("base", "selection"):
        raise ValueError(f"mode must be 'base' or 'selection', got {mode!r}")
    g0, g1 = outcomes.g0, outcomes.g1
    if mode == "base":
        r0 = _div(g0.actual_positives, g0.total)
        r1 = _div(g1.actual_positives, g1.total)
    else:
        r0 = _div(g0.predicted_positives, g0.total)
        r1 = _div(g1.predicted_positives, g1.total)
    return _metric("DIR", _div(r0, r1))


def statistical_parity_difference(outcomes: GroupOutcomes) -> MetricValue:
    return _all_metrics(outcomes)["SPD"]


def hybrid_ratios(outcomes: GroupOutcomes) -> dict:
    """FPR, FNR and FOR ratios plus the error-rate ratio (ERR)."""
    m = _all_metrics(outcomes)
    return {k: m[k] for k in ("FPR_Ratio", "FNR_Ratio", "FOR_Ratio", "ERR")}


def wysiwyg_differences(outcomes: GroupOutcomes) -> dict:
    """Equal-opportunity difference (EOD) and average-odds difference (AOD)."""
    m = _all_metrics(outcomes)
    return {k: m[k] for k in ("EOD", "AOD")}


def all_metrics(outcomes: GroupOutcomes) -> dict:
    """Every supported metric keyed by name."""
    return _all_metrics(outcomes)


def verdict(
    m: MetricValue,
    ratio_band: tuple[float, float] = (0.8, 1.25),
    diff_band: tuple[float, float] = (-0.1, 0.1),
) -> Verdict:
    """Map a defined metric value to the harmed group.

    Ratio metrics inside ``ratio_band`` and difference metrics inside
    ``diff_band`` harm neither group. Outside the band the harmed side
    depends on the metric's orientation: for DIR and the FPR ratio a low
    value harms the unprivileged group, while for the error-centric ratios
    (FNR, FOR, ERR) a low value harms the privileged group. All difference
    metrics harm the unprivileged group when below the band.
    """
    if not m.defined:
        raise ValueError(f"cannot derive a verdict for undefined metric {m.metric}")
    if m.kind == "ratio":
        lo, hi = ratio_band
        band = ratio_band
        if lo <= m.value <= hi:
            harmed = Harmed.NEITHER
        elif m.value < lo:
            harmed = (
                Harmed.PRIVILEGED
                if m.metric in _HIGH_HARMS_UNPRIVILEGED
                else Harmed.UNPRIVILEGED
            )
        else:
            harmed = (
                Harmed.UNPRIVILEGED
                if m.metric in _HIGH_HARMS_UNPRIVILEGED
                else Harmed.PRIVILEGED
            )
    else:
        lo, hi = diff_band
        band = diff_band
        if lo <= m.value <= hi:
            harmed = Harmed.NEITHER
        elif m.value < lo:
            harmed = Harmed.UNPRIVILEGED
        else:
            harmed = Harmed.PRIVILEGED
    return Verdict(harmed=harmed, band=band, analogical=(m.metric == "AOD"))
