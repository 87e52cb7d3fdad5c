"""Synthetic step-count corpora with controllable injected biases.

The generator emits the exact CSV schemas the ingestion layer consumes,
plus a ground-truth summary recomputable from the emitted files, so every
audit can be verified against known injected biases at desk scale.

One protected attribute (``bias_attribute``) drives all per-group knobs:
next-day HighActivity base rates, daily-step magnitudes and source-device
ownership. Labels are enforced by construction: daily totals are sampled
from above- or below-threshold mixtures with the configured rates, so the
injected base rates hold for any auditor applying the same fixed threshold.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from .datasets import (
    ATTRIBUTES,
    RECORDS_COLUMNS,
    PROFILES_COLUMNS,
    GroupLabel,
    RawAttributeProfile,
    binarize,
)

START_DATE = pd.Timestamp("2023-01-02")

_DEVICE_MODELS = {"Phone": "PH-1", "Watch": "WA-1", "ThirdParty": "TP-1"}

_DEFAULT_MINORITY_PROB = {attr: 0.3 for attr in ATTRIBUTES}
_DEFAULT_PROFILE = (
    (0.2, 0.1, 0.1, 0.1, 0.1, 0.2, 0.8, 1.5, 2.5, 3.0, 3.0, 3.5)
    + (4.0, 3.5, 3.0, 3.0, 3.5, 4.5, 4.0, 3.0, 2.0, 1.5, 0.8, 0.4)
)
_DEFAULT_SOURCES = {"Phone": 1.0, "Watch": 0.4, "ThirdParty": 0.5}


@dataclass(frozen=True)
class SynthSpec:
    n_users: int = 200
    n_days: int = 5
    seed: int = 0
    minority_probability: dict = field(
        default_factory=lambda: dict(_DEFAULT_MINORITY_PROB)
    )
    bias_attribute: str = "gender"
    base_rate_g0: float = 0.5
    base_rate_g1: float = 0.5
    mean_daily_steps_g0: float = 6000.0
    mean_daily_steps_g1: float = 6000.0
    dispersion_g0: float = 0.3
    dispersion_g1: float = 0.3
    hourly_profile: tuple = _DEFAULT_PROFILE
    source_ownership_g0: dict = field(default_factory=lambda: dict(_DEFAULT_SOURCES))
    source_ownership_g1: dict = field(default_factory=lambda: dict(_DEFAULT_SOURCES))
    activity_threshold: float = 8000.0

    def __post_init__(self):
        if self.n_users < 0:
            raise ValueError("n_users must be >= 0")
        if self.bias_attribute not in ATTRIBUTES:
            raise ValueError(f"unknown bias_attribute {self.bias_attribute!r}")
        for name in ("base_rate_g0", "base_rate_g1"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be in [0, 1]")
        for attr, p in self.minority_probability.items():
            if attr not in ATTRIBUTES or not 0 <= p <= 1:
                raise ValueError(f"bad minority probability {attr}={p}")
        weights = np.asarray(self.hourly_profile, dtype=float)
        if len(weights) != 24 or (weights < 0).any() or weights.sum() == 0:
            raise ValueError("hourly_profile needs 24 non-negative weights, not all 0")

    def differs_between_groups(self) -> bool:
        return (
            self.base_rate_g0 != self.base_rate_g1
            or self.mean_daily_steps_g0 != self.mean_daily_steps_g1
            or self.dispersion_g0 != self.dispersion_g1
            or self.source_ownership_g0 != self.source_ownership_g1
        )


@dataclass(frozen=True)
class GroundTruth:
    """Injected-bias summary, exactly recomputable from the emitted files."""

    attribute_ratios: dict  # attribute -> {minority, majority, ratio|None}
    base_rate_g0: Optional[float]
    base_rate_g1: Optional[float]
    base_rate_dir: Optional[float]
    source_proportions_g0: dict
    source_proportions_g1: dict
    bias_attribute: str
    activity_threshold: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SynthResult:
    records: pd.DataFrame
    profiles: list  # RawAttributeProfile
    profiles_frame: pd.DataFrame
    ground_truth: GroundTruth


def _raw_profile(rng, user_id: str, spec: SynthSpec) -> RawAttributeProfile:
    minority = {
        attr: rng.random() < spec.minority_probability.get(attr, 0.0)
        for attr in ATTRIBUTES
    }
    age = int(rng.integers(65, 91)) if minority["age"] else int(rng.integers(20, 65))
    # healthy BMI is the minority group
    bmi = rng.uniform(19.0, 24.5) if minority["bmi"] else rng.uniform(25.5, 35.0)
    height_cm = 170.0
    weight_kg = round(bmi * (height_cm / 100.0) ** 2, 1)
    nonwhite = ("Asian", "Black", "Hispanic", "AmericanIndian", "PacificIslander", "Other")
    return RawAttributeProfile(
        user_id=user_id,
        gender="Female" if minority["gender"] else "Male",
        ethnicity=str(rng.choice(nonwhite)) if minority["ethnicity"] else "White",
        age=age,
        height_cm=height_cm,
        weight_kg=weight_kg,
        heart_condition="Yes" if minority["heart_condition"] else "No",
        hypertension="Yes" if minority["hypertension"] else "No",
        joint_problem="Yes" if minority["joint_problem"] else "No",
        diabetes="Yes" if minority["diabetes"] else "No",
    )


def _group_params(spec: SynthSpec, group: int):
    if group == 0:
        return (
            spec.base_rate_g0,
            spec.mean_daily_steps_g0,
            spec.dispersion_g0,
            spec.source_ownership_g0,
        )
    return (
        spec.base_rate_g1,
        spec.mean_daily_steps_g1,
        spec.dispersion_g1,
        spec.source_ownership_g1,
    )


def _daily_total(rng, high: bool, threshold: float, mean_steps: float, dispersion: float) -> int:
    base = rng.lognormal(mean=np.log(max(mean_steps, 1.0)), sigma=dispersion)
    if high:
        return int(threshold) + 1 + int(round(base / 4.0))
    return max(24, min(int(threshold) - 1, int(round(base / 2.0))))


def generate(spec: SynthSpec, out_dir=None) -> SynthResult:
    """Generate a corpus; optionally write records.csv / profiles.csv /
    ground_truth.json under ``out_dir``. Deterministic under spec.seed."""
    root = np.random.SeedSequence(spec.seed)
    user_seeds = root.spawn(spec.n_users)
    weights = np.asarray(spec.hourly_profile, dtype=float)
    weights = weights / weights.sum()

    profiles = []
    rows_user, rows_ts, rows_steps, rows_source, rows_model = [], [], [], [], []
    for u in range(spec.n_users):
        rng = np.random.default_rng(user_seeds[u])
        user_id = f"u{u:05d}"
        profile = _raw_profile(rng, user_id, spec)
        profiles.append(profile)
        group = 0 if binarize(profile)[spec.bias_attribute] is GroupLabel.MINORITY else 1
        base_rate, mean_steps, dispersion, ownership = _group_params(spec, group)
        owned = [s for s, p in sorted(ownership.items()) if rng.random() < p]
        if not owned:
            owned = ["Phone"]
        for d in range(spec.n_days):
            high = rng.random() < base_rate
            total = _daily_total(
                rng, high, spec.activity_threshold, mean_steps, dispersion
            )
            hours = rng.multinomial(total, weights)
            source = owned[int(rng.integers(len(owned)))]
            day = START_DATE + pd.Timedelta(days=d)
            for h in np.nonzero(hours)[0]:
                rows_user.append(user_id)
                rows_ts.append(day + pd.Timedelta(hours=int(h)))
                rows_steps.append(int(hours[h]))
                rows_source.append(source)
                rows_model.append(_DEVICE_MODELS[source])

    records = pd.DataFrame(
        {
            "user_id": rows_user,
            "timestamp": pd.to_datetime(rows_ts),
            "steps": pd.array(rows_steps, dtype="int64"),
            "source": rows_source,
            "device_model": rows_model,
        }
    )
    if len(records) == 0:
        records = pd.DataFrame(
            {
                "user_id": pd.Series(dtype=str),
                "timestamp": pd.Series(dtype="datetime64[ns]"),
                "steps": pd.Series(dtype="int64"),
                "source": pd.Series(dtype=str),
                "device_model": pd.Series(dtype=str),
            }
        )
    records = records.sort_values(["user_id", "timestamp"]).reset_index(drop=True)

    ground_truth = compute_ground_truth(records, profiles, spec)
    if spec.differs_between_groups() and (
        ground_truth.base_rate_g0 is None or ground_truth.base_rate_g1 is None
    ):
        warnings.warn(
            "per-group parameters differ but a group came out empty",
            stacklevel=2,
        )

    profiles_frame = pd.DataFrame(
        [
            {
                "user_id": p.user_id,
                "gender": p.gender if p.gender != "NA" else "",
                "ethnicity": p.ethnicity if p.ethnicity != "NA" else "",
                "age": "" if p.age is None else p.age,
                "height_cm": "" if p.height_cm is None else p.height_cm,
                "weight_kg": "" if p.weight_kg is None else p.weight_kg,
                "heart_condition": p.heart_condition if p.heart_condition != "NA" else "",
                "hypertension": p.hypertension if p.hypertension != "NA" else "",
                "joint_problem": p.joint_problem if p.joint_problem != "NA" else "",
                "diabetes": p.diabetes if p.diabetes != "NA" else "",
            }
            for p in profiles
        ],
        columns=PROFILES_COLUMNS,
    )

    result = SynthResult(
        records=records,
        profiles=profiles,
        profiles_frame=profiles_frame,
        ground_truth=ground_truth,
    )
    if out_dir is not None:
        write_corpus(result, out_dir)
    return result


def write_corpus(result: SynthResult, out_dir) -> None:
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = result.records.copy()
    records["timestamp"] = records["timestamp"].dt.strftime("%Y-%m-%dT%H:%M:%S")
    records.to_csv(out / "records.csv", index=False, columns=RECORDS_COLUMNS)
    result.profiles_frame.to_csv(out / "profiles.csv", index=False)
    with open(out / "ground_truth.json", "w") as fh:
        json.dump(result.ground_truth.to_dict(), fh, indent=2, sort_keys=True)


def compute_ground_truth(
    records: pd.DataFrame, profiles, spec: SynthSpec
) -> GroundTruth:
    """Recompute realized ratios, base rates and source proportions from
    the emitted data (integer tallies, exact)."""
    binarized = {p.user_id: binarize(p) for p in profiles}
    attribute_ratios = {}
    for attr in ATTRIBUTES:
        labels = [b[attr] for b in binarized.values()]
        minority = sum(1 for l in labels if l is GroupLabel.MINORITY)
        majority = sum(1 for l in labels if l is GroupLabel.MAJORITY)
        attribute_ratios[attr] = {
            "minority": minority,
            "majority": majority,
            "ratio": (minority / majority) if majority else None,
        }

    group_of = {
        uid: (0 if b[spec.bias_attribute] is GroupLabel.MINORITY else 1)
        if b[spec.bias_attribute] is not GroupLabel.MISSING
        else None
        for uid, b in binarized.items()
    }

    base_rates = {0: None, 1: None}
    source_props = {0: {}, 1: {}}
    if len(records):
        day_totals = (
            records.assign(day=records["timestamp"].dt.normalize())
            .groupby(["user_id", "day"])["steps"]
            .sum()
            .reset_index()
        )
        day_totals["group"] = day_totals["user_id"].map(group_of)
        for g in (0, 1):
            sel = day_totals[day_totals["group"] == g]
            if len(sel):
                base_rates[g] = float(
                    (sel["steps"] >= spec.activity_threshold).mean()
                )
        presence = records[["user_id", "source"]].drop_duplicates()
        presence["group"] = presence["user_id"].map(group_of)
        for g in (0, 1):
            users_g = [u for u, gr in group_of.items() if gr == g]
            if users_g:
                sel = presence[presence["group"] == g]
                source_props[g] = {
                    s: float((sel["source"] == s).sum() / len(users_g))
                    for s in sorted(records["source"].unique())
                }

    dir_value = None
    if base_rates[0] is not None and base_rates[1]:
        dir_value = base_rates[0] / base_rates[1]
    return GroundTruth(
        attribute_ratios=attribute_ratios,
        base_rate_g0=base_rates[0],
        base_rate_g1=base_rates[1],
        base_rate_dir=dir_value,
        source_proportions_g0=source_props[0],
        source_proportions_g1=source_props[1],
        bias_attribute=spec.bias_attribute,
        activity_threshold=spec.activity_threshold,
    )


def inject_measurement_skew(
    records: pd.DataFrame, source: str, factor: float, noise: float, seed: int = 0
) -> pd.DataFrame:
    """Scale hourly counts from one source by ``factor`` with multiplicative
    lognormal noise, rounded to non-negative integers."""
    if not factor > 0:
        raise ValueError("factor must be > 0")
    out = records.copy()
    mask = out["source"] == source
    values = out.loc[mask, "steps"].to_numpy(dtype=float)
    if noise > 0:
        rng = np.random.default_rng(seed)
        values = values * factor * rng.lognormal(mean=0.0, sigma=noise, size=len(values))
    else:
        values = values * factor
    out.loc[mask, "steps"] = np.maximum(np.round(values), 0).astype(np.int64)
    return out
