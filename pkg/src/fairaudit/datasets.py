"""Loading, binarization, windowing and splitting of step-count datasets.

The raw inputs are two CSV files: hourly step records
(``user_id,timestamp,steps,source,device_model``) and per-user protected
attribute profiles (``user_id,gender,ethnicity,age,height_cm,weight_kg,
heart_condition,hypertension,joint_problem,diabetes``). All transformations
here are pure: loaded frames and window sets are treated as immutable.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd

ATTRIBUTES = (
    "gender",
    "ethnicity",
    "age",
    "bmi",
    "heart_condition",
    "hypertension",
    "joint_problem",
    "diabetes",
)

GENDERS = ("Male", "Female", "NA")
ETHNICITIES = (
    "White",
    "Asian",
    "Black",
    "Hispanic",
    "AmericanIndian",
    "PacificIslander",
    "Other",
    "NA",
)
CONDITION_VALUES = ("Yes", "No", "NA")
SOURCES = ("Phone", "Watch", "ThirdParty")

HOURS_PER_DAY = 24
WINDOW_HOURS = 48
AWARE_FEATURES = 8

RECORDS_COLUMNS = ["user_id", "timestamp", "steps", "source", "device_model"]
PROFILES_COLUMNS = [
    "user_id",
    "gender",
    "ethnicity",
    "age",
    "height_cm",
    "weight_kg",
    "heart_condition",
    "hypertension",
    "joint_problem",
    "diabetes",
]


class DataValidationError(ValueError):
    """Raised when an input file or record violates the schema."""


class GroupLabel(str, Enum):
    MAJORITY = "Majority"
    MINORITY = "Minority"
    MISSING = "Missing"


class PartitionStrategy(str, Enum):
    SINGLE = "Single"
    MINORITY_MINORITY_VS_REST = "MinorityMinorityVsRest"
    MAJORITY_MAJORITY_VS_REST = "MajorityMajorityVsRest"


@dataclass(frozen=True)
class RawAttributeProfile:
    user_id: str
    gender: str = "NA"
    ethnicity: str = "NA"
    age: Optional[int] = None
    height_cm: Optional[float] = None
    weight_kg: Optional[float] = None
    heart_condition: str = "NA"
    hypertension: str = "NA"
    joint_problem: str = "NA"
    diabetes: str = "NA"

    def __post_init__(self):
        if self.gender not in GENDERS:
            raise DataValidationError(
                f"user {self.user_id}: invalid gender {self.gender!r}"
            )
        if self.ethnicity not in ETHNICITIES:
            raise DataValidationError(
                f"user {self.user_id}: invalid ethnicity {self.ethnicity!r}"
            )
        if self.age is not None and not 0 <= self.age <= 130:
            raise DataValidationError(
                f"user {self.user_id}: age {self.age} outside [0, 130]"
            )
        if self.height_cm is not None and self.height_cm <= 0:
            raise DataValidationError(
                f"user {self.user_id}: non-positive height {self.height_cm}"
            )
        if self.weight_kg is not None and self.weight_kg <= 0:
            raise DataValidationError(
                f"user {self.user_id}: non-positive weight {self.weight_kg}"
            )
        for cond in ("heart_condition", "hypertension", "joint_problem", "diabetes"):
            if getattr(self, cond) not in CONDITION_VALUES:
                raise DataValidationError(
                    f"user {self.user_id}: invalid {cond} {getattr(self, cond)!r}"
                )


@dataclass(frozen=True)
class BinarizedProfile:
    user_id: str
    groups: dict  # attribute -> GroupLabel

    def __getitem__(self, attribute: str) -> GroupLabel:
        return self.groups[attribute]


def binarize(profile: RawAttributeProfile) -> BinarizedProfile:
    """Map raw protected attributes to Majority/Minority/Missing.

    Male, White, age < 65, non-healthy BMI (< 18.5 or >= 25) and each
    condition answered "No" are the majority groups; any NA source field
    yields Missing. Note that healthy BMI is the *minority* group.
    """
    groups = {}
    if profile.gender == "NA":
        groups["gender"] = GroupLabel.MISSING
    else:
        groups["gender"] = (
            GroupLabel.MAJORITY if profile.gender == "Male" else GroupLabel.MINORITY
        )
    if profile.ethnicity == "NA":
        groups["ethnicity"] = GroupLabel.MISSING
    else:
        groups["ethnicity"] = (
            GroupLabel.MAJORITY if profile.ethnicity == "White" else GroupLabel.MINORITY
        )
    if profile.age is None:
        groups["age"] = GroupLabel.MISSING
    else:
        groups["age"] = GroupLabel.MAJORITY if profile.age < 65 else GroupLabel.MINORITY
    if profile.height_cm is None or profile.weight_kg is None:
        groups["bmi"] = GroupLabel.MISSING
    else:
        height_m = profile.height_cm / 100.0
        bmi = profile.weight_kg / (height_m * height_m)
        healthy = 18.5 <= bmi < 25.0
        groups["bmi"] = GroupLabel.MINORITY if healthy else GroupLabel.MAJORITY
    for cond in ("heart_condition", "hypertension", "joint_problem", "diabetes"):
        value = getattr(profile, cond)
        if value == "NA":
            groups[cond] = GroupLabel.MISSING
        else:
            groups[cond] = GroupLabel.MAJORITY if value == "No" else GroupLabel.MINORITY
    return BinarizedProfile(user_id=profile.user_id, groups=groups)


def load_profiles(path) -> list[RawAttributeProfile]:
    """Read and validate the profiles CSV. Empty cells mean NA."""
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except FileNotFoundError:
        raise
    if list(df.columns) != PROFILES_COLUMNS:
        raise DataValidationError(
            f"profiles file {path}: expected columns {PROFILES_COLUMNS}, "
            f"got {list(df.columns)}"
        )
    if df["user_id"].duplicated().any():
        dupes = df.loc[df["user_id"].duplicated(), "user_id"].tolist()
        raise DataValidationError(f"profiles file {path}: duplicate user_ids {dupes}")
    profiles = []
    for row in df.itertuples(index=False):
        try:
            age = int(row.age) if row.age != "" else None
            height = float(row.height_cm) if row.height_cm != "" else None
            weight = float(row.weight_kg) if row.weight_kg != "" else None
        except ValueError as exc:
            raise DataValidationError(
                f"profiles file {path}, user {row.user_id}: {exc}"
            ) from exc
        profiles.append(
            RawAttributeProfile(
                user_id=row.user_id,
                gender=row.gender or "NA",
                ethnicity=row.ethnicity or "NA",
                age=age,
                height_cm=height,
                weight_kg=weight,
                heart_condition=row.heart_condition or "NA",
                hypertension=row.hypertension or "NA",
                joint_problem=row.joint_problem or "NA",
                diabetes=row.diabetes or "NA",
            )
        )
    return profiles


def binarize_all(profiles: Iterable[RawAttributeProfile]) -> dict:
    """user_id -> BinarizedProfile for a profile collection."""
    return {p.user_id: binarize(p) for p in profiles}


def load_records(path) -> pd.DataFrame:
    """Read and validate the hourly step records CSV.

    Timestamps are parsed as ISO-8601 and floored to the hour; duplicate
    (user, source, hour) keys and negative step counts are rejected.
    """
    df = pd.read_csv(path, dtype={"user_id": str, "source": str, "device_model": str})
    if list(df.columns) != RECORDS_COLUMNS:
        raise DataValidationError(
            f"records file {path}: expected columns {RECORDS_COLUMNS}, "
            f"got {list(df.columns)}"
        )
    try:
        df["timestamp"] = pd.to_datetime(df["timestamp"], format="ISO8601")
    except (ValueError, TypeError) as exc:
        raise DataValidationError(f"records file {path}: bad timestamp: {exc}") from exc
    df["timestamp"] = df["timestamp"].dt.floor("h")
    if len(df) == 0:
        # an empty file carries no dtype information
        df["steps"] = df["steps"].astype(np.int64)
    if not pd.api.types.is_integer_dtype(df["steps"]):
        raise DataValidationError(f"records file {path}: steps must be integers")
    if (df["steps"] < 0).any():
        bad = df.loc[df["steps"] < 0].iloc[0]
        raise DataValidationError(
            f"records file {path}: negative steps for user {bad['user_id']} "
            f"at {bad['timestamp']}"
        )
    unknown = set(df["source"].unique()) - set(SOURCES)
    if unknown:
        raise DataValidationError(f"records file {path}: unknown sources {unknown}")
    if df.duplicated(subset=["user_id", "source", "timestamp"]).any():
        bad = df[df.duplicated(subset=["user_id", "source", "timestamp"])].iloc[0]
        raise DataValidationError(
            f"records file {path}: duplicate record for user {bad['user_id']}, "
            f"source {bad['source']} at {bad['timestamp']}"
        )
    return df


@dataclass(frozen=True)
class LabelRule:
    """High/low activity cut applied to raw next-day totals.

    kind="fixed" labels HighActivity when total >= threshold.
    kind="median" uses the median of next-day totals over a reference set
    of windows (normally the training split); ties go to HighActivity.
    """

    kind: str = "median"
    threshold: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("median", "fixed"):
            raise ValueError(f"unknown label rule kind {self.kind!r}")
        if self.kind == "fixed" and self.threshold is None:
            raise ValueError("fixed label rule requires a threshold")

    def resolve(self, reference_totals: np.ndarray) -> float:
        if self.kind == "fixed":
            return float(self.threshold)
        if len(reference_totals) == 0:
            raise ValueError("median label rule needs at least one reference total")
        return float(np.median(reference_totals))


@dataclass(frozen=True)
class WindowSet:
    """Supervised examples: 48 hourly counts plus a binary next-day label.

    Stored column-wise: ``features`` has shape (n, 48) and ``labels`` holds
    the HighActivity indicator derived from ``raw_next_day_total`` and
    ``threshold`` (total >= threshold).
    """

    user_ids: np.ndarray
    features: np.ndarray
    raw_next_day_total: np.ndarray
    threshold: float
    labels: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[1] != WINDOW_HOURS:
            raise ValueError(
                f"window features must have {WINDOW_HOURS} columns, "
                f"got shape {self.features.shape}"
            )
        if self.labels is None:
            object.__setattr__(
                self, "labels", self.raw_next_day_total >= self.threshold
            )

    def __len__(self) -> int:
        return len(self.user_ids)

    def subset(self, mask: np.ndarray) -> "WindowSet":
        return WindowSet(
            user_ids=self.user_ids[mask],
            features=self.features[mask],
            raw_next_day_total=self.raw_next_day_total[mask],
            threshold=self.threshold,
            labels=self.labels[mask],
        )

    def for_users(self, users: set) -> "WindowSet":
        mask = np.fromiter(
            (u in users for u in self.user_ids), dtype=bool, count=len(self)
        )
        return self.subset(mask)

    def relabeled(self, rule: LabelRule, reference: "WindowSet" = None) -> "WindowSet":
        """Re-derive labels, resolving a median rule on ``reference``."""
        ref = reference if reference is not None else self
        threshold = rule.resolve(ref.raw_next_day_total)
        return WindowSet(
            user_ids=self.user_ids,
            features=self.features,
            raw_next_day_total=self.raw_next_day_total,
            threshold=threshold,
        )

    @property
    def users(self) -> list:
        return sorted(set(self.user_ids.tolist()))


def hourly_counts(records: pd.DataFrame) -> pd.DataFrame:
    """Collapse records to one count per (user, hour), max across sources."""
    return (
        records.groupby(["user_id", "timestamp"], as_index=False)["steps"]
        .max()
        .sort_values(["user_id", "timestamp"])
    )


def build_windows(records: pd.DataFrame, rule: LabelRule) -> WindowSet:
    """Window hourly records into supervised day-boundary examples.

    One window per (user, day d) whose two preceding calendar days and day
    d itself were all observed (have at least one record): the features are
    the 48 zero-filled hourly counts of days d-2 and d-1 and the raw label
    is the total of day d. Days with no records at all are dropped, not
    fabricated; missing hours inside observed days are zero-filled. Users
    with fewer than 3 observed days contribute no windows.

    A median rule is resolved over all produced windows here; re-resolve on
    the training split via :meth:`WindowSet.relabeled` after splitting.
    """
    hourly = hourly_counts(records)
    if len(hourly) == 0:
        return WindowSet(
            user_ids=np.array([], dtype=object),
            features=np.zeros((0, WINDOW_HOURS)),
            raw_next_day_total=np.array([], dtype=np.int64),
            threshold=rule.threshold if rule.kind == "fixed" else 0.0,
        )
    hourly = hourly.assign(
        day=hourly["timestamp"].dt.normalize(),
        hour=hourly["timestamp"].dt.hour,
    )
    # (user, day) -> 24-hour vector, zero-filled inside observed days
    day_matrix = hourly.pivot_table(
        index=["user_id", "day"],
        columns="hour",
        values="steps",
        fill_value=0,
        aggfunc="sum",
    ).reindex(columns=range(HOURS_PER_DAY), fill_value=0)

    users_out, feats_out, totals_out = [], [], []
    day_ordinals = day_matrix.index.get_level_values("day").map(pd.Timestamp.toordinal)
    frame = day_matrix.to_numpy(dtype=np.int64)
    user_index = day_matrix.index.get_level_values("user_id")
    for user in user_index.unique():
        sel = user_index == user
        ords = np.asarray(day_ordinals[sel])
        rows = frame[sel]
        order = np.argsort(ords)
        ords, rows = ords[order], rows[order]
        for i in range(2, len(ords)):
            if ords[i] - ords[i - 1] == 1 and ords[i - 1] - ords[i - 2] == 1:
                users_out.append(user)
                feats_out.append(np.concatenate([rows[i - 2], rows[i - 1]]))
                totals_out.append(int(rows[i].sum()))

    features = (
        np.array(feats_out, dtype=float)
        if feats_out
        else np.zeros((0, WINDOW_HOURS))
    )
    totals = np.array(totals_out, dtype=np.int64)
    threshold = rule.resolve(totals) if len(totals) else (rule.threshold or 0.0)
    return WindowSet(
        user_ids=np.array(users_out, dtype=object),
        features=features,
        raw_next_day_total=totals,
        threshold=float(threshold),
    )


@dataclass(frozen=True)
class GroupPartition:
    """Minority (g0) vs majority (g1) user split for one or two attributes."""

    attributes: tuple
    g0_user_ids: frozenset
    g1_user_ids: frozenset
    strategy: PartitionStrategy

    def __post_init__(self):
        if self.g0_user_ids & self.g1_user_ids:
            raise ValueError("partition groups must be disjoint")

    @property
    def name(self) -> str:
        base = "+".join(self.attributes)
        if self.strategy is PartitionStrategy.SINGLE:
            return base
        return f"{base}:{self.strategy.value}"

    @property
    def degenerate(self) -> bool:
        return len(self.g0_user_ids) == 0 or len(self.g1_user_ids) == 0

    def group_of(self, user_id) -> Optional[int]:
        """0 for minority, 1 for majority, None when the user is in neither."""
        if user_id in self.g0_user_ids:
            return 0
        if user_id in self.g1_user_ids:
            return 1
        return None


def partition(
    binarized: dict,
    attributes,
    strategy: PartitionStrategy = PartitionStrategy.SINGLE,
) -> GroupPartition:
    """Split users into minority/majority by one attribute or a pair.

    Users with Missing on any involved attribute appear in neither group.
    For pairs, MinorityMinorityVsRest puts minority-on-both users in g0 and
    everyone else in g1; MajorityMajorityVsRest puts majority-on-both users
    in g1 and everyone else in g0.
    """
    if isinstance(attributes, str):
        attributes = (attributes,)
    attributes = tuple(attributes)
    for a in attributes:
        if a not in ATTRIBUTES:
            raise ValueError(f"unknown protected attribute {a!r}")
    if len(attributes) == 1:
        if strategy is not PartitionStrategy.SINGLE:
            raise ValueError("single attribute requires the Single strategy")
    else:
        if len(attributes) != 2 or attributes[0] == attributes[1]:
            raise ValueError("attribute pair must contain two distinct attributes")
        if strategy is PartitionStrategy.SINGLE:
            raise ValueError("attribute pair requires a combination strategy")

    g0, g1 = set(), set()
    for user_id, profile in binarized.items():
        labels = [profile[a] for a in attributes]
        if GroupLabel.MISSING in labels:
            continue
        if strategy is PartitionStrategy.SINGLE:
            (g0 if labels[0] is GroupLabel.MINORITY else g1).add(user_id)
        elif strategy is PartitionStrategy.MINORITY_MINORITY_VS_REST:
            if all(l is GroupLabel.MINORITY for l in labels):
                g0.add(user_id)
            else:
                g1.add(user_id)
        else:
            if all(l is GroupLabel.MAJORITY for l in labels):
                g1.add(user_id)
            else:
                g0.add(user_id)
    return GroupPartition(
        attributes=attributes,
        g0_user_ids=frozenset(g0),
        g1_user_ids=frozenset(g1),
        strategy=strategy,
    )


def split(windows: WindowSet, test_fraction: float, seed: int):
    """User-disjoint train/test split, deterministic under seed."""
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    users = windows.users
    if len(users) < 2:
        raise ValueError("need at least 2 users for a user-disjoint split")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(users))
    n_test = int(round(test_fraction * len(users)))
    n_test = min(max(n_test, 1), len(users) - 1)
    test_users = {users[i] for i in order[:n_test]}
    train_users = set(users) - test_users
    return windows.for_users(train_users), windows.for_users(test_users)


def aware_vector(profile: BinarizedProfile) -> Optional[np.ndarray]:
    """8 binary indicators (Minority=1, Majority=0) in ATTRIBUTES order.

    Returns None when any attribute is Missing: such users are excluded
    from aware-model training.
    """
    values = np.zeros(AWARE_FEATURES)
    for i, attr in enumerate(ATTRIBUTES):
        label = profile[attr]
        if label is GroupLabel.MISSING:
            return None
        values[i] = 1.0 if label is GroupLabel.MINORITY else 0.0
    return values


def aware_feature_matrix(windows: WindowSet, binarized: dict):
    """(features+indicators, kept mask) for aware-model training.

    Windows of users with any Missing attribute are dropped; the returned
    matrix has shape (kept, 56).
    """
    vectors = {}
    keep = np.zeros(len(windows), dtype=bool)
    rows = []
    for i, user in enumerate(windows.user_ids):
        if user not in vectors:
            prof = binarized.get(user)
            vectors[user] = aware_vector(prof) if prof is not None else None
        vec = vectors[user]
        if vec is not None:
            keep[i] = True
            rows.append(np.concatenate([windows.features[i], vec]))
    matrix = np.array(rows) if rows else np.zeros((0, WINDOW_HOURS + AWARE_FEATURES))
    return matrix, keep
