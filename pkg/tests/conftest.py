import numpy as np
import pytest

from fairaudit.datasets import (
    GroupPartition,
    PartitionStrategy,
    RawAttributeProfile,
    WindowSet,
)


def make_windows(user_ids, totals, threshold=5000.0, features=None):
    """WindowSet with dummy features unless given real ones."""
    user_ids = np.array(user_ids, dtype=object)
    totals = np.asarray(totals, dtype=np.int64)
    if features is None:
        features = np.zeros((len(user_ids), 48))
    return WindowSet(
        user_ids=user_ids,
        features=features,
        raw_next_day_total=totals,
        threshold=float(threshold),
    )


def make_partition(g0_users, g1_users, attribute="gender"):
    return GroupPartition(
        attributes=(attribute,),
        g0_user_ids=frozenset(g0_users),
        g1_user_ids=frozenset(g1_users),
        strategy=PartitionStrategy.SINGLE,
    )


@pytest.fixture
def basic_profile():
    return RawAttributeProfile(
        user_id="u1",
        gender="Male",
        ethnicity="White",
        age=30,
        height_cm=180.0,
        weight_kg=90.0,
        heart_condition="No",
        hypertension="No",
        joint_problem="No",
        diabetes="No",
    )
