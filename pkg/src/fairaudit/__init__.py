"""Bias audits for step-count time-series datasets and their models."""

__version__ = "0.1.0"

from . import data_audit, datasets, metrics, model_audit, models, pipeline, synth
from .datasets import (
    ATTRIBUTES,
    GroupLabel,
    GroupPartition,
    LabelRule,
    PartitionStrategy,
    RawAttributeProfile,
    WindowSet,
    binarize,
    binarize_all,
    build_windows,
    partition,
    split,
)
from .metrics import (
    ConfusionCounts,
    GroupOutcomes,
    Harmed,
    MetricValue,
    Verdict,
    all_metrics,
    disparate_impact_ratio,
    hybrid_ratios,
    rates,
    statistical_parity_difference,
    verdict,
    wysiwyg_differences,
)
from .models import ModelConfig, PersonalizedModel, SharedModel, personalize, train_shared
from .synth import SynthSpec, generate, inject_measurement_skew
