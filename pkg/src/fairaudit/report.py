"""Audit report assembly: one consolidated JSON document plus plot-ready
CSV sidecars mirroring the standard figure views (reference-vs-dataset
ratios, per-attribute base-rate DIR, per-variant model DIR, intersectional
DIR, and benchmark T1/T0 DIR)."""

from __future__ import annotations

import datetime as _dt
import importlib.resources
import json
from typing import Optional

import pandas as pd

from . import __version__
from .data_audit import MeasurementFinding, RepresentationFinding
from .metrics import MetricValue, Verdict
from .model_audit import (
    BenchmarkPair,
    EvaluationFinding,
    LearningFinding,
    ModelBiasFinding,
)

#: Deployment bias cannot be computed from a dataset; reports carry this
#: static review checklist instead.
DEPLOYMENT_CHECKLIST = (
    "Confirm the deployed task matches the task the model was trained and "
    "evaluated on; error tradeoffs tuned for one task can be unsafe in another.",
    "Reassess false-positive vs false-negative costs for the deployment "
    "context and the user groups affected.",
    "Account for human decision-makers in the loop; model outputs are "
    "interpreted, not applied autonomously.",
    "Re-run these audits when the deployment population differs from the "
    "training cohort.",
)

SIDECAR_NAMES = (
    "fig3_ratios.csv",
    "fig4_base_dir.csv",
    "fig6_model_dir.csv",
    "fig7_intersectional.csv",
    "fig8_benchmark.csv",
)


def metric_json(m: Optional[MetricValue]) -> Optional[dict]:
    """Serialize a metric; undefined values stay explicit, never 0."""
    if m is None:
        return None
    return {
        "metric": m.metric,
        "kind": m.kind,
        "defined": m.defined,
        "value": m.value if m.defined else None,
    }


def verdict_json(v: Optional[Verdict]) -> Optional[dict]:
    if v is None:
        return None
    return {
        "harmed": v.harmed.value,
        "band": list(v.band),
        "analogical": v.analogical,
    }


def representation_json(f: RepresentationFinding) -> dict:
    return {
        "attribute": f.attribute,
        "minority_count": f.minority_count,
        "majority_count": f.majority_count,
        "dataset_ratio": f.dataset_ratio,
        "reference_ratio": f.reference_ratio,
        "base_rate_dir": metric_json(f.base_rate_dir),
        "flags": sorted(flag.value for flag in f.flags),
        "degenerate": f.degenerate,
    }


def measurement_json(f: MeasurementFinding) -> dict:
    return {
        "attribute": f.attribute,
        "source": f.source,
        "proportion_g0": f.proportion_g0,
        "proportion_g1": f.proportion_g1,
        "n_g0": f.n_g0,
        "n_g1": f.n_g1,
        "p_value": f.p_value,
        "alpha": f.alpha,
        "significant": f.significant,
        "test": f.test,
    }


def model_bias_json(f: ModelBiasFinding) -> dict:
    return {
        "partition": f.partition_name,
        "attributes": list(f.attributes),
        "strategy": f.strategy,
        "variant": f.variant,
        "dir": metric_json(f.dir),
        "verdict": verdict_json(f.verdict),
        "data_dir": metric_json(f.data_dir),
        "classification": f.classification,
        "auxiliary": {k: metric_json(v) for k, v in (f.auxiliary or {}).items()},
        "defined": f.defined,
    }


def learning_json(f: LearningFinding) -> dict:
    return {
        "partition": f.partition_name,
        "dir_shared": metric_json(f.dir_shared),
        "dir_personalized": metric_json(f.dir_personalized),
        "delta_bias": f.delta_bias,
    }


def evaluation_json(f: EvaluationFinding) -> dict:
    return {
        "model": f.model_name,
        "partition": f.partition_name,
        "dir_t1": metric_json(f.dir_t1),
        "dir_t0": metric_json(f.dir_t0),
        "hiding": f.hiding,
    }


def benchmark_json(pair: BenchmarkPair) -> dict:
    return {
        "partition": pair.partition_name,
        "t1_size": len(pair.t1),
        "t0_size": len(pair.t0),
        "achieved_dir": pair.achieved_dir,
        "removed_group": pair.removed_group,
        "removed_label": (
            None if pair.removed_label is None else bool(pair.removed_label)
        ),
        "removed_count": pair.removed_count,
        "seed": pair.seed,
    }


def assemble_report(
    *,
    seed: int,
    config: dict,
    dataset_fingerprint: dict,
    representation: dict,
    measurement: list,
    model_bias: dict,
    benchmarks: list,
    evaluation: list,
    provenance: dict,
) -> dict:
    return {
        "tool": {"name": "fairaudit", "version": __version__},
        "generated_at": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "seed": seed,
        "config": config,
        "dataset": dataset_fingerprint,
        "representation": representation,
        "measurement": measurement,
        "model_bias": model_bias,
        "benchmarks": benchmarks,
        "evaluation": evaluation,
        "deployment_checklist": list(DEPLOYMENT_CHECKLIST),
        "provenance": provenance,
    }


def load_schema() -> dict:
    with importlib.resources.files("fairaudit").joinpath("report_schema.json").open() as fh:
        return json.load(fh)


def validate_report(report: dict) -> None:
    import jsonschema

    jsonschema.validate(instance=report, schema=load_schema())


def write_report(report: dict, out_dir) -> None:
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "audit_report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_sidecars(report: dict, out_dir) -> None:
    """Emit the plot-ready CSVs derived from report sections."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    misrep = report["representation"].get("misrepresentation", [])
    pd.DataFrame(
        [
            {
                "attribute": f["attribute"],
                "dataset_ratio": f["dataset_ratio"],
                "reference_ratio": f["reference_ratio"],
            }
            for f in misrep
        ],
        columns=["attribute", "dataset_ratio", "reference_ratio"],
    ).to_csv(out / "fig3_ratios.csv", index=False)

    uneven = report["representation"].get("uneven_sampling", [])
    pd.DataFrame(
        [
            {
                "attribute": f["attribute"],
                "dir": (f["base_rate_dir"] or {}).get("value"),
            }
            for f in uneven
        ],
        columns=["attribute", "dir"],
    ).to_csv(out / "fig4_base_dir.csv", index=False)

    agg = report["model_bias"].get("aggregation", [])
    rows = [
        {
            "attribute": f["partition"],
            "variant": f["variant"],
            "dir": (f["dir"] or {}).get("value"),
        }
        for f in agg
    ]
    for f in agg:
        if f["data_dir"] is not None and f["variant"] == "Unaware":
            rows.append(
                {
                    "attribute": f["partition"],
                    "variant": "DataBaseRate",
                    "dir": f["data_dir"].get("value"),
                }
            )
    pd.DataFrame(rows, columns=["attribute", "variant", "dir"]).to_csv(
        out / "fig6_model_dir.csv", index=False
    )

    inter = report["model_bias"].get("intersectional", [])
    pd.DataFrame(
        [
            {
                "attribute": f["partition"],
                "variant": f["variant"],
                "dir": (f["dir"] or {}).get("value"),
            }
            for f in inter
        ],
        columns=["attribute", "variant", "dir"],
    ).to_csv(out / "fig7_intersectional.csv", index=False)

    rows = []
    for f in report["evaluation"]:
        for test_set, key in (("T1", "dir_t1"), ("T0", "dir_t0")):
            rows.append(
                {
                    "attribute": f["partition"],
                    "variant": f["model"],
                    "test_set": test_set,
                    "dir": (f[key] or {}).get("value"),
                }
            )
    pd.DataFrame(rows, columns=["attribute", "variant", "test_set", "dir"]).to_csv(
        out / "fig8_benchmark.csv", index=False
    )
