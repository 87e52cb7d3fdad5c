"""Command-line front door.

Subcommands: synth, audit-data, train, audit-model, make-benchmark,
full-audit. Exit codes: 0 success, 1 usage/config error, 2 data validation
error, 3 degenerate audit under --strict.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import models, report
from .data_audit import ReferencePopulation
from .datasets import (
    DataValidationError,
    LabelRule,
    binarize_all,
    build_windows,
    load_profiles,
    load_records,
    partition,
    split,
)
from .pipeline import (
    AuditConfig,
    dataset_fingerprint,
    run_data_audits,
    run_full_audit,
    train_models,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DEGENERATE = 3


def _add_io_args(p, records=True, reference=False):
    if records:
        p.add_argument("--records", required=True, help="hourly step records CSV")
        p.add_argument("--profiles", required=True, help="protected attribute CSV")
    if reference:
        p.add_argument("--reference", help="reference population ratios CSV")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--attributes", help="comma-separated protected attributes")
    p.add_argument("--pairs", help="comma-separated attribute pairs, e.g. diabetes+gender")
    p.add_argument("--strict", action="store_true", help="exit 3 on degenerate audits")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairaudit",
        description="Audit step-count datasets and models for group bias.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON file with SynthSpec overrides")

    for name in ("audit-data", "train", "audit-model", "make-benchmark", "full-audit"):
        p = sub.add_parser(name)
        _add_io_args(p, reference=name in ("audit-data", "full-audit"))
    return parser


def _load_config(args) -> AuditConfig:
    payload = {}
    if args.config:
        with open(args.config) as fh:
            payload = json.load(fh)
    cfg = AuditConfig.from_json(payload, seed=args.seed)
    if getattr(args, "attributes", None):
        cfg.attributes = tuple(args.attributes.split(","))
    if getattr(args, "pairs", None):
        cfg.pairs = tuple(tuple(p.split("+")) for p in args.pairs.split(","))
    for attrs in cfg.pairs:
        if len(attrs) != 2:
            raise ValueError(f"bad attribute pair {attrs}")
    return cfg


def _load_inputs(args):
    records = load_records(args.records)
    profiles = load_profiles(args.profiles)
    reference = None
    if getattr(args, "reference", None):
        reference = ReferencePopulation.from_csv(args.reference)
    return records, profiles, reference


def _empty_model_sections():
    return {"aggregation": [], "intersectional": [], "learning": []}


def _write(doc, out_dir, sidecars=True):
    report.validate_report(doc)
    report.write_report(doc, out_dir)
    if sidecars:
        report.write_sidecars(doc, out_dir)


def cmd_synth(args) -> int:
    from .synth import SynthSpec, generate

    overrides = {}
    if args.config:
        with open(args.config) as fh:
            overrides = json.load(fh)
    overrides["seed"] = args.seed
    spec = SynthSpec(**overrides)
    generate(spec, out_dir=args.out)
    print(f"wrote synthetic corpus to {args.out}")
    return EXIT_OK


def cmd_audit_data(args) -> int:
    records, profiles, reference = _load_inputs(args)
    cfg = _load_config(args)
    binarized = binarize_all(profiles)
    windows = build_windows(records, cfg.label_rule)
    representation, measurement, events = run_data_audits(
        records, binarized, windows, cfg, reference
    )
    doc = report.assemble_report(
        seed=cfg.seed,
        config=cfg.to_json(),
        dataset_fingerprint=dataset_fingerprint(records, profiles, binarized, windows),
        representation=representation,
        measurement=measurement,
        model_bias=_empty_model_sections(),
        benchmarks=[],
        evaluation=[],
        provenance={
            "command": "audit-data",
            "records": str(args.records),
            "profiles": str(args.profiles),
            "degenerate_events": events,
        },
    )
    _write(doc, args.out)
    print(f"wrote {Path(args.out) / 'audit_report.json'}")
    return EXIT_DEGENERATE if args.strict and events else EXIT_OK


def cmd_train(args) -> int:
    records, profiles, _ = _load_inputs(args)
    cfg = _load_config(args)
    binarized = binarize_all(profiles)
    windows = build_windows(records, cfg.label_rule)
    train, test = split(windows, cfg.test_fraction, cfg.seed)
    threshold = cfg.label_rule.resolve(train.raw_next_day_total)
    train = train.relabeled(LabelRule(kind="fixed", threshold=threshold))
    unaware, aware = train_models(train, binarized, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    models.save_checkpoint(unaware, out / "model_unaware.json")
    written = ["model_unaware.json"]
    if aware is not None:
        models.save_checkpoint(aware, out / "model_aware.json")
        written.append("model_aware.json")
    print(f"wrote {', '.join(written)} to {out} (label threshold {threshold})")
    return EXIT_OK


def cmd_make_benchmark(args) -> int:
    from .model_audit import BenchmarkError, make_parity_benchmark

    records, profiles, _ = _load_inputs(args)
    cfg = _load_config(args)
    binarized = binarize_all(profiles)
    windows = build_windows(records, cfg.label_rule)
    train, test = split(windows, cfg.test_fraction, cfg.seed)
    threshold = cfg.label_rule.resolve(train.raw_next_day_total)
    test = test.relabeled(LabelRule(kind="fixed", threshold=threshold))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summaries = []
    events = []
    for attr in cfg.attributes:
        part = partition(binarized, attr)
        if part.degenerate:
            events.append(f"partition degenerate for {attr}")
            continue
        try:
            pair = make_parity_benchmark(test, part, cfg.parity_tolerance, cfg.seed)
        except BenchmarkError as exc:
            events.append(f"{attr}: {exc}")
            continue
        summaries.append(report.benchmark_json(pair))
        frame = {
            "user_id": pair.t0.user_ids,
            "raw_next_day_total": pair.t0.raw_next_day_total,
            "label": pair.t0.labels,
        }
        import pandas as pd

        pd.DataFrame(frame).to_csv(out / f"t0_{attr}.csv", index=False)
    with open(out / "benchmarks.json", "w") as fh:
        json.dump({"benchmarks": summaries, "events": events}, fh, indent=2, sort_keys=True)
    print(f"wrote {len(summaries)} parity benchmarks to {out}")
    return EXIT_DEGENERATE if args.strict and events else EXIT_OK


def cmd_full_audit(args, command="full-audit") -> int:
    records, profiles, reference = _load_inputs(args)
    cfg = _load_config(args)
    doc, events = run_full_audit(
        records,
        profiles,
        cfg,
        reference=reference,
        provenance={
            "command": command,
            "records": str(args.records),
            "profiles": str(args.profiles),
            "reference": str(args.reference) if getattr(args, "reference", None) else None,
        },
    )
    _write(doc, args.out)
    print(f"wrote {Path(args.out) / 'audit_report.json'}")
    return EXIT_DEGENERATE if args.strict and events else EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "audit-data":
            return cmd_audit_data(args)
        if args.command == "train":
            return cmd_train(args)
        if args.command == "make-benchmark":
            return cmd_make_benchmark(args)
        if args.command in ("audit-model", "full-audit"):
            # audit-model runs the same chain without reference-population data
            return cmd_full_audit(args, command=args.command)
        raise AssertionError(f"unhandled command {args.command}")
    except (DataValidationError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
