"""
The full audit pipeline from the command line
=============================================

Generate a corpus with the ``synth`` subcommand, run the consolidated
``full-audit`` pipeline on it, and read the resulting report.  The same
entry points are available as ``fairaudit <subcommand>`` on a shell;
this script drives them in-process for a self-contained walkthrough.
"""

import json
import tempfile
from pathlib import Path

from fairaudit.cli import main

workdir = Path(tempfile.mkdtemp(prefix="fairaudit-demo-"))
corpus = workdir / "corpus"
out = workdir / "report"

# ---------------------------------------------------------------------
# 1. Generate a biased corpus (deterministic under --seed)
# ---------------------------------------------------------------------
synth_spec = workdir / "synth.json"
synth_spec.write_text(json.dumps({
    "n_users": 120,
    "n_days": 5,
    "base_rate_g0": 0.2,
    "base_rate_g1": 0.7,
    "minority_probability": {"gender": 0.5, "age": 0.4, "diabetes": 0.3},
}))
assert main(["synth", "--out", str(corpus), "--seed", "11",
             "--config", str(synth_spec)]) == 0
print("corpus written to", corpus)

# ---------------------------------------------------------------------
# 2. Run the full audit: data audits, model training, personalization,
#    model audits, parity benchmarks and one consolidated JSON report
# ---------------------------------------------------------------------
audit_config = workdir / "audit.json"
audit_config.write_text(json.dumps({
    "model": {"hidden_size": 8, "recurrent_layers": 1,
              "epochs": 8, "dropout_rate": 0.0},
    "attributes": ["gender", "age"],
    "pairs": [["diabetes", "gender"]],
}))
code = main([
    "full-audit",
    "--records", str(corpus / "records.csv"),
    "--profiles", str(corpus / "profiles.csv"),
    "--reference", str(Path(__file__).with_name("reference_population.csv")),
    "--config", str(audit_config),
    "--seed", "11",
    "--out", str(out),
])
# exit codes: 0 ok, 1 usage/config error, 2 unreadable/invalid data,
# 3 degenerate partition under --strict
assert code == 0

# ---------------------------------------------------------------------
# 3. Read the report
# ---------------------------------------------------------------------
report = json.loads((out / "audit_report.json").read_text())
print("report sections:", sorted(report))

for finding in report["representation"]["uneven_sampling"]:
    dir_ = finding["base_rate_dir"]
    print("uneven sampling", finding["attribute"], "->",
          "undefined" if dir_ is None or not dir_["defined"]
          else round(dir_["value"], 3))

for finding in report["model_bias"]["aggregation"]:
    if finding["defined"]:
        print(f"{finding['variant']:>12} model on {finding['partition']}: "
              f"DIR {finding['dir']['value']:.3f} "
              f"({finding['classification']})")

# Figure-ready sidecar tables land next to the report.
print("sidecars:", sorted(p.name for p in out.glob("*.csv")))
