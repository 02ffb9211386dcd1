"""
The file-based experiment pipeline
==================================

Run every stage of a scaled-down experiment into a directory, then inspect
the manifests and the comparison table. The same runs are available from
the shell as ``chaosflow run-all --config ex1-desk --out runs/ex1``.
"""
import json
from pathlib import Path

from chaosflow.cli import run_all, run_stage
from chaosflow.config import preset, validate_config

cfg = preset("ex2-desk")
cfg["train"]["epochs"] = 50  # a quick look; the preset trains for 2000 epochs
print("violations:", validate_config(cfg))

out = Path("runs/ex2-quick")
manifests = run_all(cfg, out)
for stage, man in manifests.items():
    print(f"{stage:13s} {man['wall_time_s']:7.1f} s  outputs: {', '.join(sorted(man['outputs']))[:60]}")

print("rollout:", manifests["predict"]["flags"])
table = json.loads((out / "comparison.json").read_text())
for name, row in table["metrics"].items():
    print(f"{name:15s} ref {row['reference']:.4f}  pred {row['prediction']:.4f}  rel err {row['relative_error']:.3f}")

# Stages only read files, so any of them can be rerun on its own. An edited
# upstream file is detected through the hashes in the manifests.
run_stage(cfg, "evaluate", out)
print("evaluate rerun ok")
