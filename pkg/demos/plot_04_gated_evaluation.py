"""
Gated evaluation of reference predictors
========================================

Score a few reference policies on a synthetic manifest and compare the
full pipeline with its detection-only variant.
"""

import tempfile
from pathlib import Path

from rds_bench.evaluation import EvalMode, evaluate_run, render_text
from rds_bench.predictors import parse_policy, predict, write_predictions
from rds_bench.synthetic import make_manifest

workdir = Path(tempfile.mkdtemp(prefix="rds_eval_"))
manifest = make_manifest(workdir, 120, seed=4, modalities=("XRAY", "CT", "MRI"))

for name in ("oracle", "noisy-oracle:0.2", "always-negative", "always-positive", "constant-mask:full"):
    path = write_predictions(predict(manifest, parse_policy(name, seed=1)), workdir / f"{name}.jsonl")
    report = evaluate_run(manifest, path, parallelism=4)
    print(f"== {name}")
    print(render_text(report.to_json()))

# %%
# A wrong detection answer stops the evaluation of that sample, so the
# detection-only column always matches the full run
path = workdir / "noisy-oracle:0.2.jsonl"
full = evaluate_run(manifest, path, EvalMode.FULL).groups["ALL"]
detect = evaluate_run(manifest, path, EvalMode.DETECT_ONLY).groups["ALL"]
print("detection F1 full/detect-only:", full.detection_f1, detect.detection_f1)
print("gate counts:", full.gates)
