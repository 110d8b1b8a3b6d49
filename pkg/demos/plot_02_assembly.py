"""
Building a benchmark manifest
=============================

Synthetic source annotations are rendered into VQA-Seg and Ref-Seg samples,
then split so that no scan volume lands on both sides.
"""

import tempfile
from pathlib import Path

from rds_bench.dataset import assemble, compute_label_distribution, validate_manifest, write_manifest
from rds_bench.synthetic import make_sources

workdir = Path(tempfile.mkdtemp(prefix="rds_demo_"))
records = make_sources(workdir, 30, seed=1, modalities=("XRAY", "CT", "MRI"))
print(len(records), "source records,", sum(r.positive for r in records), "positive")

vqaseg, refseg = assemble(records, seed=0, test_fraction=0.25)

# %%
# One positive and one negative question/answer pair
pos = next(s for s in vqaseg.samples if s.gt_detection)
neg = next(s for s in vqaseg.samples if not s.gt_detection)
print(pos.question_text)
print("positive:", pos.gt_diagnosis.label, [t.name for t in pos.gt_targets])
print("negative:", neg.id, neg.modality)

# Ref-Seg prompts draw a target synonym from a seeded generator
for s in refseg.samples[:4]:
    print(s.prompt, "->", s.expected_answer)

# %%
# Volumes never straddle the split
by_split = {}
for s in vqaseg.samples:
    by_split.setdefault(s.split.value, set()).add(s.volume_id)
shared = (by_split.get("train", set()) & by_split.get("test", set())) - {None}
print("volumes on both sides:", shared or "none")

path = write_manifest(vqaseg, workdir / "vqaseg.json")
print("label distribution:", compute_label_distribution(vqaseg).to_json())
print("validation ok:", validate_manifest(path).ok)
