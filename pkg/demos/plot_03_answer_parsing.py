"""
Reading a model answer
======================

How free text is split into detection, diagnosis and mask steps, and how
seg tokens are bound to mask payloads.
"""

import numpy as np

from rds_bench.mask_io import rle_encode
from rds_bench.parsing import BindingError, bind_masks, parse_answer, split_steps

answer = "1. Yes. 2. There is a liver tumour. 3. Here is the mask for liver <seg000> and liver tumour <seg001>."
parsed = parse_answer(answer)
print("detection:", parsed.detection)
print("diagnosis step:", parsed.diagnosis_segment)
print("tokens:", [(r.token_name, r.preceding_label) for r in parsed.seg_refs])

# Decimal numbers inside a step do not start a new step
print(split_steps("1. Yes. 2. A 1.5 cm lesion. 3. <seg000>"))

# An answer without a yes/no word is invalid
print(parse_answer("The scan looks unremarkable.").detection)

# %%
# Masks travel as run-length encoded payloads keyed by token name
organ = np.zeros((8, 8), bool)
organ[2:6, 2:6] = True
lesion = np.zeros((8, 8), bool)
lesion[3:5, 3:5] = True
masks = [rle_encode(lesion, "seg001"), rle_encode(organ, "seg000")]
print(masks[1].to_json())

for b in bind_masks(parsed.seg_refs, masks, ["organ", "abnormality"]):
    print(b.target, "<-", b.ref.token_name, "=", b.mask.token_name)

# A missing payload fails the binding
try:
    bind_masks(parsed.seg_refs, masks[:1], ["organ", "abnormality"])
except BindingError as exc:
    print(type(exc).__name__, exc)
