"""
Dice, F1 and the segmentation loss
==================================

A tour of the numeric building blocks on tiny hand-made masks.
"""

import numpy as np

from rds_bench.metrics import (
    ConfusionCounts,
    LossWeights,
    bce_pixel_loss,
    diagnosis_f1,
    dice_loss,
    dice_score,
    precision_recall_f1,
    seg_loss,
    total_loss,
)

# Two 4x4 masks that overlap in two pixels
pred = np.zeros((4, 4), bool)
pred[1, 1:3] = True
gt = np.zeros((4, 4), bool)
gt[1:3, 1:3] = True
print("dice:", dice_score(pred, gt))  # 2*2 / (2+4)

# Two empty masks agree perfectly
print("empty vs empty:", dice_score(np.zeros((2, 2)), np.zeros((2, 2))))

# Detection scores come from a yes/no confusion table
print(precision_recall_f1(ConfusionCounts(tp=3, fp=1, fn=2)))

# Diagnosis F1 scores a 0/1 correctness vector against all ones,
# which works out to 2a / (1 + a) for accuracy a
v = [1, 1, 0]
print("diagnosis F1:", diagnosis_f1(v), "closed form:", 2 * (2 / 3) / (1 + 2 / 3))

# %%
# Probability maps feed the training losses
prob = np.array([[0.9, 0.2], [0.6, 0.1]])
target = np.array([[1, 0], [1, 0]], bool)
w = LossWeights()
print("weights:", w)
print("bce:", bce_pixel_loss(prob, target))
print("soft dice loss:", dice_loss(prob, target))
print("seg loss:", seg_loss(prob, target, w))
print("total with text loss 0.25:", total_loss(0.25, seg_loss(prob, target, w), w))
