"""Scalar metrics and segmentation loss numerics.

Masks are plain numpy arrays: binary masks are 2D ``bool`` arrays and
probability masks are 2D float arrays with values in ``[0, 1]``. Both use
``(height, width)`` shape.
"""
from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

BCE_EPS = 1e-7
DICE_SMOOTH = 1e-6


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        for name in ("tp", "fp", "fn", "tn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def from_labels(cls, y_true: Iterable[bool], y_pred: Iterable[bool]) -> "ConfusionCounts":
        tp = fp = fn = tn = 0
        for t, p in zip(y_true, y_pred, strict=True):
            if t and p:
                tp += 1
            elif p:
                fp += 1
            elif t:
                fn += 1
            else:
                tn += 1
        return cls(tp, fp, fn, tn)


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class LossWeights:
    lambda_text: float = 1.0
    lambda_seg: float = 1.0
    lambda_bce: float = 2.0
    lambda_dice: float = 0.5

    def __post_init__(self):
        for name in ("lambda_text", "lambda_seg", "lambda_bce", "lambda_dice"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def _ratio(num: float, den: float) -> float:
    # 0/0 is defined as 0 so degenerate predictors score instead of crashing
    return num / den if den else 0.0


def precision_recall_f1(c: ConfusionCounts) -> PRF:
    precision = _ratio(c.tp, c.tp + c.fp)
    recall = _ratio(c.tp, c.tp + c.fn)
    # same as the harmonic mean of precision and recall, with a single rounding
    f1 = _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)
    return PRF(precision, recall, f1)


def _as_binary(mask) -> np.ndarray:
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2D mask, got shape {arr.shape}")
    return arr.astype(bool, copy=False)


def _as_prob(mask) -> np.ndarray:
    arr = np.asarray(mask, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2D mask, got shape {arr.shape}")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0 or np.isnan(arr).any()):
        raise ValueError("probabilities must lie in [0, 1]")
    return arr


def _check_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")


def dice_score(pred, gt) -> float:
    """Dice overlap ``2|P & G| / (|P| + |G|)`` between two binary masks.

    Two empty masks score 1.0.
    """
    p = _as_binary(pred)
    g = _as_binary(gt)
    _check_dims(p, g)
    size_p = int(np.count_nonzero(p))
    size_g = int(np.count_nonzero(g))
    if size_p + size_g == 0:
        return 1.0
    inter = int(np.count_nonzero(p & g))
    return 2 * inter / (size_p + size_g)


def diagnosis_indicator(gt_detection: bool, gt_label: str | None, parsed, synonyms: Sequence[str] = ()) -> int:
    """1 when detection and diagnosis are jointly right, else 0.

    ``parsed`` is a :class:`rds_bench.parsing.ParsedAnswer`.
    """
    from .parsing import Detection, match_diagnosis

    if not gt_detection:
        return int(parsed.detection is Detection.NO)
    if not gt_label:
        raise ValueError("positive ground truth requires a diagnosis label")
    if parsed.detection is not Detection.YES:
        return 0
    segment = parsed.diagnosis_segment
    if segment is None:
        return 0
    return int(match_diagnosis(segment, gt_label, synonyms))


def diagnosis_f1(indicators: Sequence[int]) -> float:
    """F1 of the correctness vector scored against an all-ones truth vector."""
    if len(indicators) == 0:
        raise ValueError("diagnosis_f1 needs at least one indicator")
    tp = sum(1 for v in indicators if v)
    return precision_recall_f1(ConfusionCounts(tp=tp, fp=0, fn=len(indicators) - tp)).f1


def bce_pixel_loss(pred, gt) -> float:
    p = _as_prob(pred)
    m = _as_binary(gt)
    _check_dims(p, m)
    if p.size == 0:
        raise ValueError("empty mask")
    p = p.ravel()
    m = m.ravel()
    # 1 - eps is not representable, so clamp min(p, 1 - p) instead; 1 - p is exact for p >= 0.5
    small = np.maximum(np.where(p < 0.5, p, 1.0 - p), BCE_EPS)
    true_is_small = m == (p < 0.5)
    per_pixel = np.where(true_is_small, -np.log(small), -np.log1p(-small))
    # np.sum over a contiguous 1D array is pairwise, independent of chunking
    return float(np.sum(per_pixel) / per_pixel.size)


def dice_loss(pred, gt) -> float:
    p = _as_prob(pred)
    m = _as_binary(gt)
    _check_dims(p, m)
    p = p.ravel()
    mf = m.ravel().astype(np.float64)
    inter = float(np.sum(p * mf))
    return 1.0 - (2.0 * inter + DICE_SMOOTH) / (float(np.sum(p)) + float(np.sum(mf)) + DICE_SMOOTH)


def seg_loss(pred, gt, w: LossWeights = LossWeights()) -> float:
    return w.lambda_bce * bce_pixel_loss(pred, gt) + w.lambda_dice * dice_loss(pred, gt)


def total_loss(l_text: float, l_seg: float, w: LossWeights = LossWeights()) -> float:
    if l_text < 0 or l_seg < 0:
        raise ValueError("losses must be non-negative")
    return w.lambda_text * l_text + w.lambda_seg * l_seg


_PUNCT = re.compile(r"[^\w\s]")


def normalize_answer(text: str) -> str:
    text = _PUNCT.sub("", text.lower())
    return " ".join(text.split())


class OpenScores(NamedTuple):
    exact_acc: int
    token_recall: float


def open_q_scores(gt_answer: str, pred_answer: str) -> OpenScores:
    """Exact match and multiset token recall for an open-ended answer."""
    gt_norm = normalize_answer(gt_answer)
    if not gt_norm:
        raise ValueError("ground-truth answer is empty after normalization")
    pred_norm = normalize_answer(pred_answer)
    gt_tokens = Counter(gt_norm.split())
    overlap = gt_tokens & Counter(pred_norm.split())
    recall = sum(overlap.values()) / sum(gt_tokens.values())
    return OpenScores(int(gt_norm == pred_norm), recall)


def mean(values: Sequence[float]) -> float | None:
    """Correctly rounded mean, independent of input order; None when empty."""
    if not values:
        return None
    return math.fsum(values) / len(values)
