"""Reference predictors that write prediction files without a model."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Literal, Union

import numpy as np

from .dataset import Manifest, VqaSegSample, render_vqaseg_answer
from .evaluation import PredictionRecord, require_vqaseg, dumps_prediction
from .mask_io import load_mask, rle_encode
from .rng import keyed_rng
from .templates import Templates, load_templates


@dataclass(frozen=True)
class Oracle:
    pass


@dataclass(frozen=True)
class AlwaysNegative:
    pass


@dataclass(frozen=True)
class AlwaysPositive:
    label: str | None = None  # None: use the ground-truth label where one exists


@dataclass(frozen=True)
class ConstantMask:
    fill: Literal["empty", "full"] = "empty"

    def __post_init__(self):
        if self.fill not in ("empty", "full"):
            raise ValueError("fill must be 'empty' or 'full'")


@dataclass(frozen=True)
class NoisyOracle:
    flip_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip_prob must lie in [0, 1]")


PredictorPolicy = Union[Oracle, AlwaysNegative, AlwaysPositive, ConstantMask, NoisyOracle]

FALLBACK_LABEL = "an abnormality"


def parse_policy(text: str, seed: int = 0) -> PredictorPolicy:
    """Policy from a short string: ``oracle``, ``always-negative``,
    ``always-positive[:LABEL]``, ``constant-mask:empty|full``, ``noisy-oracle:P``.
    """
    name, _, arg = text.partition(":")
    name = name.strip().lower().replace("_", "-")
    if name == "oracle":
        return Oracle()
    if name == "always-negative":
        return AlwaysNegative()
    if name == "always-positive":
        return AlwaysPositive(arg or None)
    if name == "constant-mask":
        return ConstantMask(arg or "empty")
    if name == "noisy-oracle":
        return NoisyOracle(float(arg or 0.0), seed)
    raise ValueError(f"unknown predictor policy {text!r}")


def _gt_masks(sample: VqaSegSample, t: Templates) -> list:
    return [rle_encode(load_mask(tg.mask_path), t.seg_token_name(i)) for i, tg in enumerate(sample.gt_targets)]


def _constant_masks(sample: VqaSegSample, t: Templates, fill: bool) -> list:
    out = []
    for i, tg in enumerate(sample.gt_targets):
        shape = load_mask(tg.mask_path).shape
        out.append(rle_encode(np.full(shape, fill, dtype=bool), t.seg_token_name(i)))
    return out


def _positive_answer(sample: VqaSegSample, label: str, t: Templates) -> tuple[str, list]:
    if not sample.gt_targets:
        return f"1. Yes. 2. There is {label}.", []
    organ, abnormality = sample.gt_targets
    text = t.vqaseg_answer_positive.format(
        diagnosis=label,
        organ=organ.name,
        abnormality=abnormality.name,
        organ_token=t.seg_token(0),
        abnormality_token=t.seg_token(1),
    )
    return text, _constant_masks(sample, t, False)


def predict_sample(sample: VqaSegSample, policy: PredictorPolicy, templates: Templates | None = None) -> PredictionRecord:
    t = templates or load_templates()
    if isinstance(policy, Oracle):
        return PredictionRecord(sample.id, render_vqaseg_answer(sample, t), _gt_masks(sample, t))
    if isinstance(policy, AlwaysNegative):
        return PredictionRecord(sample.id, t.vqaseg_answer_negative, [])
    if isinstance(policy, AlwaysPositive):
        label = policy.label or (sample.gt_diagnosis.label if sample.gt_diagnosis else FALLBACK_LABEL)
        return PredictionRecord(sample.id, *_positive_answer(sample, label, t))
    if isinstance(policy, ConstantMask):
        masks = _constant_masks(sample, t, policy.fill == "full")
        return PredictionRecord(sample.id, render_vqaseg_answer(sample, t), masks)
    if isinstance(policy, NoisyOracle):
        flip = keyed_rng(policy.seed, sample.id).random() < policy.flip_prob
        if not flip:
            return predict_sample(sample, Oracle(), t)
        if sample.gt_detection:
            return PredictionRecord(sample.id, t.vqaseg_answer_negative, [])
        return PredictionRecord(sample.id, *_positive_answer(sample, FALLBACK_LABEL, t))
    raise TypeError(f"unsupported policy {policy!r}")


def predict(manifest: Manifest, policy: PredictorPolicy, templates: Templates | None = None) -> Iterator[PredictionRecord]:
    """Prediction records for every sample, ordered by sample id."""
    require_vqaseg(manifest)
    t = templates or load_templates()
    for sample in sorted(manifest.samples, key=lambda s: s.id):
        yield predict_sample(sample, policy, t)


def write_predictions(records, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dumps_prediction(rec) + "\n")
    return path
