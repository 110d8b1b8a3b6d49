"""Gated detection -> diagnosis -> segmentation scoring of prediction runs."""
from __future__ import annotations

import csv
import enum
import hashlib
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import __version__
from .dataset import Manifest, ManifestError, TaskKind, VqaSample, VqaSegSample
from .mask_io import RLEError, TransportedMask, load_mask, rle_decode
from .metrics import (
    ConfusionCounts,
    diagnosis_f1,
    diagnosis_indicator,
    dice_score,
    mean,
    open_q_scores,
    precision_recall_f1,
)
from .parsing import BindingError, Detection, bind_masks, match_diagnosis, parse_answer, parse_detection

ALL_GROUP = "ALL"
KINDS = ("organ", "abnormality")


class EvalMode(str, enum.Enum):
    FULL = "full"
    DETECT_ONLY = "detect-only"
    DIAGNOSE_ONLY = "diagnose-only"
    DIAGNOSE_SEG = "diagnose-seg"

    @property
    def scores_detection(self) -> bool:
        return self in (EvalMode.FULL, EvalMode.DETECT_ONLY)

    @property
    def scores_diagnosis(self) -> bool:
        return self is not EvalMode.DETECT_ONLY

    @property
    def scores_segmentation(self) -> bool:
        return self in (EvalMode.FULL, EvalMode.DIAGNOSE_SEG)


class Gate(str, enum.Enum):
    PASSED = "passed"
    FAILED_DETECTION = "failed_detection"
    FAILED_DIAGNOSIS = "failed_diagnosis"
    FAILED_BINDING = "failed_binding"
    MISSING_PREDICTION = "missing_prediction"


class PredictionError(ValueError):
    pass


@dataclass
class PredictionRecord:
    sample_id: str
    answer: str
    masks: list[TransportedMask] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"sample_id": self.sample_id, "answer": self.answer, "masks": [m.to_json() for m in self.masks]}

    @classmethod
    def from_json(cls, obj) -> "PredictionRecord":
        if not isinstance(obj, dict):
            raise PredictionError("record is not a JSON object")
        sample_id, answer = obj.get("sample_id"), obj.get("answer")
        if not isinstance(sample_id, str) or not sample_id:
            raise PredictionError("sample_id must be a non-empty string")
        if not isinstance(answer, str):
            raise PredictionError("answer must be a string")
        raw_masks = obj.get("masks", [])
        if not isinstance(raw_masks, list):
            raise PredictionError("masks must be a list")
        try:
            masks = [TransportedMask.from_json(m) for m in raw_masks]
        except RLEError as exc:
            raise PredictionError(str(exc)) from None
        tokens = [m.token_name for m in masks]
        if len(set(tokens)) != len(tokens):
            raise PredictionError("duplicate mask tokens in record")
        return cls(sample_id, answer, masks)


def dumps_prediction(record: PredictionRecord) -> str:
    return json.dumps(record.to_json(), ensure_ascii=False)


@dataclass
class PredictionFile:
    records: dict[str, PredictionRecord]
    warnings: list[str]
    sha256: str


def read_predictions(path) -> PredictionFile:
    """Parse a JSONL prediction file.

    Malformed lines are skipped with a warning; a repeated ``sample_id`` keeps
    the last record.
    """
    raw = Path(path).read_bytes()
    records: dict[str, PredictionRecord] = {}
    warns = []
    for lineno, line in enumerate(raw.decode("utf-8", errors="replace").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = PredictionRecord.from_json(json.loads(line))
        except (json.JSONDecodeError, PredictionError) as exc:
            warns.append(f"line {lineno}: malformed prediction ({exc})")
            continue
        if rec.sample_id in records:
            warns.append(f"line {lineno}: duplicate sample_id {rec.sample_id!r}, keeping the last record")
        records[rec.sample_id] = rec
    return PredictionFile(records, warns, hashlib.sha256(raw).hexdigest())


@dataclass(frozen=True)
class SampleVerdict:
    sample_id: str
    detection_pred: Detection
    detection_correct: bool
    diagnosis_correct: int
    gate: Gate
    dice_by_kind: dict = field(default_factory=dict)
    invalid_kinds: tuple[str, ...] = ()
    note: str | None = None


def evaluate_sample(sample: VqaSegSample, pred: PredictionRecord | None, mode: EvalMode = EvalMode.FULL) -> SampleVerdict:
    """Score one sample; a failed step zeroes every later step.

    In the diagnosis modes step 1 does not gate: the diagnosis label is
    searched over the whole answer.
    """
    mode = EvalMode(mode)
    if pred is None:
        return SampleVerdict(sample.id, Detection.INVALID, False, 0, Gate.MISSING_PREDICTION)
    parsed = parse_answer(pred.answer)
    expected = Detection.YES if sample.gt_detection else Detection.NO
    detection_correct = parsed.detection is expected

    def verdict(gate, diag=0, **kw):
        return SampleVerdict(sample.id, parsed.detection, detection_correct, diag, gate, **kw)

    if mode.scores_detection:
        if not detection_correct:
            return verdict(Gate.FAILED_DETECTION)
        if mode is EvalMode.DETECT_ONLY:
            return verdict(Gate.PASSED)
        label = sample.gt_diagnosis.label if sample.gt_diagnosis else None
        synonyms = sample.gt_diagnosis.synonyms if sample.gt_diagnosis else ()
        diag = diagnosis_indicator(sample.gt_detection, label, parsed, synonyms)
    elif not sample.gt_detection:
        diag = int(parsed.detection is Detection.NO)
    else:
        d = sample.gt_diagnosis
        diag = int(parsed.detection is not Detection.NO and match_diagnosis(parsed.raw, d.label, d.synonyms))
    if not diag:
        return verdict(Gate.FAILED_DIAGNOSIS)
    if not mode.scores_segmentation or not sample.gt_detection:
        return verdict(Gate.PASSED, 1)

    try:
        bindings = bind_masks(parsed.seg_refs, pred.masks, sample.gt_targets)
    except BindingError as exc:
        return verdict(Gate.FAILED_BINDING, 1, note=f"{type(exc).__name__}: {exc}")
    dice = {}
    invalid = []
    for b in bindings:
        gt = load_mask(b.target.mask_path)
        predicted = rle_decode(b.mask)
        kind = b.target.kind.value
        if predicted.shape != gt.shape:
            invalid.append(kind)
            continue
        dice[kind] = dice_score(predicted, gt)
    return verdict(Gate.PASSED, 1, dice_by_kind=dice, invalid_kinds=tuple(invalid))


@dataclass
class GroupStats:
    n_samples: int = 0
    gates: dict = field(default_factory=lambda: {g.value: 0 for g in Gate})
    n_invalid_masks: int = 0
    detection_precision: float | None = None
    detection_recall: float | None = None
    detection_f1: float | None = None
    diagnosis_f1: float | None = None
    diagnosis_accuracy: float | None = None
    dice_org_mean: float | None = None
    dice_abn_mean: float | None = None
    dice_org_mean_excl_binding_failures: float | None = None
    dice_abn_mean_excl_binding_failures: float | None = None
    n_dice_org: int = 0
    n_dice_abn: int = 0


_DETECTION_KEYS = ("detection_precision", "detection_recall", "detection_f1")
_DIAGNOSIS_KEYS = ("diagnosis_f1", "diagnosis_accuracy")
_DICE_KEYS = (
    "dice_org_mean",
    "dice_abn_mean",
    "dice_org_mean_excl_binding_failures",
    "dice_abn_mean_excl_binding_failures",
    "n_dice_org",
    "n_dice_abn",
)


@dataclass
class EvalReport:
    mode: EvalMode
    groups: dict[str, GroupStats]
    metadata: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        omit = set()
        if not self.mode.scores_detection:
            omit.update(_DETECTION_KEYS)
        if not self.mode.scores_diagnosis:
            omit.update(_DIAGNOSIS_KEYS)
        if not self.mode.scores_segmentation:
            omit.update(_DICE_KEYS)
            omit.add("n_invalid_masks")
        groups = {name: {k: v for k, v in asdict(g).items() if k not in omit} for name, g in self.groups.items()}
        return {
            "tool": {"name": "rds_bench", "version": __version__},
            "mode": self.mode.value,
            **self.metadata,
            "warnings": list(self.warnings),
            "groups": groups,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2) + "\n"


def _detection_label(gt: bool, pred: Detection) -> bool:
    if pred is Detection.YES:
        return True
    if pred is Detection.NO:
        return False
    # an unparseable verdict is always wrong, never coerced to "no"
    return not gt


def _group_stats(pairs: Sequence[tuple[VqaSegSample, SampleVerdict]]) -> GroupStats:
    g = GroupStats(n_samples=len(pairs))
    for _, v in pairs:
        g.gates[v.gate.value] += 1
        g.n_invalid_masks += len(v.invalid_kinds)
    if not pairs:
        return g
    counts = ConfusionCounts.from_labels(
        [s.gt_detection for s, _ in pairs],
        [_detection_label(s.gt_detection, v.detection_pred) for s, v in pairs],
    )
    prf = precision_recall_f1(counts)
    g.detection_precision, g.detection_recall, g.detection_f1 = prf.precision, prf.recall, prf.f1
    indicators = [v.diagnosis_correct for _, v in pairs]
    g.diagnosis_f1 = diagnosis_f1(indicators)
    g.diagnosis_accuracy = mean(indicators)

    incl = {k: [] for k in KINDS}
    excl = {k: [] for k in KINDS}
    for s, v in pairs:
        if not s.gt_detection:
            continue
        if v.gate is Gate.FAILED_BINDING:
            for t in s.gt_targets:
                incl[t.kind.value].append(0.0)
        elif v.gate is Gate.PASSED:
            for kind, value in v.dice_by_kind.items():
                incl[kind].append(value)
                excl[kind].append(value)
    g.dice_org_mean, g.dice_abn_mean = mean(incl["organ"]), mean(incl["abnormality"])
    g.dice_org_mean_excl_binding_failures = mean(excl["organ"])
    g.dice_abn_mean_excl_binding_failures = mean(excl["abnormality"])
    g.n_dice_org, g.n_dice_abn = len(incl["organ"]), len(incl["abnormality"])
    return g


def aggregate(verdicts: Iterable[SampleVerdict], manifest: Manifest, mode: EvalMode = EvalMode.FULL) -> EvalReport:
    """Per-modality report; the result does not depend on verdict order."""
    by_id = {v.sample_id: v for v in verdicts}
    samples = manifest.samples
    if set(by_id) != {s.id for s in samples} or len(by_id) != len(samples):
        raise ManifestError("verdicts do not match manifest samples one-to-one")
    pairs = [(s, by_id[s.id]) for s in samples]
    groups = {}
    for modality in sorted({s.modality for s in samples}):
        groups[modality] = _group_stats([p for p in pairs if p[0].modality == modality])
    groups[ALL_GROUP] = _group_stats(pairs)
    return EvalReport(EvalMode(mode), groups)


def require_vqaseg(manifest: Manifest) -> None:
    if manifest.task_kind is not TaskKind.VQA_SEG:
        raise ManifestError(f"expected a vqa_seg manifest, got {manifest.task_kind.value}")
    ids = [s.id for s in manifest.samples]
    if len(set(ids)) != len(ids):
        raise ManifestError("manifest has duplicate sample ids")


def evaluate_run(manifest: Manifest, predictions_path, mode: EvalMode = EvalMode.FULL, parallelism: int = 1) -> EvalReport:
    """Evaluate a prediction file against a manifest.

    The report is byte-identical for any ``parallelism``: samples are scored
    independently and reduced in manifest order.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    require_vqaseg(manifest)
    mode = EvalMode(mode)
    preds = read_predictions(predictions_path)
    warns = list(preds.warnings)
    known = {s.id for s in manifest.samples}
    unknown = sorted(set(preds.records) - known)
    if unknown:
        warns.append(f"{len(unknown)} prediction(s) for unknown sample ids ignored")

    def work(sample):
        return evaluate_sample(sample, preds.records.get(sample.id), mode)

    if parallelism == 1:
        verdicts = [work(s) for s in manifest.samples]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            verdicts = list(pool.map(work, manifest.samples))
    report = aggregate(verdicts, manifest, mode)
    report.warnings = warns
    report.metadata = {
        "inputs": {"manifest_sha256": manifest.sha256, "predictions_sha256": preds.sha256},
        "dice_binding_failures": "include_as_zero",
    }
    return report


# -- rendering ---------------------------------------------------------------

_COLUMNS = (
    ("Detection F1", "detection_f1"),
    ("Diagnosis F1", "diagnosis_f1"),
    ("Dice-Org", "dice_org_mean"),
    ("Dice-Abn", "dice_abn_mean"),
)


def _table_rows(report: Mapping) -> tuple[list[str], list[list[str]]]:
    groups = report["groups"]
    any_group = next(iter(groups.values()), {})
    cols = [(title, key) for title, key in _COLUMNS if key in any_group]
    header = ["Modality", "N"] + [title for title, _ in cols]
    rows = []
    for name, g in groups.items():
        cells = [name, str(g["n_samples"])]
        for _, key in cols:
            v = g.get(key)
            cells.append("-" if v is None else f"{v:.4f}")
        rows.append(cells)
    return header, rows


def render_text(report: Mapping) -> str:
    """Aligned text table from a report's JSON form."""
    header, rows = _table_rows(report)
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
    lines = [f"mode: {report['mode']}"]
    for r in [header, *rows]:
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))).rstrip())
    for w in report.get("warnings", []):
        lines.append(f"warning: {w}")
    return "\n".join(lines) + "\n"


def render_csv(report: Mapping) -> str:
    header, rows = _table_rows(report)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


# -- plain VQA ---------------------------------------------------------------


@dataclass
class VqaReport:
    f1: float | None
    precision: float | None
    recall: float | None
    n_closed: int
    openq_acc: float | None
    openq_recall: float | None
    n_open: int
    n_missing: int = 0

    def to_json(self) -> dict:
        return {
            "tool": {"name": "rds_bench", "version": __version__},
            "closed": {"f1": self.f1, "precision": self.precision, "recall": self.recall, "n": self.n_closed},
            "open": {"openq_acc": self.openq_acc, "openq_recall": self.openq_recall, "n": self.n_open},
            "n_missing": self.n_missing,
        }


def evaluate_vqa(gt_pairs: Sequence[VqaSample], predictions: Mapping[str, str]) -> VqaReport:
    """Closed questions by yes/no F1 and recall, open ones by exact match and token recall.

    ``predictions`` maps sample id to answer text; a missing answer scores as wrong.
    """
    y_true, y_pred, accs, recalls = [], [], [], []
    missing = 0
    for s in gt_pairs:
        answer = predictions.get(s.id)
        if answer is None:
            missing += 1
            answer = ""
        if s.answer_type == "closed":
            gt_yes = parse_detection(s.answer) is Detection.YES
            y_true.append(gt_yes)
            y_pred.append(_detection_label(gt_yes, parse_detection(answer)))
        else:
            scores = open_q_scores(s.answer, answer)
            accs.append(scores.exact_acc)
            recalls.append(scores.token_recall)
    prf = precision_recall_f1(ConfusionCounts.from_labels(y_true, y_pred)) if y_true else None
    return VqaReport(
        f1=prf.f1 if prf else None,
        precision=prf.precision if prf else None,
        recall=prf.recall if prf else None,
        n_closed=len(y_true),
        openq_acc=mean(accs),
        openq_recall=mean(recalls),
        n_open=len(accs),
        n_missing=missing,
    )
