"""Task-sample rendering, volume-aware splitting, label statistics and manifest I/O."""
from __future__ import annotations

import enum
import hashlib
import json
import os
import warnings
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .mask_io import MaskReadError, image_size, load_mask
from .metrics import normalize_answer
from .rng import keyed_rng
from .templates import Templates, canonical_modality, load_templates

MANIFEST_VERSION = 1
NEGATIVE_LABEL = "negative"


class ManifestError(ValueError):
    pass


class SplitWarning(UserWarning):
    pass


class TargetKind(str, enum.Enum):
    ORGAN = "organ"
    ABNORMALITY = "abnormality"


class TaskKind(str, enum.Enum):
    REF_SEG = "ref_seg"
    VQA = "vqa"
    VQA_SEG = "vqa_seg"


class Split(str, enum.Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass(frozen=True)
class SegTarget:
    name: str
    synonyms: tuple[str, ...]
    mask_path: Path
    kind: TargetKind

    def __post_init__(self):
        if not self.name:
            raise ManifestError("target name must be non-empty")
        syn = tuple(self.synonyms)
        if self.name not in syn:
            syn = (self.name, *syn)
        object.__setattr__(self, "synonyms", syn)
        object.__setattr__(self, "mask_path", Path(self.mask_path))
        object.__setattr__(self, "kind", TargetKind(self.kind))


@dataclass(frozen=True)
class Diagnosis:
    label: str
    synonyms: tuple[str, ...] = ()


@dataclass(frozen=True)
class SourceRecord:
    id: str
    image_path: Path
    modality: str
    diagnosis: Diagnosis | None  # None for a negative finding
    targets: tuple[SegTarget, ...] = ()
    volume_id: str | None = None
    split: Split | None = None

    @property
    def positive(self) -> bool:
        return self.diagnosis is not None


@dataclass(frozen=True)
class VqaSegSample:
    id: str
    modality: str
    image_path: Path
    question_text: str
    gt_detection: bool
    gt_diagnosis: Diagnosis | None
    gt_targets: tuple[SegTarget, ...]
    split: Split | None = None
    volume_id: str | None = None


@dataclass(frozen=True)
class RefSegSample:
    id: str
    image_path: Path
    modality: str
    target: SegTarget
    prompt: str
    expected_answer: str
    split: Split | None = None
    volume_id: str | None = None


@dataclass(frozen=True)
class VqaSample:
    id: str
    question: str
    answer: str
    answer_type: str  # "closed" | "open"
    image_path: Path | None = None
    modality: str | None = None
    split: Split | None = None


@dataclass
class LabelDistribution:
    counts: dict[str, dict[str, int]] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(sum(per.values()) for per in self.counts.values())

    def to_json(self) -> dict:
        return {m: dict(sorted(per.items())) for m, per in sorted(self.counts.items())}


@dataclass
class Manifest:
    task_kind: TaskKind
    samples: list
    version: int = MANIFEST_VERSION
    path: Path | None = None
    sha256: str | None = None

    @property
    def stats(self) -> LabelDistribution:
        return compute_label_distribution(self)

    def by_id(self) -> dict:
        return {s.id: s for s in self.samples}


# -- rendering ---------------------------------------------------------------


def render_refseg_sample(record: SourceRecord, target_index: int, seed: int = 0, templates: Templates | None = None) -> RefSegSample:
    """Referring-segmentation prompt for one target, with a seeded synonym draw."""
    t = templates or load_templates()
    if not 0 <= target_index < len(record.targets):
        raise IndexError(f"record {record.id} has no target {target_index}")
    target = record.targets[target_index]
    sample_id = f"{record.id}#{target_index}"
    rng = keyed_rng(seed, sample_id)
    label = target.synonyms[int(rng.integers(len(target.synonyms)))]
    prompt = t.refseg_prompt.format(label=label, modality=t.modality_name(record.modality))
    answer = t.refseg_answer.format(label=label, token=t.seg_token(0))
    return RefSegSample(sample_id, record.image_path, record.modality, target, prompt, answer, record.split, record.volume_id)


def render_vqaseg_sample(record: SourceRecord, templates: Templates | None = None) -> VqaSegSample:
    t = templates or load_templates()
    targets = tuple(record.targets)
    if record.positive:
        kinds = [tg.kind for tg in targets]
        if kinds != [TargetKind.ORGAN, TargetKind.ABNORMALITY]:
            raise ManifestError(f"{record.id}: positive record needs targets [organ, abnormality], got {[k.value for k in kinds]}")
    else:
        targets = ()
    question = t.vqaseg_question.format(modality=t.modality_name(record.modality))
    return VqaSegSample(
        id=record.id,
        modality=record.modality,
        image_path=record.image_path,
        question_text=question,
        gt_detection=record.positive,
        gt_diagnosis=record.diagnosis,
        gt_targets=targets,
        split=record.split,
        volume_id=record.volume_id,
    )


def render_vqaseg_answer(sample: VqaSegSample, templates: Templates | None = None) -> str:
    """Ground-truth answer text; one seg token per target in target order."""
    t = templates or load_templates()
    if not sample.gt_detection:
        return t.vqaseg_answer_negative
    organ, abnormality = sample.gt_targets
    return t.vqaseg_answer_positive.format(
        diagnosis=sample.gt_diagnosis.label,
        organ=organ.name,
        abnormality=abnormality.name,
        organ_token=t.seg_token(0),
        abnormality_token=t.seg_token(1),
    )


def render_vqa_sample(obj: dict, base_dir: Path | None = None) -> VqaSample:
    answer = str(obj["answer"])
    answer_type = obj.get("answer_type") or ("closed" if normalize_answer(answer) in ("yes", "no") else "open")
    if answer_type not in ("closed", "open"):
        raise ManifestError(f"{obj.get('id')}: answer_type must be closed or open")
    image = obj.get("image_path")
    modality = obj.get("modality")
    return VqaSample(
        id=str(obj["id"]),
        question=str(obj["question"]),
        answer=answer,
        answer_type=answer_type,
        image_path=_resolve(image, base_dir) if image else None,
        modality=canonical_modality(modality) if modality else None,
        split=Split(obj["split"]) if obj.get("split") else None,
    )


# -- splitting ---------------------------------------------------------------


def split_by_volume(records: Sequence, test_fraction: float, seed: int = 0) -> tuple[list, list]:
    """Partition records so that no volume straddles train and test.

    Volume groups (records without a ``volume_id`` are singleton groups) are
    shuffled by ``seed`` and greedily moved to the test side while doing so
    brings the test size closer to ``test_fraction``. Input order is kept
    within each side.
    """
    if not records:
        raise ValueError("cannot split an empty record list")
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie strictly between 0 and 1")
    groups: dict[object, list[int]] = {}
    for i, r in enumerate(records):
        key = ("vol", r.volume_id) if r.volume_id is not None else ("rec", i)
        groups.setdefault(key, []).append(i)
    order = list(groups.values())
    perm = np.random.default_rng(seed).permutation(len(order))
    n = len(records)
    target = round(test_fraction * n)
    test_idx: set[int] = set()
    for gi in perm:
        members = order[gi]
        if abs(len(test_idx) + len(members) - target) < abs(len(test_idx) - target):
            test_idx.update(members)
    achieved = len(test_idx) / n
    if abs(achieved - test_fraction) > 0.02 or len(test_idx) in (0, n):
        warnings.warn(
            f"test fraction {test_fraction} unattainable with volume groups; achieved {achieved:.3f}",
            SplitWarning,
            stacklevel=2,
        )
    train = [r for i, r in enumerate(records) if i not in test_idx]
    test = [r for i, r in enumerate(records) if i in test_idx]
    return train, test


def _with_split(record: SourceRecord, split: Split) -> SourceRecord:
    return replace(record, split=split)


def assemble(records: Sequence[SourceRecord], seed: int = 0, test_fraction: float = 0.2, templates: Templates | None = None) -> tuple[Manifest, Manifest]:
    """Build the VQA-Seg and Ref-Seg manifests from source records."""
    t = templates or load_templates()
    _check_unique([r.id for r in records])
    train, test = split_by_volume(records, test_fraction, seed)
    split_of = {r.id: Split.TRAIN for r in train} | {r.id: Split.TEST for r in test}
    labelled = [_with_split(r, split_of[r.id]) for r in records]
    vqaseg = [render_vqaseg_sample(r, t) for r in labelled]
    refseg = [render_refseg_sample(r, i, seed, t) for r in labelled for i in range(len(r.targets))]
    return Manifest(TaskKind.VQA_SEG, vqaseg), Manifest(TaskKind.REF_SEG, refseg)


# -- statistics --------------------------------------------------------------


def _sample_label(sample) -> tuple[str, str]:
    if isinstance(sample, VqaSegSample):
        return sample.modality, sample.gt_diagnosis.label if sample.gt_detection else NEGATIVE_LABEL
    if isinstance(sample, SourceRecord):
        return sample.modality, sample.diagnosis.label if sample.positive else NEGATIVE_LABEL
    if isinstance(sample, RefSegSample):
        return sample.modality, sample.target.name
    if isinstance(sample, VqaSample):
        return sample.modality or "UNKNOWN", sample.answer_type
    raise TypeError(f"unsupported sample type {type(sample).__name__}")


def compute_label_distribution(manifest) -> LabelDistribution:
    samples = manifest.samples if isinstance(manifest, Manifest) else manifest
    counts: dict[str, dict[str, int]] = defaultdict(lambda: defaultdict(int))
    for s in samples:
        modality, label = _sample_label(s)
        counts[modality][label] += 1
    return LabelDistribution({m: dict(per) for m, per in counts.items()})


# -- manifest I/O ------------------------------------------------------------


def _resolve(path, base_dir: Path | None) -> Path:
    p = Path(path)
    if base_dir is not None and not p.is_absolute():
        p = base_dir / p
    return p


def _rel(path: Path, base_dir: Path | None) -> str:
    if base_dir is None:
        return Path(path).as_posix()
    try:
        return Path(path).resolve().relative_to(base_dir.resolve()).as_posix()
    except ValueError:
        return Path(os.path.relpath(Path(path).resolve(), base_dir.resolve())).as_posix()


def _check_unique(ids: Iterable[str]) -> None:
    seen = set()
    for i in ids:
        if i in seen:
            raise ManifestError(f"duplicate sample id {i!r}")
        seen.add(i)


def _target_from_json(obj: dict, base_dir: Path | None) -> SegTarget:
    return SegTarget(
        name=obj["name"],
        synonyms=tuple(obj.get("synonyms") or ()),
        mask_path=_resolve(obj["mask_path"], base_dir),
        kind=TargetKind(obj["kind"]),
    )


def _target_to_json(t: SegTarget, base_dir: Path | None) -> dict:
    return {"name": t.name, "synonyms": list(t.synonyms), "mask_path": _rel(t.mask_path, base_dir), "kind": t.kind.value}


def record_from_json(obj: dict, base_dir: Path | None = None) -> SourceRecord:
    finding = obj.get("finding") or {"type": "negative"}
    kind = finding.get("type")
    if kind == "positive":
        if not finding.get("label"):
            raise ManifestError(f"{obj.get('id')}: positive finding without label")
        diagnosis = Diagnosis(finding["label"], tuple(finding.get("synonyms") or ()))
    elif kind == "negative":
        diagnosis = None
    else:
        raise ManifestError(f"{obj.get('id')}: finding type must be positive or negative")
    targets = tuple(_target_from_json(t, base_dir) for t in obj.get("targets") or ())
    if diagnosis is not None and not targets:
        raise ManifestError(f"{obj.get('id')}: positive finding without targets")
    return SourceRecord(
        id=str(obj["id"]),
        image_path=_resolve(obj["image_path"], base_dir),
        modality=canonical_modality(obj["modality"]),
        diagnosis=diagnosis,
        targets=targets,
        volume_id=obj.get("volume_id"),
        split=Split(obj["split"]) if obj.get("split") else None,
    )


def record_to_json(record: SourceRecord, base_dir: Path | None = None) -> dict:
    out = {
        "id": record.id,
        "image_path": _rel(record.image_path, base_dir),
        "modality": record.modality,
        "finding": _finding_json(record.diagnosis),
        "targets": [_target_to_json(t, base_dir) for t in record.targets],
    }
    if record.volume_id is not None:
        out["volume_id"] = record.volume_id
    if record.split is not None:
        out["split"] = record.split.value
    return out


def write_sources(records: Sequence[SourceRecord], path) -> Path:
    """Inverse of :func:`load_sources`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = {"samples": [record_to_json(r, path.parent) for r in records]}
    path.write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")
    return path


def _finding_json(diagnosis: Diagnosis | None) -> dict:
    if diagnosis is None:
        return {"type": "negative"}
    out = {"type": "positive", "label": diagnosis.label}
    if diagnosis.synonyms:
        out["synonyms"] = list(diagnosis.synonyms)
    return out


def _sample_to_json(s, base_dir: Path | None) -> dict:
    if isinstance(s, VqaSegSample):
        out = {
            "id": s.id,
            "image_path": _rel(s.image_path, base_dir),
            "modality": s.modality,
            "finding": _finding_json(s.gt_diagnosis),
            "targets": [_target_to_json(t, base_dir) for t in s.gt_targets],
            "question": s.question_text,
        }
    elif isinstance(s, RefSegSample):
        out = {
            "id": s.id,
            "image_path": _rel(s.image_path, base_dir),
            "modality": s.modality,
            "target": _target_to_json(s.target, base_dir),
            "prompt": s.prompt,
            "expected_answer": s.expected_answer,
        }
    elif isinstance(s, VqaSample):
        out = {"id": s.id, "question": s.question, "answer": s.answer, "answer_type": s.answer_type}
        if s.image_path is not None:
            out["image_path"] = _rel(s.image_path, base_dir)
        if s.modality is not None:
            out["modality"] = s.modality
    elif isinstance(s, SourceRecord):
        out = {
            "id": s.id,
            "image_path": _rel(s.image_path, base_dir),
            "modality": s.modality,
            "finding": _finding_json(s.diagnosis),
            "targets": [_target_to_json(t, base_dir) for t in s.targets],
        }
    else:
        raise TypeError(f"unsupported sample type {type(s).__name__}")
    volume_id = getattr(s, "volume_id", None)
    if volume_id is not None:
        out["volume_id"] = volume_id
    if getattr(s, "split", None) is not None:
        out["split"] = s.split.value
    return out


def _sample_from_json(kind: TaskKind, obj: dict, base_dir: Path | None, templates: Templates):
    if kind is TaskKind.VQA_SEG:
        sample = render_vqaseg_sample(record_from_json(obj, base_dir), templates)
        if obj.get("question"):
            sample = replace(sample, question_text=obj["question"])
        return sample
    if kind is TaskKind.REF_SEG:
        return RefSegSample(
            id=str(obj["id"]),
            image_path=_resolve(obj["image_path"], base_dir),
            modality=canonical_modality(obj["modality"]),
            target=_target_from_json(obj["target"], base_dir),
            prompt=obj["prompt"],
            expected_answer=obj["expected_answer"],
            split=Split(obj["split"]) if obj.get("split") else None,
            volume_id=obj.get("volume_id"),
        )
    return render_vqa_sample(obj, base_dir)


def manifest_to_json(manifest: Manifest, base_dir: Path | None = None) -> dict:
    return {
        "version": manifest.version,
        "task_kind": manifest.task_kind.value,
        "samples": [_sample_to_json(s, base_dir) for s in manifest.samples],
        "stats": compute_label_distribution(manifest).to_json(),
    }


def dumps_manifest(manifest: Manifest, base_dir: Path | None = None) -> str:
    return json.dumps(manifest_to_json(manifest, base_dir), indent=2, ensure_ascii=False) + "\n"


def write_manifest(manifest: Manifest, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = dumps_manifest(manifest, path.parent).encode("utf-8")
    path.write_bytes(data)
    manifest.path = path
    manifest.sha256 = hashlib.sha256(data).hexdigest()
    return path


def parse_manifest(data: dict, base_dir: Path | None = None, templates: Templates | None = None) -> Manifest:
    t = templates or load_templates()
    if not isinstance(data, dict):
        raise ManifestError("manifest must be a JSON object")
    if data.get("version") != MANIFEST_VERSION:
        raise ManifestError(f"unsupported manifest version {data.get('version')!r}")
    try:
        kind = TaskKind(data.get("task_kind"))
    except ValueError:
        raise ManifestError(f"unknown task_kind {data.get('task_kind')!r}") from None
    samples = []
    for obj in data.get("samples") or []:
        try:
            samples.append(_sample_from_json(kind, obj, base_dir, t))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ManifestError):
                raise
            raise ManifestError(f"sample {obj.get('id') if isinstance(obj, dict) else obj!r}: {exc!r}") from exc
    return Manifest(kind, samples)


def load_manifest(path, templates: Templates | None = None) -> Manifest:
    """Read a manifest; paths inside it resolve against the manifest's directory.

    Duplicate ids are tolerated here so that :func:`validate_manifest` can
    report them.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
        data = json.loads(raw.decode("utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    manifest = parse_manifest(data, path.parent, templates)
    manifest.path = path
    manifest.sha256 = hashlib.sha256(raw).hexdigest()
    return manifest


def load_sources(path) -> list[SourceRecord]:
    """Source annotations: a JSON object with a ``samples`` (or ``records``) list."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read sources {path}: {exc}") from exc
    items = data.get("samples", data.get("records")) if isinstance(data, dict) else data
    if not isinstance(items, list):
        raise ManifestError("sources file must hold a list of records")
    try:
        return [record_from_json(obj, path.parent) for obj in items]
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"malformed source record: {exc!r}") from exc


# -- validation --------------------------------------------------------------


@dataclass(frozen=True, order=True)
class Finding:
    sample_id: str
    kind: str  # missing_file | unreadable_mask | dimension_mismatch | duplicate_id
    detail: str


@dataclass
class ValidationReport:
    findings: list[Finding] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.findings

    def to_json(self) -> dict:
        return {"ok": self.ok, "findings": [f.__dict__ for f in self.findings]}


class ManifestValidationError(ManifestError):
    def __init__(self, report: ValidationReport):
        super().__init__(f"{len(report.findings)} validation finding(s)")
        self.report = report


def _sample_files(s) -> tuple[Path | None, list[Path]]:
    if isinstance(s, VqaSegSample):
        return s.image_path, [t.mask_path for t in s.gt_targets]
    if isinstance(s, RefSegSample):
        return s.image_path, [s.target.mask_path]
    if isinstance(s, SourceRecord):
        return s.image_path, [t.mask_path for t in s.targets]
    return getattr(s, "image_path", None), []


def _check_sample(s) -> list[Finding]:
    found = []
    image, masks = _sample_files(s)
    dims = None
    if image is not None:
        if not image.is_file():
            found.append(Finding(s.id, "missing_file", str(image)))
        else:
            try:
                dims = image_size(image)
            except OSError as exc:
                found.append(Finding(s.id, "missing_file", f"unreadable image {image}: {exc}"))
    for m in masks:
        if not m.is_file():
            found.append(Finding(s.id, "missing_file", str(m)))
            continue
        try:
            arr = load_mask(m)
        except MaskReadError as exc:
            found.append(Finding(s.id, "unreadable_mask", str(exc)))
            continue
        if dims is not None and (arr.shape[1], arr.shape[0]) != dims:
            found.append(Finding(s.id, "dimension_mismatch", f"{m}: mask {arr.shape[1]}x{arr.shape[0]} vs image {dims[0]}x{dims[1]}"))
    return found


def validate_manifest(manifest, strict: bool = False, jobs: int = 1) -> ValidationReport:
    """Check files, masks, dimensions and id uniqueness.

    ``manifest`` may be a :class:`Manifest` or a path. With ``strict`` any
    finding raises :class:`ManifestValidationError`.
    """
    if not isinstance(manifest, Manifest):
        manifest = load_manifest(manifest)
    findings = []
    seen = set()
    for s in manifest.samples:
        if s.id in seen:
            findings.append(Finding(s.id, "duplicate_id", "id appears more than once"))
        seen.add(s.id)
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        for found in pool.map(_check_sample, manifest.samples):
            findings.extend(found)
    report = ValidationReport(sorted(findings))
    if strict and report.findings:
        raise ManifestValidationError(report)
    return report
