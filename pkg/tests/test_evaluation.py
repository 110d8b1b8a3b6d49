import json
import random

import numpy as np
import pytest

from rds_bench.dataset import Manifest, ManifestError, TaskKind, VqaSample, render_vqaseg_answer
from rds_bench.evaluation import (
    EvalMode,
    Gate,
    PredictionRecord,
    aggregate,
    evaluate_run,
    evaluate_sample,
    evaluate_vqa,
    read_predictions,
    render_csv,
    render_text,
)
from rds_bench.mask_io import load_mask, rle_encode
from rds_bench.parsing import Detection
from rds_bench.predictors import AlwaysNegative, Oracle, predict, predict_sample, write_predictions


def _first(manifest, positive):
    return next(s for s in manifest.samples if s.gt_detection is positive)


def test_detection_failure_gates_everything(small_manifest):
    neg = _first(small_manifest, False)
    v = evaluate_sample(neg, PredictionRecord(neg.id, "1. Yes.  2. There is ..."))
    assert v.gate is Gate.FAILED_DETECTION and v.diagnosis_correct == 0 and v.dice_by_kind == {}


def test_negative_passes(small_manifest):
    neg = _first(small_manifest, False)
    v = evaluate_sample(neg, PredictionRecord(neg.id, "1. No."))
    assert v.gate is Gate.PASSED and v.detection_correct and v.diagnosis_correct == 1 and v.dice_by_kind == {}


def test_oracle_positive(small_manifest):
    pos = _first(small_manifest, True)
    v = evaluate_sample(pos, predict_sample(pos, Oracle()))
    assert v.gate is Gate.PASSED
    assert v.dice_by_kind == {"organ": 1.0, "abnormality": 1.0}


def test_missing_prediction(small_manifest):
    v = evaluate_sample(small_manifest.samples[0], None)
    assert v.gate is Gate.MISSING_PREDICTION and v.detection_pred is Detection.INVALID and v.diagnosis_correct == 0


def test_wrong_diagnosis(small_manifest):
    pos = _first(small_manifest, True)
    v = evaluate_sample(pos, PredictionRecord(pos.id, "1. Yes. 2. Something unrelated. 3. <seg000> <seg001>"))
    assert v.gate is Gate.FAILED_DIAGNOSIS and v.detection_correct


def test_binding_failure(small_manifest):
    pos = _first(small_manifest, True)
    oracle = predict_sample(pos, Oracle())
    broken = PredictionRecord(pos.id, oracle.answer, oracle.masks[:1])
    v = evaluate_sample(pos, broken)
    assert v.gate is Gate.FAILED_BINDING and v.diagnosis_correct == 1 and "MissingMask" in v.note


def test_dimension_mismatch_is_invalid(small_manifest):
    pos = _first(small_manifest, True)
    oracle = predict_sample(pos, Oracle())
    masks = [oracle.masks[0], rle_encode(np.ones((3, 3), bool), "seg001")]
    v = evaluate_sample(pos, PredictionRecord(pos.id, oracle.answer, masks))
    assert v.gate is Gate.PASSED and v.invalid_kinds == ("abnormality",) and v.dice_by_kind == {"organ": 1.0}
    report = aggregate(
        [v if s.id == pos.id else evaluate_sample(s, predict_sample(s, Oracle())) for s in small_manifest.samples],
        small_manifest,
    )
    assert report.groups["ALL"].n_invalid_masks == 1


def test_amputated_modes(small_manifest):
    pos = _first(small_manifest, True)
    no_verdict = PredictionRecord(pos.id, f"The image shows {pos.gt_diagnosis.label} in the organ.")
    assert evaluate_sample(pos, no_verdict, EvalMode.FULL).gate is Gate.FAILED_DETECTION
    v = evaluate_sample(pos, no_verdict, EvalMode.DIAGNOSE_ONLY)
    assert v.gate is Gate.PASSED and v.diagnosis_correct == 1 and v.dice_by_kind == {}
    v = evaluate_sample(pos, no_verdict, EvalMode.DIAGNOSE_SEG)
    assert v.gate is Gate.FAILED_BINDING
    v = evaluate_sample(pos, predict_sample(pos, Oracle()), EvalMode.DETECT_ONLY)
    assert v.gate is Gate.PASSED and v.dice_by_kind == {}


def test_mode_consistency(small_manifest, tmp_path):
    path = write_predictions(predict(small_manifest, AlwaysNegative()), tmp_path / "neg.jsonl")
    full = evaluate_run(small_manifest, path, EvalMode.FULL)
    detect = evaluate_run(small_manifest, path, EvalMode.DETECT_ONLY)
    for name, g in full.groups.items():
        assert g.detection_f1 == detect.groups[name].detection_f1
    assert "diagnosis_f1" not in detect.to_json()["groups"]["ALL"]
    assert "dice_org_mean" not in detect.to_json()["groups"]["ALL"]


def _manifest_3pos_2neg(small_manifest):
    pos = [s for s in small_manifest.samples if s.gt_detection][:3]
    neg = [s for s in small_manifest.samples if not s.gt_detection][:2]
    return Manifest(TaskKind.VQA_SEG, pos + neg)


def test_always_negative_aggregate(small_manifest):
    m = _manifest_3pos_2neg(small_manifest)
    verdicts = [evaluate_sample(s, PredictionRecord(s.id, "1. No.")) for s in m.samples]
    r = aggregate(verdicts, m).groups["ALL"]
    assert r.detection_f1 == 0.0
    assert r.diagnosis_f1 == pytest.approx(2 * 0.4 / 1.4, abs=1e-12)
    assert r.dice_org_mean is None
    shuffled = verdicts[:]
    random.Random(0).shuffle(shuffled)
    assert aggregate(shuffled, m).dumps() == aggregate(verdicts, m).dumps()


def test_aggregate_id_mismatch(small_manifest):
    m = _manifest_3pos_2neg(small_manifest)
    verdicts = [evaluate_sample(s, None) for s in m.samples[:-1]]
    with pytest.raises(ManifestError):
        aggregate(verdicts, m)


def test_binding_failure_counts_as_zero(small_manifest):
    m = _manifest_3pos_2neg(small_manifest)
    verdicts = []
    for i, s in enumerate(m.samples):
        rec = predict_sample(s, Oracle())
        if i == 0:
            rec = PredictionRecord(s.id, rec.answer, [])
        verdicts.append(evaluate_sample(s, rec))
    g = aggregate(verdicts, m).groups["ALL"]
    assert g.dice_org_mean == pytest.approx(2 / 3)
    assert g.dice_org_mean_excl_binding_failures == 1.0
    assert g.gates["failed_binding"] == 1
    assert sum(g.gates.values()) == g.n_samples


def test_gate_counts_sum(small_manifest, tmp_path):
    path = tmp_path / "mixed.jsonl"
    rng = random.Random(4)
    lines = []
    for s in small_manifest.samples:
        choice = rng.random()
        if choice < 0.2:
            continue
        rec = predict_sample(s, Oracle())
        if choice < 0.4:
            rec = PredictionRecord(s.id, "1. Yes. 2. pneumothorax <seg000>", rec.masks)
        lines.append(json.dumps(rec.to_json()))
    lines.insert(3, "{not json")
    path.write_text("\n".join(lines) + "\n")
    report = evaluate_run(small_manifest, path)
    assert any("malformed" in w for w in report.warnings)
    for g in report.groups.values():
        assert sum(g.gates.values()) == g.n_samples
    assert sum(report.groups[m].n_samples for m in report.groups if m != "ALL") == len(small_manifest.samples)


def test_read_predictions_duplicates_last_wins(tmp_path):
    path = tmp_path / "p.jsonl"
    path.write_text(
        '{"sample_id": "a", "answer": "1. Yes."}\n'
        '{"sample_id": "a", "answer": "1. No."}\n'
        '{"sample_id": "", "answer": "x"}\n'
        '{"sample_id": "b", "answer": "x", "masks": [{"token": "seg000", "width": 1, "height": 1, "rle": [2]}]}\n'
    )
    preds = read_predictions(path)
    assert preds.records["a"].answer == "1. No."
    assert "b" not in preds.records
    assert len(preds.warnings) == 3


def test_report_rendering(small_manifest, tmp_path):
    path = write_predictions(predict(small_manifest, Oracle()), tmp_path / "o.jsonl")
    report = evaluate_run(small_manifest, path).to_json()
    assert report["inputs"]["manifest_sha256"] == small_manifest.sha256
    assert report["tool"]["name"] == "rds_bench"
    text = render_text(report)
    assert "Detection F1" in text and "Dice-Abn" in text and "1.0000" in text
    csv_text = render_csv(report)
    assert csv_text.splitlines()[0] == "Modality,N,Detection F1,Diagnosis F1,Dice-Org,Dice-Abn"


def test_evaluate_run_rejects_wrong_task(tmp_path):
    with pytest.raises(ManifestError):
        evaluate_run(Manifest(TaskKind.VQA, []), tmp_path / "x.jsonl")


def test_evaluate_vqa():
    gt = [
        VqaSample("c1", "Is there a nodule?", "yes", "closed"),
        VqaSample("c2", "Is it normal?", "no", "closed"),
        VqaSample("o1", "Which organ?", "liver", "open"),
    ]
    perfect = evaluate_vqa(gt, {"c1": "Yes", "c2": "no", "o1": "Liver."})
    assert (perfect.f1, perfect.recall, perfect.openq_acc, perfect.openq_recall) == (1.0, 1.0, 1.0, 1.0)
    r = evaluate_vqa(gt, {"c1": "yes", "c2": "yes", "o1": "spleen"})
    assert r.f1 == pytest.approx(2 / 3) and r.recall == 1.0 and r.precision == 0.5
    assert (r.openq_acc, r.openq_recall) == (0.0, 0.0)
    missing = evaluate_vqa(gt, {})
    assert missing.n_missing == 3 and missing.f1 == 0.0


def test_gt_answer_round_trips_through_parser(small_manifest):
    for s in small_manifest.samples:
        v = evaluate_sample(s, PredictionRecord(s.id, render_vqaseg_answer(s), predict_sample(s, Oracle()).masks))
        assert v.gate is Gate.PASSED
        if s.gt_detection:
            masks = {t.kind.value: load_mask(t.mask_path) for t in s.gt_targets}
            assert set(v.dice_by_kind) == set(masks)
