import json
import subprocess
import sys

import numpy as np
import pytest

from rds_bench.cli import main
from rds_bench.dataset import load_manifest, load_sources, write_sources
from rds_bench.mask_io import save_mask
from rds_bench.synthetic import make_sources


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    records = make_sources(root / "data", 40, seed=7, canvas=(32, 32))
    sources = write_sources(records, root / "data" / "sources.json")
    assert load_sources(sources) == records
    manifest = root / "out" / "vqaseg.json"
    assert main(["assemble", "--sources", str(sources), "--out", str(manifest), "--seed", "3"]) in (0, 1)
    return root, sources, manifest


def test_assemble_outputs(workspace):
    root, sources, manifest = workspace
    refseg = manifest.with_name("vqaseg_refseg.json")
    stats = manifest.with_name("vqaseg_stats.json")
    assert refseg.is_file() and stats.is_file()
    m = load_manifest(manifest)
    assert len(m.samples) == 40
    assert json.loads(stats.read_text())["vqa_seg"]
    # rerunning with the same seed gives identical bytes
    again = root / "again" / "vqaseg.json"
    main(["assemble", "--sources", str(sources), "--out", str(again), "--seed", "3"])
    assert again.read_bytes().replace(b"../data", b"") == manifest.read_bytes().replace(b"../data", b"")
    assert again.with_name("vqaseg_refseg.json").read_bytes() == refseg.read_bytes()


def test_validate(workspace, capsys, tmp_path):
    _, _, manifest = workspace
    assert main(["validate", "--manifest", str(manifest), "--strict"]) == 0
    assert json.loads(capsys.readouterr().out)["ok"] is True

    broken = json.loads(manifest.read_text())
    broken["samples"][0]["image_path"] = str(tmp_path / "gone.png")
    positive = next(s for s in broken["samples"] if s["targets"])
    mask_path = tmp_path / "tiny.png"
    save_mask(mask_path, np.ones((2, 2), bool))
    positive["targets"][0]["mask_path"] = str(mask_path)
    bad = tmp_path / "bad.json"
    # relative paths resolve against the manifest dir, so rebase them
    for s in broken["samples"]:
        if not s["image_path"].startswith("/"):
            s["image_path"] = str((manifest.parent / s["image_path"]).resolve())
        for t in s["targets"]:
            if not t["mask_path"].startswith("/"):
                t["mask_path"] = str((manifest.parent / t["mask_path"]).resolve())
    bad.write_text(json.dumps(broken))
    assert main(["validate", "--manifest", str(bad)]) == 1
    kinds = {f["kind"] for f in json.loads(capsys.readouterr().out)["findings"]}
    assert kinds == {"missing_file", "dimension_mismatch"}
    assert main(["validate", "--manifest", str(bad), "--strict"]) == 2


def test_predict_evaluate_report(workspace, tmp_path, capsys):
    _, _, manifest = workspace
    pred = tmp_path / "oracle.jsonl"
    assert main(["mock-predict", "--manifest", str(manifest), "--policy", "oracle", "--out", str(pred)]) == 0
    out = tmp_path / "report.json"
    assert main(["evaluate", "--manifest", str(manifest), "--pred", str(pred), "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    for name, g in report["groups"].items():
        assert g["detection_f1"] == g["diagnosis_f1"] == g["dice_org_mean"] == g["dice_abn_mean"] == 1.0, name
    out2 = tmp_path / "report2.json"
    main(["evaluate", "--manifest", str(manifest), "--pred", str(pred), "--out", str(out2), "--jobs", "4"])
    assert out2.read_bytes() == out.read_bytes()

    assert main(["report", "--report", str(out), "--emit", "csv"]) == 0
    csv_lines = capsys.readouterr().out.splitlines()
    assert csv_lines[0] == "Modality,N,Detection F1,Diagnosis F1,Dice-Org,Dice-Abn"
    assert csv_lines[-1].startswith("ALL,40,")


def test_detect_only_omits_columns(workspace, tmp_path, capsys):
    _, _, manifest = workspace
    pred = tmp_path / "neg.jsonl"
    main(["mock-predict", "--manifest", str(manifest), "--policy", "always-negative", "--out", str(pred)])
    capsys.readouterr()
    assert main(["evaluate", "--manifest", str(manifest), "--pred", str(pred), "--mode", "detect-only", "--emit", "text"]) == 0
    header = next(line for line in capsys.readouterr().out.splitlines() if line.startswith("Modality"))
    assert "Detection F1" in header and "Dice" not in header and "Diagnosis" not in header


def test_config_file_and_override(workspace, tmp_path):
    _, _, manifest = workspace
    pred = tmp_path / "oracle.jsonl"
    main(["mock-predict", "--manifest", str(manifest), "--out", str(pred)])
    out = tmp_path / "r.json"
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"manifest": str(manifest), "predictions": str(pred), "mode": "detect-only", "out": str(out)}))
    assert main(["evaluate", "--config", str(config)]) == 0
    assert json.loads(out.read_text())["mode"] == "detect-only"
    assert main(["evaluate", "--config", str(config), "--mode", "full"]) == 0
    assert json.loads(out.read_text())["mode"] == "full"


def test_missing_prediction_file(workspace, tmp_path):
    _, _, manifest = workspace
    out = tmp_path / "r.json"
    code = main(["evaluate", "--manifest", str(manifest), "--pred", str(tmp_path / "nope.jsonl"), "--out", str(out)])
    assert code == 2 and not out.exists()


def test_partial_predictions_warn(workspace, tmp_path):
    _, _, manifest = workspace
    pred = tmp_path / "oracle.jsonl"
    main(["mock-predict", "--manifest", str(manifest), "--out", str(pred)])
    lines = pred.read_text().splitlines()
    pred.write_text("\n".join(lines[5:] + ["garbage"]) + "\n")
    out = tmp_path / "r.json"
    assert main(["evaluate", "--manifest", str(manifest), "--pred", str(pred), "--out", str(out)]) == 1
    report = json.loads(out.read_text())
    assert report["groups"]["ALL"]["gates"]["missing_prediction"] == 5


def test_invalid_inputs(tmp_path):
    bad = tmp_path / "m.json"
    bad.write_text("{")
    assert main(["validate", "--manifest", str(bad)]) == 2
    assert main(["evaluate", "--manifest", str(bad)]) == 2
    assert main(["report", "--report", str(bad)]) == 2


def test_evaluate_vqa(tmp_path):
    manifest = tmp_path / "vqa.json"
    manifest.write_text(json.dumps({
        "version": 1,
        "task_kind": "vqa",
        "samples": [
            {"id": "q1", "question": "Is there a fracture?", "answer": "yes", "answer_type": "closed"},
            {"id": "q2", "question": "Which organ?", "answer": "liver", "answer_type": "open"},
        ],
    }))
    pred = tmp_path / "p.jsonl"
    pred.write_text('{"sample_id": "q1", "answer": "Yes."}\n{"sample_id": "q2", "answer": "the liver"}\n')
    out = tmp_path / "r.json"
    assert main(["evaluate-vqa", "--manifest", str(manifest), "--pred", str(pred), "--out", str(out)]) == 0
    r = json.loads(out.read_text())
    assert r["closed"]["f1"] == 1.0 and r["open"]["openq_recall"] == 1.0 and r["open"]["openq_acc"] == 0.0


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "rds_bench.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("assemble", "validate", "mock-predict", "evaluate", "evaluate-vqa", "report"):
        assert cmd in res.stdout
