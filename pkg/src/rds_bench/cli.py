"""``rds-bench`` command line.

Exit codes: 0 success, 1 completed with warnings, 2 invalid input.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path

from .dataset import (
    ManifestError,
    TaskKind,
    assemble,
    compute_label_distribution,
    load_manifest,
    load_sources,
    validate_manifest,
    write_manifest,
)
from .evaluation import EvalMode, evaluate_run, evaluate_vqa, read_predictions, render_csv, render_text
from .mask_io import MaskReadError
from .predictors import parse_policy, predict, write_predictions
from .templates import load_templates

log = logging.getLogger("rds_bench")

EXIT_OK, EXIT_WARN, EXIT_INVALID = 0, 1, 2
_INPUT_ERRORS = (ManifestError, MaskReadError, OSError, ValueError, KeyError)


@dataclass
class RunConfig:
    manifest_path: Path
    predictions_path: Path
    mode: EvalMode = EvalMode.FULL
    parallelism: int = 1
    output: str = "json"
    out_path: Path | None = None
    template_path: Path | None = None
    seed: int = 0

    def __post_init__(self):
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if self.output not in ("json", "text", "csv"):
            raise ValueError(f"unknown output format {self.output!r}")


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")


def _format_report(report_json: dict, fmt: str) -> str:
    if fmt == "text":
        return render_text(report_json)
    if fmt == "csv":
        return render_csv(report_json)
    return json.dumps(report_json, indent=2) + "\n"


def cmd_assemble(args) -> int:
    templates = load_templates(args.templates)
    records = load_sources(args.sources)
    out = Path(args.out)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        vqaseg, refseg = assemble(records, seed=args.seed, test_fraction=args.test_fraction, templates=templates)
    for w in caught:
        log.warning("%s", w.message)
    write_manifest(vqaseg, out)
    write_manifest(refseg, Path(args.refseg_out) if args.refseg_out else out.with_name(out.stem + "_refseg.json"))
    stats = {"vqa_seg": compute_label_distribution(vqaseg).to_json(), "ref_seg": compute_label_distribution(refseg).to_json()}
    stats_path = Path(args.stats_out) if args.stats_out else out.with_name(out.stem + "_stats.json")
    stats_path.write_text(json.dumps(stats, indent=2) + "\n", encoding="utf-8")
    return EXIT_WARN if caught else EXIT_OK


def cmd_validate(args) -> int:
    manifest = load_manifest(args.manifest)
    report = validate_manifest(manifest, strict=False, jobs=args.jobs)
    _emit(json.dumps(report.to_json(), indent=2) + "\n", None)
    if report.ok:
        return EXIT_OK
    return EXIT_INVALID if args.strict else EXIT_WARN


def cmd_mock_predict(args) -> int:
    manifest = load_manifest(args.manifest, load_templates(args.templates))
    policy = parse_policy(args.policy, seed=args.seed)
    write_predictions(predict(manifest, policy, load_templates(args.templates)), args.out)
    return EXIT_OK


def _run_config(args) -> RunConfig:
    cfg = {}
    if args.config:
        cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
    flags = {
        "manifest": args.manifest,
        "predictions": args.pred,
        "mode": args.mode,
        "jobs": args.jobs,
        "emit": args.emit,
        "out": args.out,
        "templates": args.templates,
        "seed": args.seed,
    }
    merged = {**cfg, **{k: v for k, v in flags.items() if v is not None}}
    if not merged.get("manifest") or not merged.get("predictions"):
        raise ValueError("both a manifest and a prediction file are required")
    return RunConfig(
        manifest_path=Path(merged["manifest"]),
        predictions_path=Path(merged["predictions"]),
        mode=EvalMode(merged.get("mode", "full")),
        parallelism=int(merged.get("jobs", 1)),
        output=merged.get("emit", "json"),
        out_path=Path(merged["out"]) if merged.get("out") else None,
        template_path=Path(merged["templates"]) if merged.get("templates") else None,
        seed=int(merged.get("seed", 0)),
    )


def cmd_evaluate(args) -> int:
    config = _run_config(args)
    if not config.predictions_path.is_file():
        raise FileNotFoundError(f"prediction file not found: {config.predictions_path}")
    manifest = load_manifest(config.manifest_path, load_templates(config.template_path))
    report = evaluate_run(manifest, config.predictions_path, config.mode, config.parallelism)
    _emit(_format_report(report.to_json(), config.output), config.out_path)
    for w in report.warnings:
        log.warning("%s", w)
    return EXIT_WARN if report.warnings else EXIT_OK


def cmd_evaluate_vqa(args) -> int:
    manifest = load_manifest(args.manifest)
    if manifest.task_kind is not TaskKind.VQA:
        raise ManifestError(f"expected a vqa manifest, got {manifest.task_kind.value}")
    preds = read_predictions(args.pred)
    report = evaluate_vqa(manifest.samples, {k: r.answer for k, r in preds.records.items()})
    _emit(json.dumps(report.to_json(), indent=2) + "\n", Path(args.out) if args.out else None)
    for w in preds.warnings:
        log.warning("%s", w)
    return EXIT_WARN if preds.warnings else EXIT_OK


def cmd_report(args) -> int:
    data = json.loads(Path(args.report).read_text(encoding="utf-8"))
    if "groups" not in data or "mode" not in data:
        raise ValueError("not an evaluation report")
    _emit(_format_report(data, args.emit), Path(args.out) if args.out else None)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rds-bench", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("assemble", help="render source annotations into task manifests")
    p.add_argument("--sources", required=True)
    p.add_argument("--out", required=True, help="VQA-Seg manifest path")
    p.add_argument("--refseg-out")
    p.add_argument("--stats-out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--templates")
    p.set_defaults(func=cmd_assemble)

    p = sub.add_parser("validate", help="check manifest files, masks and ids")
    p.add_argument("--manifest", required=True)
    p.add_argument("--strict", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("mock-predict", help="write a prediction file from a reference predictor")
    p.add_argument("--manifest", required=True)
    p.add_argument("--policy", default="oracle")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--templates")
    p.set_defaults(func=cmd_mock_predict)

    p = sub.add_parser("evaluate", help="score a prediction file")
    p.add_argument("--config")
    p.add_argument("--manifest")
    p.add_argument("--pred")
    p.add_argument("--mode", choices=[m.value for m in EvalMode])
    p.add_argument("--jobs", type=int)
    p.add_argument("--emit", choices=["json", "text", "csv"])
    p.add_argument("--out")
    p.add_argument("--templates")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("evaluate-vqa", help="score plain VQA answers")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate_vqa)

    p = sub.add_parser("report", help="render a stored JSON report")
    p.add_argument("--report", required=True)
    p.add_argument("--emit", choices=["json", "text", "csv"], default="text")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except _INPUT_ERRORS as exc:
        log.error("%s", exc)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
