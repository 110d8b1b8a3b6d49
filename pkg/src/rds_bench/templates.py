"""Prompt and answer wording, loaded from a JSON template file.

The packaged ``templates/templates.json`` is the default. A directory given by
``RDS_BENCH_TEMPLATES`` (or an explicit path) overrides it key by key.
"""
from __future__ import annotations

import json
import os
from functools import lru_cache
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

ENV_VAR = "RDS_BENCH_TEMPLATES"
TEMPLATE_FILE = "templates.json"

MODALITIES = ("XRAY", "CT", "MRI")
_MODALITY_ALIASES = {"XRAY": "XRAY", "X-RAY": "XRAY", "X RAY": "XRAY", "CT": "CT", "MRI": "MRI", "MR": "MRI"}


def canonical_modality(value: str) -> str:
    key = " ".join(str(value).upper().replace("_", " ").split())
    try:
        return _MODALITY_ALIASES[key]
    except KeyError:
        raise ValueError(f"unknown modality {value!r}") from None


@dataclass(frozen=True)
class Templates:
    modality_names: dict
    refseg_prompt: str
    refseg_answer: str
    vqaseg_question: str
    vqaseg_answer_positive: str
    vqaseg_answer_negative: str
    seg_vocab_size: int = 8

    def modality_name(self, modality: str) -> str:
        return self.modality_names[canonical_modality(modality)]

    def seg_token_name(self, index: int) -> str:
        if not 0 <= index < self.seg_vocab_size:
            raise ValueError(f"seg token index {index} outside vocabulary of {self.seg_vocab_size}")
        return f"seg{index:03d}"

    def seg_token(self, index: int) -> str:
        return f"<{self.seg_token_name(index)}>"


def _read_default() -> dict:
    text = resources.files("rds_bench").joinpath("templates", TEMPLATE_FILE).read_text(encoding="utf-8")
    return json.loads(text)


def load_templates(path: str | os.PathLike | None = None) -> Templates:
    if path is None and os.environ.get(ENV_VAR):
        path = os.environ[ENV_VAR]
    return _load(None if path is None else str(Path(path).resolve()))


@lru_cache(maxsize=16)
def _load(path: str | None) -> Templates:
    data = _read_default()
    if path is not None:
        p = Path(path)
        if p.is_dir():
            p = p / TEMPLATE_FILE
        override = json.loads(p.read_text(encoding="utf-8"))
        if "modality_names" in override:
            data["modality_names"] = {**data["modality_names"], **override.pop("modality_names")}
        data.update(override)
    known = {f.name for f in fields(Templates)}
    t = Templates(**{k: v for k, v in data.items() if k in known})
    if not 0 < t.seg_vocab_size <= 1000:
        raise ValueError("seg_vocab_size must be within 1..1000")
    return t
