"""Free-form answer parsing: step splitting, yes/no detection, seg-token extraction and binding.

The grammar is documented in ``docs/answer-grammar.md``.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Sequence

SEG_TOKEN_RE = re.compile(r"<(seg(?:[0-9]{3})?)>")
LEGACY_TOKEN = "seg"

# "1." / "1)" at the start of the text or after whitespace, not a decimal like "1.5"
_ENUM_RE = re.compile(r"(?:(?<=\s)|^)([1-3])[.)](?![0-9])")
_DETECTION_RE = re.compile(r"\b(yes|no)\b", re.IGNORECASE)
_LABEL_BOUNDARY_RE = re.compile(r"[.,;:!?]|<seg(?:[0-9]{3})?>")
_LABEL_PREFIX_RE = re.compile(r"^(?:.*\b(?:for|and|of|is|are)\b)?\s*(?:the\s+|a\s+|an\s+)?", re.IGNORECASE | re.DOTALL)


class Detection(enum.Enum):
    YES = "yes"
    NO = "no"
    INVALID = "invalid"


@dataclass(frozen=True)
class SegTokenRef:
    token_name: str
    token_ordinal: int
    char_span: tuple[int, int]
    preceding_label: str | None = None


@dataclass(frozen=True)
class Steps:
    step1: str
    step2: str | None = None
    step3: str | None = None
    enumerated: bool = False
    # (start, end) offsets of each present step's text in the input
    spans: tuple[tuple[int, int], ...] = ()


@dataclass(frozen=True)
class ParsedAnswer:
    detection: Detection
    diagnosis_segment: str | None
    seg_refs: list[SegTokenRef] = field(default_factory=list)
    raw: str = ""
    steps: Steps | None = None


def _preceding_label(text: str, start: int) -> str | None:
    head = text[:start]
    cut = 0
    for m in _LABEL_BOUNDARY_RE.finditer(head):
        cut = m.end()
    phrase = head[cut:]
    phrase = _LABEL_PREFIX_RE.sub("", phrase, count=1).strip()
    return phrase or None


def tokenize_seg_tokens(text: str) -> list[SegTokenRef]:
    """Every ``<segDDD>`` (or legacy bare ``<seg>``) in textual order."""
    refs = []
    for i, m in enumerate(SEG_TOKEN_RE.finditer(text)):
        refs.append(SegTokenRef(m.group(1), i, (m.start(), m.end()), _preceding_label(text, m.start())))
    return refs


def split_steps(text: str) -> Steps:
    """Split an answer on its ``1.`` / ``2.`` / ``3.`` enumerators.

    Without a leading ``1.`` the whole text serves as both step 1 and step 2,
    so detection and diagnosis are searched over everything.
    """
    if not text.strip():
        return Steps(step1=text)
    marks = []
    want = 1
    for m in _ENUM_RE.finditer(text):
        if int(m.group(1)) == want:
            marks.append(m)
            want += 1
            if want > 3:
                break
    if not marks:
        whole = (0, len(text))
        return Steps(step1=text.strip(), step2=text.strip(), enumerated=False, spans=(whole, whole))
    parts = []
    spans = []
    for i, m in enumerate(marks):
        end = marks[i + 1].start() if i + 1 < len(marks) else len(text)
        parts.append(text[m.end():end].strip())
        spans.append((m.end(), end))
    parts += [None] * (3 - len(parts))
    return Steps(parts[0], parts[1], parts[2], enumerated=True, spans=tuple(spans))


def _first_verdict(segment: str) -> Detection:
    m = _DETECTION_RE.search(segment)
    if m is None:
        return Detection.INVALID
    return Detection.YES if m.group(1).lower() == "yes" else Detection.NO


def parse_detection(text: str) -> Detection:
    """First standalone yes/no in step 1 (or the whole text if unnumbered)."""
    return _first_verdict(split_steps(text).step1)


def parse_answer(text: str) -> ParsedAnswer:
    steps = split_steps(text)
    return ParsedAnswer(_first_verdict(steps.step1), steps.step2, tokenize_seg_tokens(text), text, steps)


def normalize_label_text(text: str) -> str:
    text = text.lower().replace("-", " ").replace("_", " ")
    return " ".join(text.split())


def match_diagnosis(segment: str, label: str, synonyms: Sequence[str] = ()) -> bool:
    """Case-, whitespace- and hyphen-insensitive substring search for any synonym."""
    if not label:
        raise ValueError("label must be non-empty")
    haystack = normalize_label_text(segment)
    for name in (label, *synonyms):
        needle = normalize_label_text(name)
        if needle and needle in haystack:
            return True
    return False


class BindingError(Exception):
    pass


class CountMismatch(BindingError):
    pass


class MissingMask(BindingError):
    def __init__(self, token: str):
        super().__init__(f"no transported mask for token {token!r}")
        self.token = token


class DuplicateToken(BindingError):
    def __init__(self, token: str):
        super().__init__(f"token {token!r} appears more than once")
        self.token = token


class LegacyTokenNotAllowed(BindingError):
    pass


@dataclass(frozen=True)
class Binding:
    ref: SegTokenRef
    mask: object  # TransportedMask
    target: object  # SegTarget


def bind_masks(refs: Sequence[SegTokenRef], transported: Sequence, gt_targets: Sequence) -> list[Binding]:
    """Match refs to masks by token name, then refs to targets by position.

    Raises a :class:`BindingError` subclass when the mapping is not a bijection.
    """
    seen = set()
    for ref in refs:
        if ref.token_name in seen:
            raise DuplicateToken(ref.token_name)
        seen.add(ref.token_name)
    if len(refs) != len(gt_targets):
        raise CountMismatch(f"{len(refs)} seg tokens for {len(gt_targets)} targets")
    if LEGACY_TOKEN in seen and len(gt_targets) != 1:
        raise LegacyTokenNotAllowed("bare <seg> is only valid for a single target")
    by_token = {}
    for t in transported:
        by_token.setdefault(t.token_name, t)
    bindings = []
    for ref, target in zip(refs, gt_targets):
        mask = by_token.get(ref.token_name)
        if mask is None:
            raise MissingMask(ref.token_name)
        bindings.append(Binding(ref, mask, target))
    return bindings
