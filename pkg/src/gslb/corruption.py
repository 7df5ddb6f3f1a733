"""Synthetic inconsistency generation: entity/number/date/pronoun swaps.

Each corrupted summary differs from its clean reference in exactly one
contiguous span. Entity, number, and date replacements come from the source
document; pronoun replacements stay within the syntactic-case class of the
original. Span extraction is rule-based with priority
date > number > entity > pronoun when spans overlap.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .corpus import Dataset
from .guidance import segment_sentences

SWAP_KINDS = ("entity", "number", "date", "pronoun")
CORRECT, INCORRECT = "CORRECT", "INCORRECT"

PRONOUN_CLASSES: dict[str, tuple[str, ...]] = {
    "subject": ("i", "you", "he", "she", "it", "we", "they"),
    "object": ("me", "you", "him", "her", "it", "us", "them"),
    "possessive_dependent": ("my", "your", "his", "her", "its", "our", "their"),
    "possessive_independent": ("mine", "yours", "his", "hers", "its", "ours", "theirs"),
    "reflexive": (
        "myself",
        "yourself",
        "himself",
        "herself",
        "itself",
        "ourselves",
        "yourselves",
        "themselves",
    ),
}

# Ambiguous surfaces (you/her/his/its/it) resolve to the first class listed here.
_CLASS_PRIORITY = (
    "subject",
    "object",
    "possessive_dependent",
    "possessive_independent",
    "reflexive",
)

_ALL_PRONOUNS = sorted({p for table in PRONOUN_CLASSES.values() for p in table})

_MONTHS = (
    "january february march april may june july august september october november december"
).split()
_WEEKDAYS = "monday tuesday wednesday thursday friday saturday sunday".split()

_DATE_RE = re.compile(
    r"\b\d+(?:\s*-\s*\d+)?\s+(?:day|week|month|year)s?\b"
    r"|\b\d{4}-\d{2}-\d{2}\b"
    r"|\b\d{1,2}/\d{1,2}(?:/\d{2,4})?\b"
    r"|\b(?:" + "|".join(_MONTHS + _WEEKDAYS) + r")\b",
    re.IGNORECASE,
)
_NUMBER_RE = re.compile(r"\b\d+(?:\s*-\s*\d+)?\b")
_CAP_RUN_RE = re.compile(r"\b[A-Z][a-z]+(?:\s[A-Z][a-z]+)*\b")
_ALL_CAPS_RE = re.compile(r"\b[A-Z]{2,}\b")
_PRONOUN_RE = re.compile(r"\b(?:" + "|".join(_ALL_PRONOUNS) + r")\b", re.IGNORECASE)


@dataclass(frozen=True)
class TypedSpan:
    kind: str
    text: str
    start: int
    end: int
    source: str


@dataclass(frozen=True)
class CorruptionRecord:
    record_id: str
    clean: str
    corrupted: str
    kind: str
    span_start: int
    span_end: int
    replaced: str
    replacement: str
    label: str = INCORRECT


@dataclass(frozen=True)
class CorrectorExample:
    id: str
    input_summary: str
    document: str
    target_summary: str
    swap_kind: str


@dataclass(frozen=True)
class ClassifierExample:
    id: str
    claim: str
    document: str
    label: str


@dataclass
class CorruptionSets:
    corrector: dict[str, list[CorrectorExample]] = field(default_factory=dict)
    classifier: dict[str, list[ClassifierExample]] = field(default_factory=dict)
    records: dict[str, list[CorruptionRecord]] = field(default_factory=dict)


def pronoun_class(surface: str) -> str:
    low = surface.lower()
    for name in _CLASS_PRIORITY:
        if low in PRONOUN_CLASSES[name]:
            return name
    raise ValueError(f"{surface!r} is not a known pronoun")


def _overlaps(start: int, end: int, taken: list[TypedSpan]) -> bool:
    return any(start < span.end and end > span.start for span in taken)


def extract_typed_spans(text: str, source: str = "summary") -> list[TypedSpan]:
    """All swap-candidate spans in priority order, non-overlapping, sorted by start."""
    taken: list[TypedSpan] = []

    def collect(kind: str, matches: Iterable[tuple[int, int, str]]) -> None:
        ordered = sorted(matches, key=lambda m: (m[0], -(m[1] - m[0])))
        for start, end, surface in ordered:
            if not _overlaps(start, end, taken):
                taken.append(TypedSpan(kind=kind, text=surface, start=start, end=end, source=source))

    collect("date", ((m.start(), m.end(), m.group(0)) for m in _DATE_RE.finditer(text)))
    collect("number", ((m.start(), m.end(), m.group(0)) for m in _NUMBER_RE.finditer(text)))

    sentence_starts = {sent.start for sent in segment_sentences(text)}
    entity_matches = [
        (m.start(), m.end(), m.group(0))
        for m in _CAP_RUN_RE.finditer(text)
        if m.start() not in sentence_starts
    ]
    entity_matches += [(m.start(), m.end(), m.group(0)) for m in _ALL_CAPS_RE.finditer(text)]
    collect("entity", entity_matches)

    collect("pronoun", ((m.start(), m.end(), m.group(0)) for m in _PRONOUN_RE.finditer(text)))

    taken.sort(key=lambda span: span.start)
    return taken


def _match_case(replacement: str, original: str) -> str:
    if original.isupper() and len(original) > 1:
        return replacement.upper()
    if original[:1].isupper():
        return replacement.capitalize()
    return replacement


def apply_swap(
    summary: str,
    kind: str,
    summary_spans: list[TypedSpan],
    document_spans: list[TypedSpan],
    seed: int,
) -> CorruptionRecord | None:
    """One seeded swap of `kind`, or None when no valid (span, replacement) pair exists."""
    if kind not in SWAP_KINDS:
        raise ValueError(f"unknown swap kind {kind!r}")
    rng = random.Random(seed)
    candidates = [span for span in summary_spans if span.kind == kind]
    if kind == "pronoun":
        feasible = [(span, _pronoun_pool(span.text)) for span in candidates]
    else:
        doc_surfaces = sorted({span.text for span in document_spans if span.kind == kind})
        feasible = [
            (span, [s for s in doc_surfaces if s != span.text]) for span in candidates
        ]
    feasible = [(span, pool) for span, pool in feasible if pool]
    if not feasible:
        return None
    span, pool = rng.choice(feasible)
    replacement = rng.choice(pool)
    if kind == "pronoun":
        replacement = _match_case(replacement, span.text)
    corrupted = summary[: span.start] + replacement + summary[span.end :]
    return CorruptionRecord(
        record_id="",
        clean=summary,
        corrupted=corrupted,
        kind=kind,
        span_start=span.start,
        span_end=span.end,
        replaced=span.text,
        replacement=replacement,
    )


def _pronoun_pool(surface: str) -> list[str]:
    table = PRONOUN_CLASSES[pronoun_class(surface)]
    return [p for p in table if p != surface.lower()]


def derive_seed(seed: int, record_id: str, kind: str) -> int:
    digest = hashlib.blake2b(
        f"{seed}:{record_id}:{kind}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


def build_corruption_dataset(dataset: Dataset, seed: int) -> CorruptionSets:
    """Per train/validation record, emit one corruption per feasible swap kind.

    The corrector set holds (corrupted, document, clean) triples; the
    classifier set holds those corruptions as INCORRECT claims plus every
    clean reference as a CORRECT claim. Output is a pure function of
    (dataset, seed): per-record seeds are derived from the record id.
    """
    sets = CorruptionSets()
    for split in ("train", "validation"):
        corrector: list[CorrectorExample] = []
        classifier: list[ClassifierExample] = []
        records: list[CorruptionRecord] = []
        for rec in dataset.split(split):
            summary_spans = extract_typed_spans(rec.summary, source="summary")
            document_spans = extract_typed_spans(rec.document, source="document")
            for kind in SWAP_KINDS:
                swap = apply_swap(
                    rec.summary,
                    kind,
                    summary_spans,
                    document_spans,
                    derive_seed(seed, rec.id, kind),
                )
                if swap is None:
                    continue
                swap = CorruptionRecord(
                    record_id=rec.id,
                    clean=swap.clean,
                    corrupted=swap.corrupted,
                    kind=swap.kind,
                    span_start=swap.span_start,
                    span_end=swap.span_end,
                    replaced=swap.replaced,
                    replacement=swap.replacement,
                )
                records.append(swap)
                corrector.append(
                    CorrectorExample(
                        id=f"{rec.id}:{kind}",
                        input_summary=swap.corrupted,
                        document=rec.document,
                        target_summary=rec.summary,
                        swap_kind=kind,
                    )
                )
                classifier.append(
                    ClassifierExample(
                        id=f"{rec.id}:{kind}",
                        claim=swap.corrupted,
                        document=rec.document,
                        label=INCORRECT,
                    )
                )
            classifier.append(
                ClassifierExample(
                    id=f"{rec.id}:clean", claim=rec.summary, document=rec.document, label=CORRECT
                )
            )
        sets.corrector[split] = corrector
        sets.classifier[split] = classifier
        sets.records[split] = records
    return sets


def write_corrector_set(path: str | Path, examples: Iterable[CorrectorExample]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(
                json.dumps(
                    {
                        "id": ex.id,
                        "input_summary": ex.input_summary,
                        "document": ex.document,
                        "target_summary": ex.target_summary,
                        "swap_kind": ex.swap_kind,
                    }
                )
                + "\n"
            )


def read_corrector_set(path: str | Path) -> list[CorrectorExample]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                out.append(
                    CorrectorExample(
                        id=obj["id"],
                        input_summary=obj["input_summary"],
                        document=obj["document"],
                        target_summary=obj["target_summary"],
                        swap_kind=obj["swap_kind"],
                    )
                )
    return out


def write_classifier_set(path: str | Path, examples: Iterable[ClassifierExample]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(
                json.dumps(
                    {"id": ex.id, "claim": ex.claim, "document": ex.document, "label": ex.label}
                )
                + "\n"
            )


def read_classifier_set(path: str | Path) -> list[ClassifierExample]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                out.append(
                    ClassifierExample(
                        id=obj["id"], claim=obj["claim"], document=obj["document"], label=obj["label"]
                    )
                )
    return out
