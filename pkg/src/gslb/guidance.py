"""Guidance signal extraction: matched terms, term-bearing sentences, oracle sentences.

Term guidance renders as terms interleaved with [SEP]; sentence guidance joins
sentences with single spaces. When nothing matches, a lone [SEP] placeholder
keeps the guidance encoder fed.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import SEP_ID, Vocabulary, encode_text, tokenize
from .evaluation import rouge_n
from .lexicon import TermMatcher, find_matches

GUIDANCE_KINDS = ("none", "terms", "sentences", "oracle")

_SENT_END_RE = re.compile(r"[.!?]+(?=\s|$)")


@dataclass(frozen=True)
class Sentence:
    text: str
    start: int
    end: int


@dataclass(frozen=True)
class GuidanceSignal:
    kind: str
    items: tuple[str, ...]
    doc_id: str = ""


def segment_sentences(document: str) -> list[Sentence]:
    """Split on ., ! or ? followed by whitespace or end of text; no abbreviation list."""
    sentences: list[Sentence] = []
    cursor = 0

    def emit(start: int, end: int) -> None:
        chunk = document[start:end]
        lead = len(chunk) - len(chunk.lstrip())
        trail = len(chunk) - len(chunk.rstrip())
        if start + lead < end - trail:
            sentences.append(
                Sentence(text=document[start + lead : end - trail], start=start + lead, end=end - trail)
            )

    for match in _SENT_END_RE.finditer(document):
        emit(cursor, match.end())
        cursor = match.end()
    emit(cursor, len(document))
    return sentences


def extract_term_guidance(document: str, matcher: TermMatcher, doc_id: str = "") -> GuidanceSignal:
    """Matched lexicon terms in first-occurrence order, deduplicated case-insensitively."""
    items: list[str] = []
    seen: set[str] = set()
    for match in find_matches(matcher, document):
        key = match.term.lower()
        if key not in seen:
            seen.add(key)
            items.append(match.term)
    return GuidanceSignal(kind="terms", items=tuple(items), doc_id=doc_id)


def extract_sentence_guidance(
    document: str, matcher: TermMatcher, doc_id: str = ""
) -> GuidanceSignal:
    """Document sentences (in order) that contain at least one term match."""
    matches = find_matches(matcher, document)
    items = []
    for sent in segment_sentences(document):
        if any(m.start >= sent.start and m.end <= sent.end for m in matches):
            items.append(sent.text)
    return GuidanceSignal(kind="sentences", items=tuple(items), doc_id=doc_id)


def _oracle_score(selected: Sequence[str], reference_tokens: Sequence[str]) -> float:
    cand = tokenize(" ".join(selected))
    r1 = rouge_n(cand, reference_tokens, 1).f1
    r2 = rouge_n(cand, reference_tokens, 2).f1
    return (r1 + r2) / 2.0


def extract_oracle_sentences(
    document: str, reference: str, max_sentences: int = 3, doc_id: str = ""
) -> GuidanceSignal:
    """Greedily pick sentences maximizing mean ROUGE-1/2 F1 against the reference.

    Selection stops as soon as no remaining sentence strictly improves the
    score, or at max_sentences. Ties go to the earliest sentence.
    """
    if not reference:
        raise ValueError("oracle extraction needs a non-empty reference")
    sentences = segment_sentences(document)
    reference_tokens = tokenize(reference)
    selected: list[str] = []
    remaining = list(range(len(sentences)))
    best = 0.0
    while remaining and len(selected) < max_sentences:
        step_best, step_idx = best, None
        for idx in remaining:
            score = _oracle_score(selected + [sentences[idx].text], reference_tokens)
            if score > step_best:
                step_best, step_idx = score, idx
        if step_idx is None:
            break
        selected.append(sentences[step_idx].text)
        remaining.remove(step_idx)
        best = step_best
    return GuidanceSignal(kind="oracle", items=tuple(selected), doc_id=doc_id)


def empty_guidance(doc_id: str = "") -> GuidanceSignal:
    return GuidanceSignal(kind="none", items=(), doc_id=doc_id)


def render_guidance(signal: GuidanceSignal, vocab: Vocabulary, max_len: int) -> list[int]:
    """Token ids for a guidance signal; never empty (lone [SEP] as placeholder)."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if signal.kind == "terms" and signal.items:
        ids: list[int] = []
        for i, term in enumerate(signal.items):
            if i > 0:
                ids.append(SEP_ID)
            ids.extend(encode_text(term, vocab))
        ids = ids[:max_len]
    elif signal.items:
        ids = encode_text(" ".join(signal.items), vocab, max_len)
    else:
        ids = []
    return ids if ids else [SEP_ID]


def extract_guidance(
    kind: str,
    document: str,
    matcher: TermMatcher | None = None,
    reference: str = "",
    max_sentences: int = 3,
    doc_id: str = "",
) -> GuidanceSignal:
    if kind == "none":
        return empty_guidance(doc_id)
    if kind == "terms":
        return extract_term_guidance(document, matcher, doc_id)
    if kind == "sentences":
        return extract_sentence_guidance(document, matcher, doc_id)
    if kind == "oracle":
        return extract_oracle_sentences(document, reference, max_sentences, doc_id)
    raise ValueError(f"unknown guidance kind {kind!r}")


def write_guidance_cache(path: str | Path, signals: Iterable[GuidanceSignal]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for sig in signals:
            fh.write(
                json.dumps({"id": sig.doc_id, "kind": sig.kind, "items": list(sig.items)})
                + "\n"
            )


def read_guidance_cache(path: str | Path) -> dict[str, GuidanceSignal]:
    out: dict[str, GuidanceSignal] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            sig = GuidanceSignal(kind=obj["kind"], items=tuple(obj["items"]), doc_id=obj["id"])
            out[sig.doc_id] = sig
    return out
