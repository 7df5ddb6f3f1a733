"""Terminology cleanup and whole-term matching.

A raw terminology list (one column of a CSV) is normalized into a lexicon by
four ordered rules: comma splitting, parenthetical splitting, case-insensitive
deduplication, and removal of terms longer than three words. Matching is
case-insensitive whole-term matching: a hit must be bounded by non-word
characters or string edges on both sides.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

_PAREN_GROUP_RE = re.compile(r"\(([^()]*)\)")
_WS_RE = re.compile(r"\s+")


@dataclass(frozen=True)
class Lexicon:
    terms: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.terms)

    def __contains__(self, term: str) -> bool:
        return term.lower() in {t.lower() for t in self.terms}

    def word_count(self, term: str) -> int:
        return len(term.split())


@dataclass(frozen=True)
class TermMatch:
    term: str
    start: int
    end: int


class TermMatcher:
    """Compiled whole-term patterns over a lexicon, one per term."""

    def __init__(self, lexicon: Lexicon):
        self.lexicon = lexicon
        self._patterns = [
            (term, re.compile(r"(?<!\w)" + re.escape(term) + r"(?!\w)", re.IGNORECASE))
            for term in lexicon.terms
        ]


def _normalize(term: str) -> str:
    return _WS_RE.sub(" ", term).strip()


def _split_parens(part: str) -> list[str]:
    # Innermost groups are peeled off first so nested parentheses still yield
    # parenthesis-free terms; the remaining outside text comes first.
    insides: list[str] = []
    while True:
        match = _PAREN_GROUP_RE.search(part)
        if match is None:
            break
        insides.append(match.group(1))
        part = part[: match.start()] + " " + part[match.end() :]
    part = part.replace("(", " ").replace(")", " ")
    return [part] + insides


def preprocess_terms(raw_entries: Iterable[str]) -> Lexicon:
    """Apply the four cleanup rules, in order, to a raw terminology list."""
    expanded: list[str] = []
    for entry in raw_entries:
        for part in entry.split(","):
            for candidate in _split_parens(part):
                candidate = _normalize(candidate)
                if candidate:
                    expanded.append(candidate)
    deduped: list[str] = []
    seen: set[str] = set()
    for term in expanded:
        key = term.lower()
        if key not in seen:
            seen.add(key)
            deduped.append(term)
    kept = tuple(term for term in deduped if len(term.split()) <= 3)
    return Lexicon(terms=kept)


def compile_matcher(lexicon: Lexicon) -> TermMatcher:
    return TermMatcher(lexicon)


def find_matches(matcher: TermMatcher, text: str) -> list[TermMatch]:
    """All non-overlapping term hits, longest match first, then earliest start."""
    candidates: list[TermMatch] = []
    for term, pattern in matcher._patterns:
        for match in pattern.finditer(text):
            candidates.append(TermMatch(term=term, start=match.start(), end=match.end()))
    candidates.sort(key=lambda m: (-(m.end - m.start), m.start, m.term))
    taken: list[TermMatch] = []
    for cand in candidates:
        if all(cand.end <= kept.start or cand.start >= kept.end for kept in taken):
            taken.append(cand)
    taken.sort(key=lambda m: m.start)
    return taken


def load_term_list(path: str | Path, column: str = "KP_Patient_Display_Name") -> list[str]:
    """Read the raw terminology column from a CSV file with a header row."""
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or column not in reader.fieldnames:
            raise ValueError(f"{path}: column {column!r} not found in CSV header")
        return [row[column] for row in reader if row.get(column)]


def save_lexicon(lexicon: Lexicon, path: str | Path) -> None:
    Path(path).write_text("\n".join(lexicon.terms) + "\n", encoding="utf-8")


def load_lexicon(path: str | Path) -> Lexicon:
    lines = [line for line in Path(path).read_text(encoding="utf-8").splitlines() if line]
    return Lexicon(terms=tuple(lines))
