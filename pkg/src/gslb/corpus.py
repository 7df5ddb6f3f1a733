"""Corpus loading, vocabulary construction, and token encoding.

Corpus files are JSON Lines with string fields ``id``, ``document`` and
``summary``. The tokenizer is a lowercase word-level one that isolates
punctuation into standalone tokens; ``[SEP]`` is the only multi-character
special token that survives tokenization verbatim.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

PAD, BOS, EOS, UNK, SEP = "<pad>", "<bos>", "<eos>", "<unk>", "[SEP]"
PAD_ID, BOS_ID, EOS_ID, UNK_ID, SEP_ID = 0, 1, 2, 3, 4
RESERVED_TOKENS = (PAD, BOS, EOS, UNK, SEP)

SPLITS = ("train", "validation", "test")


class CorpusError(ValueError):
    """Raised for malformed corpus files or invalid corpus operations."""


@dataclass(frozen=True)
class CorpusRecord:
    id: str
    document: str
    summary: str = ""


@dataclass
class Dataset:
    splits: dict[str, list[CorpusRecord]] = field(default_factory=dict)

    def split(self, name: str) -> list[CorpusRecord]:
        return self.splits.get(name, [])

    def validate(self) -> None:
        seen: dict[str, str] = {}
        for name, records in self.splits.items():
            for rec in records:
                if rec.id in seen:
                    raise CorpusError(
                        f"record id {rec.id!r} appears in both "
                        f"{seen[rec.id]!r} and {name!r} splits"
                    )
                seen[rec.id] = name


def load_corpus(path: str | Path, split: str) -> list[CorpusRecord]:
    """Parse one JSONL corpus file, preserving file order.

    Summaries are mandatory for train/validation records; test records may
    omit them (inference-only use).
    """
    path = Path(path)
    records: list[CorpusRecord] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise CorpusError(f"{path}:{lineno}: expected a JSON object")
            rec_id = obj.get("id")
            if not isinstance(rec_id, str) or not rec_id:
                raise CorpusError(f"{path}:{lineno}: missing or empty 'id' field")
            if rec_id in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate id {rec_id!r}")
            document = obj.get("document")
            if not isinstance(document, str) or not document:
                raise CorpusError(f"{path}:{lineno}: missing or empty 'document' field")
            summary = obj.get("summary", "")
            if not isinstance(summary, str):
                raise CorpusError(f"{path}:{lineno}: 'summary' must be a string")
            if split in ("train", "validation") and not summary:
                raise CorpusError(
                    f"{path}:{lineno}: empty 'summary' not allowed in {split!r} split"
                )
            seen.add(rec_id)
            records.append(CorpusRecord(id=rec_id, document=document, summary=summary))
    return records


def load_dataset(corpus_dir: str | Path) -> Dataset:
    """Load every ``<split>.jsonl`` present under ``corpus_dir``."""
    corpus_dir = Path(corpus_dir)
    ds = Dataset()
    for split in SPLITS:
        path = corpus_dir / f"{split}.jsonl"
        if path.exists():
            ds.splits[split] = load_corpus(path, split)
    if not ds.splits:
        raise CorpusError(f"no corpus files found under {corpus_dir}")
    ds.validate()
    return ds


# [SEP] is matched first so it survives as one token; \w+ covers words and
# digit runs; any other non-space character becomes its own token.
_TOKEN_RE = re.compile(r"\[SEP\]|\w+|[^\w\s]", re.IGNORECASE)


def tokenize(text: str) -> list[str]:
    out = []
    for match in _TOKEN_RE.finditer(text):
        tok = match.group(0)
        out.append(SEP if tok.upper() == SEP else tok.lower())
    return out


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    index: dict[str, int]

    @property
    def size(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def token_of(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.tokens):
            raise CorpusError(f"token id {token_id} out of range (size {len(self.tokens)})")
        return self.tokens[token_id]


def _make_vocabulary(body: Iterable[str]) -> Vocabulary:
    tokens = tuple(RESERVED_TOKENS) + tuple(body)
    index = {tok: i for i, tok in enumerate(tokens)}
    if len(index) != len(tokens):
        raise CorpusError("vocabulary tokens are not unique")
    return Vocabulary(tokens=tokens, index=index)


def build_vocabulary(
    dataset: Dataset, min_count: int = 1, max_size: int | None = None
) -> Vocabulary:
    """Frequency-ranked vocabulary over the train split (documents + summaries).

    Ties are broken lexicographically; ``max_size`` counts the five reserved
    tokens.
    """
    if min_count < 1:
        raise CorpusError("min_count must be >= 1")
    train = dataset.split("train")
    if not train:
        raise CorpusError("cannot build a vocabulary from an empty train split")
    counts: Counter[str] = Counter()
    for rec in train:
        counts.update(tokenize(rec.document))
        counts.update(tokenize(rec.summary))
    for reserved in RESERVED_TOKENS:
        counts.pop(reserved, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    body = [tok for tok, n in ranked if n >= min_count]
    if max_size is not None:
        if max_size < len(RESERVED_TOKENS):
            raise CorpusError(f"max_size must be >= {len(RESERVED_TOKENS)}")
        body = body[: max_size - len(RESERVED_TOKENS)]
    return _make_vocabulary(body)


def save_vocabulary(vocab: Vocabulary, path: str | Path) -> None:
    Path(path).write_text("\n".join(vocab.tokens) + "\n", encoding="utf-8")


def load_vocabulary(path: str | Path) -> Vocabulary:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if tuple(lines[: len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
        raise CorpusError(f"{path}: first five lines must be the reserved tokens")
    return _make_vocabulary(lines[len(RESERVED_TOKENS) :])


def encode_text(text: str, vocab: Vocabulary, max_len: int | None = None) -> list[int]:
    """Tokenize and map to ids; overlong input keeps the head and drops the tail."""
    ids = [vocab.id_of(tok) for tok in tokenize(text)]
    if max_len is not None:
        ids = ids[:max_len]
    return ids


def decode_ids(ids: Iterable[int], vocab: Vocabulary) -> str:
    """Inverse of encode up to whitespace; reserved tokens except [SEP] are dropped."""
    words = []
    for token_id in ids:
        tok = vocab.token_of(int(token_id))
        if tok in RESERVED_TOKENS and tok != SEP:
            continue
        words.append(tok)
    return " ".join(words)
