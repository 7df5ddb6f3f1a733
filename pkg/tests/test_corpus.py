from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gslb import corpus
from gslb.corpus import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    RESERVED_TOKENS,
    SEP,
    SEP_ID,
    UNK_ID,
    CorpusError,
    CorpusRecord,
    Dataset,
    build_vocabulary,
    decode_ids,
    encode_text,
    load_corpus,
    load_vocabulary,
    save_vocabulary,
    tokenize,
)


def _write_jsonl(path, rows):
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def _dataset(*texts: str) -> Dataset:
    records = [CorpusRecord(id=f"r{i}", document=text) for i, text in enumerate(texts)]
    return Dataset(splits={"train": records})


def test_load_corpus_preserves_order(tmp_path):
    path = tmp_path / "train.jsonl"
    rows = [{"id": f"x{i}", "document": f"doc {i}", "summary": f"sum {i}"} for i in range(3)]
    _write_jsonl(path, rows)
    records = load_corpus(path, "train")
    assert [r.id for r in records] == ["x0", "x1", "x2"]


def test_load_corpus_empty_file(tmp_path):
    path = tmp_path / "train.jsonl"
    path.write_text("")
    assert load_corpus(path, "train") == []


def test_load_corpus_missing_document_names_line(tmp_path):
    path = tmp_path / "train.jsonl"
    _write_jsonl(path, [{"id": "a", "document": "d", "summary": "s"}, {"id": "b", "summary": "s"}])
    with pytest.raises(CorpusError, match=r":2:.*document"):
        load_corpus(path, "train")


def test_load_corpus_duplicate_id(tmp_path):
    path = tmp_path / "train.jsonl"
    _write_jsonl(
        path,
        [
            {"id": "a", "document": "d", "summary": "s"},
            {"id": "a", "document": "d2", "summary": "s2"},
        ],
    )
    with pytest.raises(CorpusError, match="duplicate id"):
        load_corpus(path, "train")


def test_load_corpus_test_split_may_omit_summary(tmp_path):
    path = tmp_path / "test.jsonl"
    _write_jsonl(path, [{"id": "a", "document": "d"}])
    assert load_corpus(path, "test")[0].summary == ""
    path2 = tmp_path / "train.jsonl"
    _write_jsonl(path2, [{"id": "a", "document": "d"}])
    with pytest.raises(CorpusError, match="summary"):
        load_corpus(path2, "train")


def test_dataset_splits_disjoint():
    rec = CorpusRecord(id="a", document="d", summary="s")
    ds = Dataset(splits={"train": [rec], "test": [rec]})
    with pytest.raises(CorpusError, match="both"):
        ds.validate()


def test_tokenize_isolates_punctuation():
    assert tokenize("The cat.") == ["the", "cat", "."]
    assert tokenize("don't panic!") == ["don", "'", "t", "panic", "!"]


def test_tokenize_keeps_sep_token():
    assert tokenize("anxiety [SEP] burnout") == ["anxiety", SEP, "burnout"]
    assert tokenize("[sep]") == [SEP]


def test_vocabulary_frequency_then_lexicographic():
    vocab = build_vocabulary(_dataset("a a b"))
    assert vocab.tokens[:5] == RESERVED_TOKENS
    assert vocab.tokens[5:] == ("a", "b")


def test_vocabulary_min_count_excludes_rare():
    vocab = build_vocabulary(_dataset("a a b"), min_count=2)
    assert "b" not in vocab.index
    assert vocab.id_of("b") == UNK_ID


def test_vocabulary_max_size_caps_body():
    vocab = build_vocabulary(_dataset("a a b"), max_size=6)
    assert vocab.tokens == RESERVED_TOKENS + ("a",)


def test_vocabulary_empty_train_split_errors():
    with pytest.raises(CorpusError, match="empty train split"):
        build_vocabulary(Dataset(splits={"train": []}))


def test_vocabulary_bijection():
    vocab = build_vocabulary(_dataset("a b c a"))
    for token_id, token in enumerate(vocab.tokens):
        assert vocab.id_of(vocab.token_of(token_id)) == token_id
        assert vocab.token_of(vocab.id_of(token)) == token


def test_encode_truncates_head_keep(fixture_dataset):
    vocab = build_vocabulary(_dataset("w"))
    text = " ".join(["w"] * 2000)
    ids = encode_text(text, vocab, max_len=1024)
    assert len(ids) == 1024
    assert set(ids) == {vocab.id_of("w")}


def test_encode_unknown_maps_to_unk():
    vocab = build_vocabulary(_dataset("a"))
    assert encode_text("zzz", vocab) == [UNK_ID]


def test_decode_drops_reserved_but_keeps_sep():
    vocab = build_vocabulary(_dataset("the"))
    the = vocab.id_of("the")
    assert decode_ids([BOS_ID, the, EOS_ID], vocab) == "the"
    assert decode_ids([the, SEP_ID, the], vocab) == f"the {SEP} the"
    assert decode_ids([PAD_ID, the], vocab) == "the"


def test_decode_out_of_range_errors():
    vocab = build_vocabulary(_dataset("a"))
    with pytest.raises(CorpusError, match="out of range"):
        decode_ids([vocab.size], vocab)


def test_round_trip_on_vocab_text():
    text = "the cat sat . on the mat !"
    vocab = build_vocabulary(_dataset(text))
    assert decode_ids(encode_text(text, vocab), vocab) == " ".join(tokenize(text))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.text(alphabet="abcxyz.,!235 ", min_size=1, max_size=12), min_size=1, max_size=20))
def test_round_trip_property(words):
    text = " ".join(words)
    if not tokenize(text):
        return
    vocab = build_vocabulary(_dataset(text))
    ids = encode_text(text, vocab, max_len=16)
    assert PAD_ID not in ids  # truncation never pads
    assert decode_ids(encode_text(text, vocab), vocab) == " ".join(tokenize(text))


def test_vocabulary_file_round_trip(tmp_path):
    vocab = build_vocabulary(_dataset("gamma beta beta alpha"))
    path = tmp_path / "vocab.txt"
    save_vocabulary(vocab, path)
    loaded = load_vocabulary(path)
    assert loaded.tokens == vocab.tokens
    bad = tmp_path / "bad.txt"
    bad.write_text("<pad>\nwrong\n")
    with pytest.raises(CorpusError, match="reserved"):
        load_vocabulary(bad)


def test_determinism_byte_identical():
    ds = _dataset("a b c", "c b a")
    first = build_vocabulary(ds)
    second = build_vocabulary(ds)
    assert first.tokens == second.tokens
    assert encode_text("a b q", first) == encode_text("a b q", second)
