from __future__ import annotations

import itertools
import random

import pytest

from gslb import corpus
from gslb.corpus import SEP_ID, build_vocabulary, tokenize
from gslb.evaluation import rouge_n
from gslb.guidance import (
    GuidanceSignal,
    empty_guidance,
    extract_oracle_sentences,
    extract_sentence_guidance,
    extract_term_guidance,
    read_guidance_cache,
    render_guidance,
    segment_sentences,
    write_guidance_cache,
)
from gslb.lexicon import Lexicon, compile_matcher


def _vocab(text):
    rec = corpus.CorpusRecord(id="r", document=text, summary=text)
    return build_vocabulary(corpus.Dataset(splits={"train": [rec]}))


def test_segment_two_sentences():
    assert [s.text for s in segment_sentences("I slept. I woke!")] == ["I slept.", "I woke!"]


def test_segment_no_terminator_is_one_sentence():
    assert [s.text for s in segment_sentences("no terminator here")] == ["no terminator here"]


def test_segment_empty():
    assert segment_sentences("") == []


def test_segment_spans_cover_non_whitespace():
    doc = "one two. three?  four and five !tail"
    sentences = segment_sentences(doc)
    covered = set()
    for s in sentences:
        assert doc[s.start : s.end] == s.text
        covered.update(range(s.start, s.end))
    for i, ch in enumerate(doc):
        if not ch.isspace():
            assert i in covered
    starts = [s.start for s in sentences]
    assert starts == sorted(starts)
    for a, b in zip(sentences, sentences[1:]):
        assert a.end <= b.start


def test_term_guidance_first_occurrence_order(fixture_matcher):
    doc = "autism, depression and anxiety"
    matcher = compile_matcher(Lexicon(terms=("autism", "depression", "anxiety")))
    sig = extract_term_guidance(doc, matcher)
    assert sig.items == ("autism", "depression", "anxiety")
    assert sig.kind == "terms"


def test_term_guidance_dedupes_case_insensitively():
    matcher = compile_matcher(Lexicon(terms=("anxiety",)))
    sig = extract_term_guidance("anxiety then Anxiety then ANXIETY", matcher)
    assert sig.items == ("anxiety",)


def test_term_guidance_empty_when_no_match(fixture_matcher):
    assert extract_term_guidance("calm waters", fixture_matcher).items == ()


def test_sentence_guidance_selects_term_sentences(fixture_matcher):
    doc = "i have anxiety . the sky is blue . therapy helps a lot ."
    sig = extract_sentence_guidance(doc, fixture_matcher)
    assert sig.items == ("i have anxiety .", "therapy helps a lot .")
    for item in sig.items:
        assert item in doc


def test_sentence_guidance_all_and_none(fixture_matcher):
    all_doc = "anxiety one . burnout two ."
    assert len(extract_sentence_guidance(all_doc, fixture_matcher).items) == 2
    assert extract_sentence_guidance("plain words only .", fixture_matcher).items == ()


def test_oracle_picks_exact_sentence_first():
    doc = "alpha beta gamma . delta epsilon . zeta eta theta ."
    sig = extract_oracle_sentences(doc, "delta epsilon .")
    assert sig.items[0] == "delta epsilon ."


def test_oracle_no_token_overlap_gives_empty():
    sig = extract_oracle_sentences("alpha beta . gamma delta .", "omega psi")
    assert sig.items == ()


def test_oracle_requires_reference():
    with pytest.raises(ValueError):
        extract_oracle_sentences("a .", "")


def _oracle_objective(selected, reference):
    cand = tokenize(" ".join(selected))
    ref = tokenize(reference)
    return (rouge_n(cand, ref, 1).f1 + rouge_n(cand, ref, 2).f1) / 2


def test_oracle_two_sentence_reference_matches_exhaustive():
    doc = "the cat sat down . dogs bark loudly . rain fell all day . birds sing songs ."
    sentences = [s.text for s in segment_sentences(doc)]
    reference = "dogs bark loudly . birds sing songs ."
    sig = extract_oracle_sentences(doc, reference, max_sentences=3)
    assert set(sig.items) == {"dogs bark loudly .", "birds sing songs ."}
    best = max(
        (
            _oracle_objective(list(combo), reference)
            for n in range(1, len(sentences) + 1)
            for combo in itertools.combinations(sentences, n)
        ),
    )
    assert _oracle_objective(list(sig.items), reference) == pytest.approx(best)


def test_oracle_greedy_near_exhaustive_on_small_docs():
    rng = random.Random(3)
    words = ["cat", "dog", "rain", "sun", "tree", "song"]
    for _ in range(30):
        n_sent = rng.randrange(1, 6)
        sentences = [
            " ".join(rng.choice(words) for _ in range(rng.randrange(2, 5))) + " ."
            for _ in range(n_sent)
        ]
        doc = " ".join(sentences)
        reference = " ".join(rng.choice(words) for _ in range(rng.randrange(2, 7)))
        sig = extract_oracle_sentences(doc, reference, max_sentences=n_sent)
        greedy = _oracle_objective(list(sig.items), reference)
        exhaustive = max(
            (
                _oracle_objective(list(combo), reference)
                for n in range(0, n_sent + 1)
                for combo in itertools.combinations([s.text for s in segment_sentences(doc)], n)
            ),
        )
        assert greedy >= 0.9 * exhaustive


def test_oracle_score_monotone_over_selection_steps():
    doc = "cat dog . dog rain . rain sun tree . tree song cat dog ."
    reference = "cat dog rain sun tree song"
    sig = extract_oracle_sentences(doc, reference, max_sentences=4)
    scores = [
        _oracle_objective(list(sig.items[: i + 1]), reference) for i in range(len(sig.items))
    ]
    assert scores == sorted(scores)


def test_render_terms_interleaves_sep():
    vocab = _vocab("autism depression")
    sig = GuidanceSignal(kind="terms", items=("autism", "depression"))
    ids = render_guidance(sig, vocab, max_len=16)
    assert ids == [vocab.id_of("autism"), SEP_ID, vocab.id_of("depression")]


def test_render_empty_items_is_single_sep():
    vocab = _vocab("x")
    assert render_guidance(empty_guidance(), vocab, 8) == [SEP_ID]
    assert render_guidance(GuidanceSignal(kind="terms", items=()), vocab, 8) == [SEP_ID]


def test_render_sentences_joined_by_space():
    vocab = _vocab("a b c d")
    sig = GuidanceSignal(kind="sentences", items=("a b", "c d"))
    ids = render_guidance(sig, vocab, 16)
    assert ids == [vocab.id_of(t) for t in ["a", "b", "c", "d"]]
    assert SEP_ID not in ids


def test_render_truncates_and_never_empty():
    vocab = _vocab("a b c d e f")
    sig = GuidanceSignal(kind="sentences", items=("a b c d e f",))
    assert len(render_guidance(sig, vocab, 3)) == 3
    assert render_guidance(GuidanceSignal(kind="none", items=()), vocab, 1) == [SEP_ID]


def test_term_guidance_fuzz_subset_and_order(fixture_matcher):
    rng = random.Random(8)
    lexicon_lower = {t.lower() for t in fixture_matcher.lexicon.terms}
    words = ["anxiety", "burnout", "panic", "attack", "calm", "mdd", "therapy", "x", "."]
    for _ in range(200):
        doc = " ".join(rng.choice(words) for _ in range(rng.randrange(0, 30)))
        sig = extract_term_guidance(doc, fixture_matcher)
        lowered = [t.lower() for t in sig.items]
        assert len(set(lowered)) == len(lowered)
        assert set(lowered) <= lexicon_lower
        positions = [doc.lower().find(t) for t in lowered]
        assert positions == sorted(positions)


def test_guidance_cache_round_trip(tmp_path):
    signals = [
        GuidanceSignal(kind="terms", items=("a", "b"), doc_id="r1"),
        GuidanceSignal(kind="sentences", items=(), doc_id="r2"),
    ]
    path = tmp_path / "cache.jsonl"
    write_guidance_cache(path, signals)
    loaded = read_guidance_cache(path)
    assert loaded["r1"].items == ("a", "b")
    assert loaded["r2"].kind == "sentences"
