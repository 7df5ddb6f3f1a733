from __future__ import annotations

import random

from gslb.corruption import (
    CORRECT,
    INCORRECT,
    PRONOUN_CLASSES,
    SWAP_KINDS,
    apply_swap,
    build_corruption_dataset,
    derive_seed,
    extract_typed_spans,
    pronoun_class,
    read_classifier_set,
    read_corrector_set,
    write_classifier_set,
    write_corrector_set,
)


def spans_of(text, kind):
    return [s for s in extract_typed_spans(text) if s.kind == kind]


def test_duration_phrase_is_date():
    spans = spans_of("I took it again for about 18 months", "date")
    assert [s.text for s in spans] == ["18 months"]


def test_spaced_range_duration_is_one_date_span():
    spans = spans_of("rest for 6 - 8 months please", "date")
    assert [s.text for s in spans] == ["6 - 8 months"]


def test_month_weekday_and_numeric_dates():
    text = "seen in march , again on monday , booked 12/25/2020 and 2021-03-04 ."
    assert [s.text for s in spans_of(text, "date")] == [
        "march",
        "monday",
        "12/25/2020",
        "2021-03-04",
    ]


def test_all_caps_token_is_entity():
    spans = spans_of("suggestion w CBT", "entity")
    assert [s.text for s in spans] == ["CBT"]


def test_capitalized_run_mid_sentence_is_entity():
    spans = spans_of("i met Doctor Reyes yesterday .", "entity")
    assert [s.text for s in spans] == ["Doctor Reyes"]


def test_sentence_start_capital_is_not_entity():
    assert spans_of("Peter slept fine .", "entity") == []
    assert [s.text for s in spans_of("Peter met Anna .", "entity")] == ["Anna"]


def test_pronoun_spans_and_classes():
    spans = spans_of("my mother is leaving him", "pronoun")
    assert [(s.text) for s in spans] == ["my", "him"]
    assert pronoun_class("my") == "possessive_dependent"
    assert pronoun_class("him") == "object"
    assert pronoun_class("I") == "subject"


def test_number_not_inside_date():
    text = "i waited 18 months and paid 40 dollars"
    assert [s.text for s in spans_of(text, "number")] == ["40"]
    assert [s.text for s in spans_of(text, "date")] == ["18 months"]


def test_spans_non_overlapping_and_sorted():
    text = "on monday I paid 40 dollars to Doctor Chen for my 18 months of CBT"
    spans = extract_typed_spans(text)
    for a, b in zip(spans, spans[1:]):
        assert a.end <= b.start
    for s in spans:
        assert text[s.start : s.end] == s.text


def test_apply_swap_duration_against_document():
    summary = "then took it again for about 18 months ."
    document = "I stopped . About 6 - 8 months later it was back . I took it again for about 18 months ."
    rec = apply_swap(
        summary,
        "date",
        extract_typed_spans(summary),
        extract_typed_spans(document, source="document"),
        seed=0,
    )
    assert rec is not None
    assert rec.corrupted == "then took it again for about 6 - 8 months ."
    assert rec.replacement in document


def test_apply_swap_pronoun_same_class():
    summary = "my mother is leaving him ."
    for seed in range(10):
        rec = apply_swap(summary, "pronoun", extract_typed_spans(summary), [], seed=seed)
        assert rec is not None
        cls = pronoun_class(rec.replaced)
        assert rec.replacement.lower() in PRONOUN_CLASSES[cls]
        assert rec.replacement.lower() != rec.replaced.lower()


def test_apply_swap_infeasible_returns_none():
    summary = "no digits here ."
    assert (
        apply_swap(summary, "number", extract_typed_spans(summary), [], seed=0) is None
    )
    # document offers no differing surface
    summary2 = "i paid 40 ."
    doc_spans = extract_typed_spans("it was 40 .", source="document")
    assert apply_swap(summary2, "number", extract_typed_spans(summary2), doc_spans, seed=0) is None


def test_record_invariants_on_fixture(fixture_dataset):
    sets = build_corruption_dataset(fixture_dataset, seed=13)
    checked = 0
    for split in ("train", "validation"):
        docs = {rec.id: rec.document for rec in fixture_dataset.split(split)}
        for rec in sets.records[split]:
            checked += 1
            assert rec.corrupted != rec.clean
            assert rec.kind in SWAP_KINDS
            # exactly one contiguous span differs
            assert (
                rec.clean[: rec.span_start] + rec.replacement + rec.clean[rec.span_end :]
                == rec.corrupted
            )
            assert rec.clean[rec.span_start : rec.span_end] == rec.replaced
            if rec.kind == "pronoun":
                cls = pronoun_class(rec.replaced)
                assert rec.replacement.lower() in PRONOUN_CLASSES[cls]
                assert rec.replacement.lower() != rec.replaced.lower()
            else:
                doc_surfaces = {
                    s.text
                    for s in extract_typed_spans(docs[rec.record_id], source="document")
                    if s.kind == rec.kind
                }
                assert rec.replacement in doc_surfaces
    assert checked > 100


def test_per_kind_emission_counts(fixture_dataset):
    sets = build_corruption_dataset(fixture_dataset, seed=13)
    first = fixture_dataset.split("train")[0]
    mine = [r for r in sets.records["train"] if r.record_id == first.id]
    assert sorted(r.kind for r in mine) == sorted(SWAP_KINDS)
    classifier_ids = [e for e in sets.classifier["train"] if e.id.startswith(first.id + ":")]
    assert sum(1 for e in classifier_ids if e.label == INCORRECT) == 4
    assert sum(1 for e in classifier_ids if e.label == CORRECT) == 1


def test_corrector_set_contains_only_incorrect_inputs(fixture_dataset):
    sets = build_corruption_dataset(fixture_dataset, seed=13)
    for ex in sets.corrector["train"]:
        assert ex.input_summary != ex.target_summary


def test_determinism_byte_identical(tmp_path, fixture_dataset):
    a = build_corruption_dataset(fixture_dataset, seed=13)
    b = build_corruption_dataset(fixture_dataset, seed=13)
    pa, pb = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_corrector_set(pa, a.corrector["train"])
    write_corrector_set(pb, b.corrector["train"])
    assert pa.read_bytes() == pb.read_bytes()
    c = build_corruption_dataset(fixture_dataset, seed=14)
    assert any(
        x.input_summary != y.input_summary
        for x, y in zip(a.corrector["train"], c.corrector["train"])
    )


def test_derive_seed_stable():
    assert derive_seed(13, "r1", "date") == derive_seed(13, "r1", "date")
    assert derive_seed(13, "r1", "date") != derive_seed(13, "r1", "number")
    assert derive_seed(13, "r1", "date") != derive_seed(14, "r1", "date")


def test_file_round_trips(tmp_path, fixture_dataset):
    sets = build_corruption_dataset(fixture_dataset, seed=13)
    cpath = tmp_path / "corrector.jsonl"
    write_corrector_set(cpath, sets.corrector["validation"])
    assert read_corrector_set(cpath) == sets.corrector["validation"]
    kpath = tmp_path / "classifier.jsonl"
    write_classifier_set(kpath, sets.classifier["validation"])
    assert read_classifier_set(kpath) == sets.classifier["validation"]


def test_swap_fuzz_single_span_difference():
    rng = random.Random(7)
    words = ["i", "met", "Doctor", "Chen", "for", "18 months", "on", "monday", "40", "him", "my"]
    for trial in range(200):
        summary = " ".join(rng.choice(words) for _ in range(rng.randrange(3, 10))) + " ."
        document = " ".join(rng.choice(words) for _ in range(rng.randrange(5, 20))) + " ."
        for kind in SWAP_KINDS:
            rec = apply_swap(
                summary,
                kind,
                extract_typed_spans(summary),
                extract_typed_spans(document, source="document"),
                seed=trial,
            )
            if rec is None:
                continue
            assert rec.corrupted != rec.clean
            assert (
                rec.clean[: rec.span_start] + rec.replacement + rec.clean[rec.span_end :]
                == rec.corrupted
            )


def test_overfit_fixture_pronoun_swap_is_leaving_me(overfit_corruption):
    pron = [
        r
        for r in overfit_corruption.records["train"]
        if r.record_id == "ov-2" and r.kind == "pronoun"
    ]
    assert len(pron) == 1
    assert pron[0].clean == "mom is leaving him after 10 years ."
    assert pron[0].corrupted == "mom is leaving me after 10 years ."
