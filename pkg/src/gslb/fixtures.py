"""Bundled synthetic fixture corpus: 50 train records with planted terminology,
numbers, durations, entities, and pronouns, plus a tiny 8-pair overfit corpus.

Everything here is deterministic so the shipped data files are a pure function
of this module. ``materialize`` writes a runnable fixture tree (corpus,
terminology CSV, config) into any directory.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from .corpus import CorpusRecord, Dataset

# Chosen so the pronoun corruption of record ov-2 swaps "him" -> "me",
# mirroring the corrector's flagship leaving-me/leaving-him fixture.
OVERFIT_SEED = 2

NAMES = ("Novak", "Reyes", "Chen", "Patel", "Brooks", "Romero", "Ellis", "Lund")
CAPS = ("CBT", "ADHD", "SSRI", "MDD")
TERMS = (
    "anxiety",
    "panic attack",
    "insomnia",
    "burnout",
    "mood swings",
    "bipolar disorder",
    "therapy",
    "depression",
    "social anxiety disorder",
)
MONTHS = ("march", "june", "october", "january", "august", "november")
DURATIONS = ("18 months", "6 - 8 months", "2 weeks", "10 years", "3 days", "5 weeks", "4 months")
AGES = ("19", "22", "25", "31", "40")
HOURS = ("3", "4", "5", "6")

TERMINOLOGY_ROWS = (
    "Anxiety, Panic Attack",
    "Major Depression (MDD)",
    "Insomnia",
    "anxiety",
    "Post Traumatic Stress Disorder Chronic",
    "Bipolar Disorder",
    "Panic attack",
    "Social Anxiety Disorder",
    "Therapy (CBT)",
    "Burnout",
    "Mood Swings",
    "ADHD",
    "Depression",
)


def _template_record(prefix: str, i: int) -> CorpusRecord:
    name = NAMES[i % len(NAMES)]
    name2 = NAMES[(i + 3) % len(NAMES)]
    term1 = TERMS[i % len(TERMS)]
    term2 = TERMS[(i + 2) % len(TERMS)]
    term3 = TERMS[(i + 5) % len(TERMS)]
    caps = CAPS[i % len(CAPS)]
    month = MONTHS[i % len(MONTHS)]
    dur1 = DURATIONS[i % len(DURATIONS)]
    dur2 = DURATIONS[(i + 4) % len(DURATIONS)]
    age = AGES[i % len(AGES)]
    hours = HOURS[i % len(HOURS)]
    document = (
        f"i am {age} and i have {term1} and {term2} . "
        f"i sleep {hours} hours and doctor {name} suggested {caps} in {month} "
        f"after {dur1} of {term3} . "
        f"my friend {name2} thinks we should try it for {dur2} ."
    )
    summary = f"i am {age} with {term1} , {name} suggested {caps} for {dur1} ."
    return CorpusRecord(id=f"{prefix}-{i}", document=document, summary=summary)


def corpus_records() -> dict[str, list[CorpusRecord]]:
    return {
        "train": [_template_record("train", i) for i in range(50)],
        "validation": [_template_record("val", i) for i in range(50, 58)],
        "test": [_template_record("test", i) for i in range(58, 66)],
    }


def overfit_records() -> list[CorpusRecord]:
    return [
        CorpusRecord(
            id="ov-0",
            document=(
                "i am 19 and i have anxiety . i sleep 3 hours and doctor Novak "
                "suggested CBT for 2 weeks ."
            ),
            summary="i am 19 with anxiety and Novak suggested CBT .",
        ),
        CorpusRecord(
            id="ov-1",
            document=(
                "my burnout started in march after 18 months of stress . doctor Reyes "
                "and nurse Lund told me to rest for 6 - 8 months ."
            ),
            summary="my burnout started after 18 months and Reyes helped .",
        ),
        CorpusRecord(
            id="ov-2",
            document=(
                "my mom is tired of dad . she cared for him for 10 years and for "
                "6 - 8 months she slept badly . now mom is probably leaving him ."
            ),
            summary="mom is leaving him after 10 years .",
        ),
        CorpusRecord(
            id="ov-3",
            document=(
                "my insomnia got worse in june . i took ADHD pills from doctor Chen "
                "for 3 days and then stopped ."
            ),
            summary="my insomnia got worse and i stopped the ADHD pills .",
        ),
        CorpusRecord(
            id="ov-4",
            document=(
                "i had a panic attack on monday at work . my boss Brooks sent me home "
                "with SSRI notes and 5 tasks in 40 minutes ."
            ),
            summary="i had a panic attack and Brooks sent 5 notes .",
        ),
        CorpusRecord(
            id="ov-5",
            document=(
                "we moved in october and my mood swings got loud . doctor Patel and "
                "nurse Novak saw us for 2 weeks and then for 18 months ."
            ),
            summary="we saw Patel for 2 weeks about mood swings .",
        ),
        CorpusRecord(
            id="ov-6",
            document=(
                "my CBT therapy with doctor Ellis begins in january . i pay 40 dollars "
                "each visit and wait 7 minutes ."
            ),
            summary="my therapy with Ellis costs 40 dollars .",
        ),
        CorpusRecord(
            id="ov-7",
            document=(
                "her social anxiety disorder flared on friday . she called doctor "
                "Romero and nurse Chen after 3 days of worry ."
            ),
            summary="she called Romero after 3 days of social anxiety disorder .",
        ),
    ]


def overfit_dataset() -> Dataset:
    records = overfit_records()
    return Dataset(splits={"train": records, "validation": list(records)})


def fixture_dataset() -> Dataset:
    return Dataset(splits=corpus_records())


FIXTURE_CONFIG = """\
# Fixture-profile run configuration (desk-scale; paths relative to this file).
seed = 13

[paths]
corpus = "corpus"
terminology = "terminology.csv"
output_dir = "out"

[guidance]
kind = "sentences"
max_len = 48
max_sentences = 3

[vocab]
min_count = 1
max_size = 512

[model]
layers = 2
shared_bottom_layers = 1
model_dim = 32
heads = 4
ffn_dim = 128
max_len = 96
activation = "relu"
float_width = 32

[train]
profile = "desk"
epochs_summarizer = 1
epochs_corrector = 1
epochs_classifier = 1
max_updates = 400

[decode]
beam_size = 3
min_length = 2
max_length = 30
length_penalty = 1.0
block_trigrams = true
split = "test"

[eval]
rouge_l_mode = "summary"
consistency_mode = "mean_probability"
"""


def _write_jsonl(path: Path, records: list[CorpusRecord]) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(
                json.dumps({"id": rec.id, "document": rec.document, "summary": rec.summary})
                + "\n"
            )


def _terminology_csv() -> str:
    lines = ["Code,KP_Patient_Display_Name"]
    for i, row in enumerate(TERMINOLOGY_ROWS):
        cell = f'"{row}"' if "," in row else row
        lines.append(f"C{i:03d},{cell}")
    return "\n".join(lines) + "\n"


def materialize(dest: str | Path) -> Path:
    """Write the runnable fixture tree (corpus, terminology, config) under dest."""
    dest = Path(dest)
    corpus_dir = dest / "corpus"
    corpus_dir.mkdir(parents=True, exist_ok=True)
    for split, records in corpus_records().items():
        _write_jsonl(corpus_dir / f"{split}.jsonl", records)
    _write_jsonl(corpus_dir / "overfit.jsonl", overfit_records())
    (dest / "terminology.csv").write_text(_terminology_csv(), encoding="utf-8")
    (dest / "config.toml").write_text(FIXTURE_CONFIG, encoding="utf-8")
    return dest / "config.toml"


def data_dir() -> Path:
    return Path(resources.files("gslb") / "data" / "fixture")


def main(argv: list[str] | None = None) -> int:
    import argparse

    parser = argparse.ArgumentParser(description="Write the bundled fixture tree.")
    parser.add_argument("dest", help="target directory")
    args = parser.parse_args(argv)
    config_path = materialize(args.dest)
    print(f"fixture written; config at {config_path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
