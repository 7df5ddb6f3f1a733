from __future__ import annotations

import pytest

from gslb import corpus, corruption, fixtures, guidance, lexicon


@pytest.fixture(scope="session")
def fixture_lexicon() -> lexicon.Lexicon:
    return lexicon.preprocess_terms(fixtures.TERMINOLOGY_ROWS)


@pytest.fixture(scope="session")
def fixture_matcher(fixture_lexicon) -> lexicon.TermMatcher:
    return lexicon.compile_matcher(fixture_lexicon)


@pytest.fixture(scope="session")
def fixture_dataset() -> corpus.Dataset:
    return fixtures.fixture_dataset()


@pytest.fixture(scope="session")
def overfit_dataset() -> corpus.Dataset:
    return fixtures.overfit_dataset()


@pytest.fixture(scope="session")
def overfit_vocab(overfit_dataset) -> corpus.Vocabulary:
    return corpus.build_vocabulary(overfit_dataset)


@pytest.fixture(scope="session")
def overfit_corruption(overfit_dataset) -> corruption.CorruptionSets:
    return corruption.build_corruption_dataset(overfit_dataset, seed=fixtures.OVERFIT_SEED)


@pytest.fixture(scope="session")
def overfit_sentence_guidance(overfit_dataset, fixture_matcher) -> dict[str, guidance.GuidanceSignal]:
    return {
        rec.id: guidance.extract_sentence_guidance(rec.document, fixture_matcher, rec.id)
        for rec in overfit_dataset.split("train")
    }
