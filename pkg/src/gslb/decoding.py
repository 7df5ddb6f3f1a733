"""Beam search with repeated-trigram blocking and length constraints.

The EOS logit is masked while the generated length is below the minimum and
forced once it reaches the maximum; candidates that would repeat a trigram of
the hypothesis are masked when blocking is on. Finished hypotheses are ranked
by log-probability normalized by length**alpha, with ties broken by the
lexicographically smaller token sequence.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .corpus import BOS_ID, EOS_ID, PAD_ID, Vocabulary, decode_ids, encode_text
from .model import (
    ModelConfig,
    corrector_encoder_input,
    decoder_step,
    encode_for_corrector,
)
from .params import ParameterSet

logger = logging.getLogger(__name__)

ForwardFn = Callable[[Sequence[int]], np.ndarray]


@dataclass(frozen=True)
class DecodeConfig:
    beam_size: int = 6
    min_length: int = 15
    max_length: int = 200
    length_penalty: float = 1.0
    block_trigrams: bool = True

    def __post_init__(self) -> None:
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if not 1 <= self.min_length <= self.max_length:
            raise ValueError("need 1 <= min_length <= max_length")


@dataclass(frozen=True)
class BeamHypothesis:
    ids: tuple[int, ...]
    logp: float
    finished: bool
    trigrams: frozenset

    def extend(self, token: int, token_logp: float) -> "BeamHypothesis":
        trigrams = self.trigrams
        if len(self.ids) >= 2:
            trigrams = trigrams | {(self.ids[-2], self.ids[-1], token)}
        return BeamHypothesis(
            ids=self.ids + (token,),
            logp=self.logp + token_logp,
            finished=token == EOS_ID,
            trigrams=trigrams,
        )


def trigram_allowed(hyp: BeamHypothesis, candidate: int) -> bool:
    if len(hyp.ids) < 2:
        return True
    return (hyp.ids[-2], hyp.ids[-1], candidate) not in hyp.trigrams


def _log_probs(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


def _allowed_mask(hyp: BeamHypothesis, vocab_size: int, cfg: DecodeConfig) -> np.ndarray:
    """Candidate keep-mask for one hypothesis, with the blocked-everything fallback."""
    generated = len(hyp.ids) - 1
    allowed = np.ones(vocab_size, dtype=bool)
    allowed[PAD_ID] = False
    allowed[BOS_ID] = False
    if generated < cfg.min_length:
        allowed[EOS_ID] = False
    if generated >= cfg.max_length:
        forced = np.zeros(vocab_size, dtype=bool)
        forced[EOS_ID] = True
        return forced
    if cfg.block_trigrams and len(hyp.ids) >= 2:
        for token in range(vocab_size):
            if allowed[token] and not trigram_allowed(hyp, token):
                allowed[token] = False
    if not allowed.any():
        if generated >= cfg.min_length:
            logger.warning("all candidates trigram-blocked; falling back to EOS")
            allowed[EOS_ID] = True
        else:
            logger.warning("all candidates trigram-blocked; ignoring blocking for this step")
            allowed = np.ones(vocab_size, dtype=bool)
            allowed[PAD_ID] = False
            allowed[BOS_ID] = False
            allowed[EOS_ID] = False
    return allowed


def _rank_key(hyp: BeamHypothesis, alpha: float) -> tuple:
    length = max(len(hyp.ids) - 1, 1)
    return (-(hyp.logp / length**alpha), hyp.ids)


def beam_search(forward: ForwardFn, cfg: DecodeConfig, vocab: Vocabulary) -> list[int]:
    """Best finished hypothesis (ids including BOS and EOS)."""
    live = [BeamHypothesis(ids=(BOS_ID,), logp=0.0, finished=False, trigrams=frozenset())]
    finished: list[BeamHypothesis] = []
    while live and len(finished) < cfg.beam_size:
        candidates: list[tuple[float, tuple[int, ...], BeamHypothesis, int, float]] = []
        for hyp in live:
            logp = _log_probs(forward(hyp.ids))
            allowed = _allowed_mask(hyp, vocab.size, cfg)
            for token in np.flatnonzero(allowed):
                token = int(token)
                score = hyp.logp + logp[token]
                candidates.append((score, hyp.ids + (token,), hyp, token, logp[token]))
        candidates.sort(key=lambda c: (-c[0], c[1]))
        # Only the top beam_size extensions survive; a hypothesis that ends in
        # EOS retires to the finished pool and frees its slot.
        next_live: list[BeamHypothesis] = []
        for score, _, hyp, token, token_logp in candidates[: cfg.beam_size]:
            extended = hyp.extend(token, token_logp)
            if extended.finished:
                finished.append(extended)
            else:
                next_live.append(extended)
        live = next_live
    if not finished:
        raise RuntimeError("beam search terminated without a finished hypothesis")
    finished.sort(key=lambda h: _rank_key(h, cfg.length_penalty))
    return list(finished[0].ids)


def greedy_decode(forward: ForwardFn, cfg: DecodeConfig, vocab: Vocabulary) -> list[int]:
    """Plain argmax decoding under the same masking rules as the beam."""
    hyp = BeamHypothesis(ids=(BOS_ID,), logp=0.0, finished=False, trigrams=frozenset())
    while not hyp.finished:
        logp = _log_probs(forward(hyp.ids))
        allowed = _allowed_mask(hyp, vocab.size, cfg)
        masked = np.where(allowed, logp, -np.inf)
        token = int(np.argmax(masked))
        hyp = hyp.extend(token, logp[token])
    return list(hyp.ids)


def strip_special(ids: Sequence[int]) -> list[int]:
    return [i for i in ids if i not in (PAD_ID, BOS_ID, EOS_ID)]


def summarizer_forward(params: ParameterSet, cfg: ModelConfig, enc) -> ForwardFn:
    def forward(prefix: Sequence[int]) -> np.ndarray:
        return decoder_step(params, cfg, np.asarray(prefix, dtype=np.int64), enc)

    return forward


def correct_summary(
    params: ParameterSet,
    model_cfg: ModelConfig,
    candidate: str,
    document: str,
    cfg: DecodeConfig,
    vocab: Vocabulary,
) -> str:
    """Beam-decode a corrected summary from (candidate ++ [SEP] ++ document)."""
    if not document:
        raise ValueError("correct_summary needs a non-empty source document")
    src = corrector_encoder_input(
        encode_text(candidate, vocab), encode_text(document, vocab), model_cfg.max_len
    )
    with ad.no_grad():
        enc = encode_for_corrector(params, model_cfg, src)
    # Correction targets are near-copies, so the summarizer minimum does not apply.
    corrected_ids = beam_search(
        summarizer_forward(params, model_cfg, enc), replace(cfg, min_length=1), vocab
    )
    return decode_ids(corrected_ids, vocab)
