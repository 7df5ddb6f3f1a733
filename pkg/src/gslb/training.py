"""Decoupled-weight-decay Adam training with token-budget batching and
gradient accumulation, plus per-epoch checkpointing and selection."""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import decoding
from .corpus import BOS_ID, EOS_ID, Vocabulary, encode_text, tokenize
from .corruption import ClassifierExample, CorrectorExample
from .evaluation import rouge_l
from .guidance import GuidanceSignal, render_guidance
from .model import (
    ModelConfig,
    classifier_loss,
    corrector_encoder_input,
    decoder_forward,
    encode_for_corrector,
    encode_for_summarizer,
    sequence_nll,
)
from .params import ParameterSet

MODEL_KINDS = ("summarizer", "corrector", "classifier")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-5
    beta1: float = 0.9
    beta2: float = 0.98
    weight_decay: float = 0.01
    eps: float = 1e-8
    update_frequency: int = 4
    max_tokens_per_batch: int = 1024
    max_updates: int = 10_000
    epochs: int = 5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.eps <= 0:
            raise TrainingError("learning_rate and eps must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise TrainingError("betas must lie in (0, 1)")
        if min(self.update_frequency, self.max_tokens_per_batch, self.max_updates, self.epochs) < 1:
            raise TrainingError("update_frequency, batch budget, max_updates, epochs must be >= 1")
        if self.weight_decay < 0:
            raise TrainingError("weight_decay must be non-negative")


def paper_profile(**overrides) -> TrainConfig:
    return replace(TrainConfig(), **overrides) if overrides else TrainConfig()


def desk_profile(**overrides) -> TrainConfig:
    # Random-init micro models need larger steps and smaller batches than the
    # pretrained-scale defaults.
    cfg = replace(TrainConfig(), learning_rate=1e-3, max_tokens_per_batch=256)
    return replace(cfg, **overrides) if overrides else cfg


class OptimizerState:
    """Per-parameter first/second moments and the shared step counter."""

    def __init__(self, params: ParameterSet):
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.step = 0


def adamw_step(params: ParameterSet, state: OptimizerState, cfg: TrainConfig) -> None:
    """One decoupled-weight-decay Adam update from the accumulated gradients."""
    state.step += 1
    t = state.step
    bias1 = 1.0 - cfg.beta1**t
    bias2 = 1.0 - cfg.beta2**t
    for name, tensor in params.items():
        grad = tensor.grad
        if grad is None:
            grad = np.zeros_like(tensor.data)
        if not np.all(np.isfinite(grad)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * grad
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * grad * grad
        m_hat = m / bias1
        v_hat = v / bias2
        tensor.data = tensor.data - cfg.learning_rate * (
            m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * tensor.data
        )


@dataclass
class Checkpoint:
    params: ParameterSet
    step: int
    epoch: int
    metric: float
    metric_kind: str


def select_checkpoint(checkpoints: Sequence[Checkpoint]) -> Checkpoint:
    """Highest ROUGE-L (or lowest loss) checkpoint; ties go to the earliest step."""
    if not checkpoints:
        raise TrainingError("no checkpoints to select from")
    kinds = {ck.metric_kind for ck in checkpoints}
    if len(kinds) != 1:
        raise TrainingError(f"mixed metric kinds {sorted(kinds)}")
    kind = kinds.pop()
    if kind == "rouge_l":
        best = max(checkpoints, key=lambda ck: (ck.metric, -ck.step))
    elif kind == "loss":
        best = min(checkpoints, key=lambda ck: (ck.metric, ck.step))
    else:
        raise TrainingError(f"unknown metric kind {kind!r}")
    return best


def _pack_batches(order: Sequence[int], sizes: Sequence[int], budget: int) -> list[list[int]]:
    batches: list[list[int]] = []
    current: list[int] = []
    used = 0
    for idx in order:
        size = sizes[idx]
        if current and used + size > budget:
            batches.append(current)
            current, used = [], 0
        current.append(idx)
        used += size
    if current:
        batches.append(current)
    return batches


def _run_training(
    params: ParameterSet,
    train_items: Sequence,
    loss_fn: Callable[[ParameterSet], Callable],
    sizes: Sequence[int],
    validate_fn: Callable[[ParameterSet], float],
    metric_kind: str,
    cfg: TrainConfig,
    log: list | None = None,
) -> list[Checkpoint]:
    if not train_items:
        raise TrainingError("empty training split")
    state = OptimizerState(params)
    rng = random.Random(cfg.seed)
    checkpoints: list[Checkpoint] = []
    example_loss = loss_fn(params)
    updates = 0
    for epoch in range(1, cfg.epochs + 1):
        order = list(range(len(train_items)))
        rng.shuffle(order)
        batches = _pack_batches(order, sizes, cfg.max_tokens_per_batch)
        accumulated = 0
        pending_losses: list[float] = []
        pending_tokens = 0
        for batch_no, batch in enumerate(batches):
            with ad.Tape():
                total = None
                for idx in batch:
                    item_loss = example_loss(train_items[idx])
                    total = item_loss if total is None else ad.add(total, item_loss)
                batch_loss = ad.scale(total, 1.0 / len(batch))
                ad.backward(batch_loss)
            pending_losses.append(float(batch_loss.data))
            pending_tokens += sum(sizes[idx] for idx in batch)
            accumulated += 1
            last_of_epoch = batch_no == len(batches) - 1
            if accumulated == cfg.update_frequency or last_of_epoch:
                if accumulated > 1:
                    for _, tensor in params.items():
                        if tensor.grad is not None:
                            tensor.grad /= accumulated
                adamw_step(params, state, cfg)
                params.zero_grads()
                updates += 1
                if log is not None:
                    log.append(
                        {
                            "step": updates,
                            "loss": sum(pending_losses) / len(pending_losses),
                            "lr": cfg.learning_rate,
                            "tokens": pending_tokens,
                        }
                    )
                accumulated = 0
                pending_losses = []
                pending_tokens = 0
                if updates >= cfg.max_updates:
                    break
        checkpoints.append(
            Checkpoint(
                params=params.copy(),
                step=updates,
                epoch=epoch,
                metric=validate_fn(params),
                metric_kind=metric_kind,
            )
        )
        if updates >= cfg.max_updates:
            break
    return checkpoints


@dataclass
class SummarizerExample:
    record_id: str
    x_ids: list[int]
    g_ids: list[int]
    y_ids: list[int]
    reference: str = ""


def make_target(text: str, vocab: Vocabulary, max_len: int) -> list[int]:
    body = encode_text(text, vocab, max_len - 2)
    return [BOS_ID] + body + [EOS_ID]


def prepare_summarizer_examples(
    records,
    guidance_by_id: dict[str, GuidanceSignal],
    vocab: Vocabulary,
    model_cfg: ModelConfig,
    guidance_max_len: int,
    guided: bool,
) -> list[SummarizerExample]:
    examples = []
    for rec in records:
        signal = guidance_by_id.get(rec.id, GuidanceSignal(kind="none", items=(), doc_id=rec.id))
        g_ids = render_guidance(signal, vocab, guidance_max_len) if guided else []
        examples.append(
            SummarizerExample(
                record_id=rec.id,
                x_ids=encode_text(rec.document, vocab, model_cfg.max_len),
                g_ids=g_ids,
                y_ids=make_target(rec.summary, vocab, model_cfg.max_len),
                reference=rec.summary,
            )
        )
    return examples


def greedy_rouge_l(
    params: ParameterSet,
    model_cfg: ModelConfig,
    examples: Sequence[SummarizerExample],
    vocab: Vocabulary,
    decode_cfg: decoding.DecodeConfig,
    guided: bool,
) -> float:
    """Mean ROUGE-L F1 (x100) of greedy decodes against the references."""
    if not examples:
        raise TrainingError("empty validation split")
    total = 0.0
    for ex in examples:
        with ad.no_grad():
            if guided:
                enc = encode_for_summarizer(params, model_cfg, ex.x_ids, ex.g_ids)
            else:
                enc = encode_for_corrector(params, model_cfg, ex.x_ids)

            def forward(prefix):
                return decoder_forward(params, model_cfg, np.asarray(prefix), enc).data[-1]

            out_ids = decoding.greedy_decode(forward, decode_cfg, vocab)
        hyp_tokens = [vocab.token_of(i) for i in decoding.strip_special(out_ids)]
        total += rouge_l(hyp_tokens, tokenize(ex.reference)).f1
    return 100.0 * total / len(examples)


def train_summarizer(
    train_records,
    validation_records,
    guidance_by_id: dict[str, GuidanceSignal],
    vocab: Vocabulary,
    model_cfg: ModelConfig,
    params: ParameterSet,
    train_cfg: TrainConfig,
    decode_cfg: decoding.DecodeConfig | None = None,
    guidance_max_len: int = 64,
    guided: bool = True,
    log: list | None = None,
) -> list[Checkpoint]:
    decode_cfg = decode_cfg or decoding.DecodeConfig(beam_size=1, min_length=1, max_length=model_cfg.max_len // 2)
    train_ex = prepare_summarizer_examples(
        train_records, guidance_by_id, vocab, model_cfg, guidance_max_len, guided
    )
    val_ex = prepare_summarizer_examples(
        validation_records, guidance_by_id, vocab, model_cfg, guidance_max_len, guided
    )
    sizes = [len(e.x_ids) + len(e.g_ids) + len(e.y_ids) for e in train_ex]
    val_decode = replace(decode_cfg, beam_size=1)

    def loss_fn(p):
        def example_loss(ex: SummarizerExample):
            if guided:
                enc = encode_for_summarizer(p, model_cfg, ex.x_ids, ex.g_ids)
            else:
                enc = encode_for_corrector(p, model_cfg, ex.x_ids)
            return sequence_nll(p, model_cfg, enc, ex.y_ids)

        return example_loss

    def validate(p):
        return greedy_rouge_l(p, model_cfg, val_ex, vocab, val_decode, guided)

    return _run_training(params, train_ex, loss_fn, sizes, validate, "rouge_l", train_cfg, log)


@dataclass
class CorrectorTrainExample:
    record_id: str
    src_ids: list[int]
    y_ids: list[int]
    reference: str


def prepare_corrector_examples(
    examples: Sequence[CorrectorExample], vocab: Vocabulary, model_cfg: ModelConfig
) -> list[CorrectorTrainExample]:
    out = []
    for ex in examples:
        src = corrector_encoder_input(
            encode_text(ex.input_summary, vocab),
            encode_text(ex.document, vocab),
            model_cfg.max_len,
        )
        out.append(
            CorrectorTrainExample(
                record_id=ex.id,
                src_ids=src,
                y_ids=make_target(ex.target_summary, vocab, model_cfg.max_len),
                reference=ex.target_summary,
            )
        )
    return out


def train_corrector(
    train_examples: Sequence[CorrectorExample],
    validation_examples: Sequence[CorrectorExample],
    vocab: Vocabulary,
    model_cfg: ModelConfig,
    params: ParameterSet,
    train_cfg: TrainConfig,
    decode_cfg: decoding.DecodeConfig | None = None,
    log: list | None = None,
) -> list[Checkpoint]:
    decode_cfg = decode_cfg or decoding.DecodeConfig(beam_size=1, min_length=1, max_length=model_cfg.max_len // 2)
    train_ex = prepare_corrector_examples(train_examples, vocab, model_cfg)
    val_ex = prepare_corrector_examples(validation_examples, vocab, model_cfg)
    sizes = [len(e.src_ids) + len(e.y_ids) for e in train_ex]
    val_decode = replace(decode_cfg, beam_size=1, min_length=1)

    def loss_fn(p):
        def example_loss(ex: CorrectorTrainExample):
            enc = encode_for_corrector(p, model_cfg, ex.src_ids)
            return sequence_nll(p, model_cfg, enc, ex.y_ids)

        return example_loss

    def validate(p):
        if not val_ex:
            raise TrainingError("empty validation split")
        total = 0.0
        for ex in val_ex:
            with ad.no_grad():
                enc = encode_for_corrector(p, model_cfg, ex.src_ids)

                def forward(prefix):
                    return decoder_forward(p, model_cfg, np.asarray(prefix), enc).data[-1]

                out_ids = decoding.greedy_decode(forward, val_decode, vocab)
            hyp_tokens = [vocab.token_of(i) for i in decoding.strip_special(out_ids)]
            total += rouge_l(hyp_tokens, tokenize(ex.reference)).f1
        return 100.0 * total / len(val_ex)

    return _run_training(params, train_ex, loss_fn, sizes, validate, "rouge_l", train_cfg, log)


@dataclass
class ClassifierTrainExample:
    record_id: str
    claim_ids: list[int]
    text_ids: list[int]
    label: str


def prepare_classifier_examples(
    examples: Sequence[ClassifierExample], vocab: Vocabulary
) -> list[ClassifierTrainExample]:
    return [
        ClassifierTrainExample(
            record_id=ex.id,
            claim_ids=encode_text(ex.claim, vocab),
            text_ids=encode_text(ex.document, vocab),
            label=ex.label,
        )
        for ex in examples
    ]


def train_classifier(
    train_examples: Sequence[ClassifierExample],
    validation_examples: Sequence[ClassifierExample],
    vocab: Vocabulary,
    model_cfg: ModelConfig,
    params: ParameterSet,
    train_cfg: TrainConfig,
    log: list | None = None,
) -> list[Checkpoint]:
    train_ex = prepare_classifier_examples(train_examples, vocab)
    val_ex = prepare_classifier_examples(validation_examples, vocab)
    sizes = [min(len(e.claim_ids) + 1 + len(e.text_ids), model_cfg.max_len) for e in train_ex]

    def loss_fn(p):
        def example_loss(ex: ClassifierTrainExample):
            return classifier_loss(p, model_cfg, ex.claim_ids, ex.text_ids, ex.label)

        return example_loss

    def validate(p):
        if not val_ex:
            raise TrainingError("empty validation split")
        total = 0.0
        with ad.no_grad():
            for ex in val_ex:
                total += float(classifier_loss(p, model_cfg, ex.claim_ids, ex.text_ids, ex.label).data)
        return total / len(val_ex)

    return _run_training(params, train_ex, loss_fn, sizes, validate, "loss", train_cfg, log)
