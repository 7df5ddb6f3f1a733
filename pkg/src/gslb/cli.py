"""Command-line pipeline: lexicon-build, guidance-extract, corrupt, train,
decode, correct, evaluate, and the chained pipeline command.

Configuration is a single TOML file; relative paths resolve against the
config file's directory. ``--profile {paper,desk}`` picks hyperparameter
defaults and the ``GSLB_SEED`` environment variable overrides the seed. Every
stage writes its outputs plus a ``<stage>.meta.json`` carrying the config
hash, seed, and package versions, so identical config+seed reruns are
byte-identical.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__, corpus, corruption, decoding, evaluation, guidance, lexicon, training
from . import model as model_mod
from .params import load_checkpoint, save_checkpoint

STAGES = ("lexicon-build", "guidance-extract", "corrupt", "train", "decode", "correct", "evaluate")


class ConfigError(ValueError):
    pass


class MissingArtifactError(RuntimeError):
    pass


_SCHEMA: dict[str, dict[str, type | tuple[type, ...]]] = {
    "": {"seed": int},
    "paths": {"corpus": str, "terminology": str, "output_dir": str},
    "guidance": {"kind": str, "max_len": int, "max_sentences": int, "term_column": str},
    "vocab": {"min_count": int, "max_size": int},
    "model": {
        "layers": int,
        "shared_bottom_layers": int,
        "model_dim": int,
        "heads": int,
        "ffn_dim": int,
        "max_len": int,
        "activation": str,
        "float_width": int,
    },
    "train": {
        "profile": str,
        "learning_rate": (int, float),
        "beta1": (int, float),
        "beta2": (int, float),
        "weight_decay": (int, float),
        "eps": (int, float),
        "update_frequency": int,
        "max_tokens_per_batch": int,
        "max_updates": int,
        "epochs_summarizer": int,
        "epochs_corrector": int,
        "epochs_classifier": int,
    },
    "decode": {
        "beam_size": int,
        "min_length": int,
        "max_length": int,
        "length_penalty": (int, float),
        "block_trigrams": bool,
        "split": str,
    },
    "eval": {"rouge_l_mode": str, "consistency_mode": str},
}

_DEFAULTS = {
    "": {"seed": 0},
    "paths": {"corpus": "corpus", "terminology": "terminology.csv", "output_dir": "out"},
    "guidance": {"kind": "sentences", "max_len": 64, "max_sentences": 3, "term_column": "KP_Patient_Display_Name"},
    "vocab": {"min_count": 1, "max_size": 4096},
    "model": {
        "layers": 2,
        "shared_bottom_layers": 1,
        "model_dim": 64,
        "heads": 4,
        "ffn_dim": 256,
        "max_len": 1024,
        "activation": "relu",
        "float_width": 32,
    },
    "train": {
        "profile": "desk",
        "epochs_summarizer": 5,
        "epochs_corrector": 10,
        "epochs_classifier": 10,
    },
    "decode": {
        "beam_size": 6,
        "min_length": 15,
        "max_length": 200,
        "length_penalty": 1.0,
        "block_trigrams": True,
        "split": "test",
    },
    "eval": {"rouge_l_mode": "summary", "consistency_mode": "mean_probability"},
}


class RunConfig:
    def __init__(self, raw: dict, base_dir: Path):
        self.raw = raw
        self.base_dir = base_dir
        self._validate(raw)
        merged: dict[str, dict] = {}
        for section, defaults in _DEFAULTS.items():
            merged[section] = dict(defaults)
            source = raw if section == "" else raw.get(section, {})
            for key, value in source.items():
                if not isinstance(value, dict):
                    merged[section][key] = value
        self.sections = merged
        env_seed = os.environ.get("GSLB_SEED")
        if env_seed is not None:
            try:
                self.sections[""]["seed"] = int(env_seed)
            except ValueError as exc:
                raise ConfigError(f"GSLB_SEED must be an integer, got {env_seed!r}") from exc
        if self.sections["guidance"]["kind"] not in guidance.GUIDANCE_KINDS:
            raise ConfigError(f"guidance.kind must be one of {guidance.GUIDANCE_KINDS}")
        if self.sections["train"]["profile"] not in ("paper", "desk"):
            raise ConfigError("train.profile must be 'paper' or 'desk'")

    @staticmethod
    def _validate(raw: dict) -> None:
        for key, value in raw.items():
            if isinstance(value, dict):
                if key not in _SCHEMA or key == "":
                    raise ConfigError(f"unknown config section [{key}]")
                for sub, subval in value.items():
                    expected = _SCHEMA[key].get(sub)
                    if expected is None:
                        raise ConfigError(f"unknown config key {key}.{sub}")
                    if not isinstance(subval, expected) or isinstance(subval, bool) != (
                        expected is bool
                    ):
                        raise ConfigError(f"config key {key}.{sub} has the wrong type")
            else:
                expected = _SCHEMA[""].get(key)
                if expected is None:
                    raise ConfigError(f"unknown config key {key}")
                if not isinstance(value, expected):
                    raise ConfigError(f"config key {key} has the wrong type")

    @property
    def seed(self) -> int:
        return self.sections[""]["seed"]

    def path(self, name: str) -> Path:
        value = Path(self.sections["paths"][name])
        return value if value.is_absolute() else self.base_dir / value

    @property
    def output_dir(self) -> Path:
        return self.path("output_dir")

    @property
    def guidance_kind(self) -> str:
        return self.sections["guidance"]["kind"]

    def model_config(self, vocab_size: int) -> model_mod.ModelConfig:
        section = dict(self.sections["model"])
        return model_mod.ModelConfig(vocab_size=vocab_size, **section)

    def train_config(self, kind: str) -> training.TrainConfig:
        section = dict(self.sections["train"])
        profile = section.pop("profile")
        epochs = section.pop(f"epochs_{kind}")
        for other in ("epochs_summarizer", "epochs_corrector", "epochs_classifier"):
            section.pop(other, None)
        base = training.desk_profile() if profile == "desk" else training.paper_profile()
        section.setdefault("epochs", epochs)
        return replace(base, seed=self.seed, **section)

    def decode_config(self) -> decoding.DecodeConfig:
        section = dict(self.sections["decode"])
        section.pop("split")
        return decoding.DecodeConfig(**section)

    @property
    def decode_split(self) -> str:
        return self.sections["decode"]["split"]

    def resolved(self) -> dict:
        out: dict = {}
        for section, values in self.sections.items():
            if section == "":
                out.update(values)
            else:
                out[section] = dict(values)
        return out

    def config_hash(self) -> str:
        # Semantic identity of the run: everything except artifact locations.
        semantic = {k: v for k, v in self.resolved().items() if k != "paths"}
        canonical = json.dumps(semantic, sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def load_config(path: str | Path, profile: str | None = None, output_dir: str | None = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    with path.open("rb") as fh:
        raw = tomllib.load(fh)
    if profile is not None:
        raw.setdefault("train", {})["profile"] = profile
    if output_dir is not None:
        raw.setdefault("paths", {})["output_dir"] = str(Path(output_dir).resolve())
    cfg = RunConfig(raw, path.parent.resolve())
    for name in ("corpus", "terminology"):
        if not cfg.path(name).exists():
            raise ConfigError(f"configured path does not exist: {cfg.path(name)}")
    return cfg


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(f"missing {path.name}; run the '{producer}' stage first")
    return path


def _write_meta(cfg: RunConfig, stage: str) -> None:
    meta = {
        "stage": stage,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "versions": {
            "gslb": __version__,
            "numpy": np.__version__,
            "python": ".".join(str(v) for v in sys.version_info[:3]),
        },
    }
    path = cfg.output_dir / f"{stage}.meta.json"
    with path.open("w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _model_seed(cfg: RunConfig, kind: str) -> int:
    return corruption.derive_seed(cfg.seed, "model-init", kind)


def stage_lexicon_build(cfg: RunConfig) -> Path:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    raw = lexicon.load_term_list(cfg.path("terminology"), cfg.sections["guidance"]["term_column"])
    lex = lexicon.preprocess_terms(raw)
    out = cfg.output_dir / "lexicon.txt"
    lexicon.save_lexicon(lex, out)
    _write_meta(cfg, "lexicon-build")
    print(f"lexicon-build: {len(lex)} terms -> {out}")
    return out


def _load_lexicon(cfg: RunConfig) -> lexicon.Lexicon:
    return lexicon.load_lexicon(_require(cfg.output_dir / "lexicon.txt", "lexicon-build"))


def stage_guidance_extract(cfg: RunConfig) -> list[Path]:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    kind = cfg.guidance_kind
    dataset = corpus.load_dataset(cfg.path("corpus"))
    matcher = lexicon.compile_matcher(_load_lexicon(cfg)) if kind in ("terms", "sentences") else None
    outputs = []
    for split, records in dataset.splits.items():
        if kind == "oracle" and split == "test":
            # Oracle guidance peeks at references; never allowed on the test split.
            continue
        signals = []
        for rec in records:
            signals.append(
                guidance.extract_guidance(
                    kind,
                    rec.document,
                    matcher=matcher,
                    reference=rec.summary,
                    max_sentences=cfg.sections["guidance"]["max_sentences"],
                    doc_id=rec.id,
                )
            )
        out = cfg.output_dir / f"guidance_{split}.jsonl"
        guidance.write_guidance_cache(out, signals)
        outputs.append(out)
    _write_meta(cfg, "guidance-extract")
    print(f"guidance-extract: kind={kind} -> {len(outputs)} split cache(s)")
    return outputs


def stage_corrupt(cfg: RunConfig) -> None:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    dataset = corpus.load_dataset(cfg.path("corpus"))
    sets = corruption.build_corruption_dataset(dataset, cfg.seed)
    for split in ("train", "validation"):
        corruption.write_corrector_set(cfg.output_dir / f"corrector_{split}.jsonl", sets.corrector[split])
        corruption.write_classifier_set(cfg.output_dir / f"classifier_{split}.jsonl", sets.classifier[split])
    _write_meta(cfg, "corrupt")
    counts = {split: len(sets.corrector[split]) for split in ("train", "validation")}
    incorrect = sum(
        1 for split in ("train", "validation") for ex in sets.classifier[split] if ex.label == corruption.INCORRECT
    )
    correct = sum(
        1 for split in ("train", "validation") for ex in sets.classifier[split] if ex.label == corruption.CORRECT
    )
    ratio = incorrect / correct if correct else float("nan")
    print(f"corrupt: corrector examples {counts}; classifier INCORRECT/CORRECT = {ratio:.3f}")


def _load_vocab(cfg: RunConfig) -> corpus.Vocabulary:
    return corpus.load_vocabulary(_require(cfg.output_dir / "vocab.txt", "train"))


def _guidance_cache(cfg: RunConfig, split: str) -> dict[str, guidance.GuidanceSignal]:
    if cfg.guidance_kind == "none":
        return {}
    path = _require(cfg.output_dir / f"guidance_{split}.jsonl", "guidance-extract")
    return guidance.read_guidance_cache(path)


def _save_checkpoints(cfg: RunConfig, kind: str, checkpoints: list[training.Checkpoint], log: list) -> None:
    for ck in checkpoints:
        save_checkpoint(cfg.output_dir / f"ck_{kind}_{ck.epoch}.bin", ck.params)
    best = training.select_checkpoint(checkpoints)
    save_checkpoint(cfg.output_dir / f"ck_{kind}_best.bin", best.params)
    with (cfg.output_dir / f"train_{kind}.log.jsonl").open("w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry) + "\n")
    summary = {
        "kind": kind,
        "best_epoch": best.epoch,
        "best_step": best.step,
        "metric": best.metric,
        "metric_kind": best.metric_kind,
        "epochs": [
            {"epoch": ck.epoch, "step": ck.step, "metric": ck.metric} for ck in checkpoints
        ],
    }
    with (cfg.output_dir / f"train_{kind}.json").open("w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(
        f"train[{kind}]: {len(checkpoints)} epoch(s), best {best.metric_kind}="
        f"{best.metric:.4f} at epoch {best.epoch}"
    )


def stage_train(cfg: RunConfig, kind: str = "all") -> None:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    dataset = corpus.load_dataset(cfg.path("corpus"))
    vocab_path = cfg.output_dir / "vocab.txt"
    if vocab_path.exists():
        vocab = corpus.load_vocabulary(vocab_path)
    else:
        vocab = corpus.build_vocabulary(
            dataset, cfg.sections["vocab"]["min_count"], cfg.sections["vocab"]["max_size"]
        )
        corpus.save_vocabulary(vocab, vocab_path)
    model_cfg = cfg.model_config(vocab.size)
    kinds = training.MODEL_KINDS if kind == "all" else (kind,)
    decode_cfg = cfg.decode_config()
    for model_kind in kinds:
        log: list = []
        if model_kind == "summarizer":
            guided = cfg.guidance_kind != "none"
            train_guidance = _guidance_cache(cfg, "train") if guided else {}
            val_guidance = _guidance_cache(cfg, "validation") if guided else {}
            builder = model_mod.build_summarizer if guided else model_mod.build_corrector
            params = builder(model_cfg, _model_seed(cfg, "summarizer"))
            checkpoints = training.train_summarizer(
                dataset.split("train"),
                dataset.split("validation"),
                {**train_guidance, **val_guidance},
                vocab,
                model_cfg,
                params,
                cfg.train_config("summarizer"),
                decode_cfg,
                guidance_max_len=cfg.sections["guidance"]["max_len"],
                guided=guided,
                log=log,
            )
        elif model_kind == "corrector":
            train_set = corruption.read_corrector_set(
                _require(cfg.output_dir / "corrector_train.jsonl", "corrupt")
            )
            val_set = corruption.read_corrector_set(
                _require(cfg.output_dir / "corrector_validation.jsonl", "corrupt")
            )
            params = model_mod.build_corrector(model_cfg, _model_seed(cfg, "corrector"))
            checkpoints = training.train_corrector(
                train_set, val_set, vocab, model_cfg, params, cfg.train_config("corrector"), decode_cfg, log=log
            )
        else:
            train_set = corruption.read_classifier_set(
                _require(cfg.output_dir / "classifier_train.jsonl", "corrupt")
            )
            val_set = corruption.read_classifier_set(
                _require(cfg.output_dir / "classifier_validation.jsonl", "corrupt")
            )
            params = model_mod.build_classifier(model_cfg, _model_seed(cfg, "classifier"))
            checkpoints = training.train_classifier(
                train_set, val_set, vocab, model_cfg, params, cfg.train_config("classifier"), log=log
            )
        _save_checkpoints(cfg, model_kind, checkpoints, log)
    _write_meta(cfg, "train")


def _decode_records(cfg: RunConfig, split: str) -> list[corpus.CorpusRecord]:
    dataset = corpus.load_dataset(cfg.path("corpus"))
    records = dataset.split(split)
    if not records:
        raise ConfigError(f"corpus has no {split!r} split to decode")
    return records


def stage_decode(cfg: RunConfig) -> Path:
    split = cfg.decode_split
    if cfg.guidance_kind == "oracle" and split == "test":
        raise ConfigError("guidance.kind='oracle' is not allowed when decoding the test split")
    vocab = _load_vocab(cfg)
    model_cfg = cfg.model_config(vocab.size)
    params = load_checkpoint(_require(cfg.output_dir / "ck_summarizer_best.bin", "train"))
    guided = cfg.guidance_kind != "none"
    cache = _guidance_cache(cfg, split) if guided else {}
    decode_cfg = cfg.decode_config()
    records = _decode_records(cfg, split)
    out = cfg.output_dir / f"decoded_{split}.jsonl"
    with out.open("w", encoding="utf-8") as fh:
        for rec in records:
            x_ids = corpus.encode_text(rec.document, vocab, model_cfg.max_len)
            if guided:
                signal = cache.get(rec.id, guidance.empty_guidance(rec.id))
                g_ids = guidance.render_guidance(signal, vocab, cfg.sections["guidance"]["max_len"])
                enc = model_mod.encode_for_summarizer(params, model_cfg, x_ids, g_ids)
            else:
                enc = model_mod.encode_for_corrector(params, model_cfg, x_ids)
            ids = decoding.beam_search(
                decoding.summarizer_forward(params, model_cfg, enc), decode_cfg, vocab
            )
            fh.write(json.dumps({"id": rec.id, "summary": corpus.decode_ids(ids, vocab)}) + "\n")
    _write_meta(cfg, "decode")
    print(f"decode: {len(records)} records -> {out}")
    return out


def _read_summaries(path: Path) -> list[tuple[str, str]]:
    out = []
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                out.append((obj["id"], obj["summary"]))
    return out


def stage_correct(cfg: RunConfig) -> Path:
    split = cfg.decode_split
    vocab = _load_vocab(cfg)
    model_cfg = cfg.model_config(vocab.size)
    params = load_checkpoint(_require(cfg.output_dir / "ck_corrector_best.bin", "train"))
    decoded = _read_summaries(_require(cfg.output_dir / f"decoded_{split}.jsonl", "decode"))
    documents = {rec.id: rec.document for rec in _decode_records(cfg, split)}
    decode_cfg = cfg.decode_config()
    out = cfg.output_dir / f"corrected_{split}.jsonl"
    with out.open("w", encoding="utf-8") as fh:
        for rec_id, summary in decoded:
            corrected = decoding.correct_summary(
                params, model_cfg, summary, documents[rec_id], decode_cfg, vocab
            )
            revised = corpus.tokenize(corrected) != corpus.tokenize(summary)
            fh.write(json.dumps({"id": rec_id, "summary": corrected, "revised": revised}) + "\n")
    _write_meta(cfg, "correct")
    print(f"correct: {len(decoded)} records -> {out}")
    return out


def stage_evaluate(cfg: RunConfig) -> Path:
    split = cfg.decode_split
    vocab = _load_vocab(cfg)
    model_cfg = cfg.model_config(vocab.size)
    records = _decode_records(cfg, split)
    references = [(rec.id, rec.summary) for rec in records]
    documents = [(rec.id, rec.document) for rec in records]
    classifier = load_checkpoint(_require(cfg.output_dir / "ck_classifier_best.bin", "train"))

    def prob_fn(claim: str, text: str) -> float:
        return model_mod.classify_consistency(
            classifier,
            model_cfg,
            corpus.encode_text(claim, vocab),
            corpus.encode_text(text, vocab),
        )

    decoded = _read_summaries(_require(cfg.output_dir / f"decoded_{split}.jsonl", "decode"))
    reports = [
        evaluation.evaluate_system(
            decoded,
            references,
            documents,
            prob_fn,
            label="summarizer",
            guidance=cfg.guidance_kind,
            rouge_l_mode=cfg.sections["eval"]["rouge_l_mode"],
            consistency_mode=cfg.sections["eval"]["consistency_mode"],
        )
    ]
    corrected_path = cfg.output_dir / f"corrected_{split}.jsonl"
    if corrected_path.exists():
        corrected = _read_summaries(corrected_path)
        corrected_report = evaluation.evaluate_system(
            corrected,
            references,
            documents,
            prob_fn,
            label="summarizer+corrector",
            guidance=cfg.guidance_kind,
            rouge_l_mode=cfg.sections["eval"]["rouge_l_mode"],
            consistency_mode=cfg.sections["eval"]["consistency_mode"],
        )
        corrected_report.diagnostics = evaluation.correction_diagnostics(decoded, corrected)
        reports.append(corrected_report)
    out = cfg.output_dir / "report.json"
    evaluation.write_report(out, reports)
    table = evaluation.render_table(reports)
    (cfg.output_dir / "report.txt").write_text(table + "\n", encoding="utf-8")
    _write_meta(cfg, "evaluate")
    print(table)
    return out


def run_pipeline(cfg: RunConfig) -> None:
    stage_lexicon_build(cfg)
    stage_guidance_extract(cfg)
    stage_corrupt(cfg)
    stage_train(cfg, "all")
    stage_decode(cfg)
    stage_correct(cfg)
    stage_evaluate(cfg)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="gslb", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES + ("pipeline",):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="path to the TOML run configuration")
        sp.add_argument("--profile", choices=("paper", "desk"), default=None)
        sp.add_argument("--output-dir", default=None, help="override [paths].output_dir")
        if name == "train":
            sp.add_argument(
                "--kind", choices=training.MODEL_KINDS + ("all",), default="all"
            )
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, profile=args.profile, output_dir=args.output_dir)
        if args.command == "lexicon-build":
            stage_lexicon_build(cfg)
        elif args.command == "guidance-extract":
            stage_guidance_extract(cfg)
        elif args.command == "corrupt":
            stage_corrupt(cfg)
        elif args.command == "train":
            stage_train(cfg, args.kind)
        elif args.command == "decode":
            stage_decode(cfg)
        elif args.command == "correct":
            stage_correct(cfg)
        elif args.command == "evaluate":
            stage_evaluate(cfg)
        else:
            run_pipeline(cfg)
    except (ConfigError, MissingArtifactError, corpus.CorpusError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
