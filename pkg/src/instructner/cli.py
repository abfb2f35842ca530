"""Command-line entry point: ``instructner <command> [options]``.

Settings come from three layers, later ones winning: built-in defaults, the
YAML/JSON file given with ``--config``, then explicit flags. Every artifact a
command writes lands under ``--out`` and records the seed, the hash of the
merged configuration and the instruction template version.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import yaml

from . import __version__, plots
from .corpus import SPLITS, DatasetSpec, LabeledSentence, corpus_stats, load_registry, load_split
from .dbr import DBRLimits, Synthesizer, dbr_stats, random_dbr, read_dbr_jsonl, write_dbr_jsonl
from .errors import ContractError, ValidationError
from .evaluation import (
    EvalReport,
    check_versions,
    error_report,
    evaluate_sentences,
    predict_sentences,
    prediction_spans,
    render_error_report,
    render_table,
    report_records,
)
from .instructions import DEFAULT_TEMPLATE, WhitespaceTokenizer, build_instruction
from .knowledge import CharNgramEncoder, build_index, load_index, load_kb, save_index
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .phrasemine import ExtractorConfig, NgramPhraseExtractor, NgramStats
from .training import DBR_MODES, TrainPlan, train, write_log

log = logging.getLogger("instructner")

PATH_KEYS = ("registry", "kb", "index", "dbr", "checkpoint", "input")
FREE_MAPPINGS = ("reference",)  # user-keyed, merged as a whole


def _defaults() -> dict[str, Any]:
    ext = ExtractorConfig()
    plan = TrainPlan(datasets=())
    model = ModelConfig().to_dict()
    model.pop("seed")
    return {
        "seed": 0,
        "out": "out",
        "registry": None,
        "kb": None,
        "index": None,
        "dbr": None,
        "checkpoint": None,
        "input": None,
        "encoder": {"dim": 512, "ngram_sizes": [3, 4], "word_weight": 1.0},
        "extractor": {"max_phrase_len": ext.max_phrase_len,
                      "max_queries_per_sentence": ext.max_queries_per_sentence,
                      "min_count": ext.min_count},
        "retrieval": {"k": 5},
        "dbr_limits": {"max_positive": 10, "max_negative": 5, "max_tokens": None},
        "model": model,
        "train": {"include_dbr": plan.include_dbr, "epochs": plan.epochs,
                  "batch_size": plan.batch_size, "learning_rate": plan.learning_rate,
                  "weight_decay": plan.weight_decay},
        "evaluate": {"split": "test", "mode": "named", "reference": {}, "error_limit": 50},
        "predict": {"entity_type": None, "dataset_name": None, "mode": "type_only"},
    }


def _merge(base: dict, update: dict, where: str = "") -> dict:
    """Recursive merge that rejects keys the defaults do not know."""
    out = copy.deepcopy(base)
    for key, value in update.items():
        name = where + str(key)
        if key not in out:
            raise ValidationError(f"unknown config key {name!r}")
        if isinstance(out[key], dict) and key not in FREE_MAPPINGS and isinstance(value, dict):
            out[key] = _merge(out[key], value, name + ".")
        else:
            out[key] = value
    return out


def _set_dotted(data: dict, dotted: str, value) -> None:
    *parents, leaf = dotted.split(".")
    node = data
    for p in parents:
        node = node[p]
    node[leaf] = value


@dataclass
class RunConfig:
    """Merged view of every setting a command may need."""

    data: dict = field(default_factory=_defaults)

    @classmethod
    def build(cls, config_path: str | None = None,
              overrides: dict[str, Any] | None = None) -> "RunConfig":
        data = _defaults()
        if config_path:
            p = Path(config_path)
            if not p.exists():
                raise ValidationError(f"config file not found: {p}")
            try:
                loaded = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
            except yaml.YAMLError as exc:
                raise ValidationError(f"cannot parse config {p}: {exc}") from exc
            if not isinstance(loaded, dict):
                raise ValidationError(f"config {p} must be a mapping")
            for key in PATH_KEYS:
                if loaded.get(key) and not Path(loaded[key]).is_absolute():
                    loaded[key] = str(p.parent / loaded[key])
            data = _merge(data, loaded)
        for dotted, value in (overrides or {}).items():
            if value is not None:
                _set_dotted(data, dotted, value)
        return cls(data)

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def out(self) -> Path:
        return Path(self.data["out"])

    def config_hash(self) -> str:
        hashed = {k: v for k, v in self.data.items() if k != "out"}
        blob = json.dumps(hashed, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def meta(self, command: str) -> dict:
        return {"command": command, "seed": self.seed, "config_hash": self.config_hash(),
                "template_version": DEFAULT_TEMPLATE.version, "version": __version__}

    def path(self, key: str, required: bool = True) -> Path | None:
        value = self.data.get(key)
        if not value:
            if required:
                raise ValidationError(f"missing required setting {key!r} (--{key})")
            return None
        p = Path(value)
        if not p.exists():
            raise ValidationError(f"{key} not found: {p}")
        return p

    def encoder(self) -> CharNgramEncoder:
        e = self.data["encoder"]
        return CharNgramEncoder(int(e["dim"]), tuple(int(n) for n in e["ngram_sizes"]),
                                float(e["word_weight"]))

    def extractor_config(self) -> ExtractorConfig:
        return ExtractorConfig(**{k: int(v) for k, v in self.data["extractor"].items()})

    def model_config(self) -> ModelConfig:
        try:
            return ModelConfig.from_dict({**self.data["model"], "seed": self.seed})
        except (TypeError, ContractError) as exc:
            raise ValidationError(f"invalid model config: {exc}") from exc

    def plan(self, datasets: Sequence[DatasetSpec]) -> TrainPlan:
        t = self.data["train"]
        try:
            return TrainPlan(tuple(datasets), t["include_dbr"], int(t["epochs"]),
                             int(t["batch_size"]), float(t["learning_rate"]),
                             float(t["weight_decay"]), self.seed)
        except ContractError as exc:
            raise ValidationError(str(exc)) from exc


# -- output helpers ---------------------------------------------------------

def _out_dir(cfg: RunConfig) -> Path:
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    return out


def _meta_comment(meta: dict) -> str:
    return "# " + " ".join(f"{k}={meta[k]}" for k in sorted(meta)) + "\n"


def _write_tsv(path: Path, header: Sequence[str], rows: Sequence[Sequence], meta: dict) -> Path:
    def cell(v):
        return f"{v:.6f}" if isinstance(v, float) else str(v)

    lines = ["\t".join(header)] + ["\t".join(cell(v) for v in r) for r in rows]
    path.write_text(_meta_comment(meta) + "\n".join(lines) + "\n", encoding="utf-8")
    return path


def _write_jsonl(path: Path, records: Sequence[dict], meta: dict) -> Path:
    lines = [json.dumps({"record": "meta", **meta}, sort_keys=True)]
    lines += [json.dumps(r, sort_keys=True, ensure_ascii=False) for r in records]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _load_splits(registry: dict[str, DatasetSpec], split: str,
                 lenient: bool = False) -> dict[str, list[LabeledSentence]]:
    return {name: load_split(spec, split, lenient) for name, spec in registry.items()
            if split in spec.split_paths}


# -- commands ---------------------------------------------------------------

def cmd_prepare(cfg: RunConfig, lenient: bool = False) -> int:
    registry = load_registry(cfg.path("registry"))
    problems: list[str] = []
    rows = []
    blocks = []
    for name, spec in registry.items():
        block = [f"== {name} ({spec.entity_type})",
                 f"{'split':<6}{'sentences':>11}{'entities':>10}{'ent/sent':>10}{'tok/sent':>10}"]
        for split in SPLITS:
            if split not in spec.split_paths:
                continue
            try:
                sents = load_split(spec, split, lenient)
            except ValidationError as exc:
                problems.append(f"{name}/{split}: {exc}")
                continue
            st = corpus_stats(sents)
            rows.append((name, spec.entity_type, split, st.sentence_count, st.entity_count,
                         st.avg_entities_per_sentence, st.avg_tokens_per_sentence))
            block.append(f"{split:<6}{st.sentence_count:>11}{st.entity_count:>10}"
                         f"{st.avg_entities_per_sentence:>10.3f}"
                         f"{st.avg_tokens_per_sentence:>10.2f}")
        blocks.append("\n".join(block))
    if problems:
        for p in problems:
            print(f"error: {p}", file=sys.stderr)
        return 1
    print("\n\n".join(blocks))
    out = _out_dir(cfg)
    _write_tsv(out / "corpus_stats.tsv",
               ("dataset", "entity_type", "split", "sentences", "entities",
                "avg_entities_per_sentence", "avg_tokens_per_sentence"),
               rows, cfg.meta("prepare"))
    return 0


def cmd_index(cfg: RunConfig) -> int:
    kb = load_kb(cfg.path("kb"))
    encoder = cfg.encoder()
    index = build_index(kb, encoder)
    out = _out_dir(cfg) / "index.blob"
    save_index(out, index, {**cfg.meta("index"), "kb_size": len(kb)})
    print(f"indexed {len(kb)} entries with {encoder.encoder_id} -> {out}")
    return 0


def _synthesis_inputs(cfg: RunConfig):
    registry = load_registry(cfg.path("registry"))
    kb = load_kb(cfg.path("kb"))
    encoder = cfg.encoder()
    index_path = cfg.path("index", required=False)
    if index_path is not None:
        index = load_index(index_path, encoder.encoder_id)
        if len(index) != len(kb):
            raise ValidationError(f"index has {len(index)} rows but KB has {len(kb)} entries")
    else:
        index = build_index(kb, encoder)
    return registry, kb, index, encoder


def cmd_synthesize(cfg: RunConfig) -> int:
    registry, kb, index, encoder = _synthesis_inputs(cfg)
    train_sets = _load_splits(registry, "train")
    if not train_sets:
        raise ValidationError("no dataset in the registry has a train split")
    ext_cfg = cfg.extractor_config()
    stats = NgramStats((s.tokens for sents in train_sets.values() for s in sents),
                       max_n=ext_cfg.max_phrase_len)
    lim = cfg["dbr_limits"]
    synth = Synthesizer(index, kb, NgramPhraseExtractor(stats, ext_cfg), int(cfg["retrieval"]["k"]),
                        DBRLimits(int(lim["max_positive"]), int(lim["max_negative"])),
                        ext_cfg, encoder, lim["max_tokens"])
    items = [(f"{name}:train:{i}", s.tokens, registry[name].entity_type)
             for name, sents in train_sets.items() for i, s in enumerate(sents)]
    curated = synth.synthesize(items, cfg.seed)
    if not curated:
        raise ValidationError("synthesis produced no samples")
    control = random_dbr(curated, kb, cfg.seed, lim["max_tokens"])
    out = _out_dir(cfg)
    meta = cfg.meta("synthesize")
    write_dbr_jsonl(out / "dbr.jsonl", curated, {**meta, "kind": "curated"})
    write_dbr_jsonl(out / "dbr_random.jsonl", control, {**meta, "kind": "random"})
    rows = []
    for kind, samples in (("curated", curated), ("random", control)):
        st = dbr_stats(samples)
        rows.append((kind, st.sample_count, st.avg_positive, st.avg_negative, st.avg_token_len))
        print(f"{kind:<8} samples={st.sample_count} avg_positive={st.avg_positive:.3f} "
              f"avg_negative={st.avg_negative:.3f} avg_tokens={st.avg_token_len:.2f}")
    _write_tsv(out / "dbr_stats.tsv",
               ("kind", "samples", "avg_positive", "avg_negative", "avg_tokens"), rows, meta)
    return 0


def _dbr_for_plan(cfg: RunConfig, plan: TrainPlan):
    if plan.include_dbr == "off":
        return []
    meta, samples = read_dbr_jsonl(cfg.path("dbr"))
    kind = meta.get("kind")
    if kind is not None and kind != plan.include_dbr:
        raise ValidationError(
            f"train.include_dbr={plan.include_dbr!r} but the DBR file holds {kind!r} samples"
        )
    return samples


def cmd_train(cfg: RunConfig) -> int:
    registry = load_registry(cfg.path("registry"))
    corpora = _load_splits(registry, "train")
    dev = _load_splits(registry, "dev")
    plan = cfg.plan([registry[n] for n in corpora])
    model_cfg = cfg.model_config()
    samples = _dbr_for_plan(cfg, plan)
    out = _out_dir(cfg)

    def progress(rec):
        f1 = "-" if rec.macro_f1 is None else f"{rec.macro_f1:.4f}"
        print(f"epoch {rec.epoch:>3}  loss {rec.loss_sum:.4f}  dev macro F1 {f1}", flush=True)

    t0 = time.perf_counter()
    result = train(plan, model_cfg, corpora, dev, samples,
                   WhitespaceTokenizer(model_cfg.vocab_size), on_epoch=progress)
    meta = cfg.meta("train")
    result.checkpoint.meta.update(meta)
    save_checkpoint(out / "checkpoint.blob", result.checkpoint)
    write_log(out / "train_log.jsonl", result.log, meta)
    names = list(dev)
    rows = [(e.epoch, e.loss_sum, *(e.dev_f1.get(n, 0.0) for n in names),
             e.macro_f1 if e.macro_f1 is not None else "")
            for e in result.log.epochs]
    _write_tsv(out / "dev_f1.tsv", ("epoch", "loss", *names, "macro_f1"), rows, meta)
    if dev:
        curves = {n: [e.dev_f1[n] for e in result.log.epochs] for n in names}
        plots.dev_curves(curves, out / "dev_f1.png")
    log.info("training took %.1fs", time.perf_counter() - t0)
    print(f"best epoch {result.log.best_epoch} -> {out / 'checkpoint.blob'}")
    return 0


def _read_sentences(path: Path) -> list[list[str]]:
    """Plain text (one tokenised sentence per line) or CoNLL (first column)."""
    text = path.read_text(encoding="utf-8")
    if path.suffix in (".conll", ".tsv", ".iob"):
        out, cur = [], []
        for line in text.splitlines():
            if not line.strip():
                if cur:
                    out.append(cur)
                cur = []
            elif not line.startswith("-DOCSTART-"):
                cur.append(line.split()[0])
        if cur:
            out.append(cur)
        return out
    return [line.split() for line in text.splitlines() if line.strip()]


def cmd_predict(cfg: RunConfig) -> int:
    p = cfg["predict"]
    if not p["entity_type"]:
        raise ValidationError("predict needs an entity type (--entity-type)")
    mode = p["mode"]
    if mode == "named" and not p["dataset_name"]:
        raise ValidationError("mode 'named' needs --dataset-name")
    ckpt = load_checkpoint(cfg.path("checkpoint"))
    tokenizer = WhitespaceTokenizer(ckpt.config.vocab_size)
    check_versions(ckpt, DEFAULT_TEMPLATE, tokenizer)
    sentences = _read_sentences(cfg.path("input"))
    if not sentences:
        raise ValidationError("input file holds no sentences")
    instruction = build_instruction(DEFAULT_TEMPLATE, p["entity_type"],
                                    p["dataset_name"] if mode == "named" else None)
    tags = predict_sentences(ckpt.model, sentences, instruction, tokenizer)
    spans = prediction_spans(tags, sentences)
    records, rows = [], []
    for i, (toks, tg, sp) in enumerate(zip(sentences, tags, spans)):
        records.append({"record": "sentence", "index": i, "tokens": toks, "tags": tg,
                        "spans": [{"start": s.start, "end": s.end, "text": s.surface}
                                  for s in sp]})
        rows += [(i, s.start, s.end, s.surface, p["entity_type"]) for s in sp]
    out = _out_dir(cfg)
    meta = cfg.meta("predict")
    _write_jsonl(out / "predictions.jsonl", records, meta)
    _write_tsv(out / "predictions.tsv", ("sentence", "start", "end", "text", "entity_type"),
               rows, meta)
    print(f"{len(rows)} spans in {len(sentences)} sentences -> {out / 'predictions.jsonl'}")
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    ev = cfg["evaluate"]
    split, mode = ev["split"], ev["mode"]
    if split not in SPLITS:
        raise ValidationError(f"split must be one of {SPLITS}")
    registry = load_registry(cfg.path("registry"))
    ckpt = load_checkpoint(cfg.path("checkpoint"))
    tokenizer = WhitespaceTokenizer(ckpt.config.vocab_size)
    check_versions(ckpt, DEFAULT_TEMPLATE, tokenizer)
    data = _load_splits(registry, split)
    if not data:
        raise ValidationError(f"no dataset in the registry has a {split!r} split")
    report = EvalReport(mode=mode, split=split)
    errors_text = []
    for name, sents in data.items():
        report.datasets[name], tags = evaluate_sentences(ckpt.model, registry[name], sents,
                                                         mode, DEFAULT_TEMPLATE, tokenizer)
        cases = error_report(prediction_spans(tags, [s.tokens for s in sents]),
                             [s.spans() for s in sents], [s.tokens for s in sents],
                             limit=int(ev["error_limit"]))
        errors_text.append(f"##### {name}\n" + render_error_report(cases))
    out = _out_dir(cfg)
    meta = cfg.meta("evaluate")
    stem = f"eval_{split}_{mode}"
    table = render_table(report, ev["reference"] or None)
    (out / f"{stem}.txt").write_text(_meta_comment(meta) + table, encoding="utf-8")
    (out / f"{stem}.jsonl").write_text(
        "\n".join([json.dumps({"record": "meta", **meta}, sort_keys=True)]
                  + report_records(report)) + "\n", encoding="utf-8")
    _write_tsv(out / f"{stem}.tsv",
               ("dataset", "precision", "recall", "f1", "tp", "fp", "fn"),
               [(n, s.precision, s.recall, s.f1, s.true_positive, s.false_positive,
                 s.false_negative) for n, s in report.datasets.items()], meta)
    (out / f"{stem}_errors.txt").write_text(_meta_comment(meta) + "\n".join(errors_text),
                                            encoding="utf-8")
    plots.score_bars({n: (s.precision, s.recall, s.f1) for n, s in report.datasets.items()},
                     out / f"{stem}.png")
    print(table, end="")
    return 0


def cmd_stats(cfg: RunConfig) -> int:
    registry = load_registry(cfg.path("registry"))
    _, samples = read_dbr_jsonl(cfg.path("dbr"))
    train_sets = _load_splits(registry, "train")
    by_dataset: dict[str, list] = {}
    for s in samples:
        by_dataset.setdefault(s.source_sentence_id.split(":", 1)[0], []).append(s)
    rows = []
    for name, sents in train_sets.items():
        if name not in by_dataset:
            continue
        cs, ds = corpus_stats(sents), dbr_stats(by_dataset[name])
        rows.append((name, cs.avg_entities_per_sentence, ds.avg_positive, ds.avg_negative,
                     cs.avg_tokens_per_sentence, ds.avg_token_len))
    if not rows:
        raise ValidationError("DBR file shares no dataset with the registry")
    out = _out_dir(cfg)
    header = ("dataset", "avg_entities_original", "avg_positive_dbr", "avg_negative_dbr",
              "avg_tokens_original", "avg_tokens_dbr")
    _write_tsv(out / "stats.tsv", header, rows, cfg.meta("stats"))
    names = [r[0] for r in rows]
    plots.entity_density(names, [r[1] for r in rows], [r[2] for r in rows],
                         out / "entity_density.png")
    plots.token_length(names, [r[4] for r in rows], [r[5] for r in rows],
                       out / "token_length.png")
    print(f"{'dataset':<12}{'ent/orig':>10}{'pos/DBR':>10}{'neg/DBR':>10}"
          f"{'tok/orig':>10}{'tok/DBR':>10}")
    for r in rows:
        print(f"{r[0]:<12}" + "".join(f"{v:>10.3f}" for v in r[1:]))
    return 0


def cmd_make_fixtures(cfg: RunConfig) -> int:
    from .fixtures import write_fixture_world

    reg = write_fixture_world(_out_dir(cfg), seed=cfg.seed + 13)
    print(f"fixture world written; registry at {reg}")
    return 0


# -- argument parsing -------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", dest="seed", type=int, default=None)
    p.add_argument("--config", dest="_config", default=None, help="YAML or JSON settings file")
    p.add_argument("--out", dest="out", default=None, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="instructner", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", help="validate the registry's corpora and print statistics")
    _common(p)
    p.add_argument("--registry", dest="registry")
    p.add_argument("--lenient", action="store_true", help="repair IOB violations instead of failing")

    p = sub.add_parser("index", help="embed a knowledge base into a vector index")
    _common(p)
    p.add_argument("--kb", dest="kb")
    p.add_argument("--encoder-dim", dest="encoder.dim", type=int)

    p = sub.add_parser("synthesize", help="build curated and random dense entity samples")
    _common(p)
    for flag in ("registry", "kb", "index"):
        p.add_argument(f"--{flag}", dest=flag)
    p.add_argument("--k", dest="retrieval.k", type=int)
    p.add_argument("--max-positive", dest="dbr_limits.max_positive", type=int)
    p.add_argument("--max-negative", dest="dbr_limits.max_negative", type=int)
    p.add_argument("--max-tokens", dest="dbr_limits.max_tokens", type=int)

    p = sub.add_parser("train", help="instruction-tune the tagger")
    _common(p)
    p.add_argument("--registry", dest="registry")
    p.add_argument("--dbr", dest="dbr")
    p.add_argument("--include-dbr", dest="train.include_dbr", choices=DBR_MODES)
    p.add_argument("--epochs", dest="train.epochs", type=int)
    p.add_argument("--batch-size", dest="train.batch_size", type=int)
    p.add_argument("--lr", dest="train.learning_rate", type=float)
    p.add_argument("--mask-mode", dest="model.mask_mode", choices=("causal", "full"))
    p.add_argument("--full-finetune", action="store_true",
                   help="train every weight instead of low-rank adapters")

    p = sub.add_parser("predict", help="tag raw sentences with a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", dest="checkpoint")
    p.add_argument("--input", dest="input")
    p.add_argument("--entity-type", dest="predict.entity_type")
    p.add_argument("--dataset-name", dest="predict.dataset_name")
    p.add_argument("--mode", dest="predict.mode", choices=("named", "type_only"))

    p = sub.add_parser("evaluate", help="entity-level P/R/F1 of a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", dest="checkpoint")
    p.add_argument("--registry", dest="registry")
    p.add_argument("--split", dest="evaluate.split", choices=SPLITS)
    p.add_argument("--mode", dest="evaluate.mode", choices=("named", "type_only"))

    p = sub.add_parser("stats", help="entity density and length of original vs dense samples")
    _common(p)
    p.add_argument("--registry", dest="registry")
    p.add_argument("--dbr", dest="dbr")

    p = sub.add_parser("make-fixtures", help="write a synthetic KB, corpora and registry")
    _common(p)
    return parser


COMMANDS = {
    "prepare": cmd_prepare,
    "index": cmd_index,
    "synthesize": cmd_synthesize,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "stats": cmd_stats,
    "make-fixtures": cmd_make_fixtures,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    opts = vars(args)
    overrides = {k: v for k, v in opts.items()
                 if k in ("seed", "out", *PATH_KEYS) or "." in k}
    try:
        cfg = RunConfig.build(opts.get("_config"), overrides)
        if opts.get("full_finetune"):
            cfg.data["model"]["adapter"] = None
        if args.command == "prepare":
            return cmd_prepare(cfg, lenient=args.lenient)
        return COMMANDS[args.command](cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
