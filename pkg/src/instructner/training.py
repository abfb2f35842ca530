"""Joint instruction tuning over several datasets plus their dense samples.

Every epoch visits each original sentence once (dataset-named instruction)
and each dense entity sample once (type-only instruction), in one globally
shuffled stream. The batch objective is the mean over samples of each
sample's token-mean cross-entropy, so the epoch loss is the sum of
per-sample losses.
"""

from __future__ import annotations

import copy
import json
import logging
import math
import random
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import torch

from .corpus import DatasetSpec, LabeledSentence
from .dbr import DBRSample, sentence_seed
from .errors import ContractError, TrainingError
from .evaluation import evaluate_sentences
from .instructions import (
    DEFAULT_TEMPLATE,
    InstructionTemplate,
    Tokenizer,
    TokenizedSample,
    WhitespaceTokenizer,
    build_instruction,
    compose_input,
)
from .model import Checkpoint, ModelConfig, Tagger, batch_loss, build_model, trainable_parameters

log = logging.getLogger(__name__)

DBR_MODES = ("curated", "random", "off")


@dataclass(frozen=True)
class TrainPlan:
    datasets: tuple[DatasetSpec, ...]
    include_dbr: str = "curated"
    epochs: int = 20
    batch_size: int = 8
    learning_rate: float = 2e-4
    weight_decay: float = 0.01
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "datasets", tuple(self.datasets))
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractError("epochs and batch_size must be >= 1")
        if self.include_dbr not in DBR_MODES:
            raise ContractError(f"include_dbr must be one of {DBR_MODES}")
        names = [d.name for d in self.datasets]
        if len(set(names)) != len(names):
            raise ContractError(f"duplicate dataset names in plan: {names}")


@dataclass(frozen=True)
class StreamItem:
    sample_id: str
    dataset: str
    kind: str  # "orig" | "dbr"
    tokens: tuple[str, ...]
    tags: tuple[str, ...]
    instruction: str


def dataset_of(sample_id: str) -> str:
    return sample_id.split(":", 1)[0]


def build_items(plan: TrainPlan, corpora: dict[str, Sequence[LabeledSentence]],
                dbr_samples: Sequence[DBRSample] = (),
                template: InstructionTemplate = DEFAULT_TEMPLATE) -> list[StreamItem]:
    """Unshuffled union of original and dense items, in dataset order."""
    specs = {d.name: d for d in plan.datasets}
    items = []
    for spec in plan.datasets:
        sentences = corpora.get(spec.name)
        if not sentences:
            raise ContractError(f"dataset {spec.name!r} has no training sentences")
        instr = build_instruction(template, spec.entity_type, spec.name)
        for i, s in enumerate(sentences):
            items.append(StreamItem(f"{spec.name}:train:{i}", spec.name, "orig",
                                    s.tokens, s.tags, instr))
    if plan.include_dbr != "off":
        for d in dbr_samples:
            name = dataset_of(d.source_sentence_id)
            if name not in specs:
                continue
            instr = build_instruction(template, d.target_type)
            items.append(StreamItem(f"{d.source_sentence_id}:dbr", name, "dbr",
                                    d.tokens, d.tags, instr))
    return items


def build_stream(plan: TrainPlan, corpora: dict[str, Sequence[LabeledSentence]],
                 dbr_samples: Sequence[DBRSample], rng: random.Random | int,
                 template: InstructionTemplate = DEFAULT_TEMPLATE) -> list[StreamItem]:
    """One epoch: every original and paired dense sample once, shuffled by ``rng``."""
    if not isinstance(rng, random.Random):
        rng = random.Random(rng)
    items = build_items(plan, corpora, dbr_samples, template)
    rng.shuffle(items)
    return items


def epoch_rng(seed: int, epoch: int) -> random.Random:
    return random.Random(sentence_seed(seed, f"epoch:{epoch}"))


@dataclass
class EpochRecord:
    epoch: int
    loss_sum: float
    n_samples: int
    dev_f1: dict[str, float]
    macro_f1: float | None


@dataclass
class TrainLog:
    step_losses: list[float] = field(default_factory=list)
    epochs: list[EpochRecord] = field(default_factory=list)
    wall_clock: list[float] = field(default_factory=list)
    best_epoch: int | None = None

    def records(self) -> list[dict]:
        """Deterministic records; wall-clock times are kept out on purpose."""
        out = [{"record": "epoch", **asdict(e)} for e in self.epochs]
        out.append({"record": "summary", "best_epoch": self.best_epoch,
                    "steps": len(self.step_losses)})
        return out

    def epochs_to_reach(self, threshold: float) -> float:
        for e in self.epochs:
            if e.macro_f1 is not None and e.macro_f1 >= threshold:
                return e.epoch
        return math.inf


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    final_model: Tagger
    log: TrainLog


class _Tokenized:
    def __init__(self, tokenizer: Tokenizer, max_input_len: int):
        self.tokenizer = tokenizer
        self.max_input_len = max_input_len
        self.cache: dict[str, TokenizedSample] = {}

    def __call__(self, item: StreamItem) -> TokenizedSample:
        s = self.cache.get(item.sample_id)
        if s is None:
            s = compose_input(item.instruction, item.tokens, self.tokenizer, item.tags,
                              self.max_input_len, item.sample_id)
            self.cache[item.sample_id] = s
        return s


def train(plan: TrainPlan, config: ModelConfig,
          corpora: dict[str, Sequence[LabeledSentence]],
          dev: dict[str, Sequence[LabeledSentence]] | None = None,
          dbr_samples: Sequence[DBRSample] = (),
          tokenizer: Tokenizer | None = None,
          template: InstructionTemplate = DEFAULT_TEMPLATE,
          dtype: torch.dtype = torch.float32,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Train and return the best-dev checkpoint (macro entity F1; final model if no dev)."""
    tokenizer = tokenizer or WhitespaceTokenizer(config.vocab_size)
    if tokenizer.vocab_size != config.vocab_size:
        raise ContractError("tokenizer and model disagree on vocab_size")
    torch.use_deterministic_algorithms(True)
    model = build_model(config, dtype)
    model.train()
    params = [p for _, p in trainable_parameters(model)]
    opt = torch.optim.AdamW(params, lr=plan.learning_rate, weight_decay=plan.weight_decay)
    tok = _Tokenized(tokenizer, config.max_input_len)
    specs = {d.name: d for d in plan.datasets}
    dev = {k: v for k, v in (dev or {}).items() if k in specs and v}

    log_ = TrainLog()
    best_state, best_f1 = None, -math.inf
    step = 0
    for epoch in range(1, plan.epochs + 1):
        t0 = time.perf_counter()
        stream = build_stream(plan, corpora, dbr_samples, epoch_rng(plan.seed, epoch), template)
        loss_sum = 0.0
        for b in range(0, len(stream), plan.batch_size):
            batch = [tok(it) for it in stream[b:b + plan.batch_size]]
            objective, per_sample = batch_loss(model, batch)
            if not torch.isfinite(objective):
                bad = next((s.sample_id for s, v in zip(batch, per_sample)
                            if not torch.isfinite(v)), batch[0].sample_id)
                raise TrainingError("non-finite loss", step, bad)
            opt.zero_grad(set_to_none=True)
            objective.backward()
            opt.step()
            step += 1
            log_.step_losses.append(float(objective.detach()))
            loss_sum += float(per_sample.detach().sum())

        dev_f1: dict[str, float] = {}
        if dev:
            for name, sents in dev.items():
                scores, _ = evaluate_sentences(model, specs[name], sents, "named",
                                               template, tokenizer)
                dev_f1[name] = scores.f1
            model.train()
        macro = sum(dev_f1.values()) / len(dev_f1) if dev_f1 else None
        rec = EpochRecord(epoch, loss_sum, len(stream), dev_f1, macro)
        log_.epochs.append(rec)
        log_.wall_clock.append(time.perf_counter() - t0)
        log.info("epoch %d loss=%.4f macro_f1=%s", epoch, loss_sum, macro)
        if on_epoch is not None:
            on_epoch(rec)
        if macro is not None and macro > best_f1:
            best_f1 = macro
            best_state = copy.deepcopy(model.state_dict())
            log_.best_epoch = epoch

    final = model
    best = build_model(config, dtype)
    best.load_state_dict(best_state if best_state is not None else model.state_dict())
    if best_state is None:
        log_.best_epoch = plan.epochs
    best.eval()
    meta = {"train_seed": plan.seed, "best_epoch": log_.best_epoch,
            "include_dbr": plan.include_dbr,
            "datasets": {d.name: d.entity_type for d in plan.datasets}}
    return TrainResult(Checkpoint(best, template.version, tokenizer.tokenizer_id, meta),
                       final, log_)


def write_log(path, log_: TrainLog, meta: dict | None = None) -> None:
    lines = []
    if meta is not None:
        lines.append(json.dumps({"record": "meta", **meta}, sort_keys=True))
    lines += [json.dumps(r, sort_keys=True) for r in log_.records()]
    lines += [json.dumps({"record": "step", "step": i + 1, "loss": v}, sort_keys=True)
              for i, v in enumerate(log_.step_losses)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
