"""Entity-level exact-match scoring, model evaluation and error inspection."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import torch

from .corpus import DatasetSpec, EntitySpan, LabeledSentence, decode_spans
from .errors import ContractError, VersionMismatchError
from .instructions import (
    DEFAULT_TEMPLATE,
    InstructionTemplate,
    Tokenizer,
    WhitespaceTokenizer,
    build_instruction,
    compose_input,
)
from .model import Checkpoint, Tagger, predict_batch

MODES = ("named", "type_only")
ERROR_CLASSES = ("boundary", "false_recall", "miss", "type-n/a")


def _bounds(span) -> tuple[int, int]:
    if isinstance(span, EntitySpan):
        return span.start, span.end
    return int(span[0]), int(span[1])


@dataclass(frozen=True)
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0


def score(predicted: Sequence[Iterable], gold: Sequence[Iterable]) -> Counts:
    """Exact-boundary matching, per sentence, as multisets."""
    if len(predicted) != len(gold):
        raise ContractError(f"{len(predicted)} predicted vs {len(gold)} gold sentences")
    total = Counts()
    for p, g in zip(predicted, gold):
        pc = Counter(_bounds(s) for s in p)
        gc = Counter(_bounds(s) for s in g)
        tp = sum((pc & gc).values())
        total += Counts(tp, sum(pc.values()) - tp, sum(gc.values()) - tp)
    return total


@dataclass(frozen=True)
class DatasetScores:
    precision: float
    recall: float
    f1: float
    true_positive: int
    false_positive: int
    false_negative: int

    @classmethod
    def from_counts(cls, c: Counts) -> "DatasetScores":
        return cls(c.precision, c.recall, c.f1, c.tp, c.fp, c.fn)

    @property
    def counts(self) -> Counts:
        return Counts(self.true_positive, self.false_positive, self.false_negative)


@dataclass
class EvalReport:
    datasets: dict[str, DatasetScores] = field(default_factory=dict)
    mode: str = "named"
    split: str = "test"

    @property
    def micro(self) -> DatasetScores:
        total = Counts()
        for s in self.datasets.values():
            total += s.counts
        return DatasetScores.from_counts(total)

    @property
    def macro(self) -> tuple[float, float, float]:
        if not self.datasets:
            return (0.0, 0.0, 0.0)
        n = len(self.datasets)
        vals = self.datasets.values()
        return (sum(s.precision for s in vals) / n, sum(s.recall for s in vals) / n,
                sum(s.f1 for s in vals) / n)

    def avg_f1_diff(self, reference: dict[str, float]) -> float | None:
        """Mean of (f1 - reference f1) over datasets present in both, in F1 points x100."""
        common = [n for n in self.datasets if n in reference]
        if not common:
            return None
        return sum(100 * self.datasets[n].f1 - reference[n] for n in common) / len(common)


def prediction_spans(tags_per_sentence: Sequence[Sequence[str]],
                     sentences: Sequence[Sequence[str]]) -> list[list[EntitySpan]]:
    return [decode_spans(t, s) for t, s in zip(tags_per_sentence, sentences)]


def predict_sentences(model: Tagger, sentences: Sequence[Sequence[str]], instruction: str,
                      tokenizer: Tokenizer, batch_size: int = 32) -> list[list[str]]:
    """Tag every sentence; words lost to truncation are tagged O."""
    was_training = model.training
    model.eval()
    out: list[list[str]] = []
    for i in range(0, len(sentences), batch_size):
        chunk = sentences[i:i + batch_size]
        samples = [compose_input(instruction, toks, tokenizer,
                                 max_input_len=model.cfg.max_input_len) for toks in chunk]
        for toks, tags in zip(chunk, predict_batch(model, samples)):
            out.append(tags + ["O"] * (len(toks) - len(tags)))
    model.train(was_training)
    return out


def instruction_for(spec: DatasetSpec, mode: str, template: InstructionTemplate) -> str:
    if mode not in MODES:
        raise ContractError(f"mode must be one of {MODES}")
    return build_instruction(template, spec.entity_type,
                             spec.name if mode == "named" else None)


def check_versions(ckpt: Checkpoint, template: InstructionTemplate, tokenizer: Tokenizer):
    if ckpt.template_version != template.version:
        raise VersionMismatchError(
            f"checkpoint template {ckpt.template_version!r} != {template.version!r}"
        )
    if ckpt.tokenizer_id != tokenizer.tokenizer_id:
        raise VersionMismatchError(
            f"checkpoint tokenizer {ckpt.tokenizer_id!r} != {tokenizer.tokenizer_id!r}"
        )


def evaluate_sentences(model: Tagger, spec: DatasetSpec, sentences: Sequence[LabeledSentence],
                       mode: str = "named", template: InstructionTemplate = DEFAULT_TEMPLATE,
                       tokenizer: Tokenizer = WhitespaceTokenizer(),
                       ) -> tuple[DatasetScores, list[list[str]]]:
    instruction = instruction_for(spec, mode, template)
    with torch.no_grad():
        tags = predict_sentences(model, [s.tokens for s in sentences], instruction, tokenizer)
    pred = prediction_spans(tags, [s.tokens for s in sentences])
    gold = [s.spans() for s in sentences]
    return DatasetScores.from_counts(score(pred, gold)), tags


def evaluate_model(ckpt: Checkpoint, splits: dict[str, tuple[DatasetSpec, Sequence[LabeledSentence]]],
                   mode: str = "named", template: InstructionTemplate = DEFAULT_TEMPLATE,
                   tokenizer: Tokenizer | None = None, split: str = "test") -> EvalReport:
    """Score a checkpoint on one split of each dataset.

    ``mode="type_only"`` drops the dataset name from the instruction, the
    protocol for corpora the model never saw.
    """
    tokenizer = tokenizer or WhitespaceTokenizer(ckpt.config.vocab_size)
    check_versions(ckpt, template, tokenizer)
    report = EvalReport(mode=mode, split=split)
    for name, (spec, sentences) in splits.items():
        report.datasets[name], _ = evaluate_sentences(ckpt.model, spec, sentences, mode,
                                                      template, tokenizer)
    return report


def render_table(report: EvalReport, reference: dict[str, float] | None = None,
                 label: str = "model") -> str:
    """P/R/F1 rows x dataset columns, percentages with two decimals."""
    names = list(report.datasets)
    width = max([8] + [len(n) for n in names])
    head = f"{'Method':<12}{'Metric':<8}" + "".join(f"{n:>{width + 2}}" for n in names)
    head += f"{'avg. diff.':>{12}}"
    lines = [head, "-" * len(head)]
    diff = report.avg_f1_diff(reference) if reference else None
    for i, (metric, attr) in enumerate((("P", "precision"), ("R", "recall"), ("F1", "f1"))):
        row = f"{label if i == 0 else '':<12}{metric:<8}"
        row += "".join(f"{100 * getattr(report.datasets[n], attr):>{width + 2}.2f}"
                       for n in names)
        if metric == "F1":
            row += f"{diff:>12.2f}" if diff is not None else f"{'-':>12}"
        lines.append(row)
    micro = report.micro
    lines.append("")
    lines.append(
        f"micro P/R/F1 {100 * micro.precision:.2f} / {100 * micro.recall:.2f} / "
        f"{100 * micro.f1:.2f}   macro P/R/F1 "
        + " / ".join(f"{100 * v:.2f}" for v in report.macro)
    )
    return "\n".join(lines) + "\n"


def report_records(report: EvalReport, meta: dict | None = None) -> list[str]:
    lines = []
    base = {"mode": report.mode, "split": report.split} | (meta or {})
    for name, s in report.datasets.items():
        lines.append(json.dumps({"record": "dataset", "dataset": name, **base, **asdict(s)},
                                sort_keys=True))
    micro = report.micro
    p, r, f = report.macro
    lines.append(json.dumps({"record": "micro", **base, **asdict(micro)}, sort_keys=True))
    lines.append(json.dumps({"record": "macro", **base, "precision": p, "recall": r, "f1": f},
                            sort_keys=True))
    return lines


@dataclass(frozen=True)
class ErrorCase:
    sentence_index: int
    tokens: tuple[str, ...]
    gold: tuple[tuple[int, int], ...]
    predicted: tuple[tuple[int, int], ...]
    error_class: str
    gold_span: tuple[int, int] | None = None
    predicted_span: tuple[int, int] | None = None


def _overlap(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return a[0] < b[1] and b[0] < a[1]


def error_report(predictions: Sequence[Iterable], gold: Sequence[Iterable],
                 sentences: Sequence[Sequence[str]] | None = None,
                 limit: int | None = None) -> list[ErrorCase]:
    """One case per mismatched span.

    An unmatched prediction overlapping an unmatched gold span is a
    ``boundary`` error; other unmatched predictions are ``false_recall``;
    unmatched gold spans with no overlapping prediction are ``miss``.
    """
    if len(predictions) != len(gold):
        raise ContractError("predictions and gold must be aligned")
    cases: list[ErrorCase] = []
    for idx, (p, g) in enumerate(zip(predictions, gold)):
        ps = sorted(_bounds(s) for s in p)
        gs = sorted(_bounds(s) for s in g)
        pc, gc = Counter(ps), Counter(gs)
        matched = pc & gc
        p_un = list((pc - matched).elements())
        g_un = list((gc - matched).elements())
        toks = tuple(sentences[idx]) if sentences is not None else ()
        used_gold = set()
        for ps_ in sorted(p_un):
            hit = next((k for k, gs_ in enumerate(g_un) if _overlap(ps_, gs_)), None)
            if hit is not None:
                used_gold.add(hit)
                cls, gsp = "boundary", g_un[hit]
            else:
                cls, gsp = "false_recall", None
            cases.append(ErrorCase(idx, toks, tuple(gs), tuple(ps), cls, gsp, ps_))
        for k, gs_ in enumerate(g_un):
            if k in used_gold or any(_overlap(gs_, x) for x in p_un):
                continue
            cases.append(ErrorCase(idx, toks, tuple(gs), tuple(ps), "miss", gs_, None))
        if limit is not None and len(cases) >= limit:
            return cases[:limit]
    return cases


def _underline(tokens: Sequence[str], spans: Sequence[tuple[int, int]], mark: str) -> str:
    line = []
    for i, tok in enumerate(tokens):
        inside = any(s <= i < e for s, e in spans)
        line.append((mark if inside else " ") * len(tok))
    return " ".join(line).rstrip()


def render_error_case(case: ErrorCase) -> str:
    toks = case.tokens
    lines = [f"[{case.sentence_index}] {case.error_class}"]
    if toks:
        lines.append("  " + " ".join(toks))
        lines.append("  " + _underline(toks, case.gold, "="))
        lines.append("  " + _underline(toks, case.predicted, "^"))
    lines.append(f"  gold={list(case.gold)} predicted={list(case.predicted)}")
    return "\n".join(lines)


def render_error_report(cases: Sequence[ErrorCase]) -> str:
    legend = "legend: === gold span, ^^^ predicted span\n\n"
    return legend + "\n\n".join(render_error_case(c) for c in cases) + ("\n" if cases else "")
