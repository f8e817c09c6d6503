"""Span extraction from BIO tags and exact-match micro / per-type P/R/F1."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .corpus import LabeledSentence


@dataclass(frozen=True, order=True)
class Span:
    """One entity mention as inclusive token indices."""

    entity_type: str
    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start > self.end:
            raise ValueError(f"span start {self.start} > end {self.end}")


def spans_from_bio(tags: Sequence[str]) -> list[Span]:
    """Each maximal ``B-X (I-X)*`` run becomes one span; ``O`` contributes nothing.

    Raises on structurally invalid sequences (run ``bio_normalize`` first).
    """
    spans: list[Span] = []
    open_type: str | None = None
    open_start = 0
    for i, tag in enumerate(tags):
        if tag == "O":
            if open_type is not None:
                spans.append(Span(open_type, open_start, i - 1))
                open_type = None
        elif tag.startswith("B-"):
            if open_type is not None:
                spans.append(Span(open_type, open_start, i - 1))
            open_type = tag[2:]
            open_start = i
        elif tag.startswith("I-"):
            if open_type != tag[2:]:
                raise ValueError(
                    f"invalid BIO sequence: {tag} at position {i} does not continue "
                    f"an open {tag[2:]} span; apply bio_normalize first"
                )
        else:
            raise ValueError(f"malformed tag {tag!r} at position {i}")
    if open_type is not None:
        spans.append(Span(open_type, open_start, len(tags) - 1))
    return spans


@dataclass
class TypeCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

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


@dataclass
class EvalReport:
    """Per-type and micro-averaged exact-match span counts and scores.

    Micro counts are the sums of the per-type counts by construction.
    """

    per_type: dict[str, TypeCounts] = field(default_factory=dict)

    @property
    def micro(self) -> TypeCounts:
        return TypeCounts(
            tp=sum(c.tp for c in self.per_type.values()),
            fp=sum(c.fp for c in self.per_type.values()),
            fn=sum(c.fn for c in self.per_type.values()),
        )


def micro_f1(gold: Sequence[LabeledSentence], pred: Sequence[Sequence[str]]) -> EvalReport:
    """Exact-match (type, start, end) span comparison, pooled over sentences."""
    if len(pred) != len(gold):
        raise ValueError(f"{len(gold)} gold sentences but {len(pred)} predictions")
    report = EvalReport()

    def counts(etype: str) -> TypeCounts:
        return report.per_type.setdefault(etype, TypeCounts())

    for idx, (gold_ls, pred_tags) in enumerate(zip(gold, pred)):
        if len(pred_tags) != len(gold_ls.tags):
            raise ValueError(
                f"sentence {idx}: {len(gold_ls.tags)} gold tags but "
                f"{len(pred_tags)} predicted"
            )
        gold_spans = set(spans_from_bio(gold_ls.tags))
        pred_spans = set(spans_from_bio(pred_tags))
        for span in gold_spans & pred_spans:
            counts(span.entity_type).tp += 1
        for span in pred_spans - gold_spans:
            counts(span.entity_type).fp += 1
        for span in gold_spans - pred_spans:
            counts(span.entity_type).fn += 1
    return report


def render_report(report: EvalReport) -> str:
    """Aligned text table: per-type rows sorted by name, micro row last.

    Precision/recall/F1 are percentages with two decimals.
    """
    rows = [(name, report.per_type[name]) for name in sorted(report.per_type)]
    rows.append(("micro", report.micro))
    name_w = max(len("Entity"), *(len(name) for name, _ in rows))
    header = (
        f"{'Entity'.ljust(name_w)}  {'TP':>5}  {'FP':>5}  {'FN':>5}  "
        f"{'P%':>7}  {'R%':>7}  {'F1%':>7}"
    )
    lines = [header, "-" * len(header)]
    for name, c in rows:
        lines.append(
            f"{name.ljust(name_w)}  {c.tp:>5}  {c.fp:>5}  {c.fn:>5}  "
            f"{100 * c.precision:>7.2f}  {100 * c.recall:>7.2f}  {100 * c.f1:>7.2f}"
        )
    return "\n".join(lines)


def report_records(report: EvalReport) -> list[str]:
    """Machine-readable key-value lines, one per entity type plus micro."""
    lines = []
    items: Iterable[tuple[str, TypeCounts]] = sorted(report.per_type.items())
    for name, c in list(items) + [("micro", report.micro)]:
        lines.append(
            f"type={name} tp={c.tp} fp={c.fp} fn={c.fn} "
            f"precision={c.precision:.6f} recall={c.recall:.6f} f1={c.f1:.6f}"
        )
    return lines
