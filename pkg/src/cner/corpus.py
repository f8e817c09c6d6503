"""Corpus ingestion: tokenization, BIO-labeled datasets, vocabularies, statistics.

All types here are immutable after construction; parsing and statistics are
pure functions and safe to run concurrently across files or sentences.
"""

from __future__ import annotations

import json
import logging
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator

log = logging.getLogger("cner.corpus")

SENTENCE_TERMINATORS = ".!?"

# Reserved character ids, fixed by convention for stable serialization.
UNKNOWN_ID = 0
BOUNDARY_ID = 1
PAD_ID = 2
N_RESERVED = 3

DEFAULT_CASE_REPORT_KEYWORDS = ("case report", "clinical report")


@dataclass(frozen=True)
class Token:
    """One token with its code-point span inside the owning sentence.

    ``char_end`` is the index of the last character (inclusive).
    """

    text: str
    char_start: int
    char_end: int


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[Token, ...]
    raw: str

    @classmethod
    def from_token_texts(cls, texts: Iterable[str]) -> "Sentence":
        """Build a sentence whose raw form joins the tokens with single spaces."""
        tokens = []
        pos = 0
        parts = []
        for text in texts:
            if not text or any(ch.isspace() for ch in text):
                raise ValueError(f"token text must be non-empty and whitespace-free: {text!r}")
            tokens.append(Token(text, pos, pos + len(text) - 1))
            parts.append(text)
            pos += len(text) + 1
        return cls(tokens=tuple(tokens), raw=" ".join(parts))

    def token_texts(self) -> list[str]:
        return [t.text for t in self.tokens]


@dataclass(frozen=True)
class LabeledSentence:
    """A sentence plus one BIO tag per token."""

    sentence: Sentence
    tags: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.tags) != len(self.sentence.tokens):
            raise ValueError(
                f"{len(self.tags)} tags for {len(self.sentence.tokens)} tokens"
            )


def decode_utf8(data: bytes, source: str = "<input>") -> str:
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ValueError(
            f"{source}: invalid UTF-8 at byte offset {exc.start}"
        ) from exc


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def _sentence_spans(text: str) -> Iterator[tuple[int, int]]:
    """Spans of sentences: break after ``.``, ``!`` or ``?`` followed by whitespace."""
    start = 0
    n = len(text)
    for i, ch in enumerate(text):
        if ch in SENTENCE_TERMINATORS and (i + 1 == n or text[i + 1].isspace()):
            yield start, i + 1
            start = i + 1
    if start < n:
        yield start, n


def _split_run(raw: str, i: int, j: int) -> list[Token]:
    """Tokens for the non-whitespace run raw[i:j], detaching edge punctuation."""
    lead: list[Token] = []
    while j - i > 1 and _is_punct(raw[i]):
        lead.append(Token(raw[i], i, i))
        i += 1
    trail: list[Token] = []
    while j - i > 1 and _is_punct(raw[j - 1]):
        trail.append(Token(raw[j - 1], j - 1, j - 1))
        j -= 1
    return lead + [Token(raw[i:j], i, j - 1)] + trail[::-1]


def tokenize(text: str) -> list[Sentence]:
    """Split text into sentences and whitespace/punctuation tokens.

    Sentences end at ``.``, ``!`` or ``?`` followed by whitespace; tokens are
    whitespace-delimited runs with leading/trailing punctuation detached as
    single-character tokens.  Character offsets index into each sentence's
    ``raw`` string, so the split is lossless for non-whitespace content.
    """
    sentences = []
    for span_start, span_end in _sentence_spans(text):
        raw = text[span_start:span_end].strip()
        if not raw:
            continue
        tokens: list[Token] = []
        i = 0
        while i < len(raw):
            if raw[i].isspace():
                i += 1
                continue
            j = i
            while j < len(raw) and not raw[j].isspace():
                j += 1
            tokens.extend(_split_run(raw, i, j))
            i = j
        sentences.append(Sentence(tokens=tuple(tokens), raw=raw))
    return sentences


def _check_tag_shape(tag: str, where: str) -> None:
    if tag == "O":
        return
    if len(tag) > 2 and tag[1] == "-" and tag[0] in "BI":
        return
    raise ValueError(f"{where}: tag {tag!r} is not O, B-<type>, or I-<type>")


def bio_normalize(tags: Iterable[str]) -> list[str]:
    """Repair dangling I-* tags: any I-X not continuing a same-type span becomes B-X.

    Total on well-shaped tags and idempotent.
    """
    out: list[str] = []
    open_type: str | None = None
    for k, tag in enumerate(tags):
        _check_tag_shape(tag, f"position {k}")
        if tag == "O":
            open_type = None
            out.append(tag)
        elif tag.startswith("B-"):
            open_type = tag[2:]
            out.append(tag)
        else:  # I-X
            etype = tag[2:]
            if open_type == etype:
                out.append(tag)
            else:
                out.append("B-" + etype)
                open_type = etype
    return out


@dataclass
class ParseStats:
    """Data-quality counters accumulated while parsing BIO files."""

    sentences: int = 0
    tokens: int = 0
    repaired_tags: int = 0


def parse_bio_file(data: bytes, source: str = "<input>",
                   stats: ParseStats | None = None) -> list[LabeledSentence]:
    """Parse a BIO file: ``token<TAB>tag`` lines, blank line ends a sentence.

    Tags are normalized via :func:`bio_normalize`; repaired openings are
    counted in ``stats`` and logged.  Malformed lines raise with their line
    number.
    """
    text = decode_utf8(data, source)
    stats = stats if stats is not None else ParseStats()
    sentences: list[LabeledSentence] = []
    tokens: list[str] = []
    tags: list[str] = []

    def flush() -> None:
        if not tokens:
            return
        normalized = bio_normalize(tags)
        repaired = sum(1 for a, b in zip(tags, normalized) if a != b)
        if repaired:
            stats.repaired_tags += repaired
            log.warning("%s: repaired %d dangling I-* tag(s) in sentence %d",
                        source, repaired, stats.sentences + 1)
        sentences.append(LabeledSentence(
            sentence=Sentence.from_token_texts(tokens),
            tags=tuple(normalized),
        ))
        stats.sentences += 1
        stats.tokens += len(tokens)
        tokens.clear()
        tags.clear()

    for lineno, line in enumerate(text.split("\n"), 1):
        if line.endswith("\r"):
            raise ValueError(f"{source}:{lineno}: CRLF line ending (format requires LF)")
        if not line.strip():
            flush()
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(
                f"{source}:{lineno}: expected token<TAB>tag, got {line!r}"
            )
        token, tag = parts
        if not token or any(ch.isspace() for ch in token):
            raise ValueError(f"{source}:{lineno}: bad token field {token!r}")
        if not tag:
            raise ValueError(f"{source}:{lineno}: empty tag")
        _check_tag_shape(tag, f"{source}:{lineno}")
        tokens.append(token)
        tags.append(tag)
    flush()
    return sentences


def serialize_bio(dataset: Iterable[LabeledSentence]) -> bytes:
    """Inverse of :func:`parse_bio_file` up to blank-line and repair differences."""
    blocks = []
    for ls in dataset:
        lines = [f"{tok.text}\t{tag}" for tok, tag in zip(ls.sentence.tokens, ls.tags)]
        blocks.append("\n".join(lines))
    out = "\n\n".join(blocks)
    if out:
        out += "\n"
    return out.encode("utf-8")


def sentence_rendering(sentence: Sentence) -> str:
    """Canonical character rendering: token texts joined by single spaces."""
    return " ".join(t.text for t in sentence.tokens)


@dataclass(frozen=True)
class CharVocabulary:
    """Character-to-id mapping with reserved UNKNOWN/BOUNDARY/PAD ids 0/1/2.

    Corpus characters get dense ids starting at 3, ordered by descending
    count with ties broken by code point, so the mapping is deterministic
    for a fixed corpus and ``min_count``.
    """

    id_of: dict[str, int]

    @property
    def size(self) -> int:
        return N_RESERVED + len(self.id_of)

    def id(self, ch: str) -> int:
        return self.id_of.get(ch, UNKNOWN_ID)

    def encode(self, text: str) -> list[int]:
        get = self.id_of.get
        return [get(ch, UNKNOWN_ID) for ch in text]

    def chars_in_id_order(self) -> list[str]:
        return [ch for ch, _ in sorted(self.id_of.items(), key=lambda kv: kv[1])]

    def to_metadata(self) -> str:
        return json.dumps(self.chars_in_id_order(), ensure_ascii=False)

    @classmethod
    def from_metadata(cls, value: str) -> "CharVocabulary":
        chars = json.loads(value)
        return cls(id_of={ch: N_RESERVED + i for i, ch in enumerate(chars)})


def build_char_vocab(corpus: Iterable[Sentence], min_count: int = 1) -> CharVocabulary:
    """Count characters over the canonical renderings and keep those seen
    at least ``min_count`` times."""
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    counts: Counter[str] = Counter()
    seen_any = False
    for sentence in corpus:
        seen_any = True
        counts.update(sentence_rendering(sentence))
    if not seen_any:
        raise ValueError("cannot build a character vocabulary from an empty corpus")
    kept = sorted(
        (ch for ch, c in counts.items() if c >= min_count),
        key=lambda ch: (-counts[ch], ch),
    )
    return CharVocabulary(id_of={ch: N_RESERVED + i for i, ch in enumerate(kept)})


@dataclass(frozen=True)
class TagSet:
    """Entity types with the derived BIO tag inventory.

    Tag order is deterministic: ``B-X, I-X`` per type in lexicographic order,
    with ``O`` last.
    """

    entity_types: tuple[str, ...]

    def __post_init__(self) -> None:
        ordered = tuple(sorted(set(self.entity_types)))
        if ordered != self.entity_types:
            object.__setattr__(self, "entity_types", ordered)

    @classmethod
    def from_data(cls, dataset: Iterable[LabeledSentence]) -> "TagSet":
        types = {tag[2:] for ls in dataset for tag in ls.tags if tag != "O"}
        return cls(entity_types=tuple(sorted(types)))

    @property
    def tags(self) -> tuple[str, ...]:
        out = []
        for etype in self.entity_types:
            out.append("B-" + etype)
            out.append("I-" + etype)
        out.append("O")
        return tuple(out)

    @property
    def o_id(self) -> int:
        return 2 * len(self.entity_types)

    def tag_id(self, tag: str) -> int | None:
        try:
            return self.tags.index(tag)
        except ValueError:
            return None


def filter_case_reports(
    documents: Iterable[tuple[str, str]],
    keywords: Iterable[str] = DEFAULT_CASE_REPORT_KEYWORDS,
) -> Iterator[tuple[str, str]]:
    """Keep documents whose lowercased text contains any lowercased keyword."""
    kws = [kw.lower() for kw in keywords]
    if not kws:
        raise ValueError("keywords must be non-empty")
    for doc_id, text in documents:
        lowered = text.lower()
        if any(kw in lowered for kw in kws):
            yield doc_id, text


@dataclass
class CorpusStats:
    sentences: int = 0
    tokens: int = 0
    entity_counts: Counter = field(default_factory=Counter)

    @property
    def entity_types(self) -> int:
        return len(self.entity_counts)


def corpus_stats(dataset: Iterable[LabeledSentence]) -> CorpusStats:
    """Sentence/token totals and per-type entity (span) counts.

    Each entity is one maximal ``B-X (I-X)*`` run; the input must already be
    normalized (as :func:`parse_bio_file` guarantees).
    """
    stats = CorpusStats()
    for ls in dataset:
        stats.sentences += 1
        stats.tokens += len(ls.sentence.tokens)
        for tag in ls.tags:
            if tag.startswith("B-"):
                stats.entity_counts[tag[2:]] += 1
    return stats


def render_stats_table(columns: list[tuple[str, CorpusStats]]) -> str:
    """Aligned plain-text table, one column per dataset split."""
    labels = [label for label, _ in columns]
    all_types = sorted({t for _, s in columns for t in s.entity_counts})
    rows: list[tuple[str, list[str]]] = [
        ("Sentences", [str(s.sentences) for _, s in columns]),
        ("Tokens", [str(s.tokens) for _, s in columns]),
        ("Entity types", [str(s.entity_types) for _, s in columns]),
    ]
    for etype in all_types:
        rows.append((etype, [str(s.entity_counts.get(etype, 0)) for _, s in columns]))
    name_w = max(len("Statistic"), *(len(r[0]) for r in rows))
    col_ws = [max(len(labels[i]), *(len(r[1][i]) for r in rows)) for i in range(len(columns))]
    lines = [
        "  ".join(["Statistic".ljust(name_w)] + [labels[i].rjust(col_ws[i]) for i in range(len(columns))])
    ]
    lines.append("-" * len(lines[0]))
    for name, vals in rows:
        lines.append("  ".join([name.ljust(name_w)] + [vals[i].rjust(col_ws[i]) for i in range(len(columns))]))
    return "\n".join(lines)


def stats_records(columns: list[tuple[str, CorpusStats]]) -> list[str]:
    """Machine-readable key-value lines mirroring :func:`render_stats_table`."""
    lines = []
    for label, s in columns:
        lines.append(f"split={label} sentences={s.sentences} tokens={s.tokens} entity_types={s.entity_types}")
        for etype in sorted(s.entity_counts):
            lines.append(f"split={label} entity={etype} count={s.entity_counts[etype]}")
    return lines
