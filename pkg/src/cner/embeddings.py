"""Static word vectors and concatenation of heterogeneous per-token embedders.

A tagger consumes one vector per token built by an EmbedderStack: an ordered
list of members (static lexicon, character-LM snapshot, word-LM snapshot)
whose outputs are concatenated in member order.  Stacks are described by a
compact spec string so a tagger checkpoint can name its own inputs:

    static:vectors.txt,char_lm:char.model
    static:v.txt:oov=mean,word_lm:w.model:mixing=top

Entries are comma-separated; each is kind:path followed by optional
key=value options.  Mixing weights use semicolons: mixing=0.5;0.25;0.25.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .char_lm import CharLMModel, embed_words_flair, load_char_lm
from .corpus import Sentence
from .nn import DEFAULT_DTYPE
from .word_lm import WordLMModel, embed_words_elmo, load_word_lm

STACK_KINDS = ("static", "char_lm", "word_lm")


@dataclass(frozen=True)
class StaticLexicon:
    """Fixed word-vector table; lookup is total under the OOV policy."""

    dim: int
    vectors: dict[str, np.ndarray]
    oov_policy: str = "zeros"
    duplicates: int = 0
    oov_vector: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.oov_policy not in ("zeros", "mean"):
            raise ValueError(
                f"oov_policy must be 'zeros' or 'mean', got {self.oov_policy!r}"
            )
        if self.oov_policy == "mean" and self.vectors:
            oov = np.mean(list(self.vectors.values()), axis=0, dtype=np.float64)
            oov = oov.astype(DEFAULT_DTYPE)
        else:
            oov = np.zeros(self.dim, dtype=DEFAULT_DTYPE)
        object.__setattr__(self, "oov_vector", oov)


def load_static_lexicon(path: str, oov_policy: str = "zeros") -> StaticLexicon:
    """Parse ``word v1 v2 ... vdim`` lines; dimension fixed by the first entry.

    Duplicate words keep the last occurrence (counted in ``duplicates``).
    Blank lines are ignored.
    """
    vectors: dict[str, np.ndarray] = {}
    dim: int | None = None
    duplicates = 0
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split(" ")
            word, values = fields[0], fields[1:]
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise ValueError(
                        f"{path}:{line_no}: first entry has no vector values"
                    )
            if len(values) != dim:
                raise ValueError(
                    f"{path}:{line_no}: expected {dim} values, got {len(values)}"
                )
            try:
                vec = np.asarray([float(v) for v in values], dtype=DEFAULT_DTYPE)
            except ValueError:
                bad = next(v for v in values if not _is_float(v))
                raise ValueError(
                    f"{path}:{line_no}: non-numeric value {bad!r}"
                ) from None
            if word in vectors:
                duplicates += 1
            vectors[word] = vec
    if dim is None:
        raise ValueError(f"{path}: no entries")
    return StaticLexicon(dim, vectors, oov_policy, duplicates)


def _is_float(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


def save_static_lexicon(path: str, lexicon: StaticLexicon) -> None:
    """Write entries sorted by word, 6 significant digits per value.

    Values already representable at that precision round-trip exactly.
    """
    with open(path, "w", encoding="utf-8") as f:
        for word in sorted(lexicon.vectors):
            values = " ".join(f"{float(v):.6g}" for v in lexicon.vectors[word])
            f.write(f"{word} {values}\n")


def lookup(lexicon: StaticLexicon, token_text: str) -> np.ndarray:
    """Exact match, else lowercase match, else the OOV policy vector."""
    vec = lexicon.vectors.get(token_text)
    if vec is None:
        vec = lexicon.vectors.get(token_text.lower())
    if vec is None:
        vec = lexicon.oov_vector
    return vec


class StaticEmbedder:
    kind = "static"

    def __init__(self, lexicon: StaticLexicon):
        self.lexicon = lexicon
        self.dim = lexicon.dim

    def embed(self, sentence: Sentence) -> np.ndarray:
        out = np.empty((len(sentence.tokens), self.dim), dtype=DEFAULT_DTYPE)
        for i, text in enumerate(sentence.token_texts()):
            out[i] = lookup(self.lexicon, text)
        return out


class CharLmEmbedder:
    kind = "char_lm"

    def __init__(self, model: CharLMModel):
        self.model = model
        self.dim = 2 * model.config.hidden_size

    def embed(self, sentence: Sentence) -> np.ndarray:
        return embed_words_flair(self.model, sentence)


class WordLmEmbedder:
    kind = "word_lm"

    def __init__(self, model: WordLMModel, mixing: str | Sequence[float] = "mean"):
        self.model = model
        self.mixing = mixing
        self.dim = 2 * model.config.projection_dim

    def embed(self, sentence: Sentence) -> np.ndarray:
        return embed_words_elmo(self.model, sentence, self.mixing)


Embedder = StaticEmbedder | CharLmEmbedder | WordLmEmbedder


@dataclass(frozen=True)
class EmbedderStack:
    """Ordered embedders; output is their concatenation, ``total_dim`` wide.

    ``spec`` is the string the stack was built from (recorded in tagger
    checkpoints so predictions can rebuild the same inputs).
    """

    members: tuple[Embedder, ...]
    spec: str = ""

    def __post_init__(self):
        if not self.members:
            raise ValueError("embedder stack needs at least one member")

    @property
    def total_dim(self) -> int:
        return sum(m.dim for m in self.members)


def stack_embed(stack: EmbedderStack, sentence: Sentence) -> np.ndarray:
    """Per-token concatenated vectors, [n_tokens, total_dim]."""
    blocks = []
    for i, member in enumerate(stack.members):
        try:
            block = member.embed(sentence)
        except Exception as e:
            raise RuntimeError(
                f"embedder member {i} ({member.kind}) failed: {e}"
            ) from e
        if block.shape != (len(sentence.tokens), member.dim):
            raise RuntimeError(
                f"embedder member {i} ({member.kind}) returned shape "
                f"{block.shape}, expected ({len(sentence.tokens)}, {member.dim})"
            )
        blocks.append(block.astype(DEFAULT_DTYPE, copy=False))
    return np.concatenate(blocks, axis=1)


@dataclass(frozen=True)
class MemberSpec:
    kind: str
    path: str
    options: dict[str, str]


def parse_stack_spec(spec: str) -> list[MemberSpec]:
    """Split a stack spec string into member entries; validates kinds and
    option keys but touches no files."""
    entries = [e.strip() for e in spec.split(",")]
    if not spec.strip() or not all(entries):
        raise ValueError(f"empty entry in stack spec {spec!r}")
    members = []
    for entry in entries:
        parts = entry.split(":")
        if len(parts) < 2:
            raise ValueError(
                f"stack entry {entry!r} must be kind:path[:key=value...]"
            )
        kind, path = parts[0], parts[1]
        if kind not in STACK_KINDS:
            raise ValueError(
                f"unknown embedder kind {kind!r}; expected one of {STACK_KINDS}"
            )
        if not path:
            raise ValueError(f"stack entry {entry!r} has an empty path")
        options: dict[str, str] = {}
        for opt in parts[2:]:
            key, sep, value = opt.partition("=")
            if not sep or not key:
                raise ValueError(f"malformed option {opt!r} in entry {entry!r}")
            if key in options:
                raise ValueError(f"duplicate option {key!r} in entry {entry!r}")
            options[key] = value
        allowed = {"static": {"oov"}, "char_lm": set(), "word_lm": {"mixing"}}[kind]
        unknown = set(options) - allowed
        if unknown:
            raise ValueError(
                f"unknown option(s) {sorted(unknown)} for {kind!r} in {entry!r}"
            )
        members.append(MemberSpec(kind, path, options))
    return members


def _parse_mixing(value: str) -> str | list[float]:
    if value in ("mean", "top"):
        return value
    try:
        return [float(v) for v in value.split(";")]
    except ValueError:
        raise ValueError(
            f"mixing must be 'mean', 'top', or semicolon-separated floats, "
            f"got {value!r}"
        ) from None


def build_stack(spec: str) -> EmbedderStack:
    """Load every member named by the spec string."""
    members: list[Embedder] = []
    for i, m in enumerate(parse_stack_spec(spec)):
        try:
            if m.kind == "static":
                lexicon = load_static_lexicon(m.path, m.options.get("oov", "zeros"))
                members.append(StaticEmbedder(lexicon))
            elif m.kind == "char_lm":
                members.append(CharLmEmbedder(load_char_lm(m.path)))
            else:
                mixing = _parse_mixing(m.options.get("mixing", "mean"))
                members.append(WordLmEmbedder(load_word_lm(m.path), mixing))
        except Exception as e:
            raise RuntimeError(
                f"failed to load stack member {i} ({m.kind}:{m.path}): {e}"
            ) from e
    return EmbedderStack(tuple(members), spec)
