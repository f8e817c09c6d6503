"""Word-level bidirectional language model with a character-CNN token encoder.

Tokens are encoded context-independently from their characters (embedding,
convolution banks, max-pool over time, one highway layer, linear projection),
then two stacks of projected LSTMs model the sentence left-to-right and
right-to-left against a shared word-vocabulary softmax.  Contextual word
embeddings mix the per-layer representations; dimension 2 * projection_dim.

Smooth activations (tanh) are used in the convolution and highway stages so
finite-difference gradient checks stay clean.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .container import (container_bytes, expect_kind, load, parse_container,
                        restore_params)
from .corpus import PAD_ID, CharVocabulary, Sentence, build_char_vocab
from .nn import (DEFAULT_DTYPE, Embedding, EpochRecord, Linear, Lstm, Parameter,
                 SgdState, maybe_anneal, sgd_step, sigmoid, softmax_xent,
                 uniform_init, zero_grads)

MODEL_KIND = "word_lm"

UNKNOWN_WORD_ID = 0
SENTENCE_BEGIN_ID = 1
SENTENCE_END_ID = 2
N_RESERVED_WORDS = 3
SENTENCE_BEGIN = "<S>"
SENTENCE_END = "</S>"

DEFAULT_CNN_FILTERS = ((1, 32), (2, 32), (3, 64), (4, 64), (5, 64))


@dataclass(frozen=True)
class WordLMConfig:
    """Hyperparameters; reference values are hidden 2048, projection 256,
    2 layers, words truncated at 50 characters, character embedding 16."""

    hidden_size: int = 2048
    projection_dim: int = 256
    layers: int = 2
    max_word_chars: int = 50
    char_embed_dim: int = 16
    cnn_filters: tuple[tuple[int, int], ...] = DEFAULT_CNN_FILTERS
    vocab_size: int = 25000
    softmax_mode: str = "full"
    batch_size: int = 32
    lr: float = 1.0
    anneal_factor: float = 4.0
    patience: int = 1
    max_epochs: int = 100
    clip_norm: float = 5.0
    lr_floor: float = 1e-4
    min_count: int = 1

    def __post_init__(self):
        for name in ("hidden_size", "projection_dim", "layers", "max_word_chars",
                     "char_embed_dim", "vocab_size", "batch_size", "patience",
                     "max_epochs", "min_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("lr", "anneal_factor", "clip_norm", "lr_floor"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.projection_dim > self.hidden_size:
            raise ValueError(
                f"projection_dim {self.projection_dim} exceeds hidden_size "
                f"{self.hidden_size}"
            )
        if self.softmax_mode != "full":
            raise ValueError(
                f"softmax_mode {self.softmax_mode!r} not supported; only 'full' "
                "is implemented (sampled softmax is a scale-up option)"
            )
        object.__setattr__(self, "cnn_filters",
                           tuple((int(w), int(c)) for w, c in self.cnn_filters))
        for width, count in self.cnn_filters:
            if width < 1 or count < 1:
                raise ValueError(f"bad convolution filter spec ({width}, {count})")
        if not self.cnn_filters:
            raise ValueError("cnn_filters must be non-empty")

    @property
    def max_filter_width(self) -> int:
        return max(w for w, _ in self.cnn_filters)

    @property
    def total_filters(self) -> int:
        return sum(c for _, c in self.cnn_filters)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "WordLMConfig":
        raw = json.loads(text)
        raw["cnn_filters"] = tuple(tuple(f) for f in raw["cnn_filters"])
        return cls(**raw)


@dataclass(frozen=True)
class WordVocabulary:
    """Closed word vocabulary for the LM softmax.

    Ids 0..2 are reserved for UNKNOWN, sentence begin, and sentence end;
    regular words follow.  Lookup of an absent word yields UNKNOWN_WORD_ID.
    """

    id_of: dict[str, int]

    def __post_init__(self):
        for word, wid in self.id_of.items():
            if wid < N_RESERVED_WORDS:
                raise ValueError(f"word {word!r} assigned reserved id {wid}")

    @property
    def size(self) -> int:
        return N_RESERVED_WORDS + len(self.id_of)

    def word_id(self, text: str) -> int:
        return self.id_of.get(text, UNKNOWN_WORD_ID)

    def words_in_id_order(self) -> list[str]:
        return sorted(self.id_of, key=lambda w: self.id_of[w])

    def to_metadata(self) -> str:
        words = self.words_in_id_order()
        return " ".join([str(len(words))] + words)

    @classmethod
    def from_metadata(cls, text: str) -> "WordVocabulary":
        parts = text.split(" ")
        count = int(parts[0])
        words = parts[1:]
        if len(words) != count:
            raise ValueError(
                f"word list declares {count} entries but holds {len(words)}"
            )
        return cls({w: N_RESERVED_WORDS + i for i, w in enumerate(words)})


def build_word_vocab(sentences: Sequence[Sentence], max_size: int) -> WordVocabulary:
    """Most frequent ``max_size`` words; frequency ties broken lexicographically."""
    counts: Counter[str] = Counter()
    for sentence in sentences:
        counts.update(sentence.token_texts())
    if not counts:
        raise ValueError("cannot build a word vocabulary from zero tokens")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:max_size]
    return WordVocabulary({w: N_RESERVED_WORDS + i for i, (w, _) in enumerate(ranked)})


def _conv_windows(x: np.ndarray, width: int) -> np.ndarray:
    """Unroll [L, E] into [L-width+1, width*E] sliding windows."""
    n = x.shape[0] - width + 1
    e = x.shape[1]
    out = np.empty((n, width * e), dtype=x.dtype)
    for j in range(width):
        out[:, j * e:(j + 1) * e] = x[j:j + n]
    return out


def _conv_windows_backward(dwin: np.ndarray, width: int, length: int,
                           e: int) -> np.ndarray:
    dx = np.zeros((length, e), dtype=dwin.dtype)
    n = dwin.shape[0]
    for j in range(width):
        dx[j:j + n] += dwin[:, j * e:(j + 1) * e]
    return dx


class TokenEncoder:
    """Characters to a fixed projection_dim vector, independent of context.

    Words are truncated to max_word_chars and right-padded with the PAD
    character up to the widest filter, so every bank sees at least one
    window and output dimension never depends on word length.
    """

    def __init__(self, name: str, char_vocab: CharVocabulary, config: WordLMConfig,
                 rng: np.random.Generator | None, dtype=DEFAULT_DTYPE):
        self.config = config
        self.char_vocab = char_vocab
        self.embed = Embedding(f"{name}.chars", char_vocab.size,
                               config.char_embed_dim, rng, dtype)
        self.conv_w: list[Parameter] = []
        self.conv_b: list[Parameter] = []
        for i, (width, count) in enumerate(config.cnn_filters):
            fan = width * config.char_embed_dim
            w = (np.zeros((fan, count), dtype) if rng is None
                 else uniform_init(rng, (fan, count), fan, dtype))
            self.conv_w.append(Parameter(f"{name}.conv{i}.w", w))
            self.conv_b.append(Parameter(f"{name}.conv{i}.b", np.zeros(count, dtype)))
        total = config.total_filters
        self.hw_gate = Linear(f"{name}.highway.gate", total, total, rng, dtype)
        self.hw_lin = Linear(f"{name}.highway.lin", total, total, rng, dtype)
        self.proj = Linear(f"{name}.proj", total, config.projection_dim, rng, dtype)

    def parameters(self) -> list[Parameter]:
        params = self.embed.parameters()
        params += self.conv_w + self.conv_b
        params += self.hw_gate.parameters() + self.hw_lin.parameters()
        params += self.proj.parameters()
        return params

    def char_ids(self, text: str) -> np.ndarray:
        ids = self.char_vocab.encode(text)[:self.config.max_word_chars]
        pad = self.config.max_filter_width - len(ids)
        if pad > 0:
            ids = ids + [PAD_ID] * pad
        return np.asarray(ids, dtype=np.int64)

    def encode_word(self, text: str):
        """Returns (vector [projection_dim], cache for encode_word_backward)."""
        ids = self.char_ids(text)
        x = self.embed.forward(ids)
        pools = []
        bank_caches = []
        for w_p, b_p, (width, _) in zip(self.conv_w, self.conv_b,
                                        self.config.cnn_filters):
            windows = _conv_windows(x, width)
            a = np.tanh(windows @ w_p.value + b_p.value)
            arg = a.argmax(axis=0)
            pools.append(a[arg, np.arange(a.shape[1])])
            bank_caches.append((windows, a, arg))
        h = np.concatenate(pools)
        t = sigmoid(self.hw_gate.forward(h))
        g = np.tanh(self.hw_lin.forward(h))
        y = t * g + (1.0 - t) * h
        out = self.proj.forward(y)
        return out, (ids, x, bank_caches, h, t, g, y)

    def encode_word_backward(self, cache, dout: np.ndarray) -> None:
        ids, x, bank_caches, h, t, g, y = cache
        dy = self.proj.backward(y[None, :], dout[None, :])[0]
        dt = dy * (g - h)
        dg = dy * t
        dh = dy * (1.0 - t)
        dh = dh + self.hw_gate.backward(h[None, :], (dt * t * (1.0 - t))[None, :])[0]
        dh = dh + self.hw_lin.backward(h[None, :], (dg * (1.0 - g * g))[None, :])[0]
        dx = np.zeros_like(x)
        offset = 0
        for w_p, b_p, (width, count), (windows, a, arg) in zip(
                self.conv_w, self.conv_b, self.config.cnn_filters, bank_caches):
            dpool = dh[offset:offset + count]
            offset += count
            da = np.zeros_like(a)
            da[arg, np.arange(count)] = dpool
            dz = da * (1.0 - a * a)
            w_p.grad += windows.T @ dz
            b_p.grad += dz.sum(axis=0)
            dx += _conv_windows_backward(dz @ w_p.value.T, width, x.shape[0],
                                         x.shape[1])
        self.embed.backward(ids, dx)


def encode_tokens(encoder: TokenEncoder, sentence: Sentence) -> np.ndarray:
    """Context-independent token vectors, [n_tokens, projection_dim]."""
    dim = encoder.config.projection_dim
    out = np.empty((len(sentence.tokens), dim), dtype=encoder.embed.table.dtype)
    for i, text in enumerate(sentence.token_texts()):
        out[i], _ = encoder.encode_word(text)
    return out


class _LmStack:
    """One direction: ``layers`` LSTMs, each followed by a projection."""

    def __init__(self, name: str, config: WordLMConfig,
                 rng: np.random.Generator | None, dtype):
        self.config = config
        self.lstms: list[Lstm] = []
        self.projs: list[Linear] = []
        for layer in range(config.layers):
            self.lstms.append(Lstm(f"{name}.l{layer}.lstm", config.projection_dim,
                                   config.hidden_size, rng, dtype))
            self.projs.append(Linear(f"{name}.l{layer}.proj", config.hidden_size,
                                     config.projection_dim, rng, dtype))

    def parameters(self) -> list[Parameter]:
        params: list[Parameter] = []
        for lstm, proj in zip(self.lstms, self.projs):
            params += lstm.parameters() + proj.parameters()
        return params

    def forward(self, xs: np.ndarray):
        """xs [T, projection_dim] -> (per-layer outputs, caches)."""
        cur = xs[:, None, :]
        outs = []
        caches = []
        for lstm, proj in zip(self.lstms, self.projs):
            hs, _, lstm_cache = lstm.forward(cur)
            out = proj.forward(hs)
            caches.append((lstm_cache, hs))
            outs.append(out[:, 0, :])
            cur = out
        return outs, caches

    def backward(self, caches, d_top: np.ndarray) -> np.ndarray:
        """Backprop from the top layer's output; returns d(input) [T, P]."""
        d_out = d_top[:, None, :]
        for (lstm_cache, hs), lstm, proj in zip(reversed(caches),
                                                reversed(self.lstms),
                                                reversed(self.projs)):
            dhs = proj.backward(hs, d_out)
            d_out, _, _ = lstm.backward(lstm_cache, dhs)
        return d_out[:, 0, :]


class WordLMModel:
    def __init__(self, char_vocab: CharVocabulary, word_vocab: WordVocabulary,
                 config: WordLMConfig, rng: np.random.Generator | None,
                 dtype=DEFAULT_DTYPE):
        self.config = config
        self.word_vocab = word_vocab
        self.encoder = TokenEncoder("encoder", char_vocab, config, rng, dtype)
        self.fwd = _LmStack("fwd", config, rng, dtype)
        self.bwd = _LmStack("bwd", config, rng, dtype)
        # shared between directions: one parameter set, visible to both
        self.softmax = Linear("softmax", config.projection_dim, word_vocab.size,
                              rng, dtype)

    def parameters(self) -> list[Parameter]:
        return (self.encoder.parameters() + self.fwd.parameters()
                + self.bwd.parameters() + self.softmax.parameters())

    def metadata(self) -> dict[str, str]:
        return {
            "kind": MODEL_KIND,
            "config": self.config.to_json(),
            "charset": self.encoder.char_vocab.to_metadata(),
            "words": self.word_vocab.to_metadata(),
        }


class _WordCache:
    """Per-batch cache of unique word encodings and their output gradients."""

    def __init__(self, encoder: TokenEncoder):
        self.encoder = encoder
        self.entries: dict[str, list] = {}

    def vector(self, text: str) -> np.ndarray:
        entry = self.entries.get(text)
        if entry is None:
            vec, cache = self.encoder.encode_word(text)
            entry = [vec, cache, np.zeros_like(vec)]
            self.entries[text] = entry
        return entry[0]

    def add_grad(self, text: str, d: np.ndarray) -> None:
        self.entries[text][2] += d

    def backprop(self) -> None:
        for text in sorted(self.entries):
            _, cache, grad = self.entries[text]
            self.encoder.encode_word_backward(cache, grad)


@dataclass(frozen=True)
class BilmResult:
    """Mean nats per prediction target over both directions."""

    loss: float
    num_predictions: int
    skipped_empty: int


def bilm_loss(model: WordLMModel, sentences: Sequence[Sentence],
              backward: bool = False) -> BilmResult:
    """Two-direction LM loss over a batch of sentences.

    The forward stack reads sentence-begin + tokens and predicts each next
    word and sentence-end; the backward stack does the mirror image on the
    reversed sequence.  Targets use the closed word vocabulary (OOV maps to
    UNKNOWN).  Empty sentences are skipped and counted.  When ``backward``,
    grads must be zeroed beforehand; this call rescales them to the mean.
    """
    vocab = model.word_vocab
    cache = _WordCache(model.encoder)
    total_nats = 0.0
    total_preds = 0
    skipped = 0

    def run_direction(stack: _LmStack, input_texts: list[str],
                      target_ids: list[int]) -> float:
        xs = np.stack([cache.vector(t) for t in input_texts])
        outs, stack_caches = stack.forward(xs)
        logits = model.softmax.forward(outs[-1])
        nats, dlogits = softmax_xent(logits, np.asarray(target_ids))
        if backward:
            d_top = model.softmax.backward(outs[-1], dlogits)
            dxs = stack.backward(stack_caches, d_top)
            for text, d in zip(input_texts, dxs):
                cache.add_grad(text, d)
        return nats

    for sentence in sentences:
        texts = sentence.token_texts()
        if not texts:
            skipped += 1
            continue
        ids = [vocab.word_id(t) for t in texts]
        total_nats += run_direction(
            model.fwd, [SENTENCE_BEGIN] + texts, ids + [SENTENCE_END_ID])
        total_nats += run_direction(
            model.bwd, [SENTENCE_END] + texts[::-1], ids[::-1] + [SENTENCE_BEGIN_ID])
        total_preds += 2 * len(ids) + 2
    if total_preds == 0:
        raise ValueError("no prediction targets: every sentence in the batch is empty")
    if backward:
        cache.backprop()
        for p in model.parameters():
            p.grad *= 1.0 / total_preds
    return BilmResult(total_nats / total_preds, total_preds, skipped)


def corpus_nats(model: WordLMModel, sentences: Sequence[Sentence]) -> float:
    """Mean nats per prediction over a corpus, no updates."""
    total = 0.0
    count = 0
    batch = model.config.batch_size
    for start in range(0, len(sentences), batch):
        result = bilm_loss(model, sentences[start:start + batch])
        total += result.loss * result.num_predictions
        count += result.num_predictions
    if count == 0:
        raise ValueError("no prediction targets in corpus")
    return total / count


def train_word_lm(corpus: Sequence[Sentence], config: WordLMConfig,
                  rng: np.random.Generator, dev_corpus: Sequence[Sentence],
                  checkpoint_path: str | None = None,
                  ) -> tuple[WordLMModel, list[EpochRecord]]:
    """Same driver contract as the character LM: epoch loop, dev-plateau
    annealing, best-dev checkpointing, deterministic under the seed.

    Sentence order is reshuffled from ``rng`` each epoch.
    """
    if not corpus:
        raise ValueError("training corpus is empty")
    if not dev_corpus:
        raise ValueError("dev corpus is empty")
    char_vocab = build_char_vocab(corpus, config.min_count)
    word_vocab = build_word_vocab(corpus, config.vocab_size)
    model = WordLMModel(char_vocab, word_vocab, config, rng)
    params = model.parameters()
    sched = SgdState(lr=config.lr, anneal_factor=config.anneal_factor,
                     patience=config.patience, mode="min",
                     clip_norm=config.clip_norm, lr_floor=config.lr_floor)
    best: bytes | None = None
    records: list[EpochRecord] = []
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(corpus))
        total = 0.0
        count = 0
        for start in range(0, len(order), config.batch_size):
            batch = [corpus[i] for i in order[start:start + config.batch_size]]
            zero_grads(params)
            result = bilm_loss(model, batch, backward=True)
            sgd_step(params, sched.lr, sched.clip_norm)
            total += result.loss * result.num_predictions
            count += result.num_predictions
        train_nats = total / count
        dev_nats = corpus_nats(model, dev_corpus)
        records.append(EpochRecord(epoch, train_nats, dev_nats, sched.lr))
        if sched.is_improvement(dev_nats):
            best = container_bytes(model.metadata(), params)
            if checkpoint_path is not None:
                with open(checkpoint_path, "wb") as f:
                    f.write(best)
        sched = maybe_anneal(sched, dev_nats)
        if sched.stop:
            break
    if best is not None:
        _, arrays = parse_container(best)
        restore_params(params, arrays)
    return model, records


def embed_words_elmo(model: WordLMModel, sentence: Sentence,
                     mixing: str | Sequence[float] = "mean") -> np.ndarray:
    """Per-token contextual vectors, [n_tokens, 2 * projection_dim].

    Layer 0 is the context-independent encoder output duplicated across both
    halves; layers 1..L concatenate forward and backward projected hidden
    states.  ``mixing`` selects the layer combination: "mean", "top", or an
    explicit weight per layer (length layers + 1).
    """
    config = model.config
    dim = config.projection_dim
    n_layers = config.layers
    weights = _mixing_weights(mixing, n_layers)
    n = len(sentence.tokens)
    if n == 0:
        return np.zeros((0, 2 * dim), dtype=model.softmax.w.dtype)
    texts = sentence.token_texts()
    cache = _WordCache(model.encoder)
    enc = np.stack([cache.vector(t) for t in texts])
    outs_f, _ = model.fwd.forward(
        np.stack([cache.vector(t) for t in [SENTENCE_BEGIN] + texts]))
    outs_b, _ = model.bwd.forward(
        np.stack([cache.vector(t) for t in [SENTENCE_END] + texts[::-1]]))
    layers = [np.concatenate([enc, enc], axis=1)]
    for lf, lb in zip(outs_f, outs_b):
        fwd_part = lf[1:n + 1]
        bwd_part = lb[1:n + 1][::-1]
        layers.append(np.concatenate([fwd_part, bwd_part], axis=1))
    out = np.zeros((n, 2 * dim), dtype=layers[0].dtype)
    for w, layer in zip(weights, layers):
        out += w * layer
    return out


def _mixing_weights(mixing: str | Sequence[float], n_layers: int) -> np.ndarray:
    count = n_layers + 1
    if isinstance(mixing, str):
        if mixing == "mean":
            return np.full(count, 1.0 / count)
        if mixing == "top":
            weights = np.zeros(count)
            weights[-1] = 1.0
            return weights
        raise ValueError(f"unknown mixing {mixing!r}; use 'mean', 'top', or weights")
    weights = np.asarray(list(mixing), dtype=np.float64)
    if weights.shape != (count,):
        raise ValueError(
            f"mixing weights must have length {count} (encoder layer + "
            f"{n_layers} LM layers), got {weights.shape[0]}"
        )
    return weights


def save_word_lm(path: str, model: WordLMModel) -> None:
    data = container_bytes(model.metadata(), model.parameters())
    with open(path, "wb") as f:
        f.write(data)


def load_word_lm(path: str) -> WordLMModel:
    metadata, arrays = load(path)
    expect_kind(metadata, MODEL_KIND, path)
    char_vocab = CharVocabulary.from_metadata(metadata["charset"])
    word_vocab = WordVocabulary.from_metadata(metadata["words"])
    config = WordLMConfig.from_json(metadata["config"])
    model = WordLMModel(char_vocab, word_vocab, config, rng=None)
    restore_params(model.parameters(), arrays, path)
    return model
