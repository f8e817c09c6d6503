"""Character-level forward and backward language models.

Sentences are rendered as character streams with BOUNDARY symbols between
sentences; two independent LSTMs model the stream left-to-right and
right-to-left.  Per-word contextual embeddings concatenate the forward
hidden state just past the word with the backward hidden state just before
it, giving 2 * hidden_size dimensions per token.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .container import (container_bytes, expect_kind, load, parse_container,
                        restore_params)
from .corpus import (BOUNDARY_ID, CharVocabulary, Sentence, build_char_vocab,
                     sentence_rendering)
from .nn import (DEFAULT_DTYPE, Embedding, EpochRecord, Linear, Lstm, Parameter,
                 SgdState, maybe_anneal, sgd_step, softmax_xent, zero_grads)

MODEL_KIND = "char_lm"


@dataclass(frozen=True)
class CharLMConfig:
    """Hyperparameters; reference values are hidden 2048, window 250, batch 100,
    initial lr 20 with annealing factor 4."""

    hidden_size: int = 2048
    sequence_length: int = 250
    batch_size: int = 100
    char_embed_dim: int = 64
    lr: float = 20.0
    anneal_factor: float = 4.0
    patience: int = 1
    max_epochs: int = 100
    clip_norm: float = 5.0
    lr_floor: float = 1e-4
    min_count: int = 1

    def __post_init__(self):
        for name in ("hidden_size", "sequence_length", "batch_size",
                     "char_embed_dim", "patience", "max_epochs", "min_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("lr", "anneal_factor", "clip_norm", "lr_floor"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CharLMConfig":
        return cls(**json.loads(text))


@dataclass(frozen=True)
class CharStream:
    """Sentence corpus flattened to character ids.

    BOUNDARY separates consecutive sentences and caps both ends, so every
    sentence is flanked on both sides.  ``origin[i]`` gives
    (sentence index, offset in that sentence's rendering) for non-boundary
    positions and None for boundaries.
    """

    ids: np.ndarray
    origin: tuple[tuple[int, int] | None, ...] = field(repr=False)

    def __post_init__(self):
        if len(self.ids) != len(self.origin):
            raise ValueError("ids and origin map must have equal length")


def build_char_stream(sentences: Sequence[Sentence], vocab: CharVocabulary) -> CharStream:
    if not sentences:
        raise ValueError("cannot build a character stream from zero sentences")
    ids: list[int] = [BOUNDARY_ID]
    origin: list[tuple[int, int] | None] = [None]
    for si, sentence in enumerate(sentences):
        rendering = sentence_rendering(sentence)
        ids.extend(vocab.encode(rendering))
        origin.extend((si, ci) for ci in range(len(rendering)))
        ids.append(BOUNDARY_ID)
        origin.append(None)
    return CharStream(np.asarray(ids, dtype=np.int64), tuple(origin))


@dataclass(frozen=True)
class StreamWindow:
    """One truncated-backprop window: inputs[b, t] predicts targets[b, t]."""

    inputs: np.ndarray
    targets: np.ndarray


@dataclass(frozen=True)
class StreamBatch:
    """Paired windows for the two directions; the backward window is cut from
    the reversed stream at the same offset."""

    fwd: StreamWindow
    bwd: StreamWindow

    @property
    def num_predictions(self) -> int:
        return self.fwd.inputs.size + self.bwd.inputs.size


def iter_stream_batches(stream: CharStream, batch_size: int,
                        sequence_length: int) -> Iterator[StreamBatch]:
    """Split the stream into ``batch_size`` contiguous shards and walk
    fixed-size windows over them.

    Batch size is clamped so every shard holds at least one prediction;
    the final window of an epoch may be shorter than ``sequence_length``.
    """
    n = len(stream.ids)
    if n < 2:
        raise ValueError("character stream too short to form any prediction")
    b = min(batch_size, n // 2)
    shard = n // b
    fwd = stream.ids[:b * shard].reshape(b, shard)
    bwd = stream.ids[::-1][:b * shard].reshape(b, shard)
    step = min(sequence_length, shard - 1)
    for t in range(0, shard - 1, step):
        s = min(step, shard - 1 - t)
        yield StreamBatch(
            fwd=StreamWindow(fwd[:, t:t + s], fwd[:, t + 1:t + 1 + s]),
            bwd=StreamWindow(bwd[:, t:t + s], bwd[:, t + 1:t + 1 + s]),
        )


class _Direction:
    """One modeling direction: embedding, LSTM, vocabulary projection."""

    def __init__(self, name: str, vocab_size: int, config: CharLMConfig,
                 rng: np.random.Generator | None, dtype):
        self.embed = Embedding(f"{name}.embed", vocab_size, config.char_embed_dim,
                               rng, dtype)
        self.lstm = Lstm(f"{name}.lstm", config.char_embed_dim, config.hidden_size,
                         rng, dtype)
        self.out = Linear(f"{name}.out", config.hidden_size, vocab_size, rng, dtype)

    def parameters(self) -> list[Parameter]:
        return self.embed.parameters() + self.lstm.parameters() + self.out.parameters()

    def hidden_states(self, ids: Sequence[int]) -> np.ndarray:
        """Hidden state after each consumed character, [len(ids), hidden]."""
        xs = self.embed.forward(np.asarray(ids, dtype=np.int64))[:, None, :]
        hs, _, _ = self.lstm.forward(xs)
        return hs[:, 0, :]

    def window_loss(self, window: StreamWindow,
                    state: tuple[np.ndarray, np.ndarray] | None,
                    backward: bool) -> tuple[float, tuple[np.ndarray, np.ndarray]]:
        """Summed nats over the window; accumulates grads when ``backward``.

        The carried-in state is treated as a constant (truncated
        backpropagation), and the carried-out state is detached.
        """
        b, s = window.inputs.shape
        xs_ids = window.inputs.T
        xs = self.embed.forward(xs_ids)
        hs, (h, c), caches = self.lstm.forward(xs, state)
        logits = self.out.forward(hs.reshape(s * b, -1))
        nats, dlogits = softmax_xent(logits, window.targets.T.reshape(-1))
        if backward:
            dhs = self.out.backward(hs.reshape(s * b, -1), dlogits).reshape(s, b, -1)
            dxs, _, _ = self.lstm.backward(caches, dhs)
            self.embed.backward(xs_ids, dxs)
        return nats, (h.copy(), c.copy())


@dataclass
class CarryState:
    """Recurrent state carried across consecutive windows of one direction pair."""

    fwd: tuple[np.ndarray, np.ndarray] | None = None
    bwd: tuple[np.ndarray, np.ndarray] | None = None


class CharLMModel:
    def __init__(self, vocab: CharVocabulary, config: CharLMConfig,
                 rng: np.random.Generator | None, dtype=DEFAULT_DTYPE):
        self.vocab = vocab
        self.config = config
        self.fwd = _Direction("fwd", vocab.size, config, rng, dtype)
        self.bwd = _Direction("bwd", vocab.size, config, rng, dtype)

    def parameters(self) -> list[Parameter]:
        return self.fwd.parameters() + self.bwd.parameters()

    def metadata(self) -> dict[str, str]:
        return {
            "kind": MODEL_KIND,
            "config": self.config.to_json(),
            "charset": self.vocab.to_metadata(),
        }


def char_lm_loss(model: CharLMModel, batch: StreamBatch,
                 state: CarryState | None = None,
                 backward: bool = False) -> tuple[float, CarryState]:
    """Mean nats per character over both directions of one window.

    Gradients (when ``backward``) are of this mean, so minimizing it
    minimizes the summed two-direction objective.  Grads must be zeroed
    before each backward call; the final rescale assumes this window is the
    only contribution.
    """
    if state is None:
        state = CarryState()
    scale = batch.num_predictions
    f_nats, f_state = model.fwd.window_loss(batch.fwd, state.fwd, backward)
    b_nats, b_state = model.bwd.window_loss(batch.bwd, state.bwd, backward)
    if backward:
        # window_loss left gradients of summed nats; rescale to the mean
        for p in model.parameters():
            p.grad *= 1.0 / scale
    return (f_nats + b_nats) / scale, CarryState(f_state, b_state)


def stream_nats(model: CharLMModel, stream: CharStream,
                batch_size: int | None = None,
                sequence_length: int | None = None) -> float:
    """Mean nats per character over a whole stream, both directions, no updates."""
    config = model.config
    b = batch_size if batch_size is not None else config.batch_size
    s = sequence_length if sequence_length is not None else config.sequence_length
    total = 0.0
    count = 0
    state: CarryState | None = None
    for batch in iter_stream_batches(stream, b, s):
        loss, state = char_lm_loss(model, batch, state)
        total += loss * batch.num_predictions
        count += batch.num_predictions
    return total / count


def _train_epoch(model: CharLMModel, stream: CharStream, sched: SgdState) -> float:
    params = model.parameters()
    config = model.config
    total = 0.0
    count = 0
    state: CarryState | None = None
    for batch in iter_stream_batches(stream, config.batch_size, config.sequence_length):
        zero_grads(params)
        loss, state = char_lm_loss(model, batch, state, backward=True)
        sgd_step(params, sched.lr, sched.clip_norm)
        total += loss * batch.num_predictions
        count += batch.num_predictions
    return total / count


def train_char_lm(corpus: Sequence[Sentence], config: CharLMConfig,
                  rng: np.random.Generator, dev_corpus: Sequence[Sentence],
                  checkpoint_path: str | None = None,
                  ) -> tuple[CharLMModel, list[EpochRecord]]:
    """Train both directions; returns the best-dev model and the epoch log.

    Anneals the learning rate on dev-loss plateaus and stops at the lr floor
    or ``max_epochs``.  When ``checkpoint_path`` is given, the best-dev
    snapshot is (re)written as soon as it improves.
    """
    if not corpus:
        raise ValueError("training corpus is empty")
    if not dev_corpus:
        raise ValueError("dev corpus is empty")
    vocab = build_char_vocab(corpus, config.min_count)
    model = CharLMModel(vocab, config, rng)
    train_stream = build_char_stream(corpus, vocab)
    dev_stream = build_char_stream(dev_corpus, vocab)
    sched = SgdState(lr=config.lr, anneal_factor=config.anneal_factor,
                     patience=config.patience, mode="min",
                     clip_norm=config.clip_norm, lr_floor=config.lr_floor)
    best: bytes | None = None
    records: list[EpochRecord] = []
    for epoch in range(1, config.max_epochs + 1):
        train_nats = _train_epoch(model, train_stream, sched)
        dev_nats = stream_nats(model, dev_stream)
        records.append(EpochRecord(epoch, train_nats, dev_nats, sched.lr))
        if sched.is_improvement(dev_nats):
            best = container_bytes(model.metadata(), model.parameters())
            if checkpoint_path is not None:
                with open(checkpoint_path, "wb") as f:
                    f.write(best)
        sched = maybe_anneal(sched, dev_nats)
        if sched.stop:
            break
    if best is not None:
        _, arrays = parse_container(best)
        restore_params(model.parameters(), arrays)
    return model, records


def embed_words_flair(model: CharLMModel, sentence: Sentence) -> np.ndarray:
    """Per-token contextual vectors, [n_tokens, 2 * hidden_size].

    The sentence is rendered with single spaces between tokens and BOUNDARY
    ids at both ends.  A token covering rendering positions ts..te receives
    forward hidden state at te+1 concatenated with backward hidden state at
    ts-1; the boundary padding makes both reads valid for edge tokens.
    """
    hidden = model.config.hidden_size
    if not sentence.tokens:
        return np.zeros((0, 2 * hidden), dtype=DEFAULT_DTYPE)
    rendering = sentence_rendering(sentence)
    padded = [BOUNDARY_ID] + model.vocab.encode(rendering) + [BOUNDARY_ID]
    h_fwd = model.fwd.hidden_states(padded)
    h_bwd = model.bwd.hidden_states(padded[::-1])[::-1]
    out = np.empty((len(sentence.tokens), 2 * hidden), dtype=h_fwd.dtype)
    offset = 0
    for i, token in enumerate(sentence.tokens):
        ts = offset + 1
        te = offset + len(token.text)
        out[i, :hidden] = h_fwd[te + 1]
        out[i, hidden:] = h_bwd[ts - 1]
        offset += len(token.text) + 1
    return out


def perplexity(model: CharLMModel, heldout: Sequence[Sentence]) -> float:
    """exp(mean nats per character) over both directions."""
    if not heldout:
        raise ValueError("held-out corpus is empty")
    stream = build_char_stream(heldout, model.vocab)
    return float(np.exp(stream_nats(model, stream)))


def save_char_lm(path: str, model: CharLMModel) -> None:
    data = container_bytes(model.metadata(), model.parameters())
    with open(path, "wb") as f:
        f.write(data)


def load_char_lm(path: str) -> CharLMModel:
    metadata, arrays = load(path)
    expect_kind(metadata, MODEL_KIND, path)
    vocab = CharVocabulary.from_metadata(metadata["charset"])
    config = CharLMConfig.from_json(metadata["config"])
    model = CharLMModel(vocab, config, rng=None)
    restore_params(model.parameters(), arrays, path)
    return model
