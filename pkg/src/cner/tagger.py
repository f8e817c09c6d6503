"""BiLSTM-CRF sequence labeler over a frozen embedder stack.

Per-token stack outputs pass through one bidirectional LSTM layer and a
linear emission projection; a linear-chain CRF scores tag sequences.
Training minimizes exact NLL with plain SGD, anneals on dev micro-F1
plateaus, and keeps the best-dev snapshot.  The stack itself is never
updated.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .container import (ContainerError, container_bytes, expect_kind, load,
                        parse_container, restore_params)
from .corpus import LabeledSentence, Sentence, TagSet
from .crf import CrfParams, crf_nll_grad, viterbi_decode
from .embeddings import EmbedderStack, build_stack, stack_embed
from .evaluation import Span, micro_f1, spans_from_bio
from .nn import (DEFAULT_DTYPE, EpochRecord, Linear, Lstm, Parameter, SgdState,
                 make_rng, maybe_anneal, sgd_step, zero_grads)

MODEL_KIND = "tagger"


@dataclass(frozen=True)
class TaggerTrainConfig:
    """Training hyperparameters; all values are repo decisions (no reference
    settings exist for this stage)."""

    lr: float = 0.1
    anneal_factor: float = 2.0
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 3
    clip_norm: float = 5.0
    dropout: float = 0.5
    hidden_size: int = 256
    lr_floor: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        for name in ("batch_size", "max_epochs", "patience", "hidden_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("lr", "anneal_factor", "clip_norm", "lr_floor"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TaggerTrainConfig":
        return cls(**json.loads(text))


class TaggerModel:
    def __init__(self, stack: EmbedderStack, tagset: TagSet, hidden_size: int,
                 rng: np.random.Generator | None, dtype=DEFAULT_DTYPE):
        k = len(tagset.tags)
        self.stack = stack
        self.tagset = tagset
        self.hidden_size = hidden_size
        self.enc_fwd = Lstm("encoder.fwd", stack.total_dim, hidden_size, rng, dtype)
        self.enc_bwd = Lstm("encoder.bwd", stack.total_dim, hidden_size, rng, dtype)
        self.emit = Linear("emit", 2 * hidden_size, k, rng, dtype)
        self.crf = CrfParams(tagset, rng, dtype)

    def parameters(self) -> list[Parameter]:
        """Trainable parameters only; the embedder stack stays frozen."""
        return (self.enc_fwd.parameters() + self.enc_bwd.parameters()
                + self.emit.parameters() + self.crf.parameters())

    def metadata(self) -> dict[str, str]:
        return {
            "kind": MODEL_KIND,
            "tagset": json.dumps(list(self.tagset.entity_types)),
            "stack_spec": self.stack.spec,
            "input_dim": str(self.stack.total_dim),
            "hidden_size": str(self.hidden_size),
        }

    def emissions(self, x: np.ndarray):
        """Per-token tag scores for one embedded sentence [n, input_dim]."""
        xs = x[:, None, :]
        h_f, _, cache_f = self.enc_fwd.forward(xs)
        h_b_rev, _, cache_b = self.enc_bwd.forward(xs[::-1])
        h = np.concatenate([h_f[:, 0, :], h_b_rev[::-1][:, 0, :]], axis=1)
        scores = self.emit.forward(h)
        return scores, (cache_f, cache_b, h)

    def emissions_backward(self, cache, d_scores: np.ndarray) -> None:
        cache_f, cache_b, h = cache
        dh = self.emit.backward(h, d_scores)
        half = self.hidden_size
        self.enc_fwd.backward(cache_f, dh[:, :half][:, None, :])
        self.enc_bwd.backward(cache_b, dh[:, half:][::-1][:, None, :])


def map_unknown_tags(dataset: Sequence[LabeledSentence], tagset: TagSet
                     ) -> tuple[list[LabeledSentence], int]:
    """Replace tags outside the tagset with O; returns the replacement count."""
    known = set(tagset.tags)
    mapped = []
    count = 0
    for item in dataset:
        if all(t in known for t in item.tags):
            mapped.append(item)
            continue
        tags = tuple(t if t in known else "O" for t in item.tags)
        count += sum(1 for t in item.tags if t not in known)
        mapped.append(LabeledSentence(item.sentence, tags))
    return mapped, count


def _decode(model: TaggerModel, x: np.ndarray) -> list[str]:
    scores, _ = model.emissions(x)
    path, _ = viterbi_decode(scores, model.crf.transitions.value)
    return [model.tagset.tags[i] for i in path]


def predict(model: TaggerModel, sentence: Sentence
            ) -> tuple[list[str], list[Span]]:
    """Viterbi tags plus the spans they encode; empty input gives ([], [])."""
    if not sentence.tokens:
        return [], []
    tags = _decode(model, stack_embed(model.stack, sentence))
    return tags, spans_from_bio(tags)


def train_tagger(train: Sequence[LabeledSentence], dev: Sequence[LabeledSentence],
                 stack: EmbedderStack, tagset: TagSet, config: TaggerTrainConfig,
                 checkpoint_path: str | None = None,
                 ) -> tuple[TaggerModel, list[EpochRecord]]:
    """SGD on exact CRF NLL; dev micro-F1 drives annealing and model choice.

    Embeddings are computed once up front (the stack is frozen).  Dev tags
    outside the tagset are mapped to O with a counted warning.  Empty
    sentences are skipped.  Deterministic for a fixed config seed.
    """
    train = [s for s in train if s.sentence.tokens]
    dev = [s for s in dev if s.sentence.tokens]
    if not train:
        raise ValueError("training set is empty")
    if not dev:
        raise ValueError("dev set is empty")
    known = set(tagset.tags)
    for i, item in enumerate(train):
        bad = next((t for t in item.tags if t not in known), None)
        if bad is not None:
            raise ValueError(
                f"train sentence {i} carries tag {bad!r} outside the tagset; "
                "derive the tagset from the training data"
            )
    dev, remapped = map_unknown_tags(dev, tagset)
    if remapped:
        warnings.warn(f"{remapped} dev tag(s) outside the training tagset "
                      "were mapped to O", stacklevel=2)

    rng = make_rng(config.seed)
    model = TaggerModel(stack, tagset, config.hidden_size, rng)
    params = model.parameters()
    train_x = [stack_embed(stack, s.sentence) for s in train]
    dev_x = [stack_embed(stack, s.sentence) for s in dev]
    gold_ids = [[tagset.tag_id(t) for t in s.tags] for s in train]

    sched = SgdState(lr=config.lr, anneal_factor=config.anneal_factor,
                     patience=config.patience, mode="max",
                     clip_norm=config.clip_norm, lr_floor=config.lr_floor)
    keep = 1.0 - config.dropout
    best: bytes | None = None
    records: list[EpochRecord] = []
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(train))
        total_nll = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            zero_grads(params)
            for i in batch:
                x = train_x[i]
                if keep < 1.0:
                    mask = (rng.random(x.shape) < keep) / keep
                    x = (x * mask).astype(x.dtype)
                scores, cache = model.emissions(x)
                nll, d_emit, d_trans = crf_nll_grad(
                    scores, model.crf.transitions.value, gold_ids[i])
                total_nll += nll
                model.emissions_backward(cache, d_emit.astype(scores.dtype))
                model.crf.transitions.grad += d_trans.astype(
                    model.crf.transitions.dtype)
            for p in params:
                p.grad *= 1.0 / len(batch)
            sgd_step(params, sched.lr, sched.clip_norm)
            model.crf.clamp()
        pred = [_decode(model, x) for x in dev_x]
        dev_f1 = micro_f1(dev, pred).micro.f1
        records.append(EpochRecord(epoch, total_nll / len(train), dev_f1, sched.lr))
        if sched.is_improvement(dev_f1):
            best = container_bytes(model.metadata(), params)
            if checkpoint_path is not None:
                with open(checkpoint_path, "wb") as f:
                    f.write(best)
        sched = maybe_anneal(sched, dev_f1)
        if sched.stop:
            break
    if best is not None:
        _, arrays = parse_container(best)
        restore_params(params, arrays)
        model.crf.clamp()
    return model, records


def save_tagger(path: str, model: TaggerModel) -> None:
    data = container_bytes(model.metadata(), model.parameters())
    with open(path, "wb") as f:
        f.write(data)


def load_tagger(path: str, stack: EmbedderStack | None = None) -> TaggerModel:
    """Restore a tagger; the stack is rebuilt from the recorded spec unless
    an already-loaded one is passed in."""
    metadata, arrays = load(path)
    expect_kind(metadata, MODEL_KIND, path)
    if stack is None:
        spec = metadata.get("stack_spec", "")
        if not spec:
            raise ContainerError(f"{path}: no stack_spec recorded; pass a stack")
        stack = build_stack(spec)
    expected_dim = int(metadata["input_dim"])
    if stack.total_dim != expected_dim:
        raise ContainerError(
            f"{path}: stack dimension {stack.total_dim} does not match the "
            f"checkpoint's input_dim {expected_dim} (stack spec "
            f"{stack.spec or metadata.get('stack_spec', '')!r})"
        )
    tagset = TagSet(tuple(json.loads(metadata["tagset"])))
    model = TaggerModel(stack, tagset, int(metadata["hidden_size"]), rng=None)
    restore_params(model.parameters(), arrays, path)
    model.crf.clamp()
    return model
