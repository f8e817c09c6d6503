"""Linear-chain CRF: exact log-partition, NLL with analytic gradients, Viterbi.

Scores live in a [(K+2) x (K+2)] transition matrix over K tags plus virtual
START (id K) and STOP (id K+1) states; transitions[i, j] scores moving from
i to j.  Structurally impossible moves (into START, out of STOP, and BIO
violations: I-Y reachable only from B-Y or I-Y) are clamped to a large
negative sentinel rather than hard-constrained, keeping training and
decoding consistent.  Internals run in float64.
"""

from __future__ import annotations

import numpy as np

from .corpus import TagSet
from .nn import Parameter

SENTINEL = -1e4


def _logsumexp(x: np.ndarray, axis: int | None = None) -> np.ndarray:
    m = x.max(axis=axis, keepdims=True)
    out = m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))
    return out.squeeze(axis) if axis is not None else out.reshape(())


def _check_scores(emissions: np.ndarray, transitions: np.ndarray) -> tuple[int, int]:
    if emissions.ndim != 2 or emissions.shape[0] < 1 or emissions.shape[1] < 1:
        raise ValueError(f"emissions must be [T, K] with T, K >= 1, got "
                         f"{emissions.shape}")
    t, k = emissions.shape
    if transitions.shape != (k + 2, k + 2):
        raise ValueError(
            f"transitions must be [{k + 2}, {k + 2}] for {k} tags, got "
            f"{transitions.shape}"
        )
    if not np.all(np.isfinite(emissions)) or not np.all(np.isfinite(transitions)):
        raise ValueError("emissions and transitions must be finite")
    return t, k


def crf_log_partition(emissions: np.ndarray, transitions: np.ndarray) -> float:
    """log sum over all tag paths of exp(path score), via the forward pass."""
    t_len, k = _check_scores(emissions, transitions)
    trans = transitions.astype(np.float64)
    emit = emissions.astype(np.float64)
    start, stop = k, k + 1
    alpha = trans[start, :k] + emit[0]
    for t in range(1, t_len):
        alpha = _logsumexp(alpha[:, None] + trans[:k, :k] + emit[t][None, :], axis=0)
    return float(_logsumexp(alpha + trans[:k, stop]))


def crf_path_score(emissions: np.ndarray, transitions: np.ndarray,
                   path: list[int]) -> float:
    """Unnormalized score of one tag path, START and STOP terms included."""
    t_len, k = _check_scores(emissions, transitions)
    if len(path) != t_len:
        raise ValueError(f"path length {len(path)} != sequence length {t_len}")
    if any(not 0 <= y < k for y in path):
        bad = next(y for y in path if not 0 <= y < k)
        raise ValueError(f"tag id {bad} out of range [0, {k})")
    start, stop = k, k + 1
    score = float(transitions[start, path[0]]) + float(emissions[0, path[0]])
    for t in range(1, t_len):
        score += float(transitions[path[t - 1], path[t]])
        score += float(emissions[t, path[t]])
    return score + float(transitions[path[-1], stop])


def crf_nll(emissions: np.ndarray, transitions: np.ndarray,
            gold_path: list[int]) -> float:
    """log Z minus gold score; non-negative, zero only for a sure path."""
    return (crf_log_partition(emissions, transitions)
            - crf_path_score(emissions, transitions, gold_path))


def crf_nll_grad(emissions: np.ndarray, transitions: np.ndarray,
                 gold_path: list[int]
                 ) -> tuple[float, np.ndarray, np.ndarray]:
    """NLL plus analytic gradients: (marginal - gold indicator) throughout.

    Returns (nll, d_emissions [T, K], d_transitions [(K+2), (K+2)]), both in
    float64.  Marginals come from forward-backward in log space.
    """
    t_len, k = _check_scores(emissions, transitions)
    trans = transitions.astype(np.float64)
    emit = emissions.astype(np.float64)
    start, stop = k, k + 1

    alpha = np.empty((t_len, k))
    alpha[0] = trans[start, :k] + emit[0]
    for t in range(1, t_len):
        alpha[t] = _logsumexp(alpha[t - 1][:, None] + trans[:k, :k]
                              + emit[t][None, :], axis=0)
    beta = np.empty((t_len, k))
    beta[-1] = trans[:k, stop]
    for t in range(t_len - 2, -1, -1):
        beta[t] = _logsumexp(trans[:k, :k] + emit[t + 1][None, :]
                             + beta[t + 1][None, :], axis=1)
    log_z = float(_logsumexp(alpha[-1] + trans[:k, stop]))

    d_emit = np.exp(alpha + beta - log_z)
    d_trans = np.zeros_like(trans)
    d_trans[start, :k] = np.exp(trans[start, :k] + emit[0] + beta[0] - log_z)
    d_trans[:k, stop] = np.exp(alpha[-1] + trans[:k, stop] - log_z)
    for t in range(t_len - 1):
        d_trans[:k, :k] += np.exp(alpha[t][:, None] + trans[:k, :k]
                                  + emit[t + 1][None, :] + beta[t + 1][None, :]
                                  - log_z)

    score = crf_path_score(emissions, transitions, gold_path)
    rows = np.arange(t_len)
    d_emit[rows, gold_path] -= 1.0
    d_trans[start, gold_path[0]] -= 1.0
    d_trans[gold_path[-1], stop] -= 1.0
    for t in range(1, t_len):
        d_trans[gold_path[t - 1], gold_path[t]] -= 1.0
    return log_z - score, d_emit, d_trans


def viterbi_decode(emissions: np.ndarray, transitions: np.ndarray
                   ) -> tuple[list[int], float]:
    """Highest-scoring path and its score; ties resolve to the lowest tag id
    at every choice point (argmax takes the first maximum)."""
    t_len, k = _check_scores(emissions, transitions)
    trans = transitions.astype(np.float64)
    emit = emissions.astype(np.float64)
    start, stop = k, k + 1
    delta = trans[start, :k] + emit[0]
    back = np.empty((t_len, k), dtype=np.int64)
    for t in range(1, t_len):
        scores = delta[:, None] + trans[:k, :k]
        back[t] = scores.argmax(axis=0)
        delta = scores[back[t], np.arange(k)] + emit[t]
    final = delta + trans[:k, stop]
    last = int(final.argmax())
    path = [last]
    for t in range(t_len - 1, 0, -1):
        last = int(back[t, last])
        path.append(last)
    path.reverse()
    return path, float(final.max())


def allowed_transitions(tagset: TagSet) -> np.ndarray:
    """Boolean [(K+2) x (K+2)] mask of structurally legal moves.

    I-X is enterable only from B-X or I-X (so never from START or O);
    nothing enters START; nothing leaves STOP.
    """
    tags = tagset.tags
    k = len(tags)
    start, stop = k, k + 1
    mask = np.ones((k + 2, k + 2), dtype=bool)
    mask[:, start] = False
    mask[stop, :] = False
    mask[start, stop] = False
    for j, tag in enumerate(tags):
        if not tag.startswith("I-"):
            continue
        entity = tag[2:]
        legal_from = {tagset.tag_id(f"B-{entity}"), j}
        for i in range(k + 2):
            if i not in legal_from:
                mask[i, j] = False
    return mask


class CrfParams:
    """Trainable transition matrix with the structural mask applied.

    ``clamp()`` rewrites forbidden cells to the sentinel; call it after
    every parameter update so training never unclamps them.
    """

    def __init__(self, tagset: TagSet, rng: np.random.Generator | None,
                 dtype=np.float32):
        k = len(tagset.tags)
        self.tagset = tagset
        self.num_tags = k
        self.mask = allowed_transitions(tagset)
        if rng is None:
            trans = np.zeros((k + 2, k + 2), dtype)
        else:
            trans = rng.uniform(-0.1, 0.1, (k + 2, k + 2)).astype(dtype)
        self.transitions = Parameter("crf.transitions", trans)
        self.clamp()

    def clamp(self) -> None:
        self.transitions.value[~self.mask] = SENTINEL

    def parameters(self) -> list[Parameter]:
        return [self.transitions]
