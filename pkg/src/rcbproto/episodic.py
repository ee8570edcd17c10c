"""Episodic N-way K-shot training and evaluation of the prototypical network."""
from __future__ import annotations

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import numerics as nx
from .embedder import ModelConfig, ModelParams, embed_all, embed_batch, init_params
from .frontend import LogMelFeature, read_features, read_manifest
from .numerics import Tensor

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
EUCLIDEAN_EPS = 1e-12


class SplitMix64:
    """SplitMix64 stream (Steele, Lea & Flood), used for all episode sampling.

    ``below(n)`` draws uniformly from ``[0, n)`` by rejecting the biased tail,
    so sequences are identical on every platform.
    """

    def __init__(self, seed: int) -> None:
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n

    def sample(self, population: Sequence, k: int) -> list:
        """``k`` distinct elements in draw order (partial Fisher-Yates)."""
        pool = list(population)
        if k > len(pool):
            raise ValueError(f"cannot draw {k} from {len(pool)}")
        for i in range(k):
            j = i + self.below(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]


class InsufficientDataError(ValueError):
    pass


class TrainingDivergedError(FloatingPointError):
    pass


# ---------------------------------------------------------------------------
# corpus and episodes
# ---------------------------------------------------------------------------

@dataclass
class Corpus:
    """Labelled features; speakers are kept in sorted order for determinism."""

    features: list[LogMelFeature]
    paths: list[Optional[str]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.paths:
            self.paths = [None] * len(self.features)
        by_speaker: dict[str, list[int]] = {}
        for idx, f in enumerate(self.features):
            if f.speaker_label is None:
                raise ValueError(f"feature {idx} has no speaker label")
            by_speaker.setdefault(f.speaker_label, []).append(idx)
        self.by_speaker = OrderedDict(sorted(by_speaker.items()))

    @classmethod
    def from_manifest(cls, path) -> "Corpus":
        records = read_manifest(path)
        return cls([read_features(p, spk) for spk, p in records], [p for _, p in records])

    @property
    def speakers(self) -> list[str]:
        return list(self.by_speaker)

    def __len__(self) -> int:
        return len(self.features)

    def values(self, indices: Sequence[int]) -> np.ndarray:
        return np.stack([self.features[i].values for i in indices])


@dataclass
class Episode:
    n_way: int
    k_shot: int
    n_query: int
    speakers: list[str]
    support: np.ndarray  # corpus indices, class-major, length N*K
    query: np.ndarray  # corpus indices, class-major, length N*Q

    @property
    def support_labels(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_way), self.k_shot)

    @property
    def query_labels(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_way), self.n_query)


def sample_episode(
    corpus: Corpus, N: int, K: int, rng: SplitMix64, n_query: Optional[int] = None
) -> Episode:
    """Draw ``N`` speakers, then ``K`` support and ``n_query`` (default ``K``) query
    samples per speaker, all without replacement."""
    Q = K if n_query is None else n_query
    if N < 1 or K < 1 or Q < 1:
        raise ValueError("N, K and the query count must be >= 1")
    eligible = [s for s, idx in corpus.by_speaker.items() if len(idx) >= K + Q]
    if len(eligible) < N:
        raise InsufficientDataError(
            f"need {N} speakers with >= {K + Q} samples, corpus has {len(eligible)}"
        )
    speakers = rng.sample(eligible, N)
    support, query = [], []
    for s in speakers:
        picked = rng.sample(corpus.by_speaker[s], K + Q)
        support.extend(picked[:K])
        query.extend(picked[K:])
    return Episode(N, K, Q, speakers, np.array(support), np.array(query))


# ---------------------------------------------------------------------------
# prototypes, classification, loss
# ---------------------------------------------------------------------------

@dataclass
class PrototypeSet:
    vectors: np.ndarray  # (N, D)
    speakers: list

    def __len__(self) -> int:
        return len(self.vectors)


def prototypes(support_embeddings, speakers: Optional[list] = None) -> PrototypeSet:
    """Per-speaker mean of support embeddings.

    ``support_embeddings`` is an ``(N, K, D)`` array or a list of ``(K_n, D)`` arrays.
    """
    groups = [np.asarray(g, dtype=np.float64) for g in support_embeddings]
    if any(g.ndim != 2 or g.shape[0] == 0 for g in groups):
        raise ValueError("every speaker needs at least one support embedding")
    vectors = np.stack([g.mean(axis=0) for g in groups])
    return PrototypeSet(vectors, list(speakers) if speakers is not None else list(range(len(groups))))


def distances(queries: np.ndarray, protos: np.ndarray, metric: str = "squared_euclidean") -> np.ndarray:
    q = np.atleast_2d(queries)
    if q.shape[-1] != protos.shape[-1]:
        raise ValueError(f"embedding length {q.shape[-1]} != prototype length {protos.shape[-1]}")
    diff = q[:, None, :] - protos[None, :, :]
    d = np.einsum("qnd,qnd->qn", diff, diff)
    if metric == "euclidean":
        d = np.sqrt(d + EUCLIDEAN_EPS)
    elif metric != "squared_euclidean":
        raise ValueError(f"unknown distance {metric!r}")
    return d


def classify(query_embedding, protos: PrototypeSet, metric: str = "squared_euclidean") -> np.ndarray:
    """Softmax over negative distances to the prototypes, max-shifted for stability."""
    q = np.asarray(query_embedding, dtype=np.float64)
    logits = -distances(q, protos.vectors, metric)
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    return p[0] if q.ndim == 1 else p


def prototype_loss(
    support: Tensor, query: Tensor, episode: Episode, metric: str = "squared_euclidean"
) -> Tensor:
    """Mean negative log-probability of the true speaker over all queries."""
    N, K, D = episode.n_way, episode.k_shot, support.shape[-1]
    protos = nx.mean(support.reshape(N, K, D), axis=1)  # (N, D)
    d = nx.squared_euclidean(query.reshape(-1, 1, D), protos.reshape(1, N, D))  # (NQ, N)
    if metric == "euclidean":
        d = nx.sqrt(d, EUCLIDEAN_EPS)
    logp = nx.log_softmax(nx.scale(d, -1.0), axis=1)
    labels = episode.query_labels
    picked = logp[np.arange(len(labels)), labels]
    return nx.scale(nx.mean(picked), -1.0)


def _embed_chunks(x: np.ndarray, params: ModelParams, config: ModelConfig, chunk: int) -> Tensor:
    parts = [embed_batch(x[i : i + chunk], params, config) for i in range(0, len(x), chunk)]
    return parts[0] if len(parts) == 1 else nx.concat(parts, axis=0)


def episode_loss(
    episode: Episode,
    corpus: Corpus,
    params: ModelParams,
    config: ModelConfig,
    micro_batch: int = 10,
) -> Tensor:
    """Differentiable episode loss. ``micro_batch`` only affects speed, never values."""
    support = _embed_chunks(corpus.values(episode.support), params, config, micro_batch)
    query = _embed_chunks(corpus.values(episode.query), params, config, micro_batch)
    return prototype_loss(support, query, episode, config.distance)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainSpec:
    episodes_total: int = 300
    N: int = 5
    K: int = 5
    learning_rate: float = 0.05
    seed: int = 0
    n_query: Optional[int] = None

    def __post_init__(self) -> None:
        if self.episodes_total < 0:
            raise ValueError("episodes_total must be >= 0")
        if self.N < 1 or self.K < 1 or (self.n_query is not None and self.n_query < 1):
            raise ValueError("N, K and n_query must be >= 1")
        if not self.learning_rate >= 0 or not math.isfinite(self.learning_rate):
            raise ValueError("learning_rate must be finite and >= 0")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class TrainResult:
    params: ModelParams
    losses: list[float]


def sgd_step(params: ModelParams, lr: float) -> None:
    if lr == 0:
        return
    for t in params.tensors():
        if t.grad is not None:
            t.data -= lr * t.grad


def train(
    spec: TrainSpec,
    corpus: Corpus,
    config: ModelConfig,
    params: Optional[ModelParams] = None,
    on_episode: Optional[Callable[[int, float], None]] = None,
) -> TrainResult:
    """Plain SGD over freshly sampled episodes; one parameter update per episode."""
    if params is None:
        params = init_params(config, spec.seed)
    rng = SplitMix64(spec.seed)
    losses = []
    for ep in range(spec.episodes_total):
        episode = sample_episode(corpus, spec.N, spec.K, rng, spec.n_query)
        params.zero_grad()
        try:
            loss = episode_loss(episode, corpus, params, config)
        except nx.NonFiniteError as err:
            raise TrainingDivergedError(f"non-finite activation at episode {ep}: {err}") from err
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDivergedError(f"non-finite loss {value} at episode {ep}")
        nx.backward(loss)
        grads_ok = all(t.grad is None or np.isfinite(t.grad).all() for t in params.tensors())
        if not grads_ok:
            raise TrainingDivergedError(f"non-finite gradient at episode {ep} (loss {value})")
        sgd_step(params, spec.learning_rate)
        losses.append(value)
        if on_episode is not None:
            on_episode(ep, value)
        logger.debug("episode %d loss %.6f", ep, value)
    params.zero_grad()
    return TrainResult(params, losses)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def accuracy_from_embeddings(
    embeddings: np.ndarray,
    corpus: Corpus,
    N: int,
    K: int,
    episodes: int,
    seed: int,
    metric: str = "squared_euclidean",
    n_query: Optional[int] = None,
) -> float:
    rng = SplitMix64(seed)
    correct = total = 0
    for _ in range(episodes):
        ep = sample_episode(corpus, N, K, rng, n_query)
        protos = prototypes(embeddings[ep.support].reshape(N, K, -1))
        probs = classify(embeddings[ep.query], protos, metric)
        correct += int((probs.argmax(axis=1) == ep.query_labels).sum())
        total += len(ep.query)
    return correct / total if total else float("nan")


def eval_accuracy(
    corpus: Corpus,
    params: ModelParams,
    config: ModelConfig,
    N: int = 5,
    K: int = 5,
    episodes: int = 100,
    seed: int = 0,
    n_query: Optional[int] = None,
) -> float:
    """Fraction of correctly identified queries over ``episodes`` sampled episodes."""
    emb = embed_all([f.values for f in corpus.features], params, config)
    return accuracy_from_embeddings(emb, corpus, N, K, episodes, seed, config.distance, n_query)


def compute_eer(target_scores, nontarget_scores) -> float:
    """Equal error rate; a trial is accepted when its score is >= the threshold.

    FAR and FRR are evaluated at every distinct score (and above the maximum);
    the crossing is linearly interpolated between the two neighbouring points.
    """
    tgt = np.sort(np.asarray(target_scores, dtype=np.float64))
    non = np.sort(np.asarray(nontarget_scores, dtype=np.float64))
    if tgt.size == 0 or non.size == 0:
        raise ValueError("need at least one target and one non-target trial")
    thresholds = np.append(np.unique(np.concatenate([tgt, non])), np.inf)
    far = 1.0 - np.searchsorted(non, thresholds, side="left") / non.size
    frr = np.searchsorted(tgt, thresholds, side="left") / tgt.size
    diff = far - frr  # non-increasing, starts >= 0 and ends <= 0
    i = int(np.argmax(diff <= 0))
    if i == 0 or diff[i] == 0:
        return float((far[i] + frr[i]) / 2)
    alpha = diff[i - 1] / (diff[i - 1] - diff[i])
    far_x = far[i - 1] + alpha * (far[i] - far[i - 1])
    frr_x = frr[i - 1] + alpha * (frr[i] - frr[i - 1])
    return float((far_x + frr_x) / 2)


def verification_trials(
    corpus: Corpus, max_target: int, seed: int
) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
    """Same-speaker pairs (capped at ``max_target``) and as many random different-speaker pairs."""
    if len(corpus.by_speaker) < 2:
        raise InsufficientDataError("verification needs at least two speakers")
    rng = SplitMix64(seed)
    targets = [
        (idx[a], idx[b])
        for idx in corpus.by_speaker.values()
        for a in range(len(idx))
        for b in range(a + 1, len(idx))
    ]
    if len(targets) > max_target:
        targets = sorted(rng.sample(targets, max_target))
    if not targets:
        raise InsufficientDataError("no speaker has two samples")
    speakers = corpus.speakers
    nontargets = []
    for _ in range(len(targets)):
        s1, s2 = rng.sample(speakers, 2)
        i1 = corpus.by_speaker[s1][rng.below(len(corpus.by_speaker[s1]))]
        i2 = corpus.by_speaker[s2][rng.below(len(corpus.by_speaker[s2]))]
        nontargets.append((i1, i2))
    return targets, nontargets


def eer_from_embeddings(embeddings: np.ndarray, corpus: Corpus, trials: int, seed: int) -> float:
    targets, nontargets = verification_trials(corpus, trials, seed)

    def score(pairs):
        a = embeddings[[p[0] for p in pairs]]
        b = embeddings[[p[1] for p in pairs]]
        return -((a - b) ** 2).sum(axis=1)

    return compute_eer(score(targets), score(nontargets))


def verification_eer(
    corpus: Corpus, params: ModelParams, config: ModelConfig, trials: int = 1000, seed: int = 0
) -> float:
    emb = embed_all([f.values for f in corpus.features], params, config)
    return eer_from_embeddings(emb, corpus, trials, seed)
