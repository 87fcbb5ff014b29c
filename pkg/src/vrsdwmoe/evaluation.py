"""Prequential (test-then-train) ranking evaluation with HR@K and NDCG@K."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .dwmoe import DwmoeModel
from .ingest import Interactions, stream_chunks
from .train import StreamingTrainer

TIE_POLICIES = ("random", "optimistic", "pessimistic")


@dataclass(frozen=True)
class RankingResult:
    rank: int
    hr_at_k: int
    ndcg_at_k: float

    @classmethod
    def from_rank(cls, rank: int, k: int = 10) -> "RankingResult":
        if rank <= k:
            return cls(rank, 1, 1.0 / math.log2(rank + 1))
        return cls(rank, 0, 0.0)


@dataclass
class MetricsReport:
    hr_at_k: float = 0.0
    ndcg_at_k: float = 0.0
    n_evaluated: int = 0
    n_skipped: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def hit_and_ndcg(ranks, k: int = 10):
    ranks = np.asarray(ranks)
    hit = (ranks <= k).astype(np.int64)
    ndcg = np.where(hit == 1, 1.0 / np.log2(ranks + 1.0), 0.0)
    return hit, ndcg


def ranks_from_scores(target_scores, negative_scores, tie_policy: str = "random",
                      rng: np.random.Generator | None = None) -> np.ndarray:
    """1-based rank of each target among itself and its negatives.

    Ties are resolved per `tie_policy`: ``optimistic`` puts the target first
    among equal scores, ``pessimistic`` last, ``random`` at a uniformly drawn
    position.
    """
    target_scores = np.asarray(target_scores, dtype=np.float64)
    negative_scores = np.asarray(negative_scores, dtype=np.float64)
    t = target_scores[..., None]
    greater = np.sum(negative_scores > t, axis=-1)
    equal = np.sum(negative_scores == t, axis=-1)
    if tie_policy == "optimistic":
        return 1 + greater
    if tie_policy == "pessimistic":
        return 1 + greater + equal
    if tie_policy == "random":
        rng = rng if rng is not None else np.random.default_rng(0)
        return 1 + greater + np.floor(rng.random(greater.shape) * (equal + 1)).astype(np.int64)
    raise ValueError(f"unknown tie policy {tie_policy!r}")


def rank_target(model: DwmoeModel, user: int, target_item: int, negatives, k: int = 10,
                tie_policy: str = "random", rng: np.random.Generator | None = None) -> RankingResult:
    negatives = np.asarray(negatives, dtype=np.int64)
    items = np.concatenate([[target_item], negatives])
    scores = model.predict(np.full(len(items), user, dtype=np.int64), items)
    rank = int(ranks_from_scores(scores[0], scores[1:], tie_policy, rng))
    return RankingResult.from_rank(rank, k)


class PairIndex:
    """Vectorised membership test over a fixed set of (user, item) pairs."""

    def __init__(self, users, items, n_items: int):
        self.n_items = int(n_items)
        self.keys = np.unique(np.asarray(users, dtype=np.int64) * self.n_items
                              + np.asarray(items, dtype=np.int64))

    @classmethod
    def from_interactions(cls, inter: Interactions, n_items: int) -> "PairIndex":
        return cls(inter.user, inter.item, n_items)

    def contains(self, users, items) -> np.ndarray:
        q = np.asarray(users, dtype=np.int64) * self.n_items + np.asarray(items, dtype=np.int64)
        pos = np.searchsorted(self.keys, q)
        pos = np.minimum(pos, len(self.keys) - 1)
        return self.keys[pos] == q if len(self.keys) else np.zeros(q.shape, dtype=bool)

    def __call__(self, user_id: int, item_id: int) -> bool:
        return bool(self.contains(user_id, item_id))

    def items_of(self, user: int) -> np.ndarray:
        lo, hi = np.searchsorted(self.keys, [user * self.n_items, (user + 1) * self.n_items])
        return self.keys[lo:hi] - user * self.n_items


def sample_eval_negatives(users, known: PairIndex, n_items: int, rng: np.random.Generator,
                          n: int = 99, max_rounds: int = 100) -> np.ndarray:
    """``(len(users), n)`` items each user never interacted with.

    Users with fewer than `n` unseen items get draws with replacement from
    what is left.
    """
    users = np.asarray(users, dtype=np.int64)
    cand = rng.integers(n_items, size=(len(users), n))
    bad = known.contains(np.repeat(users[:, None], n, axis=1), cand)
    for _ in range(max_rounds):
        if not bad.any():
            return cand
        r, c = np.nonzero(bad)
        cand[r, c] = rng.integers(n_items, size=len(r))
        bad[r, c] = known.contains(users[r], cand[r, c])
    for row in np.unique(np.nonzero(bad)[0]):
        free = np.setdiff1d(np.arange(n_items), known.items_of(int(users[row])))
        if len(free):
            cand[row] = rng.choice(free, size=n, replace=len(free) < n)
    return cand


@dataclass
class EvaluationConfig:
    k: int = 10
    n_negatives: int = 99
    tie_policy: str = "random"
    seed: int = 0
    score_block: int = 256  # test interactions scored per forward pass


def evaluate_chunk(model: DwmoeModel, chunk: Interactions, known: PairIndex,
                   config: EvaluationConfig, neg_rng: np.random.Generator,
                   tie_rng: np.random.Generator):
    """Rank every interaction of `chunk`; returns (ranks, n_skipped)."""
    cfg = model.config
    valid = (chunk.user < cfg.n_users) & (chunk.item < cfg.n_items)
    users, targets = chunk.user[valid], chunk.item[valid]
    ranks = np.empty(len(users), dtype=np.int64)
    for lo in range(0, len(users), config.score_block):
        u = users[lo:lo + config.score_block]
        t = targets[lo:lo + config.score_block]
        negs = sample_eval_negatives(u, known, cfg.n_items, neg_rng, config.n_negatives)
        items = np.concatenate([t[:, None], negs], axis=1)
        scores = model.predict(np.repeat(u, items.shape[1]), items.reshape(-1))
        scores = scores.reshape(items.shape)
        ranks[lo:lo + len(u)] = ranks_from_scores(scores[:, 0], scores[:, 1:],
                                                  config.tie_policy, tie_rng)
    return ranks, int((~valid).sum())


def summarize(ranks, n_skipped: int, k: int) -> MetricsReport:
    ranks = np.asarray(ranks)
    if not len(ranks):
        return MetricsReport(0.0, 0.0, 0, n_skipped)
    hit, ndcg = hit_and_ndcg(ranks, k)
    return MetricsReport(float(hit.mean()), float(ndcg.mean()), len(ranks), n_skipped)


@dataclass
class PrequentialResult:
    summary: MetricsReport
    chunks: list[dict] = field(default_factory=list)
    ranks: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def region(self, start: float, stop: float = 1.0, k: int = 10) -> MetricsReport:
        """Metrics over the test interactions in the fractional window [start, stop)."""
        n = len(self.ranks)
        sel = self.ranks[int(np.floor(start * n)):int(np.floor(stop * n))]
        return summarize(sel, 0, k)


def prequential_run(trainer: StreamingTrainer, train: Interactions, test: Interactions,
                    s_r: int, known: PairIndex, config: EvaluationConfig | None = None,
                    on_record: Callable[[dict], None] | None = None) -> PrequentialResult:
    """Pre-train over `train` in arrival chunks, then test-then-train over `test`."""
    config = config or EvaluationConfig()
    neg_seq, tie_seq = np.random.SeedSequence(config.seed, spawn_key=(1,)).spawn(2)
    neg_rng, tie_rng = np.random.default_rng(neg_seq), np.random.default_rng(tie_seq)
    records = []

    def emit(rec):
        records.append(rec)
        if on_record is not None:
            on_record(rec)

    for idx, chunk in enumerate(stream_chunks(train, s_r)):
        loss = trainer.incremental_train(chunk)
        emit({"phase": "pretrain", "chunk_index": idx, **loss.as_dict()})

    all_ranks, skipped = [], 0
    for idx, chunk in enumerate(stream_chunks(test, s_r)):
        ranks, n_skip = evaluate_chunk(trainer.model, chunk, known, config, neg_rng, tie_rng)
        loss = trainer.incremental_train(chunk)
        all_ranks.append(ranks)
        skipped += n_skip
        m = summarize(ranks, n_skip, config.k)
        emit({"phase": "test", "chunk_index": idx, "hr": m.hr_at_k, "ndcg": m.ndcg_at_k,
              "n_evaluated": m.n_evaluated, "n_skipped": m.n_skipped, **loss.as_dict()})

    ranks = np.concatenate(all_ranks) if all_ranks else np.empty(0, dtype=np.int64)
    return PrequentialResult(summarize(ranks, skipped, config.k), records, ranks)
