"""Reservoir maintenance and training-batch preparation.

The reservoir is a FIFO ring buffer over the most recent interactions.  Batch
preparation follows the variational reservoir-enhanced scheme (``VRS``) or one
of the baseline strategies ``NDO`` (new data only), ``RR`` (reservoir-enhanced
random) and ``SW`` (sliding window).
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .ingest import ConfigError, Interactions

STRATEGIES = ("VRS", "NDO", "RR", "SW")


class Reservoir:
    """Bounded FIFO store with a multiset view over (user, item) pairs."""

    def __init__(self, capacity: int = 10000):
        if capacity < 0:
            raise ConfigError("reservoir capacity must be >= 0")
        self.capacity = capacity
        self._user = np.zeros(capacity, dtype=np.int64)
        self._item = np.zeros(capacity, dtype=np.int64)
        self._seq = np.zeros(capacity, dtype=np.int64)
        self._head = 0  # slot of the oldest element
        self._size = 0
        self._pairs: Counter = Counter()

    def __len__(self) -> int:
        return self._size

    def _order(self) -> np.ndarray:
        return (self._head + np.arange(self._size)) % max(self.capacity, 1)

    @property
    def buffer(self) -> Interactions:
        """Buffered interactions, oldest first."""
        idx = self._order()
        return Interactions(self._user[idx], self._item[idx], self._seq[idx])

    def insert(self, batch: Interactions) -> None:
        if self.capacity == 0 or not len(batch):
            return
        if len(batch) > self.capacity:
            batch = batch[len(batch) - self.capacity:]
        n = len(batch)
        overflow = max(0, self._size + n - self.capacity)
        for k in range(overflow):
            slot = (self._head + k) % self.capacity
            key = (int(self._user[slot]), int(self._item[slot]))
            self._pairs[key] -= 1
            if not self._pairs[key]:
                del self._pairs[key]
        self._head = (self._head + overflow) % self.capacity
        self._size -= overflow

        slots = (self._head + self._size + np.arange(n)) % self.capacity
        self._user[slots] = batch.user
        self._item[slots] = batch.item
        self._seq[slots] = batch.seq
        self._size += n
        self._pairs.update(zip(batch.user.tolist(), batch.item.tolist()))

    def contains(self, user_id: int, item_id: int) -> bool:
        return (user_id, item_id) in self._pairs

    def __contains__(self, pair) -> bool:
        return tuple(pair) in self._pairs


def reservoir_insert(reservoir: Reservoir, batch: Interactions) -> Reservoir:
    reservoir.insert(batch)
    return reservoir


def contains(reservoir: Reservoir, user_id: int, item_id: int) -> bool:
    return reservoir.contains(user_id, item_id)


def decay_log_weights(n: int, lam: float) -> np.ndarray:
    """Unnormalised log-probabilities ``(k-1) log lam``, k=1 the oldest."""
    if n < 1:
        raise ValueError("need at least one element to weight")
    if lam < 1:
        raise ConfigError(f"decay ratio must be >= 1, got {lam}")
    return np.arange(n) * np.log(lam)


def decayed_weights(n: int, lam: float) -> np.ndarray:
    """Sampling probabilities proportional to ``lam**(k-1)``, k=1 the oldest.

    Normalised in log space after subtracting the largest exponent, so large
    ``n * log(lam)`` cannot overflow.  ``lam == 1`` gives the uniform vector.
    """
    logw = decay_log_weights(n, lam)
    w = np.exp(logw - logw[-1])
    return w / w.sum()


def weighted_sample(log_weights: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Draw `k` distinct indices by successive weighted sampling.

    Uses the Gumbel top-k trick, which is equivalent to drawing one index at a
    time proportionally to the remaining weights.  Returned indices are sorted
    (arrival order).
    """
    n = len(log_weights)
    if k > n:
        raise ValueError(f"cannot draw {k} distinct indices from {n}")
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    keys = log_weights + rng.gumbel(size=n)
    if k == n:
        return np.arange(n)
    top = np.argpartition(-keys, k - 1)[:k]
    return np.sort(top)


def sample_size_underload(s_new: int, delta: float, batch_size: int,
                          available: int | None = None) -> int:
    """Historical sample size ``min(floor(s_new * delta), bs - s_new)``."""
    size = min(int(np.floor(s_new * delta)), batch_size - s_new)
    if available is not None:
        size = min(size, available)
    return max(size, 0)


@dataclass(frozen=True)
class SamplerConfig:
    strategy: str = "VRS"
    delta: float = 0.5
    lambda_res: float = 1.01
    lambda_new: float = 1.01
    batch_size: int = 256
    capacity: int = 10000

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.delta < 0:
            raise ConfigError("delta must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lambda_res < 1 or self.lambda_new < 1:
            raise ConfigError("decay ratios must be >= 1")
        if self.capacity < 0:
            raise ConfigError("capacity must be >= 0")


@dataclass
class TrainingBatch:
    interactions: Interactions
    n_new: int
    n_his: int

    def __len__(self) -> int:
        return len(self.interactions)


def vrs_prepare(new_data: Interactions, reservoir: Reservoir, config: SamplerConfig,
                rng: np.random.Generator) -> TrainingBatch:
    bs = config.batch_size
    s_new = len(new_data)
    if s_new > bs:
        idx = weighted_sample(decay_log_weights(s_new, config.lambda_new), bs, rng)
        return TrainingBatch(new_data[idx], bs, 0)
    if s_new == bs:
        return TrainingBatch(new_data, s_new, 0)

    n_his = sample_size_underload(s_new, config.delta, bs, len(reservoir))
    if n_his == 0:
        return TrainingBatch(new_data, s_new, 0)
    buf = reservoir.buffer
    idx = weighted_sample(decay_log_weights(len(buf), config.lambda_res), n_his, rng)
    return TrainingBatch(Interactions.concat([buf[idx], new_data]), s_new, n_his)


def baseline_prepare(strategy: str, new_data: Interactions, reservoir: Reservoir,
                     config: SamplerConfig, rng: np.random.Generator) -> TrainingBatch:
    bs = config.batch_size
    s_new = len(new_data)
    if strategy not in ("NDO", "RR", "SW"):
        raise ConfigError(f"unknown baseline strategy {strategy!r}")

    if strategy == "SW":
        window = Interactions.concat([reservoir.buffer, new_data])
        window = window[max(0, len(window) - bs):]
        n_new = min(s_new, len(window))
        return TrainingBatch(window, n_new, len(window) - n_new)

    if s_new > bs:
        idx = np.sort(rng.choice(s_new, size=bs, replace=False))
        return TrainingBatch(new_data[idx], bs, 0)
    if strategy == "NDO":
        return TrainingBatch(new_data, s_new, 0)

    n_his = min(bs - s_new, len(reservoir))
    if n_his == 0:
        return TrainingBatch(new_data, s_new, 0)
    idx = np.sort(rng.choice(len(reservoir), size=n_his, replace=False))
    return TrainingBatch(Interactions.concat([reservoir.buffer[idx], new_data]), s_new, n_his)


def prepare_batch(new_data: Interactions, reservoir: Reservoir, config: SamplerConfig,
                  rng: np.random.Generator) -> TrainingBatch:
    if config.strategy == "VRS":
        return vrs_prepare(new_data, reservoir, config, rng)
    return baseline_prepare(config.strategy, new_data, reservoir, config, rng)
