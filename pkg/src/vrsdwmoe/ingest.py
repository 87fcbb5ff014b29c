"""Rating-log ingestion and stream simulation.

Interactions are kept columnar (one numpy array per field) so that a stream
of a million events can be sliced, filtered and chunked without building a
Python object per row.  :class:`Interaction` is the scalar view returned when
indexing a single position.
"""
from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple

import numpy as np


class ParseError(ValueError):
    """A record in a rating log could not be parsed."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class ConfigError(ValueError):
    """An invalid configuration value."""


class Interaction(NamedTuple):
    user_id: int
    item_id: int
    seq_no: int
    label: int = 1


def _as_int(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.int64)


class Interactions:
    """Columnar, ordered list of interactions."""

    __slots__ = ("user", "item", "seq", "label")

    def __init__(self, user, item, seq=None, label=None):
        self.user = _as_int(user)
        self.item = _as_int(item)
        n = len(self.user)
        if len(self.item) != n:
            raise ValueError("user and item columns differ in length")
        self.seq = np.arange(n, dtype=np.int64) if seq is None else _as_int(seq)
        self.label = np.ones(n, dtype=np.int64) if label is None else _as_int(label)

    @classmethod
    def empty(cls) -> "Interactions":
        return cls(np.empty(0), np.empty(0))

    @classmethod
    def from_records(cls, records: Iterable[Interaction]) -> "Interactions":
        records = list(records)
        if not records:
            return cls.empty()
        u, v, s, y = zip(*records)
        return cls(u, v, s, y)

    @classmethod
    def concat(cls, parts: Iterable["Interactions"]) -> "Interactions":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        return cls(
            np.concatenate([p.user for p in parts]),
            np.concatenate([p.item for p in parts]),
            np.concatenate([p.seq for p in parts]),
            np.concatenate([p.label for p in parts]),
        )

    def __len__(self) -> int:
        return len(self.user)

    def __getitem__(self, key):
        if isinstance(key, (int, np.integer)):
            return Interaction(int(self.user[key]), int(self.item[key]),
                               int(self.seq[key]), int(self.label[key]))
        return Interactions(self.user[key], self.item[key], self.seq[key], self.label[key])

    def __iter__(self) -> Iterator[Interaction]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Interactions):
            return NotImplemented
        return all(np.array_equal(getattr(self, f), getattr(other, f)) for f in self.__slots__)

    def __repr__(self) -> str:
        return f"Interactions(n={len(self)})"

    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.user.tolist(), self.item.tolist()))


@dataclass
class RatingLog:
    """Parsed log: chronologically ordered interactions plus the raw ratings.

    ``user_ids``/``item_ids`` map dense index -> original identifier.
    """

    interactions: Interactions
    ratings: np.ndarray
    user_ids: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=object))
    item_ids: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=object))

    def __len__(self) -> int:
        return len(self.interactions)

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)


@dataclass(frozen=True)
class StreamConfig:
    s_p: int = 256
    s_r: int = 256
    train_fraction: float = 0.9

    def __post_init__(self):
        if self.s_p < 1 or self.s_r < 1:
            raise ConfigError("s_p and s_r must be >= 1")
        if not 0.0 <= self.train_fraction <= 1.0:
            raise ConfigError("train_fraction must lie in [0, 1]")

    @property
    def scenario(self) -> str:
        if self.s_r < self.s_p:
            return "underload"
        if self.s_r > self.s_p:
            return "overload"
        return "balanced"


def _densify(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map identifiers to 0-based indices in order of first appearance."""
    uniq, first, inverse = np.unique(raw, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    remap = np.empty(len(uniq), dtype=np.int64)
    remap[order] = np.arange(len(uniq))
    return remap[inverse.ravel()], uniq[order]


def parse_interactions(source, delimiter: str = ",", skip_header: bool = False) -> RatingLog:
    """Parse ``user<d>item<d>rating<d>timestamp`` lines.

    `source` may be a path, an open text file or any iterable of lines.  The
    result is sorted by timestamp (stable, so ties keep input order) and
    identifiers are densified in order of first appearance in that sorted
    stream.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="latin-1") as fh:
            return parse_interactions(fh, delimiter, skip_header)

    users, items, ratings, stamps = [], [], [], []
    for lineno, line in enumerate(source, start=1):
        if skip_header and lineno == 1:
            continue
        line = line.strip()
        if not line:
            continue
        parts = line.split(delimiter)
        if len(parts) < 4:
            raise ParseError(lineno, f"expected 4 fields, got {len(parts)}")
        try:
            users.append(int(parts[0]))
        except ValueError:
            raise ParseError(lineno, f"non-numeric user field {parts[0]!r}") from None
        try:
            items.append(int(parts[1]))
        except ValueError:
            raise ParseError(lineno, f"non-numeric item field {parts[1]!r}") from None
        try:
            ratings.append(float(parts[2]))
            stamps.append(float(parts[3]))
        except ValueError:
            raise ParseError(lineno, "non-numeric rating or timestamp") from None

    if not users:
        return RatingLog(Interactions.empty(), np.empty(0))

    order = np.argsort(np.asarray(stamps), kind="stable")
    raw_u = np.asarray(users, dtype=np.int64)[order]
    raw_v = np.asarray(items, dtype=np.int64)[order]
    u, user_ids = _densify(raw_u)
    v, item_ids = _densify(raw_v)
    return RatingLog(Interactions(u, v), np.asarray(ratings)[order], user_ids, item_ids)


def parse_text(text: str, delimiter: str = ",") -> RatingLog:
    return parse_interactions(io.StringIO(text), delimiter)


def _subset(log: RatingLog, mask: np.ndarray) -> RatingLog:
    inter = log.interactions
    u, ukeep = _densify(inter.user[mask])
    v, vkeep = _densify(inter.item[mask])
    user_ids = log.user_ids[ukeep] if len(log.user_ids) else ukeep
    item_ids = log.item_ids[vkeep] if len(log.item_ids) else vkeep
    return RatingLog(Interactions(u, v, None, inter.label[mask]), log.ratings[mask],
                     user_ids, item_ids)


def filter_min_interactions(log: RatingLog, min_count: int) -> RatingLog:
    """Keep users with strictly more than `min_count` interactions."""
    if min_count < 0:
        raise ConfigError("min_count must be >= 0")
    if not len(log):
        return log
    counts = np.bincount(log.interactions.user)
    return _subset(log, counts[log.interactions.user] > min_count)


def sample_users(log: RatingLog, n_users: int, seed: int = 0) -> RatingLog:
    """Keep all interactions of `n_users` users drawn uniformly at random."""
    if n_users >= log.n_users:
        return log
    rng = np.random.default_rng(seed)
    chosen = np.zeros(log.n_users, dtype=bool)
    chosen[rng.choice(log.n_users, size=n_users, replace=False)] = True
    return _subset(log, chosen[log.interactions.user])


def binarize(log: RatingLog) -> RatingLog:
    """Every observed rating becomes an implicit positive (label 1)."""
    inter = log.interactions
    return RatingLog(Interactions(inter.user, inter.item, inter.seq),
                     np.ones(len(inter)), log.user_ids, log.item_ids)


def chronological_split(inter: Interactions, train_fraction: float):
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    cut = int(np.floor(len(inter) * train_fraction))
    return inter[:cut], inter[cut:]


def stream_chunks(inter: Interactions, s_r: int) -> Iterator[Interactions]:
    """Arrival chunks of `s_r` interactions; the last one may be short."""
    if s_r < 1:
        raise ConfigError("s_r must be >= 1")
    for start in range(0, len(inter), s_r):
        yield inter[start:start + s_r]


def load_dataset(path, delimiter: str = ",", min_count: int = 10,
                 n_sample_users: int | None = None, seed: int = 0,
                 skip_header: bool = False) -> RatingLog:
    """parse -> optional user subsample -> filter -> binarize."""
    log = parse_interactions(path, delimiter, skip_header)
    if n_sample_users:
        log = sample_users(log, n_sample_users, seed)
    return binarize(filter_min_interactions(log, min_count))


def dump_mapping(ids: np.ndarray, path) -> None:
    with open(path, "w") as fh:
        for idx, raw in enumerate(ids.tolist()):
            fh.write(f"{idx}\t{raw}\n")
