"""Losses, negative sampling and the incremental training loop."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .dwmoe import DwmoeModel
from .ingest import ConfigError, Interactions
from .nn import Adam
from .sampling import Reservoir, SamplerConfig, TrainingBatch, prepare_batch

PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 256
    gamma: float = 0.01
    n_negative: int = 4
    l2: float = 1e-6
    epochs_per_batch: int = 1
    gate_loss: str = "example"  # or "batch"
    seed: int = 0

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigError("gamma must be >= 0")
        if self.n_negative < 0:
            raise ConfigError("n_negative must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs_per_batch < 1:
            raise ConfigError("epochs_per_batch must be >= 1")
        if self.gate_loss not in ("example", "batch"):
            raise ConfigError(f"gate_loss must be 'example' or 'batch', got {self.gate_loss!r}")


@dataclass
class LossReport:
    loss_acc: float = 0.0
    loss_gate: float = 0.0
    loss_total: float = 0.0
    examples_seen: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def loss_acc(y, yhat):
    """Binary cross-entropy with the prediction clamped to [1e-12, 1 - 1e-12]."""
    y = np.asarray(y, dtype=np.float64)
    p = np.clip(np.asarray(yhat, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))


def _loss_acc_grad(y, yhat):
    p = np.clip(yhat, PROB_CLAMP, 1.0 - PROB_CLAMP)
    grad = -(y / p) + (1.0 - y) / (1.0 - p)
    return np.where(p == yhat, grad, 0.0)


def gate_std(g):
    """Population standard deviation over the last axis."""
    g = np.asarray(g, dtype=np.float64)
    if g.shape[-1] == 0:
        raise ValueError("gating vector is empty")
    return np.sqrt(np.mean((g - g.mean(axis=-1, keepdims=True)) ** 2, axis=-1))


def _gate_std_grad(g, std):
    n_e = g.shape[-1]
    centred = g - g.mean(axis=-1, keepdims=True)
    std = np.asarray(std)[..., None]
    with np.errstate(invalid="ignore", divide="ignore"):
        grad = centred / (n_e * std)
    return np.where(std > 0, grad, 0.0)


def loss_gate(g_moue, g_moie):
    """Std of the user-wing gates plus std of the item-wing gates."""
    return gate_std(g_moue) + gate_std(g_moie)


def negative_sample(user_id: int, n_negative: int, is_positive, item_count: int,
                    rng: np.random.Generator) -> list[int]:
    """Uniform items the user has not interacted with, per `is_positive(u, v)`.

    After ``100 * n_negative`` rejected draws the next draws are accepted
    unchecked, which only happens for users who touched nearly every item.
    """
    if item_count <= 0:
        raise ValueError("item_count must be positive")
    out: list[int] = []
    budget = 100 * n_negative
    while len(out) < n_negative:
        v = int(rng.integers(item_count))
        if budget > 0 and is_positive(user_id, v):
            budget -= 1
            continue
        out.append(v)
    return out


def negative_sample_batch(users: np.ndarray, n_negative: int, is_positive, item_count: int,
                          rng: np.random.Generator, max_rounds: int = 100) -> np.ndarray:
    """Vectorised :func:`negative_sample`; returns ``(len(users), n_negative)``."""
    users = np.asarray(users, dtype=np.int64)
    if n_negative == 0 or not len(users):
        return np.empty((len(users), n_negative), dtype=np.int64)
    cand = rng.integers(item_count, size=(len(users), n_negative))
    pending = np.ones(cand.shape, dtype=bool)
    for _ in range(max_rounds):
        rows, cols = np.nonzero(pending)
        if not len(rows):
            break
        hit = np.fromiter((is_positive(u, v) for u, v in
                           zip(users[rows].tolist(), cand[rows, cols].tolist())),
                          dtype=bool, count=len(rows))
        pending[rows[~hit], cols[~hit]] = False
        redo_r, redo_c = rows[hit], cols[hit]
        cand[redo_r, redo_c] = rng.integers(item_count, size=len(redo_r))
    return cand


class MembershipOracle:
    """``(u, v) in reservoir or in the extra pair set``."""

    def __init__(self, reservoir: Reservoir | None = None, extra: Interactions | None = None):
        self.reservoir = reservoir
        self.extra = set(extra.pairs()) if extra is not None else set()

    def __call__(self, user_id: int, item_id: int) -> bool:
        if (user_id, item_id) in self.extra:
            return True
        return self.reservoir is not None and self.reservoir.contains(user_id, item_id)


def batch_loss_and_grads(model: DwmoeModel, users, items, labels, gamma: float,
                         gate_loss: str = "example", with_grads: bool = True):
    """Mean total loss over a set of labelled examples and its gradient.

    Returns ``(LossReport, grads)``; `grads` is None when `with_grads` is False.
    """
    labels = np.asarray(labels, dtype=np.float64)
    n = len(labels)
    fwd = model.forward(users, items, keep_cache=with_grads)
    acc = loss_acc(labels, fwd.yhat)
    std_u, std_v = gate_std(fwd.g_user), gate_std(fwd.g_item)
    gate = std_u + std_v
    if gate_loss == "batch":
        bu, bv = fwd.g_user.mean(axis=0), fwd.g_item.mean(axis=0)
        gate_obj = float(gate_std(bu) + gate_std(bv))
    else:
        gate_obj = float(gate.mean())
    report = LossReport(float(acc.mean()), gate_obj, float(acc.mean()) + gamma * gate_obj, n)
    if not with_grads:
        return report, None

    dyhat = _loss_acc_grad(labels, fwd.yhat) / n
    if gate_loss == "batch":
        dgu = np.broadcast_to(_gate_std_grad(bu, gate_std(bu)) / n, fwd.g_user.shape)
        dgv = np.broadcast_to(_gate_std_grad(bv, gate_std(bv)) / n, fwd.g_item.shape)
    else:
        dgu = _gate_std_grad(fwd.g_user, std_u) / n
        dgv = _gate_std_grad(fwd.g_item, std_v) / n
    grads = model.backward(fwd, dyhat, gamma * dgu, gamma * dgv)
    return report, grads


def _with_negatives(positives: Interactions, n_negative: int, oracle, item_count: int, rng):
    users = positives.user
    negs = negative_sample_batch(users, n_negative, oracle, item_count, rng)
    all_users = np.concatenate([users, np.repeat(users, n_negative)])
    all_items = np.concatenate([positives.item, negs.reshape(-1)])
    labels = np.concatenate([np.ones(len(users)), np.zeros(negs.size)])
    return all_users, all_items, labels


def train_step(model: DwmoeModel, batch: TrainingBatch, config: TrainConfig, optimizer: Adam,
               oracle, rng: np.random.Generator) -> LossReport:
    """One pass over `batch`: sample negatives, one Adam update."""
    positives = batch.interactions if isinstance(batch, TrainingBatch) else batch
    if not len(positives):
        raise ValueError("train_step needs a non-empty batch")
    users, items, labels = _with_negatives(positives, config.n_negative, oracle,
                                           model.config.n_items, rng)
    report, grads = batch_loss_and_grads(model, users, items, labels, config.gamma,
                                         config.gate_loss)
    optimizer.step(model.params, grads)
    return report


def _merge(reports: list[LossReport]) -> LossReport:
    total = sum(r.examples_seen for r in reports)
    if not total:
        return LossReport()
    w = [r.examples_seen / total for r in reports]
    return LossReport(
        sum(wi * r.loss_acc for wi, r in zip(w, reports)),
        sum(wi * r.loss_gate for wi, r in zip(w, reports)),
        sum(wi * r.loss_total for wi, r in zip(w, reports)),
        total,
    )


class StreamingTrainer:
    """Model, optimizer, reservoir and random streams of one streaming run."""

    def __init__(self, model: DwmoeModel, sampler: SamplerConfig, config: TrainConfig):
        self.model = model
        self.sampler = sampler
        self.config = config
        self.reservoir = Reservoir(sampler.capacity)
        self.optimizer = Adam(lr=config.learning_rate, l2=config.l2)
        sample_seq, neg_seq = np.random.SeedSequence(config.seed, spawn_key=(0,)).spawn(2)
        self.sample_rng = np.random.default_rng(sample_seq)
        self.neg_rng = np.random.default_rng(neg_seq)
        self.last_batch: TrainingBatch | None = None

    def incremental_train(self, chunk: Interactions) -> LossReport:
        """Train on the batch prepared from `chunk`, then add `chunk` to the reservoir.

        Interactions whose ids fall outside the model's embedding tables are
        dropped first.
        """
        cfg = self.model.config
        known = (chunk.user < cfg.n_users) & (chunk.item < cfg.n_items)
        if not known.all():
            chunk = chunk[known]
        batch = prepare_batch(chunk, self.reservoir, self.sampler, self.sample_rng)
        self.last_batch = batch
        reports = []
        if len(batch):
            oracle = MembershipOracle(self.reservoir, chunk)
            for _ in range(self.config.epochs_per_batch):
                reports.append(train_step(self.model, batch, self.config, self.optimizer,
                                          oracle, self.neg_rng))
        self.reservoir.insert(chunk)
        return _merge(reports)


def incremental_train(trainer: StreamingTrainer, chunk: Interactions) -> LossReport:
    return trainer.incremental_train(chunk)
