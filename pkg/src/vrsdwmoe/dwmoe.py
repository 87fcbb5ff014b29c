"""Double-wing mixture of experts.

One wing (``moue``) mixes user experts, the other (``moie``) mixes item
experts.  Each wing's gate sees its own entity's gate embedding concatenated
with an "interference" vector computed from the *other* wing's gate
embedding, so the user-side mixture depends on which item is being scored
and vice versa.  The fused user and item vectors meet in a cosine similarity
followed by a 1x1 output layer.

All operations are batched: ids are integer arrays of shape ``(B,)``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .nn import INIT_SCALE, Dense, Embedding, Params, init_uniform, load_archive, save_archive, softmax


@dataclass(frozen=True)
class ModelConfig:
    n_users: int
    n_items: int
    n_e: int = 2
    dim: int = 32
    widths: tuple[int, ...] = (32, 16)
    expert_activation: str = "relu"
    expert_output_activation: str | None = "identity"  # last expert layer; None -> expert_activation
    gate_activation: str = "relu"
    output_activation: str = "sigmoid"
    inter_dim: int | None = None
    init_scale: float = 0.05

    def __post_init__(self):
        if self.n_e < 1:
            raise ValueError("n_e must be >= 1")
        if not self.widths:
            raise ValueError("experts need at least one dense layer")
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))

    @property
    def interference_width(self) -> int:
        return self.dim if self.inter_dim is None else self.inter_dim


class ExpertNet:
    def __init__(self, params: Params, name: str, rows: int, cfg: ModelConfig, rng):
        self.embedding = Embedding(params, f"{name}.emb", rows, cfg.dim, rng)
        self.mlp = []
        width = cfg.dim
        last = len(cfg.widths) - 1
        for depth, out in enumerate(cfg.widths):
            act = cfg.expert_activation
            if depth == last and cfg.expert_output_activation is not None:
                act = cfg.expert_output_activation
            self.mlp.append(Dense(params, f"{name}.fc{depth}", width, out, act, rng))
            width = out

    def forward(self, ids):
        h = self.embedding.forward(ids)
        caches = []
        for layer in self.mlp:
            h, c = layer.forward(h)
            caches.append(c)
        return h, caches

    def backward(self, ids, caches, dout, grads: Params) -> None:
        for layer, c in zip(reversed(self.mlp), reversed(caches)):
            dout = layer.backward(c, dout, grads)
        self.embedding.backward(ids, dout, grads)


class GatingNet:
    def __init__(self, params: Params, name: str, rows: int, cfg: ModelConfig, rng):
        iw = cfg.interference_width
        self.embedding = Embedding(params, f"{name}.emb", rows, cfg.dim, rng)
        self.interference = Dense(params, f"{name}.inter", cfg.dim, iw, cfg.gate_activation, rng)
        self.softmax_layer = Dense(params, f"{name}.soft", cfg.dim + iw, cfg.n_e, "softmax", rng)

    def forward(self, own_embedding, other_embedding):
        inter, c_inter = self.interference.forward(other_embedding)
        concat = np.concatenate([own_embedding, inter], axis=-1)
        g, c_soft = self.softmax_layer.forward(concat)
        return g, (c_inter, c_soft)

    def backward(self, cache, dg, grads: Params):
        """Return gradients w.r.t. (own embedding, other embedding)."""
        c_inter, c_soft = cache
        dconcat = self.softmax_layer.backward(c_soft, dg, grads)
        d = self.embedding.dim
        d_other = self.interference.backward(c_inter, dconcat[..., d:], grads)
        return dconcat[..., :d], d_other


class Wing:
    def __init__(self, params: Params, name: str, rows: int, cfg: ModelConfig, rng):
        self.experts = [ExpertNet(params, f"{name}.expert{i}", rows, cfg, rng)
                        for i in range(cfg.n_e)]
        self.gate = GatingNet(params, f"{name}.gate", rows, cfg, rng)


def fuse(outputs, g):
    """Gate-weighted sum of expert outputs.

    `outputs` is a sequence of n_e arrays ``(..., width)``; `g` is ``(..., n_e)``.
    """
    outputs = [np.asarray(o, dtype=np.float64) for o in outputs]
    g = np.asarray(g, dtype=np.float64)
    if len(outputs) != g.shape[-1]:
        raise ValueError(f"{len(outputs)} expert outputs but {g.shape[-1]} gating weights")
    stacked = np.stack(outputs, axis=-2)  # (..., n_e, width)
    return np.einsum("...e,...ew->...w", g, stacked)


def cosine(p, q):
    """Row-wise cosine similarity; defined as 0 when either vector is zero."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    np_, nq = np.linalg.norm(p, axis=-1), np.linalg.norm(q, axis=-1)
    denom = np_ * nq
    safe = denom > 0
    cos = np.zeros_like(denom)
    cos[safe] = np.sum(p * q, axis=-1)[safe] / denom[safe]
    return cos, (p, q, np_, nq, cos, safe)


def cosine_backward(cache, dcos):
    p, q, np_, nq, cos, safe = cache
    dp = np.zeros_like(p)
    dq = np.zeros_like(q)
    s = safe
    inv = 1.0 / (np_[s] * nq[s])
    dc = dcos[s][:, None]
    dp[s] = dc * (q[s] * inv[:, None] - cos[s][:, None] * p[s] / (np_[s] ** 2)[:, None])
    dq[s] = dc * (p[s] * inv[:, None] - cos[s][:, None] * q[s] / (nq[s] ** 2)[:, None])
    return dp, dq


@dataclass
class Forward:
    yhat: np.ndarray
    g_user: np.ndarray
    g_item: np.ndarray
    cos: np.ndarray
    cache: dict = field(repr=False, default_factory=dict)


class DwmoeModel:
    def __init__(self, config: ModelConfig, seed: int = 0, params: Params | None = None):
        self.config = config
        rng = np.random.default_rng(seed)
        self.params: Params = {}
        if params is not None:
            self.params.update({k: np.array(v, dtype=np.float64) for k, v in params.items()})
        self.moue = Wing(self.params, "moue", config.n_users, config, rng)
        self.moie = Wing(self.params, "moie", config.n_items, config, rng)
        self.output_layer = Dense(self.params, "out", 1, 1, config.output_activation, rng)
        if params is None and config.init_scale != INIT_SCALE:
            init_uniform(self.params, rng, config.init_scale)

    @property
    def n_e(self) -> int:
        return self.config.n_e

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def forward(self, users, items, keep_cache: bool = True) -> Forward:
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        pu = self.moue.gate.embedding.forward(users)
        qv = self.moie.gate.embedding.forward(items)
        g_u, c_gu = self.moue.gate.forward(pu, qv)
        g_v, c_gv = self.moie.gate.forward(qv, pu)

        user_out, user_caches = zip(*(e.forward(users) for e in self.moue.experts))
        item_out, item_caches = zip(*(e.forward(items) for e in self.moie.experts))
        p_uni = fuse(user_out, g_u)
        q_uni = fuse(item_out, g_v)

        cos, c_cos = cosine(p_uni, q_uni)
        yhat, c_out = self.output_layer.forward(cos[:, None])
        cache = {}
        if keep_cache:
            cache = dict(users=users, items=items, c_gu=c_gu, c_gv=c_gv,
                         user_out=user_out, item_out=item_out,
                         user_caches=user_caches, item_caches=item_caches,
                         g_u=g_u, g_v=g_v, c_cos=c_cos, c_out=c_out)
        return Forward(yhat[:, 0], g_u, g_v, cos, cache)

    def backward(self, fwd: Forward, dyhat, dg_user=None, dg_item=None) -> Params:
        """Gradients of a scalar loss given its partials w.r.t. yhat and the gates."""
        c = fwd.cache
        if not c:
            raise RuntimeError("backward needs a forward pass run with keep_cache=True")
        grads: Params = {}
        dcos = self.output_layer.backward(c["c_out"], np.asarray(dyhat)[:, None], grads)[:, 0]
        dp_uni, dq_uni = cosine_backward(c["c_cos"], dcos)

        dg_u = np.stack([np.sum(dp_uni * o, axis=1) for o in c["user_out"]], axis=1)
        dg_v = np.stack([np.sum(dq_uni * o, axis=1) for o in c["item_out"]], axis=1)
        if dg_user is not None:
            dg_u = dg_u + dg_user
        if dg_item is not None:
            dg_v = dg_v + dg_item

        for i, expert in enumerate(self.moue.experts):
            expert.backward(c["users"], c["user_caches"][i], c["g_u"][:, i:i + 1] * dp_uni, grads)
        for j, expert in enumerate(self.moie.experts):
            expert.backward(c["items"], c["item_caches"][j], c["g_v"][:, j:j + 1] * dq_uni, grads)

        dpu_own, dqv_other = self.moue.gate.backward(c["c_gu"], dg_u, grads)
        dqv_own, dpu_other = self.moie.gate.backward(c["c_gv"], dg_v, grads)
        self.moue.gate.embedding.backward(c["users"], dpu_own + dpu_other, grads)
        self.moie.gate.embedding.backward(c["items"], dqv_own + dqv_other, grads)
        return grads

    def predict(self, users, items):
        return self.forward(users, items, keep_cache=False).yhat

    def save(self, path) -> None:
        save_archive(path, self.params, {"model": _config_dict(self.config)})

    @classmethod
    def load(cls, path) -> "DwmoeModel":
        params, header = load_archive(path)
        cfg = dict(header["model"])
        cfg["widths"] = tuple(cfg["widths"])
        return cls(ModelConfig(**cfg), params=params)


def _config_dict(cfg: ModelConfig) -> dict:
    d = asdict(cfg)
    d["widths"] = list(d["widths"])
    return d


def expert_forward(expert: ExpertNet, entity_ids):
    return expert.forward(entity_ids)[0]


def gating_forward(gate: GatingNet, own_ids, other_embedding):
    own = gate.embedding.forward(own_ids)
    return gate.forward(own, other_embedding)[0]


def interact(p_uni, q_uni, w_out: float, b_out: float):
    cos, _ = cosine(p_uni, q_uni)
    return 1.0 / (1.0 + np.exp(-(w_out * cos + b_out)))


def predict(model: DwmoeModel, user_id, item_id):
    scalar = np.ndim(user_id) == 0 and np.ndim(item_id) == 0
    out = model.predict(np.atleast_1d(user_id), np.atleast_1d(item_id))
    return float(out[0]) if scalar else out


def score_candidates(model: DwmoeModel, user_id: int, item_ids) -> np.ndarray:
    item_ids = np.asarray(item_ids, dtype=np.int64)
    return model.predict(np.full(len(item_ids), user_id, dtype=np.int64), item_ids)


__all__ = [
    "ModelConfig", "DwmoeModel", "ExpertNet", "GatingNet", "Forward", "fuse", "cosine",
    "interact", "predict", "score_candidates", "expert_forward", "gating_forward", "softmax",
]
