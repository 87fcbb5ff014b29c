import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from vrsdwmoe.dwmoe import (DwmoeModel, ModelConfig, cosine, cosine_backward, expert_forward,
                            fuse, gating_forward, interact, predict, score_candidates)
from vrsdwmoe.nn import gradient_check, sigmoid
from vrsdwmoe.train import batch_loss_and_grads

vec = arrays(np.float64, 5, elements=st.floats(-10, 10))


def perturbed(model, rng, scale=0.5):
    """Move every parameter (biases included) to a random point away from relu kinks."""
    for p in model.params.values():
        p[...] = rng.uniform(-scale, scale, p.shape)
    return model


def small_model(n_e=2, seed=0, **kw):
    cfg = ModelConfig(n_users=6, n_items=7, n_e=n_e, dim=8, widths=(8, 4), **kw)
    return DwmoeModel(cfg, seed=seed)


def test_parameter_layout():
    m = small_model(n_e=3)
    assert sum(k.startswith("moue.expert") and k.endswith(".emb") for k in m.params) == 3
    assert sum(k.startswith("moie.expert") and k.endswith(".emb") for k in m.params) == 3
    assert m.params["moue.gate.soft.W"].shape == (3, 16)
    assert m.params["out.W"].shape == (1, 1)
    assert m.n_parameters() == sum(p.size for p in m.params.values())


def test_init_range_and_zero_biases():
    m = DwmoeModel(ModelConfig(50, 40, n_e=2), seed=3)
    for k, p in m.params.items():
        if k.endswith(".b"):
            assert not p.any()
        else:
            assert np.abs(p).max() <= 0.05


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(3, 3, n_e=0)
    with pytest.raises(ValueError):
        ModelConfig(3, 3, widths=())


def test_expert_identity_returns_embedding_row():
    cfg = ModelConfig(4, 4, n_e=1, dim=3, widths=(3,), expert_activation="identity")
    m = DwmoeModel(cfg)
    e = m.moue.experts[0]
    m.params["moue.expert0.fc0.W"][...] = np.eye(3)
    assert np.array_equal(expert_forward(e, np.array([2])), m.params["moue.expert0.emb"][[2]])


def test_identical_experts_agree():
    m = small_model()
    for k in list(m.params):
        if k.startswith("moue.expert1."):
            m.params[k][...] = m.params[k.replace("expert1", "expert0")]
    ids = np.arange(6)
    assert np.array_equal(expert_forward(m.moue.experts[0], ids),
                          expert_forward(m.moue.experts[1], ids))


def test_expert_out_of_range():
    with pytest.raises(IndexError):
        small_model().predict([6], [0])


def test_gate_uniform_when_softmax_weights_zero():
    m = small_model(n_e=4)
    m.params["moue.gate.soft.W"][...] = 0
    g = gating_forward(m.moue.gate, np.array([0, 1]), m.params["moie.gate.emb"][[2, 3]])
    assert np.allclose(g, 0.25)


def test_gate_closed_form():
    m = small_model(n_e=2)
    m.params["moue.gate.soft.W"][...] = 0
    m.params["moue.gate.soft.b"][...] = [np.log(3), 0.0]
    g = gating_forward(m.moue.gate, np.array([0]), m.params["moie.gate.emb"][[0]])
    assert np.allclose(g, [[0.75, 0.25]])


def test_interference_pathway_is_live():
    m = perturbed(small_model(), np.random.default_rng(0))
    g1 = m.forward([0], [1]).g_user
    g2 = m.forward([0], [2]).g_user
    assert not np.allclose(g1, g2)


def test_fuse_examples():
    v = np.array([1.0, -2.0])
    assert np.allclose(fuse([v, v, v], np.array([0.2, 0.3, 0.5])), v)
    outs = [np.array([1.0, 2.0]), np.array([3.0, 4.0])]
    assert np.array_equal(fuse(outs, np.array([0.0, 1.0])), outs[1])
    assert np.allclose(fuse([np.array([1.0, 0]), np.array([0, 1.0])], np.array([0.25, 0.75])),
                       [0.25, 0.75])
    with pytest.raises(ValueError):
        fuse(outs, np.array([1.0]))


@given(arrays(np.float64, 6, elements=st.floats(-5, 5)),
       arrays(np.float64, 6, elements=st.floats(-5, 5)))
@settings(max_examples=100, deadline=None)
def test_fuse_dim1_in_convex_hull(outs, logits):
    g = np.exp(logits - logits.max())
    g /= g.sum()
    fused = fuse([np.array([o]) for o in outs], g)[0]
    assert outs.min() - 1e-12 <= fused <= outs.max() + 1e-12


def test_cosine_cases():
    p = np.array([[1.0, 2.0, 3.0]])
    assert cosine(p, p)[0][0] == pytest.approx(1.0)
    assert cosine(np.array([[1.0, 0]]), np.array([[0, 1.0]]))[0][0] == 0
    assert cosine(np.zeros((1, 3)), p)[0][0] == 0


@given(vec, vec, st.floats(1e-3, 1e3))
@settings(max_examples=100, deadline=None)
def test_cosine_scale_invariant(p, q, c):
    a = cosine(p[None], q[None])[0][0]
    b = cosine(c * p[None], q[None])[0][0]
    assert -1 - 1e-12 <= a <= 1 + 1e-12
    assert b == pytest.approx(a, abs=1e-9)


def test_cosine_backward_matches_finite_differences():
    rng = np.random.default_rng(1)
    p, q = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    dcos = rng.normal(size=3)
    dp, dq = cosine_backward(cosine(p, q)[1], dcos)
    h = 1e-6
    for arr, grad in ((p, dp), (q, dq)):
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = np.dot(cosine(p, q)[0], dcos)
            arr[idx] = old - h
            down = np.dot(cosine(p, q)[0], dcos)
            arr[idx] = old
            assert grad[idx] == pytest.approx((up - down) / (2 * h), rel=1e-6, abs=1e-9)


def test_interact_cases():
    p = np.array([[0.3, -0.4]])
    assert interact(p, p, 2.0, -0.5)[0] == pytest.approx(sigmoid(1.5))
    assert interact(np.array([[1.0, 0]]), np.array([[0, 1.0]]), 2.0, -0.5)[0] == pytest.approx(sigmoid(-0.5))
    assert interact(7 * p, p, 2.0, -0.5)[0] == pytest.approx(interact(p, p, 2.0, -0.5)[0])


def test_predict_in_unit_interval_and_deterministic():
    m = perturbed(small_model(), np.random.default_rng(2))
    u, v = np.repeat(np.arange(6), 7), np.tile(np.arange(7), 6)
    a, b = m.predict(u, v), m.predict(u, v)
    assert np.array_equal(a, b)
    assert ((a > 0) & (a < 1)).all()
    assert isinstance(predict(m, 1, 2), float)
    assert predict(m, 1, 2) == a[9]


def test_single_expert_gate_is_one():
    m = perturbed(small_model(n_e=1), np.random.default_rng(3))
    f = m.forward(np.arange(6), np.arange(6))
    assert np.array_equal(f.g_user, np.ones((6, 1)))
    assert np.array_equal(f.g_item, np.ones((6, 1)))


def test_score_candidates_permutation():
    m = perturbed(small_model(), np.random.default_rng(4))
    items = np.array([3, 0, 6, 2])
    s = score_candidates(m, 2, items)
    perm = np.array([2, 0, 3, 1])
    assert np.array_equal(score_candidates(m, 2, items[perm]), s[perm])
    assert score_candidates(m, 2, [5])[0] == predict(m, 2, 5)


def test_gates_sum_to_one():
    m = perturbed(small_model(n_e=5), np.random.default_rng(5), scale=2.0)
    f = m.forward(np.repeat(np.arange(6), 7), np.tile(np.arange(7), 6))
    for g in (f.g_user, f.g_item):
        assert np.abs(g.sum(axis=1) - 1).max() < 1e-12
        assert (g > 0).all()


def test_backward_requires_cache():
    m = small_model()
    f = m.forward([0], [0], keep_cache=False)
    with pytest.raises(RuntimeError):
        m.backward(f, np.ones(1))


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("kw", [{}, {"expert_output_activation": "relu"},
                                {"expert_activation": "tanh", "gate_activation": "tanh"}])
def test_full_model_gradient_check(seed, kw):
    rng = np.random.default_rng(seed)
    m = perturbed(small_model(seed=seed, **kw), rng)
    users = rng.integers(6, size=10)
    items = rng.integers(7, size=10)
    labels = rng.integers(2, size=10)

    def loss():
        return batch_loss_and_grads(m, users, items, labels, 0.01, with_grads=False)[0].loss_total

    _, grads = batch_loss_and_grads(m, users, items, labels, 0.01)
    report = gradient_check(loss, grads, m.params)
    assert max(report.values()) < 1e-4, report


def test_save_load_roundtrip(tmp_path):
    m = perturbed(small_model(n_e=3), np.random.default_rng(6))
    m.save(tmp_path / "m.npz")
    back = DwmoeModel.load(tmp_path / "m.npz")
    assert back.config == m.config
    u, v = np.arange(6), np.arange(6)
    assert np.array_equal(back.predict(u, v), m.predict(u, v))
