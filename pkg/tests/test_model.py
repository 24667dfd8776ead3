import math

import numpy as np
import pytest

from hypergt import numerics as nx
from hypergt.cli import run_gradcheck
from hypergt.hypergraph import Hypergraph, star_expand
from hypergt.losses import classification_loss, structure_loss
from hypergt.model import (
    ForwardTrace,
    HyperGT,
    HyperGTConfig,
    assemble_input,
    forward,
    init_hyperedge_features,
    init_params,
    multi_head_attention,
    positional_encoding,
    predict,
)

H3 = np.array([[1, 0], [1, 1], [0, 1]])


def random_hypergraph(rng, n, m, p=0.35):
    inc = (rng.random((n, m)) < p).astype(float)
    for j in np.flatnonzero(inc.sum(axis=0) == 0):
        inc[rng.integers(n), j] = 1
    return Hypergraph(inc)


def toy(seed=0, d_in=3):
    hg = Hypergraph.from_hyperedges(6, [[0, 1, 2], [2, 3], [3, 4, 5]])
    X = np.random.default_rng(seed).uniform(-1, 1, (6, d_in))
    return hg, X


# ---------------------------------------------------------------- config


def test_config_enforces_head_width():
    assert HyperGTConfig(d=8, heads=2).d_k == 4
    assert HyperGTConfig(d=8, heads=2).ffn_hidden == 16
    with pytest.raises(ValueError):
        HyperGTConfig(d=8, heads=2, d_k=3)
    with pytest.raises(ValueError):
        HyperGTConfig(d=9, heads=2)
    with pytest.raises(ValueError):
        HyperGTConfig(layers=0)
    with pytest.raises(ValueError):
        HyperGTConfig(c=1)


def test_parameter_shapes():
    cfg = HyperGTConfig(d=8, heads=2, layers=3, c=4)
    params = init_params(5, 7, 3, cfg, np.random.default_rng(0))
    assert params.W_PV.shape == (7, 8)
    assert params.W_PE.shape == (5, 8)
    assert params.input_w.shape == (3, 8)
    assert params.head_w.shape == (8, 4)
    assert len(params.layers) == 3
    assert params.layers[0].W_Q.shape == (8, 8)
    names = [p.name for p in params.parameters()]
    assert len(names) == len(set(names))


# ---------------------------------------------------------------- inputs


def test_hyperedge_features_are_member_means():
    hg = Hypergraph(np.array([[1, 1], [1, 0], [0, 0]]))
    X = np.array([[1.0, 3.0], [3.0, 5.0], [9.0, 9.0]])
    np.testing.assert_array_equal(init_hyperedge_features(hg, X), [[2.0, 4.0], [1.0, 3.0]])


def test_hyperedge_feature_over_all_nodes():
    hg = Hypergraph(np.ones((3, 1)))
    np.testing.assert_array_equal(init_hyperedge_features(hg, [[0.0], [3.0], [6.0]]), [[3.0]])


def test_hyperedge_features_reject_empty_hyperedge():
    with pytest.raises(ValueError, match="empty hyperedge"):
        init_hyperedge_features(Hypergraph(np.zeros((2, 1))), np.ones((2, 2)))


def test_assemble_input():
    X_V, X_E = np.arange(12.0).reshape(3, 4), -np.arange(8.0).reshape(2, 4)
    out = assemble_input(X_V, X_E)
    assert out.shape == (5, 4)
    np.testing.assert_array_equal(out[:3], X_V)
    np.testing.assert_array_equal(out[3:], X_E)
    np.testing.assert_array_equal(assemble_input(X_V, np.zeros((0, 4))), X_V)
    with pytest.raises(ValueError, match="width mismatch"):
        assemble_input(np.ones((3, 4)), np.ones((2, 5)))


# ---------------------------------------------------------------- positional encoding


def test_identity_projection_makes_bound_tight():
    hg = Hypergraph(H3)
    cfg = HyperGTConfig(d=2, heads=1)
    params = init_params(3, 2, 2, cfg, np.random.default_rng(0))
    params.W_PV.value[...] = np.eye(2)
    P = positional_encoding(hg, params, cfg).value
    np.testing.assert_array_equal(P[:3], H3)
    assert np.linalg.norm(P[0] - P[2]) == pytest.approx(math.sqrt(2), abs=1e-12)


def test_pe_switches_off_to_zero():
    hg = Hypergraph(H3)
    cfg = HyperGTConfig(d=4, heads=2, use_node_pe=False, use_edge_pe=False)
    params = init_params(3, 2, 2, cfg, np.random.default_rng(0))
    np.testing.assert_array_equal(positional_encoding(hg, params, cfg).value, np.zeros((5, 4)))


def test_pe_rejects_wrong_shapes():
    hg = Hypergraph(H3)
    cfg = HyperGTConfig(d=4, heads=2)
    params = init_params(3, 3, 2, cfg, np.random.default_rng(0))
    with pytest.raises(ValueError, match="PE weights"):
        positional_encoding(hg, params, cfg)


def _pairwise_bound_violation(P_rows, inc_rows, W):
    sigma = np.linalg.norm(W, 2)
    worst = -np.inf
    for u in range(len(P_rows)):
        for v in range(u + 1, len(P_rows)):
            n_e = np.sum(inc_rows[u] != inc_rows[v])
            gap = np.linalg.norm(P_rows[u] - P_rows[v]) - sigma * math.sqrt(n_e)
            worst = max(worst, gap)
    return worst


def test_positional_encoding_distance_bound():
    rng = np.random.default_rng(11)
    for trial in range(100):
        n, m = int(rng.integers(2, 15)), int(rng.integers(1, 15))
        hg = random_hypergraph(rng, n, m)
        d = int(rng.integers(1, 5)) * 2
        cfg = HyperGTConfig(d=d, heads=2)
        params = init_params(n, m, 3, cfg, rng)
        params.W_PV.value[...] = rng.normal(size=(m, d))
        params.W_PE.value[...] = rng.normal(size=(n, d))
        P = positional_encoding(hg, params, cfg).value
        H = hg.incidence
        assert _pairwise_bound_violation(P[:n], H, params.W_PV.value) <= 1e-9
        assert _pairwise_bound_violation(P[n:], H.T, params.W_PE.value) <= 1e-9


def test_positional_encoding_bound_is_tight_for_identity():
    rng = np.random.default_rng(5)
    for _ in range(20):
        n, m = int(rng.integers(2, 10)), int(rng.integers(1, 8))
        hg = random_hypergraph(rng, n, m)
        cfg = HyperGTConfig(d=m, heads=1)
        params = init_params(n, m, 2, cfg, rng)
        params.W_PV.value[...] = np.eye(m)
        P = positional_encoding(hg, params, cfg).value[:n]
        H = hg.incidence
        for u in range(n):
            for v in range(n):
                n_e = np.sum(H[u] != H[v])
                assert abs(np.linalg.norm(P[u] - P[v]) - math.sqrt(n_e)) <= 1e-12


# ---------------------------------------------------------------- attention


def test_zero_queries_give_uniform_attention_and_mean_values():
    rng = np.random.default_rng(0)
    cfg = HyperGTConfig(d=4, heads=2, dropout_rate=0.0)
    layer = init_params(3, 2, 2, cfg, rng).layers[0]
    layer.W_Q.value[...] = 0.0
    h = rng.normal(size=(5, 4))
    out, avg, heads = multi_head_attention(nx.Tensor(h), layer, cfg)
    np.testing.assert_allclose(avg.value, np.full((5, 5), 0.2), atol=1e-15)
    mean_v = (h @ layer.W_V.value).mean(axis=0, keepdims=True)
    expected = mean_v @ layer.W_O.value + layer.b_O.value
    np.testing.assert_allclose(out.value, np.repeat(expected, 5, axis=0), atol=1e-14)


def test_single_instance_attention():
    rng = np.random.default_rng(1)
    cfg = HyperGTConfig(d=4, heads=2, dropout_rate=0.0)
    layer = init_params(1, 0, 2, cfg, rng).layers[0]
    h = rng.normal(size=(1, 4))
    out, avg, _ = multi_head_attention(nx.Tensor(h), layer, cfg)
    np.testing.assert_array_equal(avg.value, [[1.0]])
    np.testing.assert_allclose(out.value, h @ layer.W_V.value @ layer.W_O.value, atol=1e-15)


def test_attention_rows_are_stochastic():
    rng = np.random.default_rng(2)
    for _ in range(10):
        hg = random_hypergraph(rng, 8, 5)
        cfg = HyperGTConfig(d=8, heads=4, layers=2)
        model = HyperGT(hg, 3, cfg, seed=int(rng.integers(1000)))
        trace = model(rng.normal(size=(8, 3)) * 5)
        for avg, heads in zip(trace.attn, trace.head_attn):
            assert np.all(np.abs(avg.value.sum(axis=1) - 1) <= 1e-9)
            assert np.all(np.abs(heads.value.sum(axis=-1) - 1) <= 1e-9)


# ---------------------------------------------------------------- forward


def test_zero_network_outputs_classifier_bias():
    hg, X = toy()
    cfg = HyperGTConfig(d=4, heads=1, layers=1, c=3, dropout_rate=0.0)
    params = init_params(6, 3, 3, cfg, np.random.default_rng(0))
    for p in params.parameters():
        p.value[...] = 0.0
    params.head_b.value[...] = [1.5, -2.0, 0.25]
    trace = forward(hg, X, None, params, cfg)
    np.testing.assert_array_equal(trace.logits.value, np.tile([1.5, -2.0, 0.25], (6, 1)))


def test_forward_shapes():
    hg, X = toy()
    cfg = HyperGTConfig(d=4, heads=2, layers=3, c=2)
    trace = HyperGT(hg, 3, cfg)(X)
    assert trace.logits.shape == (6, 2)
    assert len(trace.attn) == 3
    assert all(a.shape == (9, 9) for a in trace.attn)


def test_forward_uses_supplied_hyperedge_features():
    hg, X = toy()
    cfg = HyperGTConfig(d=4, heads=2, dropout_rate=0.0)
    model = HyperGT(hg, 3, cfg)
    X_E = init_hyperedge_features(hg, X)
    np.testing.assert_array_equal(model(X).logits.value, model(X, X_E).logits.value)
    assert not np.array_equal(model(X).logits.value, model(X, X_E + 1.0).logits.value)


def test_dropout_only_in_train_mode():
    hg, X = toy()
    cfg = HyperGTConfig(d=4, heads=2, dropout_rate=0.5)
    model = HyperGT(hg, 3, cfg)
    a = model(X, train_mode=False, rng=np.random.default_rng(0)).logits.value
    b = model(X, train_mode=False, rng=np.random.default_rng(1)).logits.value
    np.testing.assert_array_equal(a, b)
    c = model(X, train_mode=True, rng=np.random.default_rng(0)).logits.value
    assert not np.array_equal(a, c)


def test_permutation_equivariance():
    rng = np.random.default_rng(3)
    hg = random_hypergraph(rng, 7, 4)
    X = rng.normal(size=(7, 3))
    cfg = HyperGTConfig(d=4, heads=2, layers=2, dropout_rate=0.0)
    params = init_params(7, 4, 3, cfg, rng)
    perm = rng.permutation(7)
    hg_p = Hypergraph(hg.incidence[perm])
    params_p = init_params(7, 4, 3, cfg, rng)
    for src, dst in zip(params.parameters(), params_p.parameters()):
        dst.value[...] = src.value
    params_p.W_PE.value[...] = params.W_PE.value[perm]
    base = forward(hg, X, None, params, cfg).logits.value
    permuted = forward(hg_p, X[perm], None, params_p, cfg).logits.value
    np.testing.assert_allclose(permuted, base[perm], atol=1e-9, rtol=0)


def test_node_pe_switch_matches_zero_projection_bitwise():
    hg, X = toy()
    cfg_off = HyperGTConfig(d=4, heads=2, use_node_pe=False, dropout_rate=0.0)
    cfg_on = HyperGTConfig(d=4, heads=2, use_node_pe=True, dropout_rate=0.0)
    params = init_params(6, 3, 3, cfg_on, np.random.default_rng(4))
    off = forward(hg, X, None, params, cfg_off).logits.value
    params.W_PV.value[...] = 0.0
    zeroed = forward(hg, X, None, params, cfg_on).logits.value
    assert np.array_equal(off, zeroed)


def test_edge_pe_switch_matches_zero_projection_bitwise():
    hg, X = toy()
    cfg_off = HyperGTConfig(d=4, heads=2, use_edge_pe=False, dropout_rate=0.0)
    cfg_on = HyperGTConfig(d=4, heads=2, dropout_rate=0.0)
    params = init_params(6, 3, 3, cfg_on, np.random.default_rng(4))
    off = forward(hg, X, None, params, cfg_off).logits.value
    params.W_PE.value[...] = 0.0
    assert np.array_equal(off, forward(hg, X, None, params, cfg_on).logits.value)


# ---------------------------------------------------------------- predict


@pytest.mark.parametrize(
    "row, expected",
    [([2.0, 1.0], 0), ([1.0, 1.0], 0), ([-np.inf, -np.inf, -np.inf, 0.0], 3)],
)
def test_predict(row, expected):
    assert predict(np.array([row]))[0] == expected


def test_predict_reads_trace():
    trace = ForwardTrace(logits=nx.Tensor([[0.0, 1.0], [3.0, 1.0]]), attn=[])
    np.testing.assert_array_equal(predict(trace), [1, 0])


# ---------------------------------------------------------------- gradients


def test_full_model_gradcheck():
    worst, report = run_gradcheck(eps=1e-5, lam=1.0)
    assert worst < 1e-4, max(report.items(), key=lambda kv: kv[1])


def test_full_model_gradcheck_other_seed_and_classification_only():
    assert run_gradcheck(seed=3)[0] < 1e-4
    assert run_gradcheck(lam=0.0)[0] < 1e-4


def test_gradcheck_with_dropout_mask_fixed():
    hg, X = toy()
    cfg = HyperGTConfig(d=4, heads=2, layers=1, dropout_rate=0.3)
    model = HyperGT(hg, 3, cfg, seed=2)
    se = star_expand(hg)
    labels = np.array([0, 1, 0, 1, 1, 0])

    def loss():
        trace = model(X, train_mode=True, rng=np.random.default_rng(9))
        return nx.add(classification_loss(trace.logits, labels, np.arange(6)),
                      structure_loss(se, trace.attn))

    assert nx.finite_diff_gradcheck(loss, model.parameters()) < 1e-4
