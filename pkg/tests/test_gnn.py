import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from graph_bendr.diff import grad_check
from graph_bendr.gnn import (
    GATLayer,
    GCNLayer,
    GnnConfig,
    GnnStack,
    GraphError,
    SAGELayer,
    gat_attention,
    gat_layer,
    gcn_layer,
    gcn_operator,
    gnn_stack,
    sage_layer,
)

D = torch.float64


def rand_w(C, rng):
    A = rng.uniform(0.2, 2.0, (C, C))
    W = (A + A.T) / 2
    np.fill_diagonal(W, 0.0)
    return W


def t(a):
    return torch.tensor(np.asarray(a), dtype=D)


def leaky(x, s=0.2):
    return x if x > 0 else s * x


def test_gcn_single_node_is_affine():
    rng = np.random.default_rng(0)
    X, th, b = t(rng.standard_normal((1, 3))), t(rng.standard_normal((3, 2))), t(rng.standard_normal(2))
    for ew in (True, False):
        out = gcn_layer(X, np.zeros((1, 1)), th, b, ew)
        assert torch.allclose(out, X @ th + b, atol=1e-12)


def test_gcn_two_nodes_without_weights_average():
    op = gcn_operator(None, 2, False)
    assert torch.allclose(op, torch.full((2, 2), 0.5, dtype=D), atol=1e-15)
    rng = np.random.default_rng(1)
    X, th = t(rng.standard_normal((2, 4))), t(rng.standard_normal((4, 3)))
    out = gcn_layer(X, None, th, None, False)
    assert torch.allclose(out[0], X.mean(0) @ th, atol=1e-12)
    assert torch.allclose(out[1], out[0], atol=1e-12)


def gcn_loop_oracle(X, W, th, b):
    C = len(W)
    At = W + np.eye(C)
    deg = [sum(At[i]) for i in range(C)]
    Ahat = np.zeros((C, C))
    for i in range(C):
        for j in range(C):
            Ahat[i, j] = At[i, j] / math.sqrt(deg[i] * deg[j])
    return Ahat @ X @ th + b


def test_gcn_random_four_nodes_against_dense_oracle():
    rng = np.random.default_rng(2)
    W = rand_w(4, rng)
    X, th, b = rng.standard_normal((4, 5)), rng.standard_normal((5, 3)), rng.standard_normal(3)
    out = gcn_layer(t(X), W, t(th), t(b), True).numpy()
    assert np.abs(out - gcn_loop_oracle(X, W, th, b)).max() < 1e-6


def test_gcn_no_weights_matches_unit_weights():
    # the +I renormalisation is only scale-free when the constant equals the self-loop weight
    rng = np.random.default_rng(3)
    C = 6
    X, th = t(rng.standard_normal((C, 4))), t(rng.standard_normal((4, 4)))
    ones = np.ones((C, C)) - np.eye(C)
    assert torch.allclose(gcn_layer(X, None, th, None, False), gcn_layer(X, ones, th, None, True), atol=1e-6)
    assert not torch.allclose(gcn_operator(3.0 * ones, C, True), gcn_operator(ones, C, True), atol=1e-6)


def test_gcn_operator_rejects_non_positive_degree():
    W = -2.0 * (np.ones((3, 3)) - np.eye(3))
    with pytest.raises(GraphError):
        gcn_operator(W, 3, True)


def gat_loop_oracle(X, W, th, att, emb, use_ew):
    H, F, fh = th.shape
    C = X.shape[0]
    out = np.zeros((C, H * fh))
    alphas = np.zeros((H, C, C))
    for h in range(H):
        Z = X @ th[h]
        a_src, a_dst, a_e = att[h, :fh], att[h, fh : 2 * fh], att[h, 2 * fh :]
        for i in range(C):
            e = []
            for j in range(C):
                v = sum(a_src[k] * Z[i, k] for k in range(fh)) + sum(a_dst[k] * Z[j, k] for k in range(fh))
                if use_ew:
                    v += sum(a_e[k] * emb[k] * W[i, j] for k in range(len(emb)))
                e.append(leaky(v))
            mx = max(e)
            ex = [math.exp(v - mx) for v in e]
            s = sum(ex)
            for j in range(C):
                alphas[h, i, j] = ex[j] / s
                out[i, h * fh : (h + 1) * fh] += alphas[h, i, j] * Z[j]
    return out, alphas


@pytest.mark.parametrize("use_ew,heads", [(True, 1), (False, 1), (True, 2)])
def test_gat_three_nodes_against_scalar_oracle(use_ew, heads):
    rng = np.random.default_rng(4)
    C, F, fh, de = 3, 4, 2, 3
    X, W = rng.standard_normal((C, F)), rand_w(C, rng)
    th = rng.standard_normal((heads, F, fh)) * 0.7
    att = rng.standard_normal((heads, 2 * fh + (de if use_ew else 0)))
    emb = rng.standard_normal(de) if use_ew else None
    out = gat_layer(t(X), W, t(th), t(att), None if emb is None else t(emb), use_ew).numpy()
    alpha = gat_attention(t(X), W, t(th), t(att), None if emb is None else t(emb), use_ew).numpy()
    ref_out, ref_alpha = gat_loop_oracle(X, W, th, att, emb, use_ew)
    assert np.abs(out - ref_out).max() < 1e-6
    assert np.abs(alpha - ref_alpha).max() < 1e-6


def test_gat_single_node():
    rng = np.random.default_rng(5)
    X, th = t(rng.standard_normal((1, 3))), t(rng.standard_normal((1, 3, 2)))
    att, emb = t(rng.standard_normal((1, 4 + 2))), t(rng.standard_normal(2))
    assert torch.allclose(gat_attention(X, np.zeros((1, 1)), th, att, emb, True), torch.ones(1, 1, 1, dtype=D))
    assert torch.allclose(gat_layer(X, np.zeros((1, 1)), th, att, emb, True), X @ th[0], atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.integers(0, 10_000), st.floats(0.1, 20.0))
def test_gat_attention_is_a_distribution(C, seed, scale):
    rng = np.random.default_rng(seed)
    layer = GATLayer(5, 4, rand_w(C, rng), True, heads=2).double()
    layer.reset_parameters(rng)
    alpha = layer.attention(t(rng.standard_normal((C, 5)) * scale))
    assert torch.allclose(alpha.sum(-1), torch.ones_like(alpha.sum(-1)), atol=1e-6)
    assert (alpha >= 0).all() and (alpha <= 1).all()


def test_sage_identical_rows():
    rng = np.random.default_rng(6)
    v = rng.standard_normal(4)
    X = t(np.tile(v, (5, 1)))
    ts, tn, b = t(rng.standard_normal((4, 3))), t(rng.standard_normal((4, 3))), t(rng.standard_normal(3))
    out = sage_layer(X, ts, tn, b)
    expect = t(v) @ ts + t(v) @ tn + b
    assert torch.allclose(out, expect.expand(5, 3), atol=1e-12)


def test_sage_zero_neighbour_weights_is_per_node_affine():
    rng = np.random.default_rng(7)
    X, ts, b = t(rng.standard_normal((5, 4))), t(rng.standard_normal((4, 3))), t(rng.standard_normal(3))
    assert torch.allclose(sage_layer(X, ts, torch.zeros(4, 3, dtype=D), b), X @ ts + b, atol=1e-12)


def test_sage_five_nodes_against_loop_means():
    rng = np.random.default_rng(8)
    X, ts, tn, b = rng.standard_normal((5, 4)), rng.standard_normal((4, 3)), rng.standard_normal((4, 3)), rng.standard_normal(3)
    ref = np.zeros((5, 3))
    for i in range(5):
        neigh = np.zeros(4)
        for j in range(5):
            if j != i:
                neigh += X[j]
        ref[i] = X[i] @ ts + (neigh / 4) @ tn + b
    assert np.abs(sage_layer(t(X), t(ts), t(tn), t(b)).numpy() - ref).max() < 1e-6


def test_sage_single_node_errors():
    with pytest.raises(GraphError):
        sage_layer(torch.ones(1, 3, dtype=D), torch.ones(3, 3, dtype=D), torch.ones(3, 3, dtype=D))


def build(arch, ew, F, W, rng, heads=1):
    if arch == "gcn":
        layer = GCNLayer(F, F, W, ew)
    elif arch == "gat":
        layer = GATLayer(F, F, W, ew, heads=heads)
    else:
        layer = SAGELayer(F, F)
    layer = layer.double()
    layer.reset_parameters(rng)
    with torch.no_grad():
        for p in layer.parameters():
            p.add_(0.1 * torch.from_numpy(rng.standard_normal(tuple(p.shape))))
    return layer


@pytest.mark.parametrize("arch,ew,heads", [("gcn", True, 1), ("gcn", False, 1), ("gat", True, 2), ("gat", False, 1), ("sage", False, 1)])
def test_permutation_equivariance(arch, ew, heads):
    rng = np.random.default_rng(9)
    C, F = 7, 6
    W = rand_w(C, rng)
    X = t(rng.standard_normal((C, F)))
    layer = build(arch, ew, F, W, rng, heads)
    perm = rng.permutation(C)
    Wp = W[np.ix_(perm, perm)]
    permuted = type(layer).__new__(type(layer))
    permuted.__dict__ = layer.__dict__.copy()
    if arch == "gcn":
        permuted.operator64 = gcn_operator(Wp, C, ew)
    elif arch == "gat":
        permuted.weights64 = t(Wp)
    out = layer(X)[perm]
    assert torch.allclose(permuted(X[perm]), out, atol=1e-6)


def test_layers_keep_finite_outputs():
    rng = np.random.default_rng(10)
    W = rand_w(19, rng)
    X = torch.from_numpy(rng.standard_normal((19, 32)) * 10)
    for arch, ew in (("gcn", True), ("gat", True), ("sage", False)):
        layer = build(arch, ew, 32, W, rng)
        assert torch.isfinite(layer(X)).all()


def test_stack_identity_composition():
    cfg = GnnConfig("gcn", use_edge_weights=False)
    X = torch.tensor([[-1.0, 2.0, -3.0, 4.0]], dtype=D)
    stack = GnnStack(cfg, np.zeros((1, 1)), 4).double()
    with torch.no_grad():
        for layer in stack.layers:
            layer.weight.copy_(torch.eye(4, dtype=D))
            layer.bias.zero_()
    assert torch.equal(stack(X), torch.relu(X))


@pytest.mark.parametrize("n,hidden", [(64, None), (256, None), (15360, 8)])
def test_stack_shape_contract(n, hidden):
    rng = np.random.default_rng(11)
    W = rand_w(19, rng)
    for arch, ew in (("gcn", True), ("gat", False), ("sage", False)):
        cfg = GnnConfig(arch, ew, hidden_dim=hidden)
        out = gnn_stack(torch.zeros(2, 19, n), W, cfg, rng)
        assert out.shape == (2, 19, n)


def test_stack_rejects_wrong_length_and_bad_configs():
    stack = GnnStack(GnnConfig("gcn", True), rand_w(3, np.random.default_rng(0)), 8)
    with pytest.raises(GraphError):
        stack(torch.zeros(3, 9))
    with pytest.raises(GraphError):
        GnnConfig("sage", True)
    with pytest.raises(GraphError):
        GnnConfig("gcn", True, layers=3)
    GnnConfig("gcn", True, layers=3, experimental=True)
    with pytest.raises(GraphError):
        GnnConfig("unet", True)
    with pytest.raises(GraphError):
        GATLayer(4, 3, rand_w(3, np.random.default_rng(0)), heads=2)


@pytest.mark.parametrize("arch,ew", [("gcn", True), ("gcn", False), ("gat", True), ("gat", False), ("sage", False)])
def test_stack_gradcheck(arch, ew):
    # seed chosen so no attention logit row is single-signed (that makes a parameter locally dead)
    rng = np.random.default_rng(13)
    stack = GnnStack(GnnConfig(arch, ew), rand_w(4, rng), 8)
    stack.reset_parameters(rng)
    report = grad_check(stack, torch.from_numpy(rng.standard_normal((4, 8))))
    assert report.max_rel_err < 1e-4, report.errors


def test_three_node_gcn_stack_gradcheck():
    rng = np.random.default_rng(13)
    stack = GnnStack(GnnConfig("gcn", True), rand_w(3, rng), 5)
    stack.reset_parameters(rng)
    assert grad_check(stack, torch.from_numpy(rng.standard_normal((3, 5))), eps=1e-5).max_rel_err < 1e-4
