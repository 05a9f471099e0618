import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dmgnn import autograd as ag
from dmgnn.autograd import Tensor
from dmgnn.errors import ConfigError, ContractError, DimensionError
from dmgnn.gradcheck import check_gradients, worst
from dmgnn.layers import CsFb, GGruCell, SsGcb, fuse_cross_scale, g_gru_step, graph_conv, infer_cross_graph

LAYER_TOL = 1e-4


def weighted(out, seed=11):
    return (out * np.random.default_rng(seed).normal(size=out.shape)).sum()


def perturb_bn(module, rng):
    """Give every BN non-trivial running stats and affine params."""
    for _, m in module.named_modules():
        if hasattr(m, "running_mean"):
            m.running_mean[...] = rng.normal(0, 0.3, m.running_mean.shape)
            m.running_var[...] = rng.uniform(0.5, 2.0, m.running_var.shape)
            m.gamma.data[...] = rng.uniform(0.5, 1.5, m.gamma.shape)
            m.beta.data[...] = rng.normal(0, 0.2, m.beta.shape)


# ---------------------------------------------------------------- graph conv

def test_graph_conv_self_term_only(rng):
    x = rng.uniform(0, 1, (4, 3))
    out = graph_conv(x, Tensor(np.zeros((4, 4))), Tensor(rng.normal(size=(3, 3))), Tensor(np.eye(3)))
    np.testing.assert_allclose(out.data, x)


def test_graph_conv_relu_clamp():
    out = graph_conv(np.array([[1.0, -2.0]]), Tensor(np.eye(1)), Tensor(np.eye(2)), Tensor(np.zeros((2, 2))))
    np.testing.assert_array_equal(out.data, [[1.0, 0.0]])


def test_graph_conv_matmul_oracle(rng):
    x, a = rng.normal(size=(2, 4, 3)), rng.normal(size=(4, 4))
    w, u = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
    out = graph_conv(x, Tensor(a), Tensor(w), Tensor(u)).data
    expect = np.zeros((2, 4, 5))
    for b in range(2):
        for i in range(4):
            for d in range(5):
                s = sum(a[i, j] * x[b, j, c] * w[c, d] for j in range(4) for c in range(3))
                s += sum(x[b, i, c] * u[c, d] for c in range(3))
                expect[b, i, d] = max(s, 0.0)
    np.testing.assert_allclose(out, expect, atol=1e-12)


def test_graph_conv_dimension_errors(rng):
    with pytest.raises(DimensionError, match="node axis"):
        graph_conv(rng.normal(size=(4, 3)), Tensor(np.eye(5)), Tensor(np.eye(3)), Tensor(np.eye(3)))
    with pytest.raises(DimensionError, match="channel axis"):
        graph_conv(rng.normal(size=(4, 3)), Tensor(np.eye(4)), Tensor(np.eye(2)), Tensor(np.eye(2)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.permutations(range(5)))
def test_graph_conv_permutation_equivariant(seed, perm):
    rng = np.random.default_rng(seed)
    x, a = rng.normal(size=(3, 5, 4)), rng.normal(size=(5, 5))
    w, u = Tensor(rng.normal(size=(4, 6))), Tensor(rng.normal(size=(4, 6)))
    p = np.eye(5)[list(perm)]
    lhs = graph_conv(p @ x, Tensor(p @ a @ p.T), w, u).data
    rhs = p @ graph_conv(x, Tensor(a), w, u).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_graph_conv_fd(rng):
    x = Tensor(rng.normal(size=(2, 5, 3)), requires_grad=True)
    a, w, u = (Tensor(rng.normal(size=s), requires_grad=True) for s in [(5, 5), (3, 4), (3, 4)])
    reps = check_gradients(lambda: weighted(graph_conv(x, a, w, u)), {"x": x, "A": a, "W": w, "U": u})
    assert worst(reps).rel_error < LAYER_TOL


# ---------------------------------------------------------------- SS-GCB

def make_ssgcb(rng, m, c_in, c_out, stride, dropout=0.0, freeze=False):
    adj = np.zeros((m, m))
    for i in range(m - 1):
        adj[i, i + 1] = adj[i + 1, i] = 1.0
    return SsGcb(adj, c_in, c_out, stride, 5, dropout, rng, np.random.default_rng(1), freeze)


@pytest.mark.parametrize("c_in,c_out,t_in,t_out", [(32, 64, 49, 25), (128, 256, 13, 7)])
def test_ssgcb_stage_shapes(rng, c_in, c_out, t_in, t_out):
    blk = make_ssgcb(rng, 10, c_in, c_out, 2)
    with ag.no_grad():
        y = blk(np.ones((32, t_in, 10, c_in)))
    assert y.shape == (32, t_out, 10, c_out)


def test_ssgcb_too_short(rng):
    blk = make_ssgcb(rng, 3, 2, 2, 2)
    blk.tconv.pad = 0
    with pytest.raises(ConfigError):
        blk(np.ones((1, 3, 3, 2)))


def test_ssgcb_eval_deterministic(rng):
    blk = make_ssgcb(rng, 4, 3, 5, 1, dropout=0.5)
    perturb_bn(blk, rng)
    blk.eval()
    x = rng.normal(size=(2, 9, 4, 3))
    np.testing.assert_array_equal(blk(x).data, blk(x).data)


def test_ssgcb_permutation_equivariant(rng):
    blk = make_ssgcb(rng, 5, 3, 4, 2)
    perturb_bn(blk, rng)
    blk.eval()
    x = rng.normal(size=(2, 9, 5, 3))
    p = np.eye(5)[[3, 0, 4, 1, 2]]
    y = blk(x).data
    a = blk.A.data.copy()
    blk.A.data[...] = p @ a @ p.T
    y_perm = blk(np.einsum("ij,btjc->btic", p, x)).data
    np.testing.assert_allclose(y_perm, np.einsum("ij,btjc->btic", p, y), atol=1e-12)


@pytest.mark.parametrize("training", [True, False])
def test_ssgcb_fd(rng, training):
    blk = make_ssgcb(rng, 4, 3, 4, 2)
    perturb_bn(blk, rng)
    blk.train(training)
    x = Tensor(rng.normal(size=(2, 7, 4, 3)), requires_grad=True)
    named = {"x": x, **dict(blk.named_parameters())}
    reps = check_gradients(lambda: weighted(blk(x)), named)
    assert worst(reps).rel_error < LAYER_TOL


def test_ssgcb_frozen_adjacency(rng):
    blk = make_ssgcb(rng, 4, 3, 4, 1, freeze=True)
    assert not blk.A.requires_grad
    ag.backward(weighted(blk(rng.normal(size=(2, 7, 4, 3)))))
    assert blk.A.grad is None and blk.W.grad is not None


# ---------------------------------------------------------------- CS-FB

def make_csfb(rng, c=3, t=6, hidden=5, softmax="source"):
    layer = CsFb(c, t, hidden, rng, np.random.default_rng(2), kernel=5, stride=2, dropout=0.0, softmax=softmax)
    perturb_bn(layer, rng)
    # zero-initialised biases put dead units exactly on the ReLU kink
    for name, p in layer.named_parameters():
        if name.endswith("bias") or name.endswith("b1"):
            p.data[...] = rng.normal(0, 0.3, p.shape)
    return layer


def _loop_conv(x, w, b, stride, pad):
    bsz, t, m, c_in = x.shape
    c_out, _, k = w.shape
    xp = np.zeros((bsz, t + 2 * pad, m, c_in))
    xp[:, pad:pad + t] = x
    t_out = (t + 2 * pad - k) // stride + 1
    out = np.zeros((bsz, t_out, m, c_out))
    for bi in range(bsz):
        for to in range(t_out):
            for n in range(m):
                for o in range(c_out):
                    out[bi, to, n, o] = b[o] + sum(w[o, ci, kk] * xp[bi, to * stride + kk, n, ci]
                                                   for ci in range(c_in) for kk in range(k))
    return out


def _bn_eval(v, bn):
    return (v - bn.running_mean) / np.sqrt(bn.running_var + bn.eps) * bn.gamma.data + bn.beta.data


def _relu(v):
    return np.maximum(v, 0.0)


def _loop_embed(x, emb):
    """Temporal compression, vectorisation, relative aggregation f and
    embedding g, one node at a time."""
    c = _loop_conv(x, emb.conv.weight.data, emb.conv.bias.data, emb.conv.stride, emb.conv.pad)
    bsz, t, m, ch = c.shape
    f, g = emb.f, emb.g
    w1, b1 = f.w1.data, f.b1.data
    out = np.zeros((bsz, m, g.fc2.weight.shape[1]))
    for bi in range(bsz):
        p = [np.concatenate([c[bi, tt, n] for tt in range(t)]) for n in range(m)]
        for i in range(m):
            r = 0.0
            for j in range(m):
                z = _relu(np.concatenate([p[i], p[j] - p[i]]) @ w1 + b1)
                z = _relu(z @ f.fc2.weight.data + f.fc2.bias.data)
                r = r + _bn_eval(z, f.bn)
            q = p[i] @ emb.proj.weight.data + emb.proj.bias.data
            h = _relu(np.concatenate([q, r]) @ g.fc1.weight.data + g.fc1.bias.data)
            h = _relu(h @ g.fc2.weight.data + g.fc2.bias.data)
            out[bi, i] = _bn_eval(h, g.bn)
    return out


def test_csfb_loop_oracle_three_joints_two_parts(rng):
    layer = make_csfb(rng)
    layer.eval()
    x_src = rng.normal(size=(2, 6, 3, 3))      # 3 joints
    x_tgt = rng.normal(size=(2, 6, 2, 3))      # 2 parts
    a = infer_cross_graph(x_src, x_tgt, layer).data
    h_src, h_tgt = _loop_embed(x_src, layer.src), _loop_embed(x_tgt, layer.tgt)
    expect = np.zeros((2, 2, 3))
    for bi in range(2):
        for k in range(2):
            logits = np.array([h_tgt[bi, k] @ h_src[bi, i] for i in range(3)])
            e = np.exp(logits - logits.max())
            expect[bi, k] = e / e.sum()
    np.testing.assert_allclose(a, expect, rtol=1e-10, atol=1e-12)
    fused = fuse_cross_scale(x_src, x_tgt, Tensor(a), layer).data
    w_f = layer.W_F.data
    for bi in range(2):
        for t in range(6):
            np.testing.assert_allclose(fused[bi, t], a[bi] @ x_src[bi, t] @ w_f + x_tgt[bi, t], atol=1e-12)


@pytest.mark.parametrize("softmax,axis", [("source", -1), ("target", -2)])
def test_csfb_stochastic(rng, softmax, axis):
    layer = make_csfb(rng, softmax=softmax)
    a = layer.infer_graph(rng.normal(size=(3, 6, 4, 3)) * 5, rng.normal(size=(3, 6, 2, 3)) * 5).data
    assert a.shape == (3, 2, 4)
    np.testing.assert_allclose(a.sum(axis=axis), 1.0, atol=1e-9)
    assert np.all((a >= 0) & (a <= 1))


def test_csfb_identical_sources_uniform(rng):
    layer = make_csfb(rng)
    layer.eval()
    node = rng.normal(size=(1, 6, 1, 3))
    a = layer.infer_graph(np.repeat(node, 4, axis=2), rng.normal(size=(1, 6, 2, 3))).data
    np.testing.assert_allclose(a, 0.25, atol=1e-12)


def test_row_shift_invariance(rng):
    logits = rng.normal(size=(2, 3, 4))
    shift = rng.normal(size=(2, 3, 1))
    np.testing.assert_allclose(ag.softmax(Tensor(logits + shift), -1).data,
                               ag.softmax(Tensor(logits), -1).data, atol=1e-15)


def test_fusion_examples(rng):
    layer = make_csfb(rng)
    x_src, x_tgt = rng.normal(size=(1, 4, 3, 3)), rng.normal(size=(1, 4, 2, 3))
    a = Tensor(np.full((1, 2, 3), 1 / 3))
    layer.W_F.data[...] = 0.0
    np.testing.assert_array_equal(fuse_cross_scale(x_src, x_tgt, a, layer).data, x_tgt)
    layer.W_F.data[...] = np.eye(3)
    out = fuse_cross_scale(x_src, x_tgt, a, layer).data
    np.testing.assert_allclose(out, x_src.mean(axis=2, keepdims=True) + x_tgt, atol=1e-14)
    with pytest.raises(DimensionError):
        fuse_cross_scale(x_src, x_tgt[..., :2], a, layer)


def test_csfb_time_mismatch(rng):
    layer = make_csfb(rng)
    with pytest.raises(ContractError, match="temporal"):
        layer.infer_graph(np.zeros((1, 6, 3, 3)), np.zeros((1, 5, 2, 3)))


@pytest.mark.parametrize("training", [True, False])
def test_csfb_fd(rng, training):
    layer = make_csfb(rng, c=2, t=5, hidden=3)
    layer.train(training)
    xs = Tensor(rng.normal(size=(2, 5, 3, 2)), requires_grad=True)
    xt = Tensor(rng.normal(size=(2, 5, 2, 2)), requires_grad=True)
    named = {"x_src": xs, "x_tgt": xt, **dict(layer.named_parameters())}
    reps = check_gradients(lambda: weighted(layer(xs, xt)), named)
    assert worst(reps).rel_error < LAYER_TOL


def test_csfb_every_param_gets_grad(rng):
    layer = make_csfb(rng)
    ag.backward(weighted(layer(rng.normal(size=(3, 6, 4, 3)), rng.normal(size=(3, 6, 2, 3)))))
    for name, p in layer.named_parameters():
        assert p.grad is not None and np.any(p.grad != 0), name


# ---------------------------------------------------------------- G-GRU

def make_cell(rng, in_dim=9, hidden=6, m=2, plain=False):
    adj = np.ones((m, m)) - np.eye(m)
    return GGruCell(in_dim, hidden, adj, rng, plain=plain)


def test_gru_all_zero(rng):
    cell = make_cell(rng)
    for p in cell.parameters():
        p.data[...] = 0.0
    h0 = rng.normal(size=(2, 6))
    out = g_gru_step(rng.normal(size=(2, 9)), h0, cell).data
    np.testing.assert_allclose(out, 0.5 * h0, atol=1e-15)


@pytest.mark.parametrize("plain", [False, True])
def test_gru_loop_oracle(rng, plain):
    cell = make_cell(rng, plain=plain)
    for lin in (cell.r_in, cell.u_in, cell.c_in, cell.r_hid, cell.u_hid, cell.c_hid):
        lin.bias.data[...] = rng.normal(size=lin.bias.shape)
    inp, h = rng.normal(size=(2, 9)), rng.normal(size=(2, 6))
    out = cell(inp, h).data
    a = np.eye(2) if plain else cell.A_H.data
    sig = lambda v: 1 / (1 + np.exp(-v))
    for i in range(2):
        q = sum(a[i, j] * (h[j] @ cell.W_H.data) for j in range(2))
        lin = lambda l, v: v @ l.weight.data + l.bias.data
        r = sig(lin(cell.r_in, inp[i]) + lin(cell.r_hid, q))
        u = sig(lin(cell.u_in, inp[i]) + lin(cell.u_hid, q))
        c = np.tanh(lin(cell.c_in, inp[i]) + r * lin(cell.c_hid, q))
        np.testing.assert_allclose(out[i], u * h[i] + (1 - u) * c, atol=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gru_convex_combination(seed):
    rng = np.random.default_rng(seed)
    cell = make_cell(rng, m=3)
    inp, h = rng.normal(0, 2, (4, 3, 9)), rng.normal(0, 2, (4, 3, 6))
    q = np.einsum("ij,bjd->bid", cell.A_H.data, h @ cell.W_H.data)
    c_pre_in = cell.c_in(inp).data
    r = 1 / (1 + np.exp(-(cell.r_in(inp).data + cell.r_hid(q).data)))
    c = np.tanh(c_pre_in + r * cell.c_hid(q).data)
    out = cell(inp, h).data
    lo, hi = np.minimum(h, c), np.maximum(h, c)
    assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)


def test_gru_dimension_error(rng):
    cell = make_cell(rng)
    with pytest.raises(DimensionError, match="G-GRU"):
        cell(np.zeros((2, 8)), np.zeros((2, 6)))
    with pytest.raises(DimensionError):
        cell(np.zeros((3, 9)), np.zeros((3, 6)))


@pytest.mark.parametrize("plain", [False, True])
def test_gru_fd(rng, plain):
    cell = make_cell(rng, in_dim=3, hidden=4, m=2, plain=plain)
    inp = Tensor(rng.normal(size=(2, 2, 3)), requires_grad=True)
    h = Tensor(rng.normal(size=(2, 2, 4)), requires_grad=True)
    named = {"inp": inp, "h": h, **dict(cell.named_parameters())}
    reps = check_gradients(lambda: weighted(cell(inp, cell(inp, h))), named)
    assert worst(reps).rel_error < LAYER_TOL


def test_layers_every_param_gets_grad(rng):
    blk = make_ssgcb(rng, 4, 3, 4, 2)
    cell = make_cell(rng, in_dim=3, hidden=4, m=4)
    y = blk(rng.normal(size=(2, 7, 4, 3)))
    h = cell(rng.normal(size=(2, 4, 3)), y.mean(axis=1))
    ag.backward(weighted(h))
    for name, p in list(blk.named_parameters()) + list(cell.named_parameters()):
        assert p.grad is not None and np.any(p.grad != 0), name
