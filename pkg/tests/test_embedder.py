import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcbproto import numerics as nx
from rcbproto.embedder import (
    ModelConfig,
    drc_forward,
    embed,
    embed_all,
    embed_batch,
    expected_shapes,
    feature_interaction,
    init_params,
    params_from_arrays,
    rcb_forward,
    split_groups,
    zero_params,
)
from rcbproto.frontend import LogMelFeature
from rcbproto.numerics import Tensor


# --- independent oracles --------------------------------------------------------

def conv_oracle(x, w, b):
    """Same-padded 3x3 (or any odd k) cross-correlation with explicit zero padding."""
    C, H, W = x.shape
    O, _, k, _ = w.shape
    p = k // 2
    xp = np.zeros((C, H + 2 * p, W + 2 * p))
    xp[:, p : p + H, p : p + W] = x
    out = np.empty((O, H, W))
    for o in range(O):
        for i in range(H):
            for j in range(W):
                out[o, i, j] = b[o] + np.sum(w[o] * xp[:, i : i + k, j : j + k])
    return out


def lstm_oracle(seq, w_ih, w_hh, b, reverse):
    T = seq.shape[0]
    H = w_hh.shape[1]
    h, c = np.zeros(H), np.zeros(H)
    out = np.zeros((T, H))
    sig = lambda z: 1 / (1 + np.exp(-z))  # noqa: E731
    for t in (reversed(range(T)) if reverse else range(T)):
        z = w_ih @ seq[t] + w_hh @ h + b
        i, f, g, o = sig(z[:H]), sig(z[H : 2 * H]), np.tanh(z[2 * H : 3 * H]), sig(z[3 * H :])
        c = f * c + i * g
        h = o * np.tanh(c)
        out[t] = h
    return out


def arrays_of(params):
    return {n: t.data for n, t in params.named_tensors()}


def drc_oracle(y, a, L, E):
    z = np.maximum(conv_oracle(y, a["rcb.drc.conv.w"], a["rcb.drc.conv.b"]), 0.0)
    chans = []
    for l in range(L):
        for e in range(E - 1):
            idx = l * (E - 1) + e
            w = a["rcb.drc.dw.w"][idx][None, None]
            chans.append(conv_oracle(z[l : l + 1], w, a["rcb.drc.dw.b"][idx : idx + 1])[0])
        chans.append(z[l])
    return np.stack(chans)


def rcb_oracle(sub, a, cfg):
    hf = lstm_oracle(sub.T, a["rcb.blstm.fwd.w_ih"], a["rcb.blstm.fwd.w_hh"], a["rcb.blstm.fwd.b"], False)
    hb = lstm_oracle(sub.T, a["rcb.blstm.bwd.w_ih"], a["rcb.blstm.bwd.w_hh"], a["rcb.blstm.bwd.b"], True)
    img = np.concatenate([hf, hb], axis=1).T[None]  # (1, 2h, T)
    y = np.maximum(conv_oracle(img, a["rcb.stem.w"], a["rcb.stem.b"]), 0.0)
    return drc_oracle(y, a, cfg.L, cfg.E)


def embed_oracle(F, a, cfg):
    """Straight-line composition: groups -> RCB -> interaction -> height means -> residual -> pooling."""
    J = cfg.J
    G = [rcb_oracle(F[i * J : (i + 1) * J], a, cfg) for i in range(cfg.I)]
    g_bar = sum(G) / cfg.I
    G2 = np.concatenate([g + g_bar for g in G], axis=1)  # (M, I*h, T)
    res = a["residual.w"][:, 0, 0, 0][:, None, None] * F[None] + a["residual.b"][:, None, None]
    x = G2.mean(axis=1) + res.mean(axis=1)
    mu = x.mean(axis=1)
    var = ((x - mu[:, None]) ** 2).mean(axis=1)
    return np.concatenate([mu, np.sqrt(var + 1e-10)])


# --- config ---------------------------------------------------------------------

def test_full_config_embedding_is_512():
    cfg = ModelConfig()
    assert (cfg.J, cfg.E, cfg.embedding_dim) == (20, 2, 512)


@pytest.mark.parametrize(
    "kwargs", [dict(H=81), dict(L=100), dict(M=0), dict(distance="cosine"), dict(blstm_hidden=0)]
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        ModelConfig(**kwargs)


def test_config_dict_round_trip():
    cfg = ModelConfig(H=8, I=2, blstm_hidden=3, stem_channels=2, L=2, M=4, distance="euclidean")
    assert ModelConfig.from_dict(cfg.as_dict()) == cfg
    with pytest.raises(ValueError):
        ModelConfig.from_dict({"H": 8, "bogus": 1})


@settings(max_examples=30, deadline=None)
@given(I=st.sampled_from([1, 2, 4]), L=st.integers(1, 3), E=st.integers(1, 3))
def test_embedding_length_is_2m(I, L, E):
    cfg = ModelConfig(H=8, I=I, blstm_hidden=2, stem_channels=2, L=L, M=L * E)
    params = init_params(cfg, 0)
    x = np.random.default_rng(0).standard_normal((8, 5))
    assert embed(x, params, cfg).values.shape == (2 * L * E,)


def test_param_shapes_and_sharing(tiny_config):
    shapes = expected_shapes(tiny_config)
    assert shapes["rcb.blstm.fwd.w_ih"] == (12, 4)
    assert shapes["rcb.drc.dw.w"] == (2, 3, 3)
    assert "rcb.drc.dw.w" not in expected_shapes(ModelConfig(H=8, I=2, blstm_hidden=3, stem_channels=2, L=4, M=4))
    # one shared RCB set whatever I is; only the BLSTM input width follows J
    wide = expected_shapes(ModelConfig(H=8, I=1, blstm_hidden=3, stem_channels=2, L=2, M=4))
    assert set(wide) == set(shapes)
    assert {n for n in shapes if shapes[n] != wide[n]} == {"rcb.blstm.fwd.w_ih", "rcb.blstm.bwd.w_ih"}


def test_init_is_seeded_and_bounded(tiny_config):
    a, b = init_params(tiny_config, 5), init_params(tiny_config, 5)
    for (na, ta), (_, tb) in zip(a.named_tensors(), b.named_tensors()):
        assert ta.data.tobytes() == tb.data.tobytes()
    w = a.drc_conv.weight.data
    assert np.abs(w).max() <= 1 / np.sqrt(2 * 9)
    assert not np.array_equal(init_params(tiny_config, 6).stem.weight.data, a.stem.weight.data)


# --- split / interaction -----------------------------------------------------------

def test_split_groups_shapes_and_reconstruction(rng):
    F = rng.standard_normal((80, 7))
    parts = split_groups(LogMelFeature(F), 4)
    assert [p.shape for p in parts] == [(20, 7)] * 4
    np.testing.assert_array_equal(np.concatenate([p.data for p in parts]), F)
    with pytest.raises(ValueError):
        split_groups(F, 3)


def test_interaction_single_group_doubles(rng):
    g = Tensor(rng.standard_normal((4, 3, 5)))
    (out,) = feature_interaction([g])
    np.testing.assert_array_equal(out.data, 2 * g.data)


def test_interaction_identical_groups_double(rng):
    g = rng.standard_normal((2, 3, 3))
    for out in feature_interaction([Tensor(g)] * 3):
        np.testing.assert_allclose(out.data, 2 * g, rtol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_interaction_doubles_the_group_sum(seed, I):
    G = np.random.default_rng(seed).standard_normal((I, 3, 2, 4))
    out = feature_interaction([Tensor(g) for g in G])
    np.testing.assert_allclose(sum(o.data for o in out), 2 * G.sum(axis=0), rtol=1e-12, atol=1e-12)
    stacked = feature_interaction(Tensor(G), axis=0).data
    np.testing.assert_allclose(stacked, np.stack([o.data for o in out]), rtol=0, atol=1e-15)


def test_interaction_shape_mismatch():
    with pytest.raises(ValueError):
        feature_interaction([Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 3)))])


# --- DRC --------------------------------------------------------------------------

def test_drc_layout_l2_e3(rng):
    cfg = ModelConfig(H=4, I=1, blstm_hidden=2, stem_channels=2, L=2, M=6)
    params = init_params(cfg, 1)
    y = rng.standard_normal((2, 4, 4))
    out = drc_forward(Tensor(y), params, cfg).data
    np.testing.assert_allclose(out, drc_oracle(y, arrays_of(params), 2, 3), rtol=0, atol=1e-12)
    z = np.maximum(conv_oracle(y, params.drc_conv.weight.data, params.drc_conv.bias.data), 0)
    # representative maps sit at block position E
    np.testing.assert_allclose(out[[2, 5]], z, rtol=0, atol=1e-12)


def test_drc_e1_returns_representatives_only(rng):
    cfg = ModelConfig(H=4, I=1, blstm_hidden=2, stem_channels=2, L=3, M=3)
    params = init_params(cfg, 1)
    y = rng.standard_normal((2, 5, 4))
    z = nx.relu(nx.conv2d(Tensor(y), params.drc_conv.weight, params.drc_conv.bias)).data
    np.testing.assert_array_equal(drc_forward(Tensor(y), params, cfg).data, z)


@settings(max_examples=15, deadline=None)
@given(L=st.integers(1, 3), E=st.integers(1, 4), seed=st.integers(0, 2**32 - 1))
def test_drc_representative_channel_is_bitwise_z(L, E, seed):
    cfg = ModelConfig(H=4, I=1, blstm_hidden=2, stem_channels=2, L=L, M=L * E)
    params = init_params(cfg, seed % 1000)
    y = Tensor(np.random.default_rng(seed).standard_normal((2, 4, 5)))
    out = drc_forward(y, params, cfg).data
    z = nx.relu(nx.conv2d(y, params.drc_conv.weight, params.drc_conv.bias)).data
    for l in range(L):
        assert out[l * E + E - 1].tobytes() == z[l].tobytes()


# --- RCB / embed --------------------------------------------------------------------

def test_rcb_matches_composition_oracle(rng, tiny_config):
    cfg = ModelConfig(H=4, I=1, blstm_hidden=3, stem_channels=2, L=2, M=4)
    params = init_params(cfg, 2)
    sub = rng.standard_normal((4, 6))
    out = rcb_forward(Tensor(sub), params, cfg).data
    assert out.shape == (4, 6, 6)
    np.testing.assert_allclose(out, rcb_oracle(sub, arrays_of(params), cfg), rtol=0, atol=1e-12)


def test_rcb_shape_full_config():
    cfg = ModelConfig()
    assert rcb_forward(Tensor(np.zeros((20, 3))), zero_params(cfg), cfg).shape == (256, 80, 3)


def test_zero_params_zero_rcb(rng, tiny_config):
    out = rcb_forward(Tensor(rng.standard_normal((4, 5))), zero_params(tiny_config), tiny_config)
    assert not out.data.any()


def test_embed_matches_scripted_oracle(rng, tiny_config, tiny_params):
    F = rng.standard_normal((8, 7))
    got = embed(LogMelFeature(F, "spk"), tiny_params, tiny_config)
    assert got.speaker_label == "spk"
    np.testing.assert_allclose(got.values, embed_oracle(F, arrays_of(tiny_params), tiny_config), rtol=0, atol=1e-12)


def test_constant_input_with_zero_weights_has_zero_std(tiny_config):
    arrays = {n: np.zeros(s) for n, s in expected_shapes(tiny_config).items()}
    arrays["residual.w"] = np.ones(expected_shapes(tiny_config)["residual.w"])
    params = params_from_arrays(arrays)
    out = embed(np.full((8, 6), 0.7), params, tiny_config).values
    assert (out[tiny_config.M :] == 0).all()
    np.testing.assert_allclose(out[: tiny_config.M], 0.7)


def test_group_locality_before_interaction(rng, tiny_config, tiny_params):
    F = rng.standard_normal((8, 5))
    base = [rcb_forward(g, tiny_params, tiny_config).data for g in split_groups(F, 2)]
    F2 = F.copy()
    F2[5] += 1.0  # row 5 lives in group 1
    moved = [rcb_forward(g, tiny_params, tiny_config).data for g in split_groups(F2, 2)]
    np.testing.assert_array_equal(moved[0], base[0])
    assert not np.allclose(moved[1], base[1])


def test_batch_and_embed_all_agree(rng, tiny_config, tiny_params):
    feats = [rng.standard_normal((8, 6)) for _ in range(5)] + [rng.standard_normal((8, 9))]
    all_emb = embed_all(feats, tiny_params, tiny_config, batch_size=4)
    for f, e in zip(feats, all_emb):
        np.testing.assert_allclose(e, embed(f, tiny_params, tiny_config).values, rtol=0, atol=1e-13)
    assert embed_all([], tiny_params, tiny_config).shape == (0, 8)


def test_embed_dimension_mismatch(tiny_config, tiny_params):
    with pytest.raises(ValueError):
        embed(np.zeros((9, 4)), tiny_params, tiny_config)
    with pytest.raises(ValueError):
        embed_batch(np.zeros((2, 9, 4)), tiny_params, tiny_config)


def test_full_model_gradcheck(rng, tiny_config, tiny_params):
    F = Tensor(rng.standard_normal((2, 8, 5)))
    w = Tensor(rng.standard_normal((2, 8)))
    err = nx.grad_check(lambda: nx.sum_(nx.mul(embed_batch(F, tiny_params, tiny_config), w)), tiny_params.tensors())
    assert err < 1e-4


def test_copy_is_independent(tiny_params):
    c = tiny_params.copy()
    c.stem.weight.data[...] = 0.0
    assert tiny_params.stem.weight.data.any()
    assert c.param_count() == tiny_params.param_count()
