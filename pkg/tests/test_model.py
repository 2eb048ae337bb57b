import numpy as np
import pytest

from poselift import functional as F
from poselift.accounting import count_params
from poselift.gradcheck import finite_diff_check
from poselift.graph import build_skeleton_adjacency, chain_skeleton
from poselift.metrics import position_loss
from poselift.model import (
    COMPOSITION_MODES,
    VARIANTS,
    ModelConfig,
    NonFiniteActivation,
    adaptive_fuse,
    attention_mixer,
    embed_inputs,
    gcn_mixer,
    init_params,
    load_checkpoint,
    metaformer_apply,
    model_forward,
    parameter_specs,
    save_checkpoint,
)
from poselift.tensor import Tape, Tensor, backward


def toy(**kw):
    base = dict(depth=2, dim=16, dim_rep=8, frames=4, joints=5, heads=2)
    base.update(kw)
    return ModelConfig(**base)


def f64_store(cfg, seed=0):
    return init_params(cfg, seed=seed, dtype=np.float64)


def rand_input(cfg, batch=2, seed=1):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(batch, cfg.frames, cfg.joints, 3))
    x[..., 2] = rng.uniform(0, 1, size=x.shape[:-1])
    return x


def test_config_validation_and_variants():
    with pytest.raises(ValueError):
        ModelConfig(dim=30, heads=8)
    with pytest.raises(ValueError):
        ModelConfig(composition_mode="serial")
    assert {k: (v.depth, v.dim, v.frames) for k, v in ((n, ModelConfig.variant(n)) for n in VARIANTS)} == {
        "XS": (12, 64, 27),
        "S": (26, 64, 81),
        "B": (16, 128, 243),
        "L": (26, 128, 243),
    }
    cfg = ModelConfig.variant("S", use_temporal_pe=True)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_embed_zero_and_flags():
    cfg = toy(use_spatial_pe=False)
    store = f64_store(cfg)
    store.params["embed.proj.bias"].data[:] = 0
    out = embed_inputs(Tensor(np.zeros((1, 4, 5, 3))), cfg, store)
    assert not out.data.any()
    x = rand_input(cfg)
    np.testing.assert_array_equal(
        embed_inputs(Tensor(x), cfg, store).data, x @ store["embed.proj.weight"].data + store["embed.proj.bias"].data
    )
    with pytest.raises(ValueError, match="shape"):
        embed_inputs(Tensor(np.zeros((1, 3, 5, 3))), cfg, store)


def test_pe_flag_combinations_enumerate_four_parameter_sets():
    sets = {
        frozenset(p.name for p in parameter_specs(toy(use_spatial_pe=s, use_temporal_pe=t)))
        for s in (False, True)
        for t in (False, True)
    }
    assert len(sets) == 4


def test_attention_single_token_is_value_path():
    cfg = toy()
    store = f64_store(cfg)
    p = "blocks.0.attn_spatial.attn"
    x = np.random.default_rng(0).normal(size=(3, 1, 16))
    out = attention_mixer(Tensor(x), store, p, 2).data
    expected = x @ store[f"{p}.v.weight"].data @ store[f"{p}.proj.weight"].data + store[f"{p}.proj.bias"].data
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_attention_identical_tokens_and_permutation():
    cfg = toy()
    store = f64_store(cfg)
    p = "blocks.0.attn_spatial.attn"
    row = np.random.default_rng(0).normal(size=16)
    same = attention_mixer(Tensor(np.tile(row, (1, 4, 1))), store, p, 2).data
    np.testing.assert_allclose(same - same[:, :1], 0, atol=1e-12)
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 6, 16))
    perm = rng.permutation(6)
    np.testing.assert_allclose(
        attention_mixer(Tensor(x[:, perm]), store, p, 2).data, attention_mixer(Tensor(x), store, p, 2).data[:, perm], atol=1e-12
    )


def test_gcn_mixer_trivial_cases():
    cfg = toy()
    store = f64_store(cfg)
    p = "blocks.0.gcn_spatial.gcn"
    store.params[f"{p}.w_adj.weight"].data[:] = 0
    store.params[f"{p}.w_self.weight"].data[:] = np.eye(16)
    store.buffers[f"{p}.bn.running_mean"][:] = 0
    store.buffers[f"{p}.bn.running_var"][:] = 1
    x = np.random.default_rng(0).normal(size=(2, 5, 16))
    adj = build_skeleton_adjacency(chain_skeleton(5))
    out = gcn_mixer(Tensor(x), adj, store, p, training=False, eps=0.0).data
    # residual F plus normalized F -> relu(2F)
    np.testing.assert_allclose(out, np.maximum(2 * x, 0), atol=1e-12)
    # single node: adjacency [[1]] folds the two projections together
    rng = np.random.default_rng(2)
    w1, w2 = rng.normal(size=(16, 16)), rng.normal(size=(16, 16))
    store.params[f"{p}.w_adj.weight"].data[:] = w1
    store.params[f"{p}.w_self.weight"].data[:] = w2
    x1 = rng.normal(size=(3, 1, 16))
    out1 = gcn_mixer(Tensor(x1), np.ones((1, 1)), store, p, training=False, eps=0.0).data
    np.testing.assert_allclose(out1, np.maximum(x1 + x1 @ (w1 + w2), 0), atol=1e-12)


def test_gcn_mixer_gradient_three_nodes():
    cfg = toy()
    store = f64_store(cfg)
    p = "blocks.0.gcn_spatial.gcn"
    adj = build_skeleton_adjacency(chain_skeleton(3))
    rng = np.random.default_rng(4)
    w = Tensor(rng.normal(size=(2, 3, 16)))

    def fn(x, wa):
        s = store.with_params({**store.params, f"{p}.w_adj.weight": wa})
        return (gcn_mixer(x, adj, s, p, training=False) * w).sum()

    rep = finite_diff_check(fn, [Tensor(rng.normal(size=(2, 3, 16))), Tensor(rng.normal(size=(16, 16)) * 0.3)])
    assert rep.max_rel_err < 1e-5


def test_gcn_mixer_updates_running_stats_in_training():
    cfg = toy()
    store = f64_store(cfg)
    p = "blocks.0.gcn_spatial.gcn"
    before = store.buffers[f"{p}.bn.running_mean"].copy()
    gcn_mixer(Tensor(np.random.default_rng(0).normal(size=(2, 5, 16))), np.eye(5), store, p, training=True)
    assert not np.array_equal(before, store.buffers[f"{p}.bn.running_mean"])


def test_metaformer_pure_residual():
    cfg = toy()
    store = f64_store(cfg)
    p = "blocks.0.attn_spatial"
    for name in ("fc1", "fc2"):
        store.params[f"{p}.mlp.{name}.weight"].data[:] = 0
        store.params[f"{p}.mlp.{name}.bias"].data[:] = 0
    x = np.random.default_rng(0).normal(size=(3, 5, 16))
    out = metaformer_apply(Tensor(x), lambda t: t * 0.0, store, p, cfg)
    np.testing.assert_array_equal(out.data, x)


def test_metaformer_spatial_then_temporal_gradcheck():
    cfg = toy(dim=8, frames=2, joints=3)
    store = f64_store(cfg)
    rng = np.random.default_rng(3)
    w = Tensor(rng.normal(size=(2, 3, 8)))

    def fn(x):
        sp, tp = "blocks.0.attn_spatial", "blocks.0.attn_temporal"
        s = metaformer_apply(x, lambda t: attention_mixer(t, store, f"{sp}.attn", 2), store, sp, cfg)
        t = s.reshape(1, 2, 3, 8).transpose(0, 2, 1, 3).reshape(3, 2, 8)
        t = metaformer_apply(t, lambda u: attention_mixer(u, store, f"{tp}.attn", 2), store, tp, cfg)
        return (t.reshape(1, 3, 2, 8).transpose(0, 2, 1, 3).reshape(2, 3, 8) * w).sum()

    assert finite_diff_check(fn, Tensor(rng.normal(size=(2, 3, 8)))).max_rel_err < 1e-5


def test_adaptive_fuse_properties():
    cfg = toy()
    store = f64_store(cfg)
    p = "blocks.0.fusion"
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(2, 4, 5, 16)), rng.normal(size=(2, 4, 5, 16))
    out, alpha = adaptive_fuse(Tensor(a), Tensor(b), store, p)
    np.testing.assert_allclose(alpha.data.sum(-1), 1.0, atol=1e-12)
    assert ((alpha.data > 0) & (alpha.data < 1)).all()
    out, _ = adaptive_fuse(Tensor(a), Tensor(a), store, p)
    np.testing.assert_allclose(out.data, a, atol=1e-12)
    store.params[f"{p}.weight"].data[:] = 0
    out, alpha = adaptive_fuse(Tensor(a), Tensor(b), store, p)
    np.testing.assert_array_equal(alpha.data, 0.5)
    np.testing.assert_allclose(out.data, (a + b) / 2, atol=1e-12)


def test_fusion_weights_and_tanh_bounds_in_full_model():
    cfg = toy()
    store = f64_store(cfg)
    trace = {}
    model_forward(rand_input(cfg), cfg, store, trace=trace)
    assert len(trace["fusion_weights"]) == cfg.depth
    for alpha in trace["fusion_weights"]:
        np.testing.assert_allclose(alpha.sum(-1), 1.0, atol=1e-12)
        assert ((alpha > 0) & (alpha < 1)).all()
    m = trace["motion_semantics"]
    assert m.shape == (2, 4, 5, cfg.dim_rep) and (np.abs(m) < 1).all()


@pytest.mark.parametrize("mode", COMPOSITION_MODES)
def test_every_mode_preserves_shape(mode):
    cfg = toy(composition_mode=mode)
    trace = {}
    out = model_forward(rand_input(cfg), cfg, f64_store(cfg), trace=trace)
    assert out.shape == (2, 4, 5, 3)
    assert ("fusion_weights" in trace) == (mode == "parallel")
    assert not any(p.name.endswith("fusion.weight") for p in parameter_specs(cfg)) or mode == "parallel"


def test_unknown_mode_rejected():
    with pytest.raises(ValueError, match="mode"):
        toy(composition_mode="zigzag")


def test_unbatched_input_and_determinism():
    cfg = toy()
    store = f64_store(cfg)
    x = rand_input(cfg, batch=1)
    a = model_forward(x[0], cfg, store).data
    b = model_forward(x[0], cfg, store).data
    assert a.shape == (4, 5, 3)
    np.testing.assert_array_equal(a, b)


def test_confidence_channel_is_consumed():
    cfg = toy()
    store = f64_store(cfg)
    x = rand_input(cfg)
    y = x.copy()
    y[0, 1, 2, 2] += 0.3
    assert not np.array_equal(model_forward(x, cfg, store).data, model_forward(y, cfg, store).data)


def test_non_finite_activation_names_block():
    cfg = toy()
    store = f64_store(cfg)
    store.params["blocks.1.fusion.bias"].data[:] = np.nan
    with pytest.raises(NonFiniteActivation, match="block 1"):
        model_forward(rand_input(cfg), cfg, store)


def test_joint_permutation_equivariance():
    cfg = toy(use_spatial_pe=False, skeleton=chain_skeleton(5))
    store = f64_store(cfg)
    perm = np.array([3, 0, 4, 1, 2])
    pcfg = cfg.replace(skeleton=cfg.skeleton.permuted(perm))
    x = rand_input(cfg)
    out = model_forward(x, cfg, store).data
    out_perm = model_forward(x[:, :, perm], pcfg, store).data
    np.testing.assert_allclose(out_perm, out[:, :, perm], rtol=0, atol=1e-5)


def test_no_dead_parameters():
    cfg = toy()
    store = f64_store(cfg)
    rng = np.random.default_rng(5)
    target = Tensor(rng.normal(scale=100, size=(2, 4, 5, 3)))
    with Tape() as tape:
        loss = position_loss(model_forward(Tensor(rand_input(cfg)), cfg, store, training=True), target)
        backward(loss, tape)
    dead = [k for k, t in store.items() if not np.any(t.grad)]
    assert dead == []


def test_full_model_gradcheck():
    cfg = toy()
    store = f64_store(cfg, seed=3)
    rng = np.random.default_rng(7)
    x = Tensor(rand_input(cfg, batch=1))
    w = Tensor(rng.normal(size=(1, 4, 5, 3)) / 1000)
    names = sorted(store.params)

    def fn(*leaves):
        s = store.with_params(dict(zip(names, leaves)))
        return (model_forward(x, cfg, s, training=True) * w).sum()

    # training-mode batch norm: running-stat updates do not feed back into the output
    rep = finite_diff_check(fn, [store[n] for n in names], names=names, max_entries=6, seed=0)
    assert rep.max_rel_err < 1e-4, sorted(rep.per_leaf.items(), key=lambda kv: -kv[1])[:5]


def test_param_count_matches_instantiated_model():
    cfg = ModelConfig.variant("XS")
    assert init_params(cfg).num_scalars() == count_params(cfg)


def test_checkpoint_round_trip(tmp_path):
    cfg = toy(use_temporal_pe=True)
    store = init_params(cfg, seed=4)
    store.buffers["blocks.0.gcn_spatial.gcn.bn.running_var"][:] = 2.5
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, cfg, store, {"note": "x"})
    cfg2, store2, extra = load_checkpoint(path)
    assert cfg2 == cfg and extra["note"] == "x"
    for k, t in store.items():
        assert store2[k].data.tobytes() == t.data.tobytes()
    for k, b in store.buffers.items():
        assert store2.buffers[k].tobytes() == b.tobytes()
    save_checkpoint(tmp_path / "again.ckpt", cfg2, store2, extra)
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()
    x = rand_input(cfg).astype(np.float32)
    np.testing.assert_array_equal(model_forward(x, cfg, store).data, model_forward(x, cfg2, store2).data)


def test_linear_matches_numpy():
    rng = np.random.default_rng(0)
    x, W, b = rng.normal(size=(2, 3)), rng.normal(size=(3, 4)), rng.normal(size=4)
    np.testing.assert_allclose(F.linear(Tensor(x), Tensor(W), Tensor(b)).data, x @ W + b)
