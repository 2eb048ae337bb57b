"""Forward pass of the dual-stream attention/graph lifting network.

Feature tensors are laid out ``(B, T, J, d)``. Spatial mixers see
``(B*T, J, d)`` token sets, temporal mixers see ``(B*J, T, d)``.
"""

from __future__ import annotations

import math

import numpy as np

from .. import functional as F
from ..graph import build_skeleton_adjacency, build_temporal_knn_adjacency
from ..tensor import Tensor
from .config import ModelConfig
from .params import ParameterStore


class NonFiniteActivation(FloatingPointError):
    pass


def _const(arr: np.ndarray, dtype) -> Tensor:
    return Tensor._wrap(np.ascontiguousarray(arr, dtype=dtype), False)


def _lin(store: ParameterStore, prefix: str, x: Tensor) -> Tensor:
    bias = store.params.get(f"{prefix}.bias")
    return F.linear(x, store[f"{prefix}.weight"], bias)


def _ln(store: ParameterStore, prefix: str, x: Tensor, eps: float) -> Tensor:
    return F.layer_norm(x, store[f"{prefix}.weight"], store[f"{prefix}.bias"], eps)


def embed_inputs(x: Tensor, cfg: ModelConfig, store: ParameterStore) -> Tensor:
    if x.shape[1:] != (cfg.frames, cfg.joints, 3):
        raise ValueError(f"input shape {x.shape} does not match (B, {cfg.frames}, {cfg.joints}, 3)")
    h = _lin(store, "embed.proj", x)
    if cfg.use_spatial_pe:
        h = F.add_bias(h, store["embed.spatial_pos"])
    if cfg.use_temporal_pe:
        h = F.add_bias(h, store["embed.temporal_pos"])
    return h


def attention_mixer(tokens: Tensor, store: ParameterStore, prefix: str, heads: int) -> Tensor:
    """Multi-head scaled dot-product self-attention over the middle axis of ``(M, n, d)``."""
    M, n, d = tokens.shape
    dk = d // heads

    def split(t: Tensor) -> Tensor:
        return t.reshape(M, n, heads, dk).transpose(0, 2, 1, 3)

    q = split(F.matmul(tokens, store[f"{prefix}.q.weight"]))
    k = split(F.matmul(tokens, store[f"{prefix}.k.weight"]))
    v = split(F.matmul(tokens, store[f"{prefix}.v.weight"]))
    scores = F.matmul(q, k.swap_last()) * (1.0 / math.sqrt(dk))
    attn = F.softmax(scores)
    out = F.matmul(attn, v).transpose(0, 2, 1, 3).reshape(M, n, d)
    return _lin(store, f"{prefix}.proj", out)


def gcn_mixer(
    features: Tensor,
    adj: np.ndarray,
    store: ParameterStore,
    prefix: str,
    training: bool,
    eps: float = 1e-5,
    momentum: float = 0.1,
) -> Tensor:
    """relu(F + BN(A F W_adj + F W_self)) for ``(M, n, d)`` features.

    ``adj`` is either one ``(n, n)`` matrix shared by all M token sets or a
    ``(M, n, n)`` stack. Updates batch-norm running statistics in training mode.
    """
    A = _const(adj, features.dtype)
    mixed = F.matmul(A, F.matmul(features, store[f"{prefix}.w_adj.weight"]))
    h = mixed + F.matmul(features, store[f"{prefix}.w_self.weight"])
    rm_key, rv_key = f"{prefix}.bn.running_mean", f"{prefix}.bn.running_var"
    if training:
        flat = h.data.reshape(-1, h.shape[-1])
        count = flat.shape[0]
        mean = flat.mean(axis=0)
        var = flat.var(axis=0) * (count / max(count - 1, 1))
        if rm_key in store.buffers:
            store.buffers[rm_key] = ((1 - momentum) * store.buffers[rm_key] + momentum * mean).astype(h.dtype)
            store.buffers[rv_key] = ((1 - momentum) * store.buffers[rv_key] + momentum * var).astype(h.dtype)
        normed = F.batch_norm(h, store[f"{prefix}.bn.weight"], store[f"{prefix}.bn.bias"], training=True, eps=eps)
    else:
        normed = F.batch_norm(
            h,
            store[f"{prefix}.bn.weight"],
            store[f"{prefix}.bn.bias"],
            training=False,
            running_mean=store.buffers[rm_key],
            running_var=store.buffers[rv_key],
            eps=eps,
        )
    return F.relu(features + normed)


def _mlp(store: ParameterStore, prefix: str, x: Tensor) -> Tensor:
    return _lin(store, f"{prefix}.fc2", F.gelu(_lin(store, f"{prefix}.fc1", x)))


def metaformer_apply(tokens: Tensor, mixer, store: ParameterStore, prefix: str, cfg: ModelConfig) -> Tensor:
    """Residual mixer sublayer followed by a residual MLP sublayer.

    ``mixer`` maps normalized tokens to mixed tokens. Pre-norm by default;
    ``cfg.post_norm`` moves each LayerNorm after its residual sum.
    """
    eps = cfg.norm_eps
    if cfg.post_norm:
        y = _ln(store, f"{prefix}.norm1", tokens + mixer(tokens), eps)
        return _ln(store, f"{prefix}.norm2", y + _mlp(store, f"{prefix}.mlp", y), eps)
    y = tokens + mixer(_ln(store, f"{prefix}.norm1", tokens, eps))
    return y + _mlp(store, f"{prefix}.mlp", _ln(store, f"{prefix}.norm2", y, eps))


def _to_spatial(h: Tensor) -> Tensor:
    B, T, J, d = h.shape
    return h.reshape(B * T, J, d)


def _from_spatial(h: Tensor, B: int, T: int) -> Tensor:
    _, J, d = h.shape
    return h.reshape(B, T, J, d)


def _to_temporal(h: Tensor) -> Tensor:
    B, T, J, d = h.shape
    return h.transpose(0, 2, 1, 3).reshape(B * J, T, d)


def _from_temporal(h: Tensor, B: int, J: int) -> Tensor:
    _, T, d = h.shape
    return h.reshape(B, J, T, d).transpose(0, 2, 1, 3)


def transformer_stream(h: Tensor, cfg: ModelConfig, store: ParameterStore, prefix: str) -> Tensor:
    B, T, J, _ = h.shape
    sp = f"{prefix}.attn_spatial"
    s = metaformer_apply(_to_spatial(h), lambda t: attention_mixer(t, store, f"{sp}.attn", cfg.heads), store, sp, cfg)
    h = _from_spatial(s, B, T)
    tp = f"{prefix}.attn_temporal"
    t = metaformer_apply(_to_temporal(h), lambda t: attention_mixer(t, store, f"{tp}.attn", cfg.heads), store, tp, cfg)
    return _from_temporal(t, B, J)


def gcn_stream(
    h: Tensor, cfg: ModelConfig, store: ParameterStore, prefix: str, training: bool, trace: dict | None = None
) -> Tensor:
    B, T, J, _ = h.shape
    skel_adj = build_skeleton_adjacency(cfg.skeleton)
    sp = f"{prefix}.gcn_spatial"

    def spatial_mixer(t: Tensor) -> Tensor:
        return gcn_mixer(t, skel_adj, store, f"{sp}.gcn", training, cfg.norm_eps, cfg.bn_momentum)

    s = metaformer_apply(_to_spatial(h), spatial_mixer, store, sp, cfg)
    h = _from_spatial(s, B, T)
    tp = f"{prefix}.gcn_temporal"

    def temporal_mixer(t: Tensor) -> Tensor:
        # graph rebuilt from this layer's own (normalized) input: no gradient through the K-NN choice
        adj = build_temporal_knn_adjacency(t.data, cfg.temporal_k, cfg.temporal_chain_union)
        if trace is not None:
            trace.setdefault("temporal_adjacency", []).append(adj.reshape(B, J, T, T))
        return gcn_mixer(t, adj, store, f"{tp}.gcn", training, cfg.norm_eps, cfg.bn_momentum)

    t = metaformer_apply(_to_temporal(h), temporal_mixer, store, tp, cfg)
    return _from_temporal(t, B, J)


def adaptive_fuse(f_tf: Tensor, f_gf: Tensor, store: ParameterStore, prefix: str) -> tuple[Tensor, Tensor]:
    """Softmax-weighted per-position blend of the two streams; returns (fused, weights[..., 2])."""
    if f_tf.shape != f_gf.shape:
        raise ValueError(f"stream shapes differ: {f_tf.shape} vs {f_gf.shape}")
    logits = _lin(store, prefix, F.concat([f_tf, f_gf], axis=-1))
    alpha = F.softmax(logits)
    shape = f_tf.shape
    a_tf = F.expand(F.slice_axis(alpha, -1, 0, 1), shape)
    a_gf = F.expand(F.slice_axis(alpha, -1, 1, 2), shape)
    return a_tf * f_tf + a_gf * f_gf, alpha


def agformer_block(
    h: Tensor, cfg: ModelConfig, store: ParameterStore, index: int, training: bool, trace: dict | None = None
) -> Tensor:
    prefix = f"blocks.{index}"
    mode = cfg.composition_mode
    if mode == "parallel":
        f_tf = transformer_stream(h, cfg, store, prefix)
        f_gf = gcn_stream(h, cfg, store, prefix, training, trace)
        out, alpha = adaptive_fuse(f_tf, f_gf, store, f"{prefix}.fusion")
        if trace is not None:
            trace.setdefault("fusion_weights", []).append(alpha.data)
        return out
    if mode == "attn_only":
        return transformer_stream(h, cfg, store, prefix)
    if mode == "gcn_only":
        return gcn_stream(h, cfg, store, prefix, training, trace)
    if mode == "seq_gcn_then_attn":
        return transformer_stream(gcn_stream(h, cfg, store, prefix, training, trace), cfg, store, prefix)
    if mode == "seq_attn_then_gcn":
        return gcn_stream(transformer_stream(h, cfg, store, prefix), cfg, store, prefix, training, trace)
    raise ValueError(f"unknown composition mode {mode!r}")


def model_forward(
    x: Tensor | np.ndarray,
    cfg: ModelConfig,
    store: ParameterStore,
    training: bool = False,
    trace: dict | None = None,
) -> Tensor:
    """Lift ``(B, T, J, 3)`` 2D+confidence inputs to ``(B, T, J, 3)`` root-relative millimetres.

    A ``(T, J, 3)`` input is treated as a batch of one and returned unbatched.
    """
    if not isinstance(x, Tensor):
        x = _const(np.asarray(x), store.dtype)
    squeeze = x.ndim == 3
    if squeeze:
        x = x.reshape(1, *x.shape)
    h = embed_inputs(x, cfg, store)
    for i in range(cfg.depth):
        h = agformer_block(h, cfg, store, i, training, trace)
        if not np.all(np.isfinite(h.data)):
            raise NonFiniteActivation(f"non-finite activation after block {i}")
    motion = F.tanh(_lin(store, "rep", h))
    if trace is not None:
        trace["motion_semantics"] = motion.data
    out = _lin(store, "head", motion) * cfg.output_scale
    if squeeze:
        out = out.reshape(*out.shape[1:])
    return out
