"""Closed-form parameter and multiply-accumulate counts for a :class:`ModelConfig`.

Two MAC conventions are available:

``linear`` (default)
    Only products against weight matrices: every linear projection costs
    ``in * out`` per token. Attention score/value products, adjacency
    products and the K-NN similarity are free. This is what common layer
    profilers report for models built from linear layers, and it reproduces
    the published variant table.

``dense``
    Additionally charges ``2 * n^2 * d_k`` per head for attention, ``n^2 * d``
    for every dense adjacency product and ``T^2 * d`` per joint for the K-NN
    similarity.

Norms, softmax, activations and element-wise fusion are free under both.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

from .model.config import ModelConfig

CONVENTIONS = ("linear", "dense")


@dataclass
class CostReport:
    param_count: int
    total_macs: int
    macs_per_frame: int
    frames: int
    convention: str
    breakdown: list[tuple[str, int]] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["breakdown"] = [{"module": k, "macs": v} for k, v in self.breakdown]
        return d

    def pretty(self) -> str:
        return f"{self.param_count / 1e6:.1f} M params / {self.total_macs / 1e9:.1f} G MACs / {self.macs_per_frame / 1e6:.0f} M MACs/frame"


def linear_params(fan_in: int, fan_out: int, bias: bool = True) -> int:
    return fan_in * fan_out + (fan_out if bias else 0)


def _mlp_params(d: int, ratio: int) -> int:
    return linear_params(d, ratio * d) + linear_params(ratio * d, d)


def attention_metaformer_params(d: int, ratio: int) -> int:
    norms = 2 * (2 * d)
    mixer = 3 * linear_params(d, d, bias=False) + linear_params(d, d)
    return norms + mixer + _mlp_params(d, ratio)


def gcn_metaformer_params(d: int, ratio: int) -> int:
    norms = 2 * (2 * d)
    mixer = 2 * linear_params(d, d, bias=False) + 2 * d  # two projections plus batch-norm affine
    return norms + mixer + _mlp_params(d, ratio)


def block_params(cfg: ModelConfig) -> int:
    d, r = cfg.dim, cfg.mlp_ratio
    n = 0
    if cfg.uses_attention:
        n += 2 * attention_metaformer_params(d, r)
    if cfg.uses_gcn:
        n += 2 * gcn_metaformer_params(d, r)
    if cfg.uses_fusion:
        n += linear_params(2 * d, 2)
    return n


def count_params(cfg: ModelConfig) -> int:
    d = cfg.dim
    n = linear_params(3, d)
    if cfg.use_spatial_pe:
        n += cfg.joints * d
    if cfg.use_temporal_pe:
        n += cfg.frames * d
    n += cfg.depth * block_params(cfg)
    n += linear_params(d, cfg.dim_rep) + linear_params(cfg.dim_rep, 3)
    return n


def _metaformer_macs(cfg: ModelConfig, kind: str, axis: str, dense: bool) -> int:
    """MACs of one MetaFormer over all ``T * J`` tokens of a single sample."""
    d, T, J, r = cfg.dim, cfg.frames, cfg.joints, cfg.mlp_ratio
    tokens = T * J
    n_mix = J if axis == "spatial" else T  # sequence length seen by the mixer
    groups = T if axis == "spatial" else J
    macs = tokens * (2 * r * d * d)  # MLP
    if kind == "attn":
        macs += tokens * 4 * d * d  # q, k, v, output projection
        if dense:
            macs += groups * cfg.heads * 2 * n_mix * n_mix * cfg.head_dim
    else:
        macs += tokens * 2 * d * d  # adjacency-side and self projections
        if dense:
            macs += groups * n_mix * n_mix * d
            if axis == "temporal":
                macs += groups * n_mix * n_mix * d  # K-NN similarity
    return macs


def count_macs(cfg: ModelConfig, convention: str = "linear") -> CostReport:
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown MAC convention {convention!r}; expected one of {CONVENTIONS}")
    dense = convention == "dense"
    d, T, J = cfg.dim, cfg.frames, cfg.joints
    tokens = T * J
    breakdown: list[tuple[str, int]] = [("embed", tokens * 3 * d)]
    for i in range(cfg.depth):
        p = f"blocks.{i}"
        if cfg.uses_attention:
            breakdown.append((f"{p}.attn_spatial", _metaformer_macs(cfg, "attn", "spatial", dense)))
            breakdown.append((f"{p}.attn_temporal", _metaformer_macs(cfg, "attn", "temporal", dense)))
        if cfg.uses_gcn:
            breakdown.append((f"{p}.gcn_spatial", _metaformer_macs(cfg, "gcn", "spatial", dense)))
            breakdown.append((f"{p}.gcn_temporal", _metaformer_macs(cfg, "gcn", "temporal", dense)))
        if cfg.uses_fusion:
            breakdown.append((f"{p}.fusion", tokens * 2 * d * 2))
    breakdown.append(("rep", tokens * d * cfg.dim_rep))
    breakdown.append(("head", tokens * cfg.dim_rep * 3))
    total = sum(v for _, v in breakdown)
    # every term carries a factor of T, so the division is exact
    assert total % T == 0
    return CostReport(count_params(cfg), total, total // T, T, convention, breakdown)
