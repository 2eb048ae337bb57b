from __future__ import annotations

from dataclasses import asdict, dataclass, replace

from ..graph import SkeletonSpec, chain_skeleton, default_skeleton

COMPOSITION_MODES = (
    "parallel",
    "seq_gcn_then_attn",
    "seq_attn_then_gcn",
    "attn_only",
    "gcn_only",
)

# (N, d, T) per named variant
VARIANTS = {
    "XS": (12, 64, 27),
    "S": (26, 64, 81),
    "B": (16, 128, 243),
    "L": (26, 128, 243),
}


@dataclass(frozen=True)
class ModelConfig:
    depth: int = 2
    dim: int = 32
    dim_rep: int = 512
    frames: int = 9
    joints: int = 17
    heads: int = 8
    mlp_ratio: int = 4
    temporal_k: int = 2
    composition_mode: str = "parallel"
    use_spatial_pe: bool = True
    use_temporal_pe: bool = False
    post_norm: bool = False
    temporal_chain_union: bool = False
    output_scale: float = 1000.0
    norm_eps: float = 1e-5
    bn_momentum: float = 0.1
    pe_init_std: float = 0.02
    skeleton: SkeletonSpec | None = None

    def __post_init__(self):
        if self.skeleton is None:
            # frozen dataclass: fill the default through object.__setattr__
            skel = default_skeleton() if self.joints == 17 else chain_skeleton(self.joints)
            object.__setattr__(self, "skeleton", skel)
        for name in ("depth", "dim", "dim_rep", "frames", "joints", "heads", "mlp_ratio", "temporal_k"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} is not divisible by heads {self.heads}")
        if self.composition_mode not in COMPOSITION_MODES:
            raise ValueError(f"unknown composition mode {self.composition_mode!r}; expected one of {COMPOSITION_MODES}")
        if self.skeleton.joint_count != self.joints:
            raise ValueError(f"skeleton has {self.skeleton.joint_count} joints, config says {self.joints}")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @property
    def uses_attention(self) -> bool:
        return self.composition_mode != "gcn_only"

    @property
    def uses_gcn(self) -> bool:
        return self.composition_mode != "attn_only"

    @property
    def uses_fusion(self) -> bool:
        return self.composition_mode == "parallel"

    @classmethod
    def variant(cls, name: str, **overrides) -> "ModelConfig":
        try:
            depth, dim, frames = VARIANTS[name.upper()]
        except KeyError:
            raise ValueError(f"unknown variant {name!r}; expected one of {sorted(VARIANTS)}") from None
        return cls(depth=depth, dim=dim, frames=frames, **overrides)

    def replace(self, **changes) -> "ModelConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["skeleton"] = self.skeleton.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "variant" in d:
            base = VARIANTS[d.pop("variant").upper()]
            d.setdefault("depth", base[0])
            d.setdefault("dim", base[1])
            d.setdefault("frames", base[2])
        if isinstance(d.get("skeleton"), dict):
            d["skeleton"] = SkeletonSpec.from_dict(d["skeleton"])
        if "skeleton" in d and "joints" not in d:
            d["joints"] = d["skeleton"].joint_count
        return cls(**d)
