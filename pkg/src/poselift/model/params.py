"""Parameter layout, initialization, and the checkpoint archive."""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from ..tensor import Tensor
from .config import ModelConfig

CHECKPOINT_FORMAT = "poselift-checkpoint/1"
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple[int, ...]
    init: str  # xavier | zeros | ones | normal


def _linear(prefix: str, fan_in: int, fan_out: int, bias: bool = True) -> list[ParamSpec]:
    out = [ParamSpec(f"{prefix}.weight", (fan_in, fan_out), "xavier")]
    if bias:
        out.append(ParamSpec(f"{prefix}.bias", (fan_out,), "zeros"))
    return out


def _norm(prefix: str, d: int) -> list[ParamSpec]:
    return [ParamSpec(f"{prefix}.weight", (d,), "ones"), ParamSpec(f"{prefix}.bias", (d,), "zeros")]


def _metaformer(prefix: str, cfg: ModelConfig, mixer: str) -> list[ParamSpec]:
    d = cfg.dim
    specs = _norm(f"{prefix}.norm1", d)
    if mixer == "attn":
        for proj in ("q", "k", "v"):
            specs += _linear(f"{prefix}.attn.{proj}", d, d, bias=False)
        specs += _linear(f"{prefix}.attn.proj", d, d)
    else:
        specs += _linear(f"{prefix}.gcn.w_adj", d, d, bias=False)
        specs += _linear(f"{prefix}.gcn.w_self", d, d, bias=False)
        specs += _norm(f"{prefix}.gcn.bn", d)
    specs += _norm(f"{prefix}.norm2", d)
    specs += _linear(f"{prefix}.mlp.fc1", d, d * cfg.mlp_ratio)
    specs += _linear(f"{prefix}.mlp.fc2", d * cfg.mlp_ratio, d)
    return specs


def parameter_specs(cfg: ModelConfig) -> list[ParamSpec]:
    """Every trainable tensor of the model, in a stable order."""
    d = cfg.dim
    specs = _linear("embed.proj", 3, d)
    if cfg.use_spatial_pe:
        specs.append(ParamSpec("embed.spatial_pos", (cfg.joints, d), "normal"))
    if cfg.use_temporal_pe:
        specs.append(ParamSpec("embed.temporal_pos", (cfg.frames, 1, d), "normal"))
    for i in range(cfg.depth):
        p = f"blocks.{i}"
        if cfg.uses_attention:
            specs += _metaformer(f"{p}.attn_spatial", cfg, "attn")
            specs += _metaformer(f"{p}.attn_temporal", cfg, "attn")
        if cfg.uses_gcn:
            specs += _metaformer(f"{p}.gcn_spatial", cfg, "gcn")
            specs += _metaformer(f"{p}.gcn_temporal", cfg, "gcn")
        if cfg.uses_fusion:
            specs += _linear(f"{p}.fusion", 2 * d, 2)
    specs += _linear("rep", d, cfg.dim_rep)
    specs += _linear("head", cfg.dim_rep, 3)
    return specs


def buffer_names(cfg: ModelConfig) -> list[str]:
    names = []
    if cfg.uses_gcn:
        for i in range(cfg.depth):
            for part in ("gcn_spatial", "gcn_temporal"):
                names += [f"blocks.{i}.{part}.gcn.bn.running_mean", f"blocks.{i}.{part}.gcn.bn.running_var"]
    return names


@dataclass
class ParameterStore:
    """Named trainable tensors plus non-trainable batch-norm statistics."""

    params: dict[str, Tensor]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def items(self):
        return self.params.items()

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def num_scalars(self) -> int:
        return sum(t.size for t in self.params.values())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def astype(self, dtype) -> "ParameterStore":
        return ParameterStore(
            {k: Tensor(v.data.astype(dtype), requires_grad=v.requires_grad) for k, v in self.params.items()},
            {k: v.astype(dtype) for k, v in self.buffers.items()},
        )

    def copy(self) -> "ParameterStore":
        return self.astype(self.dtype)

    def with_params(self, params: dict[str, Tensor]) -> "ParameterStore":
        """Same buffers, substituted parameter tensors."""
        return ParameterStore(params, self.buffers)


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> ParameterStore:
    """Xavier-uniform weights, zero biases, unit norm scales, N(0, pe_init_std) embeddings."""
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for spec in parameter_specs(cfg):
        if spec.init == "xavier":
            fan_in, fan_out = spec.shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            arr = rng.uniform(-limit, limit, size=spec.shape)
        elif spec.init == "normal":
            arr = rng.normal(0.0, cfg.pe_init_std, size=spec.shape)
        elif spec.init == "ones":
            arr = np.ones(spec.shape)
        else:
            arr = np.zeros(spec.shape)
        params[spec.name] = Tensor(arr.astype(dtype), requires_grad=True)
    buffers = {}
    for name in buffer_names(cfg):
        fill = 1.0 if name.endswith("running_var") else 0.0
        buffers[name] = np.full((cfg.dim,), fill, dtype=dtype)
    return ParameterStore(params, buffers)


def save_checkpoint(path: str | Path, cfg: ModelConfig, store: ParameterStore, extra: dict | None = None) -> None:
    """Write a zip archive holding ``manifest.json`` and a little-endian f32 ``weights.bin``."""
    blob = io.BytesIO()
    entries = []
    for kind, items in (("param", ((k, t.data) for k, t in store.params.items())), ("buffer", store.buffers.items())):
        for name, arr in items:
            data = np.ascontiguousarray(arr, dtype="<f4")
            entries.append({"path": name, "kind": kind, "shape": list(data.shape), "dtype": "f32", "offset": blob.tell()})
            blob.write(data.tobytes())
    manifest = {"format": CHECKPOINT_FORMAT, "config": cfg.to_dict(), "tensors": entries}
    if extra:
        manifest["extra"] = extra
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for fname, payload in (
            ("manifest.json", json.dumps(manifest, indent=2, sort_keys=True).encode()),
            ("weights.bin", blob.getvalue()),
        ):
            info = zipfile.ZipInfo(fname, date_time=_ZIP_DATE)
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, payload)


def load_checkpoint(path: str | Path) -> tuple[ModelConfig, ParameterStore, dict]:
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        blob = zf.read("weights.bin")
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: unsupported checkpoint format {manifest.get('format')!r}")
    cfg = ModelConfig.from_dict(manifest["config"])
    params, buffers = {}, {}
    for e in manifest["tensors"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=e["offset"]).reshape(e["shape"]).astype(np.float32)
        if e["kind"] == "param":
            params[e["path"]] = Tensor(arr, requires_grad=True)
        else:
            buffers[e["path"]] = arr
    expected = {s.name: s.shape for s in parameter_specs(cfg)}
    got = {k: v.shape for k, v in params.items()}
    if expected != got:
        missing = sorted(set(expected) - set(got))
        extra = sorted(set(got) - set(expected))
        raise ValueError(f"{path}: parameters disagree with config (missing {missing[:3]}, unexpected {extra[:3]})")
    return cfg, ParameterStore(params, buffers), manifest.get("extra", {})
