from .config import COMPOSITION_MODES, VARIANTS, ModelConfig
from .network import (
    NonFiniteActivation,
    adaptive_fuse,
    agformer_block,
    attention_mixer,
    embed_inputs,
    gcn_mixer,
    metaformer_apply,
    model_forward,
)
from .params import (
    ParameterStore,
    ParamSpec,
    init_params,
    load_checkpoint,
    parameter_specs,
    save_checkpoint,
)

__all__ = [
    "COMPOSITION_MODES",
    "VARIANTS",
    "ModelConfig",
    "NonFiniteActivation",
    "ParameterStore",
    "ParamSpec",
    "adaptive_fuse",
    "agformer_block",
    "attention_mixer",
    "embed_inputs",
    "gcn_mixer",
    "init_params",
    "load_checkpoint",
    "metaformer_apply",
    "model_forward",
    "parameter_specs",
    "save_checkpoint",
]
