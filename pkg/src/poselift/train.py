"""AdamW optimization loop, evaluation, and inference helpers."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Manifest, SequencePair, flip_array, make_batches
from .data.batching import eval_window_starts, root_relative
from .metrics import LossConfig, MetricsReport, aggregate_report, total_loss
from .model import ModelConfig, ParameterStore, init_params, load_checkpoint, model_forward, save_checkpoint
from .tensor import Tape, Tensor, backward, no_grad

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "lr", "train_loss", "eval_p1", "eval_p2", "eval_accel")


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr_init: float = 5e-4
    lr_decay: float = 0.99
    weight_decay: float = 0.01
    batch_size: int = 16
    epochs: int = 90
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    flip_augment: bool = True
    tta_flip: bool = True
    grad_clip: float | None = None
    max_steps: int | None = None

    def __post_init__(self):
        if self.lr_init < 0:
            raise ValueError("lr_init must be nonnegative")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("loss"), dict):
            d["loss"] = LossConfig(**d["loss"])
        return cls(**d)


@dataclass
class OptimizerState:
    step: int = 0
    exp_avg: dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: dict[str, np.ndarray] = field(default_factory=dict)


def decays(name: str) -> bool:
    """Weight decay skips norm affine parameters and positional embeddings."""
    if name.endswith("_pos"):
        return False
    parts = name.split(".")
    return not any(p.startswith("norm") or p == "bn" for p in parts)


def lr_at_epoch(epoch: int, cfg: TrainConfig) -> float:
    if epoch < 0:
        raise ValueError("epoch must be nonnegative")
    return cfg.lr_init * cfg.lr_decay**epoch


def adamw_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    lr: float,
    cfg: TrainConfig,
) -> None:
    """One in-place AdamW update with bias correction and decoupled weight decay."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for parameter {name}")
    state.step += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    bc1 = 1 - b1**state.step
    bc2 = 1 - b2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.exp_avg.get(name)
        if m is None:
            m = state.exp_avg[name] = np.zeros_like(p.data)
            state.exp_avg_sq[name] = np.zeros_like(p.data)
        v = state.exp_avg_sq[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        data = p.data
        if cfg.weight_decay and decays(name):
            data *= 1 - lr * cfg.weight_decay
        data -= (lr / bc1) * m / (np.sqrt(v / bc2) + cfg.adam_eps)


def _clip(grads: dict[str, np.ndarray], max_norm: float) -> None:
    total = np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= scale


def train_step(
    batch_x: np.ndarray,
    batch_y: np.ndarray,
    cfg: ModelConfig,
    store: ParameterStore,
    state: OptimizerState,
    lr: float,
    tcfg: TrainConfig,
    training: bool = True,
) -> float:
    store.zero_grad()
    with Tape() as tape:
        pred = model_forward(Tensor(batch_x, dtype=store.dtype), cfg, store, training=training)
        loss = total_loss(pred, Tensor(batch_y, dtype=store.dtype), tcfg.loss)
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingDiverged(f"non-finite loss at optimizer step {state.step + 1}")
        backward(loss, tape)
    grads = {k: t.grad for k, t in store.items() if t.grad is not None}
    if tcfg.grad_clip:
        _clip(grads, tcfg.grad_clip)
    adamw_step(store.params, grads, state, lr, tcfg)
    return value


# --------------------------------------------------------------------------
# inference / evaluation
# --------------------------------------------------------------------------


def predict_windows(x: np.ndarray, cfg: ModelConfig, store: ParameterStore, tta_flip: bool) -> np.ndarray:
    """Eval-mode prediction for ``(B, T, J, 3)`` inputs, optionally averaged with the un-flipped flip pass."""
    mirror = cfg.skeleton.mirror_map
    with no_grad():
        out = model_forward(Tensor(x, dtype=store.dtype), cfg, store, training=False).data
        if tta_flip:
            flipped = model_forward(Tensor(flip_array(x, mirror), dtype=store.dtype), cfg, store, training=False).data
            out = (out + flip_array(flipped, mirror)) / 2
    return out


def predict_sequence(seq2d: np.ndarray, cfg: ModelConfig, store: ParameterStore, tta_flip: bool = True) -> np.ndarray:
    """Lift a whole ``(N, J, 3)`` sequence by tiling model-length windows; every frame predicted once."""
    T = cfg.frames
    N = seq2d.shape[0]
    if seq2d.shape[1:] != (cfg.joints, 3):
        raise ValueError(f"sequence has shape {seq2d.shape}, model expects (*, {cfg.joints}, 3)")
    starts = eval_window_starts(N, T)
    windows = np.stack([seq2d[s : s + T] for s in starts]).astype(store.dtype)
    preds = predict_windows(windows, cfg, store, tta_flip)
    out = np.empty((N, cfg.joints, 3), dtype=preds.dtype)
    covered = 0
    for s, p in zip(starts, preds):
        out[covered : s + T] = p[covered - s :]
        covered = s + T
    return out


def evaluate_pairs(
    pairs: Sequence[SequencePair],
    cfg: ModelConfig,
    store: ParameterStore,
    tta_flip: bool = True,
    workers: int = 1,
) -> MetricsReport:
    root = cfg.skeleton.root_index

    def run(pair: SequencePair):
        pred = predict_sequence(pair.inputs.data, cfg, store, tta_flip)
        return pred, root_relative(pair.target.data.astype(np.float64), root), pair.action

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            triples = list(ex.map(run, pairs))
    else:
        triples = [run(p) for p in pairs]
    return aggregate_report(triples, root=root)


def evaluate(checkpoint: str | Path, manifest: str | Path, tta_flip: bool = True, workers: int = 1) -> MetricsReport:
    cfg, store, _ = load_checkpoint(checkpoint)
    pairs = Manifest.load(manifest).load_pairs()
    for p in pairs:
        if p.inputs.joints != cfg.joints:
            raise ValueError(f"{p.name}: {p.inputs.joints} joints but the checkpoint model expects {cfg.joints}")
        if p.inputs.frames < cfg.frames:
            raise ValueError(f"{p.name}: {p.inputs.frames} frames, model window is {cfg.frames}")
    return evaluate_pairs(pairs, cfg, store, tta_flip, workers)


# --------------------------------------------------------------------------
# training run
# --------------------------------------------------------------------------


@dataclass
class TrainResult:
    store: ParameterStore
    best_store: ParameterStore
    log: list[dict]
    best_epoch: int
    steps: int


def train_pairs(
    pairs: Sequence[SequencePair],
    cfg: ModelConfig,
    tcfg: TrainConfig,
    eval_pairs: Sequence[SequencePair] | None = None,
    store: ParameterStore | None = None,
) -> TrainResult:
    """Deterministic training over in-memory pairs; evaluates after every epoch."""
    store = store if store is not None else init_params(cfg, seed=tcfg.seed)
    eval_pairs = pairs if eval_pairs is None else eval_pairs
    state = OptimizerState()
    rows: list[dict] = []
    best, best_epoch = None, -1
    best_store = store.copy()
    for epoch in range(tcfg.epochs):
        lr = lr_at_epoch(epoch, tcfg)
        losses = []
        batches = make_batches(
            pairs,
            tcfg.batch_size,
            cfg.frames,
            seed=tcfg.seed * 100_003 + epoch,
            skeleton=cfg.skeleton,
            train=True,
            flip_prob=0.5 if tcfg.flip_augment else 0.0,
        )
        for batch in batches:
            if tcfg.max_steps is not None and state.step >= tcfg.max_steps:
                break
            try:
                losses.append(train_step(batch.inputs, batch.targets, cfg, store, state, lr, tcfg))
            except TrainingDiverged as exc:
                raise TrainingDiverged(f"epoch {epoch}, step {state.step + 1}: {exc}") from exc
        if not losses:
            break
        report = evaluate_pairs(eval_pairs, cfg, store, tcfg.tta_flip)
        row = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": float(np.mean(losses)),
            "eval_p1": report.mpjpe_mm,
            "eval_p2": report.p_mpjpe_mm,
            "eval_accel": report.accel_err_mm,
        }
        rows.append(row)
        log.info("epoch %d lr %.3g loss %.3f P1 %.2f", epoch, lr, row["train_loss"], row["eval_p1"])
        if best is None or report.mpjpe_mm < best:
            best, best_epoch = report.mpjpe_mm, epoch
            best_store = store.copy()
    return TrainResult(store, best_store, rows, best_epoch, state.step)


def write_log(rows: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(float(r[k])) if k != "epoch" else r[k] for k in LOG_FIELDS})


def read_log(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]


def train_run(
    cfg: ModelConfig,
    tcfg: TrainConfig,
    manifest: str | Path,
    out_dir: str | Path,
    eval_manifest: str | Path | None = None,
) -> TrainResult:
    """Train from a dataset manifest; writes ``train_log.csv``, ``best.ckpt`` and ``last.ckpt``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pairs = Manifest.load(manifest).load_pairs(cfg.skeleton)
    eval_pairs = Manifest.load(eval_manifest).load_pairs(cfg.skeleton) if eval_manifest else None
    result = train_pairs(pairs, cfg, tcfg, eval_pairs)
    write_log(result.log, out / "train_log.csv")
    extra = {"train_config": tcfg.to_dict(), "best_epoch": result.best_epoch, "steps": result.steps}
    save_checkpoint(out / "best.ckpt", cfg, result.best_store, extra)
    save_checkpoint(out / "last.ckpt", cfg, result.store, extra)
    return result
