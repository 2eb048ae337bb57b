"""Training losses and pose-evaluation protocols.

Losses operate on :class:`Tensor` so they can be differentiated; metrics are
plain numpy on ``(T, J, 3)`` arrays in millimetres.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import functional as F
from .tensor import Tensor

PCK_THRESHOLD_MM = 150.0
AUC_THRESHOLDS_MM = np.arange(0.0, 151.0, 5.0)


@dataclass(frozen=True)
class LossConfig:
    lambda_velocity: float = 1.0

    def __post_init__(self):
        if self.lambda_velocity < 0:
            raise ValueError("lambda_velocity must be nonnegative")


def _check_pair(pred: Tensor, gt: Tensor) -> None:
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} differs from target {gt.shape}")


def _batched(t: Tensor) -> Tensor:
    return t.reshape(1, *t.shape) if t.ndim == 3 else t


def position_loss(pred: Tensor, gt: Tensor) -> Tensor:
    """Sum over frames and joints of per-joint Euclidean error, averaged over the batch."""
    _check_pair(pred, gt)
    pred, gt = _batched(pred), _batched(gt)
    return F.norm(pred - gt).sum() * (1.0 / pred.shape[0])


def velocity_loss(pred: Tensor, gt: Tensor) -> Tensor:
    _check_pair(pred, gt)
    pred, gt = _batched(pred), _batched(gt)
    T = pred.shape[1]
    if T < 2:
        return Tensor._wrap(np.zeros((), dtype=pred.dtype), False)
    dp = F.slice_axis(pred, 1, 1, T) - F.slice_axis(pred, 1, 0, T - 1)
    dg = F.slice_axis(gt, 1, 1, T) - F.slice_axis(gt, 1, 0, T - 1)
    return F.norm(dp - dg).sum() * (1.0 / pred.shape[0])


def total_loss(pred: Tensor, gt: Tensor, cfg: LossConfig = LossConfig()) -> Tensor:
    loss = position_loss(pred, gt)
    if cfg.lambda_velocity == 0 or pred.shape[-3] < 2:
        return loss
    return loss + velocity_loss(pred, gt) * cfg.lambda_velocity


# --------------------------------------------------------------------------
# evaluation metrics
# --------------------------------------------------------------------------


def root_center(seq: np.ndarray, root: int = 0) -> np.ndarray:
    seq = np.asarray(seq, dtype=np.float64)
    return seq - seq[..., root : root + 1, :]


def joint_errors(pred: np.ndarray, gt: np.ndarray, root: int = 0) -> np.ndarray:
    """Root-relative Euclidean error per frame and joint, shape ``(T, J)``."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} differs from target {gt.shape}")
    return np.linalg.norm(root_center(pred, root) - root_center(gt, root), axis=-1)


def mpjpe(pred: np.ndarray, gt: np.ndarray, root: int = 0) -> float:
    return float(joint_errors(pred, gt, root).mean())


def procrustes_align(pred: np.ndarray, gt: np.ndarray, rigid_only: bool = False) -> np.ndarray:
    """Align each ``(J, 3)`` frame of ``pred`` onto ``gt`` by rotation, translation and optionally scale.

    Frames whose prediction collapses to a single point are only translated.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    flat_p = pred.reshape(-1, *pred.shape[-2:])
    flat_g = gt.reshape(-1, *gt.shape[-2:])
    out = np.empty_like(flat_p)
    for i, (p, g) in enumerate(zip(flat_p, flat_g)):
        mu_p, mu_g = p.mean(axis=0), g.mean(axis=0)
        x, y = p - mu_p, g - mu_g
        sx = (x * x).sum()
        if sx <= 1e-24:
            out[i] = x + mu_g
            continue
        U, S, Vt = np.linalg.svd(x.T @ y)
        D = np.ones(3)
        D[2] = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
        R = (Vt.T * D) @ U.T
        s = 1.0 if rigid_only else float((S * D).sum() / sx)
        out[i] = s * x @ R.T + mu_g
    return out.reshape(pred.shape)


def p_mpjpe_frames(pred: np.ndarray, gt: np.ndarray, rigid_only: bool = False) -> np.ndarray:
    aligned = procrustes_align(pred, gt, rigid_only)
    return np.linalg.norm(aligned - np.asarray(gt, dtype=np.float64), axis=-1).mean(axis=-1)


def p_mpjpe(pred: np.ndarray, gt: np.ndarray, rigid_only: bool = False) -> float:
    return float(p_mpjpe_frames(pred, gt, rigid_only).mean())


def pck_curve(errors: np.ndarray, thresholds=AUC_THRESHOLDS_MM) -> np.ndarray:
    e = np.asarray(errors).reshape(-1)
    return np.array([100.0 * np.mean(e < th) for th in thresholds])


def pck_auc(pred: np.ndarray, gt: np.ndarray, root: int = 0) -> tuple[float, float]:
    """(PCK at 150 mm, AUC over 0:5:150 mm), both in percent; the comparison is strict ``<``."""
    e = joint_errors(pred, gt, root)
    return float(100.0 * np.mean(e < PCK_THRESHOLD_MM)), float(pck_curve(e).mean())


def acceleration_residuals(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Per interior frame and joint, norm of the difference of second differences, ``(T-2, J)``."""
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape[0] < 3:
        return np.zeros((0, pred.shape[1]))
    acc_p = pred[:-2] - 2 * pred[1:-1] + pred[2:]
    acc_g = gt[:-2] - 2 * gt[1:-1] + gt[2:]
    return np.linalg.norm(acc_g - acc_p, axis=-1)


def acceleration_error(pred: np.ndarray, gt: np.ndarray) -> float:
    r = acceleration_residuals(pred, gt)
    return float(r.mean()) if r.size else 0.0


@dataclass
class MetricsReport:
    mpjpe_mm: float
    p_mpjpe_mm: float
    pck_pct: float
    auc_pct: float
    accel_err_mm: float
    per_joint: list[float]
    per_action: dict[str, dict[str, float]] = field(default_factory=dict)
    frames: int = 0
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)


def aggregate_report(
    pairs: Sequence[tuple[np.ndarray, np.ndarray, str | None]],
    root: int = 0,
    rigid_only: bool = False,
) -> MetricsReport:
    """Frame-weighted overall, per-joint and per-action metrics over ``(pred, gt, action)`` triples."""
    if not pairs:
        raise ValueError("aggregate_report needs at least one sequence")
    all_err, all_p2, all_acc = [], [], []
    by_action: "OrderedDict[str, dict[str, list]]" = OrderedDict()
    for pred, gt, action in pairs:
        err = joint_errors(pred, gt, root)
        p2 = p_mpjpe_frames(pred, gt, rigid_only)
        acc = acceleration_residuals(pred, gt)
        all_err.append(err)
        all_p2.append(p2)
        all_acc.append(acc.reshape(-1))
        slot = by_action.setdefault(action or "unlabeled", {"err": [], "p2": []})
        slot["err"].append(err)
        slot["p2"].append(p2)

    err = np.concatenate(all_err, axis=0)
    curve = pck_curve(err)
    acc = np.concatenate(all_acc)
    per_action = {}
    for name in sorted(by_action):
        slot = by_action[name]
        e = np.concatenate(slot["err"], axis=0)
        per_action[name] = {
            "mpjpe_mm": float(e.mean()),
            "p_mpjpe_mm": float(np.concatenate(slot["p2"]).mean()),
            "frames": int(e.shape[0]),
        }
    return MetricsReport(
        mpjpe_mm=float(err.mean()),
        p_mpjpe_mm=float(np.concatenate(all_p2).mean()),
        pck_pct=float(100.0 * np.mean(err < PCK_THRESHOLD_MM)),
        auc_pct=float(curve.mean()),
        accel_err_mm=float(acc.mean()) if acc.size else 0.0,
        per_joint=[float(v) for v in err.mean(axis=0)],
        per_action=per_action,
        frames=int(err.shape[0]),
    )
