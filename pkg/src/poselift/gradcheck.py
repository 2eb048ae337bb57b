"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward, no_grad


class NonDeterministicFunction(RuntimeError):
    pass


@dataclass
class GradCheckReport:
    max_rel_err: float
    per_leaf: dict[str, float] = field(default_factory=dict)

    def passed(self, tol: float) -> bool:
        return self.max_rel_err < tol


def finite_diff_check(
    fn: Callable[..., Tensor],
    points: Tensor | Sequence[Tensor],
    eps: float = 1e-5,
    names: Sequence[str] | None = None,
    max_entries: int | None = None,
    seed: int = 0,
    floor: float = 1.0,
) -> GradCheckReport:
    """Compare analytic gradients of scalar ``fn(*points)`` with central differences.

    The error for a leaf is ``max|analytic - numeric| / max(max|analytic|, max|numeric|, floor)``.
    ``max_entries`` caps how many coordinates per leaf are probed (chosen at
    random with ``seed``); ``None`` probes all of them.
    """
    if isinstance(points, Tensor):
        points = [points]
    points = list(points)
    for p in points:
        if p.dtype != np.float64:
            raise TypeError("finite_diff_check requires float64 points")
    names = list(names) if names is not None else [f"arg{i}" for i in range(len(points))]

    def evaluate(arrays: list[np.ndarray]) -> float:
        with no_grad():
            out = fn(*[Tensor._wrap(a, False) for a in arrays])
        if out.size != 1:
            raise ValueError(f"function must return a scalar, got shape {out.shape}")
        return float(out.data.reshape(()))

    base = [p.data.copy() for p in points]
    f0 = evaluate(base)
    if evaluate(base) != f0:
        raise NonDeterministicFunction("two evaluations at the same point disagree")

    leaves = [Tensor(a, requires_grad=True) for a in base]
    with Tape() as tape:
        out = fn(*leaves)
        if not tape.nodes:
            analytic = [np.zeros_like(a) for a in base]
        else:
            backward(out, tape)
            analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]

    rng = np.random.default_rng(seed)
    per_leaf: dict[str, float] = {}
    for i, arr in enumerate(base):
        flat_idx = np.arange(arr.size)
        if max_entries is not None and arr.size > max_entries:
            flat_idx = np.sort(rng.choice(arr.size, size=max_entries, replace=False))
        num = np.empty(len(flat_idx))
        ana = analytic[i].reshape(-1)[flat_idx]
        work = [a if m != i else a.copy() for m, a in enumerate(base)]
        w = work[i].reshape(-1)
        for k, j in enumerate(flat_idx):
            orig = w[j]
            w[j] = orig + eps
            fp = evaluate(work)
            w[j] = orig - eps
            fm = evaluate(work)
            w[j] = orig
            num[k] = (fp - fm) / (2 * eps)
        denom = max(np.abs(ana).max(initial=0.0), np.abs(num).max(initial=0.0), floor)
        per_leaf[names[i]] = float(np.abs(ana - num).max(initial=0.0) / denom)
    return GradCheckReport(max(per_leaf.values(), default=0.0), per_leaf)


# --------------------------------------------------------------------------
# packaged suite (used by the ``gradcheck`` command)
# --------------------------------------------------------------------------

PRIMITIVE_TOL = 1e-5
MODEL_TOL = 1e-4
SUITE_MODULES = ("tensor", "loss", "model", "all")


@dataclass
class SuiteResult:
    name: str
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def _primitive_cases(rng: np.random.Generator) -> dict[str, tuple[Callable, list[np.ndarray]]]:
    from . import functional as F

    n = rng.normal

    def pos(*shape):
        return rng.uniform(0.5, 2.0, size=shape)

    return {
        "matmul": (lambda a, b: a @ b, [n(size=(2, 3, 4)), n(size=(4, 5))]),
        "transpose": (lambda a: a.transpose(1, 2, 0), [n(size=(2, 3, 4))]),
        "reshape": (lambda a: a.reshape(3, 8), [n(size=(2, 3, 4))]),
        "add": (lambda a, b: a + b, [n(size=(3, 4)), n(size=(3, 4))]),
        "sub": (lambda a, b: a - b, [n(size=(3, 4)), n(size=(3, 4))]),
        "mul": (lambda a, b: a * b, [n(size=(3, 4)), n(size=(3, 4))]),
        "add_bias": (F.add_bias, [n(size=(2, 3, 4)), n(size=4)]),
        "expand": (lambda a: F.expand(a, (2, 4)), [n(size=(1, 4))]),
        "scale": (lambda a: a * -1.5, [n(size=(3, 4))]),
        "shift": (lambda a: a + 0.5, [n(size=(3, 4))]),
        "softmax": (F.softmax, [n(size=(2, 6))]),
        "relu": (F.relu, [n(size=(4, 4))]),
        "tanh": (F.tanh, [n(size=(4, 4))]),
        "gelu": (F.gelu, [n(size=(4, 4))]),
        "layer_norm": (F.layer_norm, [n(size=(3, 5)), pos(5), n(size=5)]),
        "batch_norm": (lambda x, g, b: F.batch_norm(x, g, b, training=True), [n(size=(6, 3)), pos(3), n(size=3)]),
        "sum": (lambda a: a.sum(axis=0), [n(size=(3, 4))]),
        "mean": (lambda a: a.mean(axis=-1, keepdims=True), [n(size=(3, 4))]),
        "concat": (lambda a, b: F.concat([a, b], axis=0), [n(size=(2, 3)), n(size=(1, 3))]),
        "slice": (lambda a: F.slice_axis(a, 0, 1, 3), [n(size=(4, 2))]),
        "norm": (F.norm, [pos(3, 3)]),
    }


def _weighted(fn: Callable, shape, rng) -> Callable:
    w = Tensor(rng.normal(size=shape))
    return lambda *xs: (fn(*xs) * w).sum()


def _tensor_suite(seed: int, trials: int) -> list[SuiteResult]:
    out = []
    names = sorted(_primitive_cases(np.random.default_rng(seed)))
    for op in names:
        worst = 0.0
        for t in range(trials):
            rng = np.random.default_rng(seed * 7919 + t)
            fn, arrays = _primitive_cases(rng)[op]
            shape = fn(*[Tensor(a) for a in arrays]).shape
            rep = finite_diff_check(_weighted(fn, shape, rng), [Tensor(a) for a in arrays])
            worst = max(worst, rep.max_rel_err)
        out.append(SuiteResult(f"primitive:{op}", worst, PRIMITIVE_TOL))
    return out


def _loss_suite(seed: int) -> list[SuiteResult]:
    from .metrics import LossConfig, total_loss

    rng = np.random.default_rng(seed)
    gt = Tensor(rng.normal(size=(2, 4, 5, 3)))
    rep = finite_diff_check(lambda p: total_loss(p, gt, LossConfig(1.0)), Tensor(rng.normal(size=(2, 4, 5, 3))))
    return [SuiteResult("loss:total", rep.max_rel_err, PRIMITIVE_TOL)]


def _model_suite(seed: int, max_entries: int | None) -> list[SuiteResult]:
    from .model import ModelConfig, init_params, model_forward

    cfg = ModelConfig(depth=2, dim=16, dim_rep=8, frames=4, joints=5, heads=2)
    store = init_params(cfg, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(1, 4, 5, 3))
    x[..., 2] = rng.uniform(size=(1, 4, 5))
    xt = Tensor(x)
    w = Tensor(rng.normal(size=(1, 4, 5, 3)) / cfg.output_scale)
    names = sorted(store.params)

    def fn(*leaves):
        s = store.with_params(dict(zip(names, leaves)))
        return (model_forward(xt, cfg, s, training=True) * w).sum()

    rep = finite_diff_check(fn, [store[k] for k in names], names=names, max_entries=max_entries, seed=seed)
    return [SuiteResult("model:toy(N=2,d=16,h=2,T=4,J=5)", rep.max_rel_err, MODEL_TOL)]


def run_suite(module: str = "all", seed: int = 0, trials: int = 20, max_entries: int | None = 6) -> list[SuiteResult]:
    """Finite-difference checks at float64 for the primitives, the loss and a toy model."""
    if module not in SUITE_MODULES:
        raise ValueError(f"unknown gradcheck module {module!r}; expected one of {SUITE_MODULES}")
    results: list[SuiteResult] = []
    if module in ("tensor", "all"):
        results += _tensor_suite(seed, trials)
    if module in ("loss", "all"):
        results += _loss_suite(seed)
    if module in ("model", "all"):
        results += _model_suite(seed, max_entries)
    return results
