"""Thin named wrappers over the primitive table."""

from __future__ import annotations

from typing import Sequence

from .tensor import Tensor, apply_primitive


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("matmul", [a, b])


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("add_bias", [x, b])


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    y = apply_primitive("matmul", [x, weight])
    return y if bias is None else apply_primitive("add_bias", [y, bias])


def expand(x: Tensor, shape: Sequence[int]) -> Tensor:
    return apply_primitive("expand", [x], shape=tuple(shape))


def softmax(x: Tensor) -> Tensor:
    return apply_primitive("softmax", [x])


def relu(x: Tensor) -> Tensor:
    return apply_primitive("relu", [x])


def tanh(x: Tensor) -> Tensor:
    return apply_primitive("tanh", [x])


def gelu(x: Tensor) -> Tensor:
    return apply_primitive("gelu", [x])


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    return apply_primitive("layer_norm", [x, gamma, beta], eps=eps)


def batch_norm(x, gamma, beta, *, training, running_mean=None, running_var=None, eps=1e-5) -> Tensor:
    return apply_primitive(
        "batch_norm",
        [x, gamma, beta],
        eps=eps,
        training=training,
        running_mean=running_mean,
        running_var=running_var,
    )


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    return apply_primitive("concat", list(xs), axis=axis)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    return apply_primitive("slice", [x], axis=axis, start=start, stop=stop)


def norm(x: Tensor) -> Tensor:
    """Euclidean norm over the last axis."""
    return apply_primitive("norm", [x])
