"""Flip augmentation and windowed mini-batch sampling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from ..graph import SkeletonSpec
from .sequences import PoseSequence, SequencePair


def flip_array(data: np.ndarray, mirror: Sequence[int]) -> np.ndarray:
    """Negate x and swap left/right joints on any ``(..., J, 3)`` array."""
    out = np.array(data)[..., list(mirror), :]
    out[..., 0] = -out[..., 0]
    return out


def horizontal_flip(seq: PoseSequence, spec: SkeletonSpec) -> PoseSequence:
    return seq.with_data(flip_array(seq.data, spec.mirror_map))


def eval_window_starts(length: int, window: int) -> list[int]:
    """Non-overlapping starts plus, if needed, one final window flush with the end."""
    if length < window:
        raise ValueError(f"sequence of length {length} is shorter than window {window}")
    starts = list(range(0, length - window + 1, window))
    if starts[-1] + window < length:
        starts.append(length - window)
    return starts


@dataclass
class Batch:
    inputs: np.ndarray  # (B, T, J, 3) 2D + confidence
    targets: np.ndarray  # (B, T, J, 3) root-relative mm
    actions: list[str | None]
    sources: list[tuple[int, int]]  # (sequence index, window start)
    flipped: np.ndarray  # (B,) bool


def root_relative(data: np.ndarray, root: int) -> np.ndarray:
    return data - data[..., root : root + 1, :]


def make_batches(
    dataset: Sequence[SequencePair],
    batch_size: int,
    window: int,
    seed: int,
    skeleton: SkeletonSpec,
    train: bool = True,
    flip_prob: float = 0.5,
    dtype=np.float32,
) -> Iterator[Batch]:
    """Yield batches of length-``window`` clips.

    Training draws a random offset per sequence, tiles it with non-overlapping
    windows, shuffles globally and flips each clip with ``flip_prob``. Eval
    keeps file order with stride-``window`` starts and no flips.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    rng = np.random.default_rng(seed)
    windows: list[tuple[int, int]] = []
    for i, pair in enumerate(dataset):
        n = pair.inputs.frames
        if n < window:
            raise ValueError(f"sequence {pair.name or i!r} has {n} frames, fewer than the window {window}")
        if train:
            count = n // window
            offset = int(rng.integers(0, n - count * window + 1))
            windows += [(i, offset + k * window) for k in range(count)]
        else:
            windows += [(i, s) for s in eval_window_starts(n, window)]
    if train:
        windows = [windows[k] for k in rng.permutation(len(windows))]
    mirror = skeleton.mirror_map
    root = skeleton.root_index
    for b in range(0, len(windows), batch_size):
        chunk = windows[b : b + batch_size]
        xs, ys, flags = [], [], []
        for i, s in chunk:
            pair = dataset[i]
            x = pair.inputs.data[s : s + window]
            y = pair.target.data[s : s + window]
            flip = bool(train and rng.random() < flip_prob)
            if flip:
                x, y = flip_array(x, mirror), flip_array(y, mirror)
            xs.append(x)
            ys.append(root_relative(y, root))
            flags.append(flip)
        yield Batch(
            np.stack(xs).astype(dtype),
            np.stack(ys).astype(dtype),
            [dataset[i].action for i, _ in chunk],
            list(chunk),
            np.array(flags),
        )
