"""Pose sequence containers, JSON sequence files, and dataset manifests."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import ClassVar

import numpy as np

from ..graph import SkeletonSpec


class SequenceFormatError(ValueError):
    pass


@dataclass
class PoseSequence:
    data: np.ndarray
    fps: float = 50.0
    action: str | None = None
    kind: ClassVar[str] = ""

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or self.data.shape[-1] != 3:
            raise SequenceFormatError(f"{self.kind} sequence must be T x J x 3, got {self.data.shape}")
        if self.data.shape[0] < 1:
            raise SequenceFormatError("sequence needs at least one frame")
        if not np.all(np.isfinite(self.data)):
            raise SequenceFormatError("sequence contains non-finite values")

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def joints(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray):
        return type(self)(data, self.fps, self.action)


@dataclass
class Pose2DSequence(PoseSequence):
    """(x, y) in normalized image units plus detector confidence in [0, 1]."""

    kind: ClassVar[str] = "2d"

    def __post_init__(self):
        super().__post_init__()
        conf = self.data[..., 2]
        if conf.min() < 0 or conf.max() > 1:
            raise SequenceFormatError("confidence channel must lie in [0, 1]")


@dataclass
class Pose3DSequence(PoseSequence):
    """(x, y, z) in millimetres."""

    kind: ClassVar[str] = "3d"


_KINDS = {"2d": Pose2DSequence, "3d": Pose3DSequence}


def save_sequence(seq: PoseSequence, path: str | Path) -> None:
    doc = {
        "fps": float(seq.fps),
        "joints": int(seq.joints),
        "channels": 3,
        "kind": seq.kind,
        "frames": seq.data.astype(np.float64).tolist(),
    }
    if seq.action is not None:
        doc["action"] = seq.action
    Path(path).write_text(json.dumps(doc, separators=(",", ":")))


def _fail(path, msg: str):
    raise SequenceFormatError(f"{path}: {msg}")


def load_sequence(path: str | Path, skeleton: SkeletonSpec | None = None) -> PoseSequence:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SequenceFormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        _fail(path, "top level must be an object")
    for key in ("fps", "joints", "channels", "kind", "frames"):
        if key not in doc:
            _fail(path, f"missing field {key!r}")
    kind = doc["kind"]
    if kind not in _KINDS:
        _fail(path, f"field 'kind' must be '2d' or '3d', got {kind!r}")
    if doc["channels"] != 3:
        _fail(path, f"field 'channels' must be 3, got {doc['channels']!r}")
    J = doc["joints"]
    if not isinstance(J, int) or J < 1:
        _fail(path, f"field 'joints' must be a positive integer, got {J!r}")
    if skeleton is not None and J != skeleton.joint_count:
        _fail(path, f"file declares {J} joints but the skeleton has {skeleton.joint_count}")
    frames = doc["frames"]
    if not isinstance(frames, list) or not frames:
        _fail(path, "field 'frames' must be a non-empty list (T >= 1)")
    for t, frame in enumerate(frames):
        if not isinstance(frame, list) or len(frame) != J:
            _fail(path, f"frames[{t}] must hold {J} joints")
        for j, joint in enumerate(frame):
            if not isinstance(joint, list) or len(joint) != 3:
                _fail(path, f"frames[{t}][{j}] must hold 3 values, got {joint!r}")
    try:
        data = np.array(frames, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        _fail(path, f"non-numeric value in 'frames': {exc}")
    action = doc.get("action")
    try:
        return _KINDS[kind](data.astype(np.float32), float(doc["fps"]), action)
    except SequenceFormatError as exc:
        _fail(path, str(exc))


@dataclass
class SequencePair:
    inputs: Pose2DSequence
    target: Pose3DSequence
    action: str | None = None
    name: str = ""

    def __post_init__(self):
        if self.inputs.data.shape != self.target.data.shape:
            raise SequenceFormatError(
                f"{self.name or 'pair'}: 2D shape {self.inputs.data.shape} differs from 3D shape {self.target.data.shape}"
            )


@dataclass
class Manifest:
    entries: list[tuple[str, str, str | None]] = field(default_factory=list)
    root: Path = Path(".")

    @classmethod
    def load(cls, path: str | Path) -> "Manifest":
        path = Path(path)
        raw = json.loads(path.read_text())
        if not isinstance(raw, list) or not raw:
            raise SequenceFormatError(f"{path}: manifest must be a non-empty list")
        entries = []
        for i, item in enumerate(raw):
            if isinstance(item, dict):
                entries.append((item["input"], item["target"], item.get("action")))
            elif isinstance(item, list) and len(item) in (2, 3):
                entries.append((item[0], item[1], item[2] if len(item) == 3 else None))
            else:
                raise SequenceFormatError(f"{path}: entry {i} must be an object or [input, target, action]")
        return cls(entries, path.parent)

    def save(self, path: str | Path) -> None:
        doc = [{"input": i, "target": t, "action": a} for i, t, a in self.entries]
        Path(path).write_text(json.dumps(doc, indent=2))

    def load_pairs(self, skeleton: SkeletonSpec | None = None) -> list[SequencePair]:
        pairs = []
        for inp, tgt, action in self.entries:
            x = load_sequence(self.root / inp, skeleton)
            y = load_sequence(self.root / tgt, skeleton)
            if x.kind != "2d" or y.kind != "3d":
                raise SequenceFormatError(f"{inp} / {tgt}: expected a 2d input and a 3d target")
            pairs.append(SequencePair(x, y, action or y.action or x.action, name=str(inp)))
        return pairs
