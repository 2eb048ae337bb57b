"""Forward-kinematics motion generator and pinhole camera.

Coordinates are in the camera frame: x right, y down, z along the optical
axis, millimetres. The default rest pose faces the camera with the subject's
left side at positive x.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..graph import SkeletonSpec, default_skeleton
from .sequences import Manifest, Pose2DSequence, Pose3DSequence, save_sequence

H36M_PARENTS = (-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15)
H36M_REST_DIRECTIONS = (
    (0, 0, 0),
    (-1, 0, 0), (0, 1, 0), (0, 1, 0),
    (1, 0, 0), (0, 1, 0), (0, 1, 0),
    (0, -1, 0), (0, -1, 0), (0, -1, 0), (0, -1, 0),
    (1, 0, 0), (0, 1, 0), (0, 1, 0),
    (-1, 0, 0), (0, 1, 0), (0, 1, 0),
)  # fmt: skip
H36M_BONE_MM = (0, 130, 450, 440, 130, 450, 440, 230, 250, 100, 110, 150, 280, 250, 150, 280, 250)
# hinge-like joints swing about x; shoulders and hips also abduct about z
H36M_AXES = (
    (0, 1, 0),
    (1, 0, 0), (1, 0, 0), (1, 0, 0),
    (1, 0, 0), (1, 0, 0), (1, 0, 0),
    (1, 0, 0), (1, 0, 0), (0, 0, 1), (1, 0, 0),
    (0, 0, 1), (1, 0, 0), (1, 0, 0),
    (0, 0, 1), (1, 0, 0), (1, 0, 0),
)  # fmt: skip

# per-joint amplitude scale (rad) for the built-in motion families
ACTION_TEMPLATES = {
    "walking": (0, .1, .5, .4, .1, .5, .4, .05, .05, .05, .05, .1, .5, .3, .1, .5, .3),
    "waving": (0, .02, .05, .05, .02, .05, .05, .05, .05, .1, .1, .8, 1.0, .6, .1, .2, .2),
    "squatting": (0, .3, .9, .6, .3, .9, .6, .2, .1, .05, .05, .1, .3, .2, .1, .3, .2),
}


class CameraError(ValueError):
    pass


@dataclass(frozen=True)
class Camera:
    focal: float = 1000.0
    cx: float = 500.0
    cy: float = 500.0
    width: int = 1000
    height: int = 1000

    def __post_init__(self):
        if self.focal <= 0:
            raise ValueError("focal length must be positive")


@dataclass
class SyntheticSceneConfig:
    skeleton: SkeletonSpec = field(default_factory=default_skeleton)
    parents: tuple[int, ...] = H36M_PARENTS
    rest_directions: tuple = H36M_REST_DIRECTIONS
    bone_lengths: tuple[float, ...] = H36M_BONE_MM
    axes: tuple = H36M_AXES
    amplitude: tuple[float, ...] = (0.0,) * 17
    frequency: tuple[float, ...] = (1.0,) * 17
    phase: tuple[float, ...] = (0.0,) * 17
    root_start: tuple[float, float, float] = (0.0, 0.0, 5000.0)
    root_velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    yaw: float = 0.0
    yaw_rate: float = 0.0
    camera: Camera = field(default_factory=Camera)
    noise_px: float = 0.0
    fps: float = 50.0
    action: str | None = None
    seed: int = 0

    def __post_init__(self):
        J = self.skeleton.joint_count
        for name in ("parents", "rest_directions", "bone_lengths", "axes", "amplitude", "frequency", "phase"):
            if len(getattr(self, name)) != J:
                raise ValueError(f"{name} must have {J} entries")
        for j, (p, L) in enumerate(zip(self.parents, self.bone_lengths)):
            if p >= 0 and L <= 0:
                raise ValueError(f"bone length of joint {j} must be positive")
            if p >= j:
                raise ValueError("parents must precede children")
        if self.noise_px < 0:
            raise ValueError("noise_px must be nonnegative")


def _axis_angle(axis: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Rodrigues rotation matrices, shape ``theta.shape + (3, 3)``."""
    a = axis / np.linalg.norm(axis)
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    s, c = np.sin(theta)[..., None, None], np.cos(theta)[..., None, None]
    return np.eye(3) + s * K + (1 - c) * (K @ K)


def forward_kinematics(cfg: SyntheticSceneConfig, T: int) -> np.ndarray:
    """Joint positions ``(T, J, 3)`` in the camera frame."""
    t = np.arange(T) / cfg.fps
    J = cfg.skeleton.joint_count
    pos = np.zeros((T, J, 3))
    world = np.zeros((T, J, 3, 3))
    root = np.asarray(cfg.root_start, float) + np.outer(t, cfg.root_velocity)
    for j in range(J):
        theta = cfg.amplitude[j] * np.sin(2 * np.pi * cfg.frequency[j] * t + cfg.phase[j])
        local = _axis_angle(np.asarray(cfg.axes[j], float), theta)
        p = cfg.parents[j]
        if p < 0:
            world[:, j] = _axis_angle(np.array([0.0, 1.0, 0.0]), cfg.yaw + cfg.yaw_rate * t) @ local
            pos[:, j] = root
            continue
        world[:, j] = world[:, p] @ local
        bone = cfg.bone_lengths[j] * np.asarray(cfg.rest_directions[j], float)
        pos[:, j] = pos[:, p] + world[:, j] @ bone
    return pos


def pinhole_project_points(p3d: np.ndarray, camera: Camera) -> np.ndarray:
    """Pixel coordinates ``(..., 2)`` of camera-frame points ``(..., 3)``."""
    p3d = np.asarray(p3d, dtype=np.float64)
    z = p3d[..., 2]
    if np.any(z <= 0):
        raise CameraError("point at or behind the camera plane (z <= 0)")
    u = camera.focal * p3d[..., 0] / z + camera.cx
    v = camera.focal * p3d[..., 1] / z + camera.cy
    return np.stack([u, v], axis=-1)


def normalize_pixels(uv: np.ndarray, camera: Camera) -> np.ndarray:
    """Map pixels to [-1, 1] about the image centre; both axes share the width scale."""
    half = camera.width / 2.0
    centre = np.array([camera.width / 2.0, camera.height / 2.0])
    return (uv - centre) / half


def pinhole_project(p3d: Pose3DSequence | np.ndarray, camera: Camera) -> Pose2DSequence:
    data = p3d.data if isinstance(p3d, Pose3DSequence) else np.asarray(p3d)
    xy = normalize_pixels(pinhole_project_points(data, camera), camera)
    conf = np.ones(xy.shape[:-1] + (1,))
    fps = p3d.fps if isinstance(p3d, Pose3DSequence) else 50.0
    action = p3d.action if isinstance(p3d, Pose3DSequence) else None
    return Pose2DSequence(np.concatenate([xy, conf], axis=-1), fps, action)


def generate_synthetic_sequence(cfg: SyntheticSceneConfig, T: int) -> tuple[Pose3DSequence, Pose2DSequence]:
    """3D joints by forward kinematics and their noisy normalized 2D projection.

    Confidence is ``clamp(1 - |noise| / (3 sigma), 0, 1)``, identically 1 without noise.
    """
    # project the stored f32 values so reprojection of the 3D file is exact
    p3d = forward_kinematics(cfg, T).astype(np.float32).astype(np.float64)
    uv = pinhole_project_points(p3d, cfg.camera)
    if cfg.noise_px > 0:
        rng = np.random.default_rng(cfg.seed)
        noise = rng.normal(0.0, cfg.noise_px, size=uv.shape)
        conf = np.clip(1.0 - np.linalg.norm(noise, axis=-1) / (3 * cfg.noise_px), 0.0, 1.0)
        uv = uv + noise
    else:
        conf = np.ones(uv.shape[:-1])
    xy = normalize_pixels(uv, cfg.camera)
    seq2d = Pose2DSequence(np.concatenate([xy, conf[..., None]], axis=-1), cfg.fps, cfg.action)
    return Pose3DSequence(p3d, cfg.fps, cfg.action), seq2d


def sample_scene(seed: int, action: str = "walking", noise_px: float = 0.0, fps: float = 50.0) -> SyntheticSceneConfig:
    """Draw a randomized scene for one of the :data:`ACTION_TEMPLATES` motion families."""
    rng = np.random.default_rng(seed)
    template = np.asarray(ACTION_TEMPLATES[action])
    J = len(template)
    bones = np.asarray(H36M_BONE_MM, float) * rng.uniform(0.9, 1.1)
    return SyntheticSceneConfig(
        bone_lengths=tuple(float(b) for b in bones),
        amplitude=tuple(float(a) for a in template * rng.uniform(0.6, 1.2, J)),
        frequency=tuple(float(f) for f in np.full(J, rng.uniform(0.5, 1.5)) * rng.uniform(0.9, 1.1, J)),
        phase=tuple(float(p) for p in rng.uniform(0, 2 * np.pi, J)),
        root_start=(float(rng.uniform(-300, 300)), float(rng.uniform(-200, 200)), float(rng.uniform(4000, 6000))),
        root_velocity=(float(rng.uniform(-200, 200)), 0.0, float(rng.uniform(-200, 200))),
        yaw=float(rng.uniform(-0.6, 0.6)),
        yaw_rate=float(rng.uniform(-0.3, 0.3)),
        noise_px=noise_px,
        fps=fps,
        action=action,
        seed=seed,
    )


def write_synthetic_dataset(
    out_dir,
    num_sequences: int,
    frames: int,
    seed: int = 0,
    noise_px: float = 0.0,
    actions: tuple[str, ...] = tuple(ACTION_TEMPLATES),
    fps: float = 50.0,
):
    """Generate ``num_sequences`` scenes, cycling through ``actions``, and write files plus ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = np.random.default_rng(seed).integers(0, 2**31 - 1, size=num_sequences)
    entries = []
    for i in range(num_sequences):
        action = actions[i % len(actions)]
        scene = sample_scene(int(seeds[i]), action, noise_px, fps)
        seq3d, seq2d = generate_synthetic_sequence(scene, frames)
        in_name, tgt_name = f"seq{i:03d}_2d.json", f"seq{i:03d}_3d.json"
        save_sequence(seq2d, out / in_name)
        save_sequence(seq3d, out / tgt_name)
        entries.append((in_name, tgt_name, action))
    manifest = Manifest(entries, out)
    manifest.save(out / "manifest.json")
    return manifest
