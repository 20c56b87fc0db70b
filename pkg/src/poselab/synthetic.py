"""Procedural pinhole renderer and synthetic trajectories.

World frame: the textured ground plane is ``z = 0`` and world ``z`` points
into it, so a camera hovering ``h`` meters away sits at ``z = -h`` and the
identity orientation looks straight at the plane. Turning the camera about
its optical axis then only changes the quaternion's ``(w, z)`` part and
``w`` stays well away from zero for headings within +/-180 degrees.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .dataset_io import DatasetManifest, ManifestEntry
from .geometry import Pose, UnitQuaternion, from_axis_angle, hamilton_product
from .imaging import Image


class DegenerateViewError(ValueError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    extent: float = 8.0          # meters; the texture repeats with this period
    focal: float = 200.0         # pixels
    width: int = 320
    height: int = 180
    cx: Optional[float] = None   # principal point, defaults to the image center
    cy: Optional[float] = None
    border_knob: float = 0.0     # 0: uniform texture, 1: texture only near the periphery
    feature_scale: float = 0.8   # meters, coarsest noise cell
    octaves: int = 4
    contrast: float = 4.0

    def __post_init__(self):
        if self.focal <= 0:
            raise ValueError("focal length must be positive")
        if self.width < 64 or self.height < 64:
            raise ValueError("image must be at least 64x64")
        if not 0.0 <= self.border_knob <= 1.0:
            raise ValueError("border_knob must lie in [0, 1]")

    @property
    def principal_point(self) -> tuple:
        return (self.width / 2.0 if self.cx is None else self.cx,
                self.height / 2.0 if self.cy is None else self.cy)


@dataclass(frozen=True)
class TrajectoryConfig:
    length: int = 200            # training frames
    test_length: int = 100
    step_size: float = 0.05      # meters per frame
    drift_deg: float = 1.0       # heading change per frame
    heading_range_deg: float = 40.0
    overlap: float = 1.0         # share of the test heading band inside the train band
    area: float = 2.0            # side of the square the camera roams, meters
    height: float = 2.0          # camera distance to the plane, meters
    height_jitter: float = 0.1
    tilt_deg: float = 0.0        # amplitude of pitch/roll wobble
    gap_deg: float = 1.0         # extra separation so overlap=0 bands are disjoint

    def __post_init__(self):
        if not 0.0 <= self.overlap <= 1.0:
            raise ValueError("overlap must lie in [0, 1]")
        if self.length < 1 or self.test_length < 1:
            raise ValueError("trajectory lengths must be positive")


# ---------------------------------------------------------------- texture

class _Texture:
    """Three channels of periodic multi-octave value noise."""

    def __init__(self, scene: SceneConfig):
        rng = np.random.default_rng([scene.seed, 7919])
        self.period = scene.extent
        self.contrast = scene.contrast
        self.octaves = []
        for o in range(scene.octaves):
            n = max(2, int(round(scene.extent / (scene.feature_scale / 2 ** o))))
            self.octaves.append((n, 0.5 ** o, rng.random((3, n, n))))
        self.norm = sum(a for _, a, _ in self.octaves)

    def __call__(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        out = np.zeros(X.shape + (3,))
        for n, amp, lattice in self.octaves:
            gx = X * (n / self.period)
            gy = Y * (n / self.period)
            fx, fy = np.floor(gx), np.floor(gy)
            tx, ty = _fade(gx - fx), _fade(gy - fy)
            i0 = fx.astype(np.int64) % n
            j0 = fy.astype(np.int64) % n
            i1, j1 = (i0 + 1) % n, (j0 + 1) % n
            for ch in range(3):
                L = lattice[ch]
                a = L[j0, i0] * (1 - tx) + L[j0, i1] * tx
                b = L[j1, i0] * (1 - tx) + L[j1, i1] * tx
                out[..., ch] += amp * (a * (1 - ty) + b * ty)
        v = out / self.norm - 0.5
        return 0.5 + 0.5 * np.tanh(self.contrast * v)


def _fade(t):
    return t * t * t * (t * (t * 6 - 15) + 10)


_TEXTURES: dict = {}


def _texture(scene: SceneConfig) -> _Texture:
    key = (scene.seed, scene.extent, scene.feature_scale, scene.octaves, scene.contrast)
    tex = _TEXTURES.get(key)
    if tex is None:
        tex = _TEXTURES[key] = _Texture(scene)
    return tex


def border_mask(scene: SceneConfig) -> np.ndarray:
    """Per-pixel texture gain, radially symmetric about the principal point."""
    k = scene.border_knob
    if k == 0:
        return np.ones((scene.height, scene.width))
    cx, cy = scene.principal_point
    v, u = np.mgrid[0:scene.height, 0:scene.width] + 0.5
    rho = np.hypot(u - cx, v - cy) / (0.5 * min(scene.width, scene.height))
    ramp = np.clip((rho - 0.6) / 0.8, 0.0, 1.0)
    return (1.0 - k) + k * ramp * ramp * (3 - 2 * ramp)


def render(pose: Pose, scene: SceneConfig) -> Image:
    C = np.asarray(pose.position)
    if C[2] >= 0:
        raise DegenerateViewError(f"camera at z={C[2]:.3g} is not in front of the plane (needs z < 0)")
    R = pose.orientation.to_matrix()
    cx, cy = scene.principal_point
    v, u = np.mgrid[0:scene.height, 0:scene.width] + 0.5
    d_cam = np.stack([(u - cx) / scene.focal, (v - cy) / scene.focal, np.ones_like(u)], axis=-1)
    d = d_cam @ R.T
    dz = d[..., 2]
    if dz.min() <= 1e-3:
        raise DegenerateViewError("part of the view does not hit the plane")
    t = -C[2] / dz
    X = C[0] + t * d[..., 0]
    Y = C[1] + t * d[..., 1]
    tex = _texture(scene)(X, Y)
    if scene.border_knob > 0:
        tex = 0.5 + border_mask(scene)[..., None] * (tex - 0.5)
    return Image(np.clip(tex, 0.0, 1.0))


def projected_shift_px(scene: SceneConfig, height: float, dx: float, dy: float) -> tuple:
    """Image shift of the pattern when a fronto-parallel camera moves by (dx, dy)."""
    return (-scene.focal * dx / height, -scene.focal * dy / height)


# ---------------------------------------------------------------- trajectories

def heading_tilt_deg(q: UnitQuaternion) -> tuple:
    """(heading, pitch, roll) for R = Rz(heading) Rx(pitch) Ry(roll)."""
    R = q.to_matrix()
    pitch = math.degrees(math.asin(max(-1.0, min(1.0, R[2, 1]))))
    roll = math.degrees(math.atan2(-R[2, 0], R[2, 2]))
    heading = math.degrees(math.atan2(-R[0, 1], R[1, 1]))
    return heading, pitch, roll


def orientation_from_angles(heading: float, pitch: float = 0.0, roll: float = 0.0) -> UnitQuaternion:
    q = from_axis_angle((0.0, 0.0, 1.0), heading)
    if pitch:
        q = hamilton_product(q, from_axis_angle((1.0, 0.0, 0.0), pitch))
    if roll:
        q = hamilton_product(q, from_axis_angle((0.0, 1.0, 0.0), roll))
    return q


def _walk(n: int, traj: TrajectoryConfig, rng: np.random.Generator) -> np.ndarray:
    half = traj.area / 2.0
    pos = rng.uniform(-half, half, size=2)
    heading = rng.uniform(0, 2 * math.pi)
    turn = 0.0
    out = np.empty((n, 3))
    zphase = rng.uniform(0, 2 * math.pi)
    for i in range(n):
        out[i, :2] = pos
        out[i, 2] = -(traj.height + traj.height_jitter * math.sin(0.05 * i + zphase))
        turn = 0.8 * turn + rng.normal(0.0, 0.15)
        heading += turn
        step = traj.step_size * np.array([math.cos(heading), math.sin(heading)])
        nxt = pos + step
        for ax in range(2):
            if abs(nxt[ax]) > half:
                step[ax] = -step[ax]
                heading = math.atan2(step[1], step[0])
        pos = np.clip(pos + step, -half, half)
    return out


def _triangle(n: int, lo: float, width: float, rate: float, phase: float) -> np.ndarray:
    if width <= 0:
        return np.full(n, lo)
    s = (phase + rate * np.arange(n)) % (2 * width)
    return lo + np.where(s <= width, s, 2 * width - s)


def heading_bands(traj: TrajectoryConfig) -> tuple:
    """((train_lo, train_hi), (test_lo, test_hi)) in degrees."""
    w = traj.heading_range_deg
    lo = -w / 2.0
    shift = (1.0 - traj.overlap) * (w + traj.gap_deg)
    return (lo, lo + w), (lo + shift, lo + shift + w)


def _trajectory(n: int, band: tuple, traj: TrajectoryConfig, rng: np.random.Generator,
                tilt_clip: Optional[tuple] = None) -> list:
    positions = _walk(n, traj, rng)
    lo, hi = band
    headings = _triangle(n, lo, hi - lo, traj.drift_deg, rng.uniform(0, 2 * (hi - lo)))
    t = np.arange(n)
    pitch = traj.tilt_deg * np.sin(0.07 * t + rng.uniform(0, 2 * math.pi))
    roll = traj.tilt_deg * np.sin(0.05 * t + rng.uniform(0, 2 * math.pi))
    if tilt_clip is not None:
        pitch = np.clip(pitch, *tilt_clip[0])
        roll = np.clip(roll, *tilt_clip[1])
    return [Pose(tuple(positions[i]), orientation_from_angles(headings[i], pitch[i], roll[i]))
            for i in range(n)]


def generate_dataset(scene: SceneConfig, traj: TrajectoryConfig, rng_seed: int = 0,
                     check_images: bool = True) -> tuple:
    """Train and test manifests (sequence ids ``train`` / ``test``)."""
    rng = np.random.default_rng([rng_seed, 104729])
    train_band, test_band = heading_bands(traj)
    train_poses = _trajectory(traj.length, train_band, traj, rng)
    angles = np.array([heading_tilt_deg(p.orientation) for p in train_poses])
    tilt_clip = ((angles[:, 1].min(), angles[:, 1].max()), (angles[:, 2].min(), angles[:, 2].max()))
    test_poses = _trajectory(traj.test_length, test_band, traj, rng, tilt_clip)

    prov = {f"scene.{k}": v for k, v in asdict(scene).items()}
    prov.update({f"trajectory.{k}": v for k, v in asdict(traj).items()})
    prov["seed"] = rng_seed
    out = []
    for split, poses in (("train", train_poses), ("test", test_poses)):
        entries = [ManifestEntry(split, i, f"{split}/frame-{i:06d}.png", p) for i, p in enumerate(poses)]
        out.append(DatasetManifest(f"synthetic-{scene.seed}", split, "synthetic", entries, dict(prov)))
    if check_images:
        check_injectivity(scene, train_poses)
    return out[0], out[1]


def check_injectivity(scene: SceneConfig, poses: list, pairs: int = 4, floor: float = 2e-3) -> float:
    """Render a few consecutive pairs; reject scenes whose frames barely change."""
    if len(poses) < 2:
        return float("inf")
    idx = np.linspace(0, len(poses) - 2, num=min(pairs, len(poses) - 1)).astype(int)
    worst = float("inf")
    for i in idx:
        diff = np.abs(render(poses[i], scene).pixels - render(poses[i + 1], scene).pixels).mean()
        worst = min(worst, float(diff))
    if worst <= floor:
        raise ValueError(f"scene too uniform: consecutive frames differ by only {worst:.2e} on average")
    return worst


def render_entries(entries, scene: SceneConfig) -> list:
    return [render(e.pose, scene) for e in entries]


def scene_from_provenance(prov: dict) -> SceneConfig:
    kwargs = {}
    for f, default in asdict(SceneConfig()).items():
        raw = prov.get(f"scene.{f}")
        if raw is None:
            continue
        if raw == "None":
            kwargs[f] = None
        elif isinstance(default, bool):
            kwargs[f] = str(raw).lower() == "true"
        elif isinstance(default, int):
            kwargs[f] = int(raw)
        else:
            kwargs[f] = float(raw)
    return SceneConfig(**kwargs)


def trajectory_extent(*manifests: DatasetManifest) -> float:
    """Longest side of the positions' bounding box."""
    pts = np.array([e.pose.position for m in manifests for e in m.entries])
    return float(np.max(pts.max(axis=0) - pts.min(axis=0)))
