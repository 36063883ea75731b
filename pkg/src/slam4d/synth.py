"""Synthetic dynamic-scene oracle.

Ray-casts simple scenes (an infinite textured background plane plus
axis-aligned textured boxes translating rigidly over time) at pixel
centers, producing exact images, depths, pairwise optical flow, motion
masks, and camera poses. These stand in for the learned flow and
segmentation networks and provide every ground-truth signal the
localization and rendering pipelines are tested against.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import DegenerateSpecError, InvalidArgumentError
from .geometry import CameraIntrinsics, PoseSE3, Twist, retract
from .motion_mask import FlowField, MotionMask

_EPS_RAY = 1e-6


def _hash_unit(ix, iy, iz, seed):
    """Deterministic uniform [0, 1) value per integer lattice point."""
    h = (
        ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
        ^ iy.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
        ^ iz.astype(np.uint64) * np.uint64(0x165667B19E3779F9)
        ^ np.uint64((seed * 0x27D4EB2F165667C5) & 0xFFFFFFFFFFFFFFFF)
    )
    h ^= h >> np.uint64(33)
    h *= np.uint64(0xFF51AFD7ED558CCD)
    h ^= h >> np.uint64(33)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _smoothstep(t):
    return t * t * (3.0 - 2.0 * t)


def value_noise(points: np.ndarray, seed: int, octaves: int = 3,
                base_freq: float = 1.5) -> np.ndarray:
    """Trilinearly interpolated lattice noise in [0, 1], shape (N,)."""
    points = np.asarray(points, dtype=np.float64)
    out = np.zeros(points.shape[0])
    amp_total = 0.0
    for octave in range(octaves):
        freq = base_freq * (2.0**octave)
        amp = 0.5**octave
        p = points * freq
        p0 = np.floor(p).astype(np.int64)
        f = _smoothstep(p - p0)
        acc = np.zeros(points.shape[0])
        oseed = seed * 1000003 + octave
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    w = (
                        (f[:, 0] if dx else 1 - f[:, 0])
                        * (f[:, 1] if dy else 1 - f[:, 1])
                        * (f[:, 2] if dz else 1 - f[:, 2])
                    )
                    acc += w * _hash_unit(
                        p0[:, 0] + dx, p0[:, 1] + dy, p0[:, 2] + dz, oseed
                    )
        out += amp * acc
        amp_total += amp
    return out / amp_total


def texture_rgb(points: np.ndarray, seed: int) -> np.ndarray:
    """Procedural RGB texture in [0, 1], shape (N, 3)."""
    return np.stack(
        [value_noise(points, seed * 3 + c) for c in range(3)], axis=-1
    )


@dataclass(frozen=True)
class MoverSpec:
    """Axis-aligned box translating along center0 + velocity*t + osc."""

    half_extents: tuple
    center0: tuple
    velocity: tuple = (0.0, 0.0, 0.0)
    osc_amplitude: tuple = (0.0, 0.0, 0.0)
    osc_freq: float = 0.0
    texture_seed: int = 1

    def center(self, t: float) -> np.ndarray:
        c = np.asarray(self.center0, dtype=np.float64)
        c = c + np.asarray(self.velocity, dtype=np.float64) * t
        if self.osc_freq != 0.0:
            c = c + np.asarray(self.osc_amplitude) * np.sin(
                2.0 * np.pi * self.osc_freq * t
            )
        return c


@dataclass(frozen=True)
class OrbitPath:
    """C1 camera arc: an offset swing looking at a fixed target."""

    radius: float = 0.4
    angle_span: float = 1.2
    lift: float = 0.15
    look_at: tuple = (0.0, 0.0, 3.0)

    def pose(self, frac: float) -> PoseSE3:
        phi = frac * self.angle_span
        p = np.array(
            [
                self.radius * np.sin(phi),
                self.lift * (1.0 - np.cos(phi)),
                0.15 * self.radius * np.sin(0.5 * phi),
            ]
        )
        target = np.asarray(self.look_at, dtype=np.float64)
        z_cam = target - p
        z_cam = z_cam / np.linalg.norm(z_cam)
        y_hint = np.array([0.0, 1.0, 0.0])
        x_cam = np.cross(y_hint, z_cam)
        x_cam = x_cam / np.linalg.norm(x_cam)
        y_cam = np.cross(z_cam, x_cam)
        R = np.stack([x_cam, y_cam, z_cam], axis=-1)
        return PoseSE3.from_matrix(R, p)


@dataclass(frozen=True)
class SceneSpec:
    intrinsics: CameraIntrinsics
    n_frames: int
    dt: float = 0.1
    background_z: float = 3.0
    # background plane satisfies z = background_z + tilt_x*x + tilt_y*y;
    # a non-zero tilt varies the scene depth, which keeps the
    # translation/rotation pose directions observable
    background_tilt: tuple = (0.0, 0.0)
    background_seed: int = 11
    movers: tuple = ()
    statics: tuple = ()
    camera_path: OrbitPath = dc_field(default_factory=OrbitPath)

    def __post_init__(self):
        if self.n_frames < 1:
            raise InvalidArgumentError("n_frames must be >= 1")
        if self.dt <= 0:
            raise InvalidArgumentError("dt must be positive")
        if self.background_z <= 0:
            raise InvalidArgumentError("background plane must be in front")

    def timestamps(self) -> np.ndarray:
        return np.arange(self.n_frames, dtype=np.float64) * self.dt

    def pose(self, frame: int) -> PoseSE3:
        frac = frame / max(self.n_frames - 1, 1)
        return self.camera_path.pose(frac)


@dataclass(frozen=True)
class GroundTruthFrame:
    image: np.ndarray
    depth: np.ndarray
    flow_to_next: FlowField
    motion_mask: MotionMask
    pose: PoseSE3
    timestamp: float


def _ray_plane(origins, dirs, z_plane, tilt):
    tx, ty = tilt
    denom = dirs[:, 2] - tx * dirs[:, 0] - ty * dirs[:, 1]
    numer = z_plane + tx * origins[:, 0] + ty * origins[:, 1] - origins[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = numer / denom
    s = np.where((np.abs(denom) > _EPS_RAY) & (s > _EPS_RAY), s, np.inf)
    return s


def _ray_aabb(origins, dirs, lo, hi):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo[None, :] - origins) * inv
        t1 = (hi[None, :] - origins) * inv
    t_near = np.nanmax(np.minimum(t0, t1), axis=1)
    t_far = np.nanmin(np.maximum(t0, t1), axis=1)
    hit = (t_far >= t_near) & (t_far > _EPS_RAY)
    s = np.where(t_near > _EPS_RAY, t_near, t_far)
    return np.where(hit, s, np.inf)


def _camera_rays(spec: SceneSpec, pose: PoseSE3):
    K = spec.intrinsics
    u, v = np.meshgrid(np.arange(K.width), np.arange(K.height))
    x = (u.reshape(-1) - K.cx) / K.fx
    y = (v.reshape(-1) - K.cy) / K.fy
    dirs_cam = np.stack([x, y, np.ones_like(x)], axis=-1)
    R = pose.rotation_matrix()
    dirs_world = dirs_cam @ R.T
    origins = np.broadcast_to(pose.t, dirs_world.shape)
    return origins, dirs_world


def _check_camera_clear(spec: SceneSpec):
    for f in range(spec.n_frames):
        p = spec.pose(f).t
        t = spec.timestamps()[f]
        plane_z = (
            spec.background_z
            + spec.background_tilt[0] * p[0]
            + spec.background_tilt[1] * p[1]
        )
        if p[2] >= plane_z - 0.05:
            raise DegenerateSpecError("camera behind or inside background plane")
        for m in list(spec.movers) + list(spec.statics):
            c = m.center(t)
            h = np.asarray(m.half_extents, dtype=np.float64)
            if np.all(np.abs(p - c) <= h + 0.02):
                raise DegenerateSpecError("camera inside a mover")


def _raycast(spec: SceneSpec, frame: int):
    """Front-most surface per pixel.

    Returns (points_world (N,3), depth_z (N,), surface_index (N,), valid (N,)).
    surface_index is -1 for the background plane, the mover index for
    movers, and len(movers)+k for the k-th static box.
    """
    pose = spec.pose(frame)
    t = float(spec.timestamps()[frame])
    origins, dirs = _camera_rays(spec, pose)
    best = _ray_plane(origins, dirs, spec.background_z, spec.background_tilt)
    which = np.full(len(best), -1, dtype=np.int64)
    for mi, m in enumerate(list(spec.movers) + list(spec.statics)):
        c = m.center(t)
        h = np.asarray(m.half_extents, dtype=np.float64)
        s = _ray_aabb(origins, dirs, c - h, c + h)
        closer = s < best
        best = np.where(closer, s, best)
        which = np.where(closer, mi, which)
    valid = np.isfinite(best)
    s_safe = np.where(valid, best, 1.0)
    points = origins + s_safe[:, None] * dirs
    # with dir_cam z normalized to 1, the ray parameter is the camera z depth
    return points, s_safe, which, valid


def _shade(spec: SceneSpec, frame: int, points, which, valid):
    t = float(spec.timestamps()[frame])
    rgb = np.zeros((len(points), 3))
    bg = which == -1
    if bg.any():
        rgb[bg] = texture_rgb(points[bg], spec.background_seed)
    for mi, m in enumerate(list(spec.movers) + list(spec.statics)):
        sel = which == mi
        if sel.any():
            local = points[sel] - m.center(t)
            rgb[sel] = texture_rgb(local * 4.0, m.texture_seed)
    rgb[~valid] = 0.0
    return rgb


def _project_into(spec: SceneSpec, frame: int, points_world):
    K = spec.intrinsics
    pose = spec.pose(frame)
    X = (points_world - pose.t) @ pose.rotation_matrix()
    z = X[:, 2]
    ok = z > _EPS_RAY
    z_safe = np.where(ok, z, 1.0)
    pix = np.stack(
        [K.fx * X[:, 0] / z_safe + K.cx, K.fy * X[:, 1] / z_safe + K.cy],
        axis=-1,
    )
    return pix, ok


def pairwise_flow(spec: SceneSpec, i: int, j: int) -> FlowField:
    """Exact correspondence flow from frame i pixels into frame j.

    Background and static-box points are static; mover points are carried
    by the mover's rigid translation between the two timestamps. Occlusion
    in frame j is deliberately ignored: the flow encodes where the 3D
    point projects.
    """
    K = spec.intrinsics
    points, _, which, valid = _raycast(spec, i)
    times = spec.timestamps()
    moved = points.copy()
    for mi, m in enumerate(spec.movers):
        sel = which == mi
        if sel.any():
            moved[sel] = points[sel] + (m.center(times[j]) - m.center(times[i]))
    pix_j, ok = _project_into(spec, j, moved)
    u, v = np.meshgrid(np.arange(K.width), np.arange(K.height))
    grid = np.stack([u.reshape(-1), v.reshape(-1)], axis=-1).astype(np.float64)
    flow = np.where((valid & ok)[:, None], pix_j - grid, 0.0)
    return FlowField(
        flow.reshape(K.height, K.width, 2),
        (valid & ok).reshape(K.height, K.width),
    )


def generate(spec: SceneSpec, seed: int = 0) -> list:
    """Deterministic ray-cast rendering of every frame.

    The seed offsets all texture seeds so distinct datasets can share one
    geometric spec. Flow on static pixels equals the ego flow of the
    ground-truth pose and depth to machine precision.
    """
    _check_camera_clear(spec)
    K = spec.intrinsics
    def reseed(m):
        return MoverSpec(
            m.half_extents,
            m.center0,
            m.velocity,
            m.osc_amplitude,
            m.osc_freq,
            m.texture_seed + 7919 * seed,
        )

    shaded_spec = SceneSpec(
        intrinsics=spec.intrinsics,
        n_frames=spec.n_frames,
        dt=spec.dt,
        background_z=spec.background_z,
        background_tilt=spec.background_tilt,
        background_seed=spec.background_seed + 7919 * seed,
        movers=tuple(reseed(m) for m in spec.movers),
        statics=tuple(reseed(m) for m in spec.statics),
        camera_path=spec.camera_path,
    )
    frames = []
    times = spec.timestamps()
    for f in range(spec.n_frames):
        points, depth, which, valid = _raycast(shaded_spec, f)
        rgb = _shade(shaded_spec, f, points, which, valid)
        if f + 1 < spec.n_frames:
            flow = pairwise_flow(spec, f, f + 1)
        else:
            flow = FlowField(
                np.zeros((K.height, K.width, 2)),
                np.zeros((K.height, K.width), dtype=bool),
            )
        frames.append(
            GroundTruthFrame(
                image=rgb.reshape(K.height, K.width, 3),
                depth=np.where(valid, depth, np.inf).reshape(K.height, K.width),
                flow_to_next=flow,
                motion_mask=MotionMask(
                    ((which >= 0) & (which < len(spec.movers))).reshape(
                        K.height, K.width
                    )
                ),
                pose=spec.pose(f),
                timestamp=float(times[f]),
            )
        )
    return frames


class SyntheticFlowProvider:
    """Pairwise flow oracle with optional seeded corruption.

    Calling ``provider(i, j)`` returns ``(FlowField, confidence)`` where
    confidence is 1 on valid pixels and 0 elsewhere. With ``noise_sigma``
    set, isotropic Gaussian pixel noise is added per (i, j) pair with a
    deterministic seed, so repeated calls are bit-identical.
    """

    def __init__(self, spec: SceneSpec, noise_sigma: float = 0.0,
                 outlier_fraction: float = 0.0, seed: int = 0):
        self.spec = spec
        self.noise_sigma = noise_sigma
        self.outlier_fraction = outlier_fraction
        self.seed = seed
        self._cache = {}

    def __call__(self, i: int, j: int):
        key = (i, j)
        if key not in self._cache:
            flow = pairwise_flow(self.spec, i, j)
            if self.noise_sigma > 0 or self.outlier_fraction > 0:
                flow = corrupt_flow(
                    flow,
                    self.noise_sigma,
                    self.outlier_fraction,
                    seed=(self.seed, i, j),
                )
            self._cache[key] = (flow, flow.valid.astype(np.float64))
        return self._cache[key]


def perturb_trajectory(traj, sigma_t: float, sigma_r: float, seed: int = 0):
    """Independent Gaussian twist noise per pose, applied by retraction."""
    from .dyn_ba import Trajectory

    if sigma_t < 0 or sigma_r < 0:
        raise InvalidArgumentError("noise sigmas must be non-negative")
    rng = np.random.default_rng(seed)
    poses = []
    for pose in traj.poses:
        xi = np.concatenate(
            [rng.normal(0.0, sigma_t, 3), rng.normal(0.0, sigma_r, 3)]
        )
        poses.append(retract(pose, Twist.from_vector(xi)))
    return Trajectory(traj.timestamps, poses)


def corrupt_flow(flow: FlowField, noise_sigma: float,
                 outlier_fraction: float = 0.0, seed=0) -> FlowField:
    """Gaussian noise everywhere plus uniform outliers on a pixel subset."""
    if not (0.0 <= outlier_fraction <= 1.0):
        raise InvalidArgumentError("outlier_fraction must be in [0, 1]")
    if noise_sigma < 0:
        raise InvalidArgumentError("noise_sigma must be non-negative")
    rng = np.random.default_rng(seed)
    out = flow.flow.copy()
    if noise_sigma > 0:
        out = out + rng.normal(0.0, noise_sigma, out.shape)
    if outlier_fraction > 0:
        h, w = flow.valid.shape
        hit = rng.random((h, w)) < outlier_fraction
        out = np.where(
            hit[:, :, None], rng.uniform(-20.0, 20.0, out.shape), out
        )
    return FlowField(out, flow.valid.copy())


def box_orbit_spec() -> SceneSpec:
    """The pinned reference scene: one moving box over a textured plane.

    20 frames at 64x48; the box covers roughly 20% of each frame and
    translates steadily while the camera sweeps an arc looking at the
    background. The plane is tilted and two static boxes sit at distinct
    depths so every pose direction is observable from static pixels.
    """
    K = CameraIntrinsics(fx=60.0, fy=60.0, cx=32.0, cy=24.0, width=64, height=48)
    mover = MoverSpec(
        half_extents=(0.42, 0.34, 0.18),
        center0=(0.35, 0.05, 2.0),
        velocity=(-0.38, 0.12, 0.0),
        osc_amplitude=(0.0, 0.04, 0.0),
        osc_freq=0.5,
        texture_seed=23,
    )
    statics = (
        MoverSpec(half_extents=(0.28, 0.22, 0.15), center0=(-0.85, -0.45, 2.3),
                  texture_seed=31),
        MoverSpec(half_extents=(0.25, 0.3, 0.12), center0=(0.8, 0.55, 2.6),
                  texture_seed=37),
    )
    return SceneSpec(
        intrinsics=K,
        n_frames=20,
        dt=0.1,
        background_z=3.0,
        background_tilt=(0.25, -0.15),
        background_seed=11,
        movers=(mover,),
        statics=statics,
        camera_path=OrbitPath(radius=0.4, angle_span=1.2, lift=0.15,
                              look_at=(0.0, 0.0, 3.0)),
    )
