"""SE(3) poses, pinhole projection and the dense reprojection map.

Conventions fixed here and relied on everywhere else:

* Poses are camera-to-world: ``X_world = R @ X_cam + t``.
* Pose increments are left-multiplicative: ``G <- exp(xi) o G`` with the
  increment expressed in the world frame.
* Quaternions are stored ``(qx, qy, qz, qw)`` (TUM trajectory order) and
  renormalized after every composition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCameraError, InvalidArgumentError, InvalidDepthError

EPS_DEPTH = 1e-8
SMALL_ANGLE = 1e-8


@dataclass(frozen=True)
class Twist:
    """Tangent-space increment: translational part ``v``, rotational ``omega``."""

    v: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=np.float64).reshape(3)
        w = np.asarray(self.omega, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(w))):
            raise InvalidArgumentError("twist components must be finite")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "omega", w)

    @staticmethod
    def zero() -> "Twist":
        return Twist(np.zeros(3), np.zeros(3))

    @staticmethod
    def from_vector(xi: np.ndarray) -> "Twist":
        xi = np.asarray(xi, dtype=np.float64).reshape(6)
        return Twist(xi[:3], xi[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.v, self.omega])


def _quat_normalize(q: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(q)
    if n == 0.0 or not np.isfinite(n):
        raise InvalidArgumentError("quaternion must be finite and non-zero")
    q = q / n
    # Canonical sign keeps serialization deterministic.
    if q[3] < 0.0:
        q = -q
    return q


def _quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return np.array(
        [
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        ]
    )


def _quat_to_matrix(q: np.ndarray) -> np.ndarray:
    x, y, z, w = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def _matrix_to_quat(R: np.ndarray) -> np.ndarray:
    # Shepperd's method: pick the largest diagonal combination for stability.
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        w = 0.25 * s
        x = (R[2, 1] - R[1, 2]) / s
        y = (R[0, 2] - R[2, 0]) / s
        z = (R[1, 0] - R[0, 1]) / s
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        w = (R[2, 1] - R[1, 2]) / s
        x = 0.25 * s
        y = (R[0, 1] + R[1, 0]) / s
        z = (R[0, 2] + R[2, 0]) / s
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        w = (R[0, 2] - R[2, 0]) / s
        x = (R[0, 1] + R[1, 0]) / s
        y = 0.25 * s
        z = (R[1, 2] + R[2, 1]) / s
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        w = (R[1, 0] - R[0, 1]) / s
        x = (R[0, 2] + R[2, 0]) / s
        y = (R[1, 2] + R[2, 1]) / s
        z = 0.25 * s
    return _quat_normalize(np.array([x, y, z, w]))


@dataclass(frozen=True)
class PoseSE3:
    """Rigid camera-to-world transform: unit quaternion + translation."""

    quat: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 1.0]))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.asarray(self.quat, dtype=np.float64).reshape(4)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(t))):
            raise InvalidArgumentError("pose components must be finite")
        object.__setattr__(self, "quat", _quat_normalize(q))
        object.__setattr__(self, "t", t)

    @staticmethod
    def identity() -> "PoseSE3":
        return PoseSE3()

    @staticmethod
    def from_matrix(R: np.ndarray, t: np.ndarray) -> "PoseSE3":
        return PoseSE3(_matrix_to_quat(np.asarray(R, dtype=np.float64)), t)

    def rotation_matrix(self) -> np.ndarray:
        return _quat_to_matrix(self.quat)

    def compose(self, other: "PoseSE3") -> "PoseSE3":
        """Returns self o other (apply ``other`` first)."""
        q = _quat_multiply(self.quat, other.quat)
        t = self.rotation_matrix() @ other.t + self.t
        return PoseSE3(q, t)

    def inverse(self) -> "PoseSE3":
        q_inv = np.array([-self.quat[0], -self.quat[1], -self.quat[2], self.quat[3]])
        R_inv = _quat_to_matrix(q_inv)
        return PoseSE3(q_inv, -(R_inv @ self.t))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transforms points of shape (..., 3)."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation_matrix().T + self.t


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidArgumentError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidArgumentError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]]
        )


@dataclass(frozen=True)
class InverseDepthMap:
    """Per-pixel inverse depth with a validity grid."""

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if vals.shape != valid.shape or vals.ndim != 2:
            raise InvalidArgumentError("values and valid must be matching H x W grids")
        if np.any(vals[valid] <= 0):
            raise InvalidDepthError("valid inverse depths must be strictly positive")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "valid", valid)

    @staticmethod
    def constant(height: int, width: int, value: float) -> "InverseDepthMap":
        return InverseDepthMap(
            np.full((height, width), value), np.ones((height, width), dtype=bool)
        )


def _hat(w: np.ndarray) -> np.ndarray:
    return np.array(
        [[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]], dtype=np.float64
    )


def se3_exp(xi: Twist) -> PoseSE3:
    """Closed-form exponential map, Rodrigues form with a small-angle branch."""
    w = xi.omega
    v = xi.v
    theta = np.linalg.norm(w)
    W = _hat(w)
    if theta < SMALL_ANGLE:
        R = np.eye(3) + W + 0.5 * (W @ W)
        V = np.eye(3) + 0.5 * W + (W @ W) / 6.0
    else:
        t2 = theta * theta
        A = np.sin(theta) / theta
        B = (1 - np.cos(theta)) / t2
        C = (theta - np.sin(theta)) / (t2 * theta)
        R = np.eye(3) + A * W + B * (W @ W)
        V = np.eye(3) + B * W + C * (W @ W)
    return PoseSE3.from_matrix(R, V @ v)


def se3_log(G: PoseSE3) -> Twist:
    """Inverse of :func:`se3_exp`; valid for rotation angles below pi."""
    R = G.rotation_matrix()
    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if theta < SMALL_ANGLE:
        w = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        W = _hat(w)
        V_inv = np.eye(3) - 0.5 * W + (W @ W) / 12.0
    else:
        w = (theta / (2.0 * np.sin(theta))) * np.array(
            [R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]
        )
        W = _hat(w)
        half = theta / 2.0
        V_inv = (
            np.eye(3)
            - 0.5 * W
            + ((1.0 - half * np.cos(half) / np.sin(half)) / (theta * theta)) * (W @ W)
        )
    return Twist(V_inv @ G.t, w)


def retract(G: PoseSE3, xi: Twist) -> PoseSE3:
    """Left-multiplicative manifold update: exp(xi) o G."""
    return se3_exp(xi).compose(G)


def project(K: CameraIntrinsics, X: np.ndarray) -> np.ndarray:
    """Pinhole projection of points (..., 3) to pixels (..., 2).

    Raises :class:`BehindCameraError` if any point has z <= EPS_DEPTH; use
    :func:`reproject` for grid workloads that need per-pixel validity.
    """
    X = np.asarray(X, dtype=np.float64)
    z = X[..., 2]
    if np.any(z <= EPS_DEPTH):
        raise BehindCameraError("point at or behind the camera plane")
    u = K.fx * X[..., 0] / z + K.cx
    v = K.fy * X[..., 1] / z + K.cy
    return np.stack([u, v], axis=-1)


def backproject(K: CameraIntrinsics, p: np.ndarray, d) -> np.ndarray:
    """Lifts pixels (..., 2) with inverse depth d (scalar or (...,)) to 3D."""
    p = np.asarray(p, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if np.any(d <= 0):
        raise InvalidDepthError("inverse depth must be positive")
    x = (p[..., 0] - K.cx) / K.fx
    y = (p[..., 1] - K.cy) / K.fy
    return np.stack([x / d, y / d, 1.0 / d], axis=-1)


def pixel_grid(K: CameraIntrinsics) -> np.ndarray:
    """(H, W, 2) grid of pixel-center coordinates (u, v)."""
    u, v = np.meshgrid(
        np.arange(K.width, dtype=np.float64),
        np.arange(K.height, dtype=np.float64),
    )
    return np.stack([u, v], axis=-1)


def reproject(
    G_ij: PoseSE3,
    K: CameraIntrinsics,
    p_i: np.ndarray,
    d_i: InverseDepthMap,
) -> tuple[np.ndarray, np.ndarray]:
    """Dense correspondence map: where pixels of frame i land in frame j.

    ``G_ij`` maps camera-i coordinates to camera-j coordinates. Returns the
    (H, W, 2) predicted pixels and an (H, W) validity grid; pixels with
    invalid depth or landing behind camera j are flagged invalid (their
    coordinates are left at the input pixel position).
    """
    p_i = np.asarray(p_i, dtype=np.float64)
    if p_i.shape != (K.height, K.width, 2):
        raise InvalidArgumentError("pixel grid shape must match intrinsics")
    if d_i.values.shape != (K.height, K.width):
        raise InvalidArgumentError("depth map shape must match intrinsics")

    valid = d_i.valid.copy()
    d = np.where(valid, d_i.values, 1.0)
    x = (p_i[..., 0] - K.cx) / K.fx
    y = (p_i[..., 1] - K.cy) / K.fy
    X_i = np.stack([x / d, y / d, 1.0 / d], axis=-1)
    X_j = X_i @ G_ij.rotation_matrix().T + G_ij.t
    z = X_j[..., 2]
    in_front = z > EPS_DEPTH
    valid &= in_front
    z_safe = np.where(in_front, z, 1.0)
    u = K.fx * X_j[..., 0] / z_safe + K.cx
    v = K.fy * X_j[..., 1] / z_safe + K.cy
    out = np.where(valid[..., None], np.stack([u, v], axis=-1), p_i)
    return out, valid


def reprojection_jacobians(
    G_i: PoseSE3,
    G_j: PoseSE3,
    K: CameraIntrinsics,
    pixels: np.ndarray,
    inv_depth: np.ndarray,
) -> dict:
    """Predicted pixels and analytic Jacobians for the masked BA residual.

    ``pixels`` is (N, 2), ``inv_depth`` (N,). Both poses are camera-to-world
    and receive left-multiplicative increments. Returns a dict with:

    * ``pred``: (N, 2) predicted pixels in frame j
    * ``valid``: (N,) validity (positive depth in front of camera j)
    * ``J_pose_i``, ``J_pose_j``: (N, 2, 6) d(pred)/d(twist), twist ordered
      (v, omega)
    * ``J_depth``: (N, 2) d(pred)/d(inverse depth)

    Entries at invalid pixels are zeroed.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    d = np.asarray(inv_depth, dtype=np.float64)
    n = pixels.shape[0]

    good = d > 0
    d_safe = np.where(good, d, 1.0)
    x = (pixels[:, 0] - K.cx) / K.fx
    y = (pixels[:, 1] - K.cy) / K.fy
    X_i = np.stack([x / d_safe, y / d_safe, 1.0 / d_safe], axis=-1)

    R_i = G_i.rotation_matrix()
    R_j = G_j.rotation_matrix()
    X_w = X_i @ R_i.T + G_i.t
    X_j = (X_w - G_j.t) @ R_j

    z = X_j[:, 2]
    good &= z > EPS_DEPTH
    z_safe = np.where(good, z, 1.0)

    u = K.fx * X_j[:, 0] / z_safe + K.cx
    v = K.fy * X_j[:, 1] / z_safe + K.cy
    pred = np.stack([u, v], axis=-1)

    # d(pixel)/d(X_j)
    J_proj = np.zeros((n, 2, 3))
    inv_z = 1.0 / z_safe
    J_proj[:, 0, 0] = K.fx * inv_z
    J_proj[:, 0, 2] = -K.fx * X_j[:, 0] * inv_z * inv_z
    J_proj[:, 1, 1] = K.fy * inv_z
    J_proj[:, 1, 2] = -K.fy * X_j[:, 1] * inv_z * inv_z

    # Left increment on G_i moves the world point by (xi_v + xi_w x X_w);
    # on G_j it moves X_j by -R_j^T (xi_v + xi_w x X_w).
    J_world = np.zeros((n, 3, 6))
    J_world[:, 0, 0] = J_world[:, 1, 1] = J_world[:, 2, 2] = 1.0
    J_world[:, 0, 4] = X_w[:, 2]
    J_world[:, 0, 5] = -X_w[:, 1]
    J_world[:, 1, 3] = -X_w[:, 2]
    J_world[:, 1, 5] = X_w[:, 0]
    J_world[:, 2, 3] = X_w[:, 1]
    J_world[:, 2, 4] = -X_w[:, 0]

    J_pix_world = J_proj @ R_j.T[None, :, :] @ J_world
    J_pose_i = J_pix_world
    J_pose_j = -J_pix_world

    # X_i scales as 1/d, so dX_i/dd = -X_i / d.
    dXj_dd = (-X_i / d_safe[:, None]) @ (R_j.T @ R_i).T
    J_depth = np.einsum("nij,nj->ni", J_proj, dXj_dd)

    bad = ~good
    pred[bad] = pixels[bad]
    J_pose_i[bad] = 0.0
    J_pose_j[bad] = 0.0
    J_depth[bad] = 0.0

    return {
        "pred": pred,
        "valid": good,
        "J_pose_i": J_pose_i,
        "J_pose_j": J_pose_j,
        "J_depth": J_depth,
    }


def relative_pose(G_i: PoseSE3, G_j: PoseSE3) -> PoseSE3:
    """Camera-i to camera-j transform for camera-to-world poses."""
    return G_j.inverse().compose(G_i)
