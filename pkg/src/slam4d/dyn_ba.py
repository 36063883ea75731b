"""Masked dense bundle adjustment over a keyframe graph.

Builds a graph of keyframes connected by flow-correspondence edges,
assembles the confidence-weighted reprojection energy (with dynamic pixels
zeroed out), and minimizes it over keyframe poses and per-pixel inverse
depths with damped Gauss-Newton. The depth block of the normal equations
is diagonal, so it is eliminated by a Schur complement and only a small
pose system is solved densely. Non-keyframe poses are filled in afterwards
by motion-only (pose-only) bundle adjustment against the nearest keyframe.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from .errors import (
    DegenerateFrameError,
    InvalidArgumentError,
    SolverStalledError,
)
from .geometry import (
    CameraIntrinsics,
    InverseDepthMap,
    PoseSE3,
    Twist,
    pixel_grid,
    reprojection_jacobians,
    retract,
    se3_exp,
    se3_log,
)

MIN_VALID_PIXELS = 64
DEPTH_MIN = 1e-4
MAX_DAMPING_RETRIES = 12


@dataclass
class BAConfig:
    max_iterations: int = 30
    damping_init: float = 1e-4
    damping_scale: float = 10.0
    damping_relax: float = 5.0
    convergence_tol: float = 1e-6
    depth_prior_weight: float = 1e-4

    def __post_init__(self):
        for name in (
            "max_iterations",
            "damping_init",
            "damping_scale",
            "damping_relax",
            "convergence_tol",
            "depth_prior_weight",
        ):
            if getattr(self, name) <= 0:
                raise InvalidArgumentError(f"{name} must be positive")
        if self.convergence_tol >= 1:
            raise InvalidArgumentError("convergence_tol must be < 1")


@dataclass
class KeyframePolicy:
    """Mean-flow keyframe selection and edge construction thresholds."""

    tau_kf: float = 2.4  # px of mean flow before a new keyframe is added
    edge_radius: int = 2  # max keyframe-ordinal distance for an edge
    overlap_cutoff: float = 40.0  # px of mean flow above which overlap is lost


@dataclass
class Keyframe:
    frame_id: int
    timestamp: float
    pose: PoseSE3
    inv_depth: InverseDepthMap


@dataclass
class Edge:
    """Directed correspondence constraint from keyframe ``i`` into ``j``.

    ``target`` holds the predicted correspondence endpoints (pixel grid of
    frame i plus flow), ``weight`` the non-negative confidence grid.
    """

    i: int
    j: int
    target: np.ndarray
    weight: np.ndarray


@dataclass
class FrameGraph:
    keyframes: list
    edges: list
    intrinsics: CameraIntrinsics

    def copy(self) -> "FrameGraph":
        return FrameGraph(
            [replace(k) for k in self.keyframes],
            [Edge(e.i, e.j, e.target, e.weight) for e in self.edges],
            self.intrinsics,
        )


@dataclass(frozen=True)
class Trajectory:
    """Timestamped camera-to-world poses, strictly increasing in time."""

    timestamps: np.ndarray
    poses: tuple

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.float64)
        if len(ts) != len(self.poses):
            raise InvalidArgumentError("timestamps and poses must align")
        if len(ts) > 1 and np.any(np.diff(ts) <= 0):
            raise InvalidArgumentError("timestamps must be strictly increasing")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "poses", tuple(self.poses))

    def __len__(self):
        return len(self.poses)

    def __iter__(self):
        return iter(zip(self.timestamps, self.poses))

    def translations(self) -> np.ndarray:
        return np.stack([p.t for p in self.poses])


def _mean_flow(flow_field, weight) -> float:
    mag = np.linalg.norm(flow_field.flow, axis=-1)
    usable = flow_field.valid & (weight > 0)
    if not usable.any():
        return np.inf
    return float(mag[usable].mean())


def build_frame_graph(
    timestamps,
    flow_provider,
    K: CameraIntrinsics,
    policy: KeyframePolicy | None = None,
    depth_init: float = 0.5,
) -> FrameGraph:
    """Selects keyframes by mean flow magnitude and connects them.

    ``flow_provider(i, j)`` must return ``(FlowField, confidence)`` for any
    frame pair. A frame becomes a keyframe once the mean flow from the
    previous keyframe exceeds ``policy.tau_kf``; the final frame is always
    kept. Directed edges connect keyframes within ``edge_radius`` ordinal
    distance whose mean flow stays below ``overlap_cutoff``.
    """
    timestamps = list(timestamps)
    n = len(timestamps)
    if n < 2:
        raise InvalidArgumentError("need at least 2 frames")
    policy = policy or KeyframePolicy()

    kf_ids = [0]
    for f in range(1, n):
        flow, conf = flow_provider(kf_ids[-1], f)
        if _mean_flow(flow, conf) > policy.tau_kf:
            kf_ids.append(f)
    if kf_ids[-1] != n - 1:
        kf_ids.append(n - 1)

    h, w = K.height, K.width
    keyframes = [
        Keyframe(f, timestamps[f], PoseSE3.identity(),
                 InverseDepthMap.constant(h, w, depth_init))
        for f in kf_ids
    ]

    grid = pixel_grid(K)
    edges = []
    for a in range(len(kf_ids)):
        for b in range(len(kf_ids)):
            if a == b or abs(a - b) > policy.edge_radius:
                continue
            flow, conf = flow_provider(kf_ids[a], kf_ids[b])
            if _mean_flow(flow, conf) >= policy.overlap_cutoff:
                continue
            weight = np.where(flow.valid, np.maximum(conf, 0.0), 0.0)
            edges.append(Edge(a, b, grid + flow.flow, weight))

    graph = FrameGraph(keyframes, edges, K)
    for a in range(len(kf_ids)):
        if not any(e.i == a or e.j == a for e in edges):
            raise InvalidArgumentError(f"keyframe {kf_ids[a]} has no edges")
    return graph


def _mask_grid(mask, shape):
    if mask is None:
        return None
    grid = np.asarray(getattr(mask, "grid", mask), dtype=bool)
    if grid.shape != shape:
        raise InvalidArgumentError("mask shape mismatch")
    return grid


def apply_masks(graph: FrameGraph, motion=None, semantic=None) -> FrameGraph:
    """Zeroes edge weights where the host frame's masks mark dynamics.

    ``motion`` and ``semantic`` map frame ids to mask-like objects (a
    MotionMask/SemanticMask or a boolean array); missing entries leave the
    frame untouched. Idempotent: already-zero weights stay zero.
    """
    motion = motion or {}
    semantic = semantic or {}
    out = graph.copy()
    shape = (graph.intrinsics.height, graph.intrinsics.width)
    for e in out.edges:
        fid = graph.keyframes[e.i].frame_id
        m = _mask_grid(motion.get(fid), shape)
        s = _mask_grid(semantic.get(fid), shape)
        if m is None and s is None:
            continue
        combined = np.zeros(shape, dtype=bool)
        if m is not None:
            combined |= m
        if s is not None:
            combined |= s
        e.weight = np.where(combined, 0.0, e.weight)
    return out


def _edge_arrays(graph: FrameGraph, e: Edge):
    K = graph.intrinsics
    kf_i = graph.keyframes[e.i]
    pixels = pixel_grid(K).reshape(-1, 2)
    d = kf_i.inv_depth.values.reshape(-1)
    d_valid = kf_i.inv_depth.valid.reshape(-1)
    return pixels, d, d_valid


def energy(graph: FrameGraph) -> float:
    """Confidence-weighted squared reprojection energy of the graph.

    Masked (zero-weight) pixels and invalid reprojections contribute
    exactly zero.
    """
    total = 0.0
    for e in graph.edges:
        r, w = _edge_residuals(graph, e)
        total += float(np.sum(w * np.sum(r * r, axis=-1)))
    return total


def _edge_residuals(graph: FrameGraph, e: Edge):
    K = graph.intrinsics
    pixels, d, d_valid = _edge_arrays(graph, e)
    jac = reprojection_jacobians(
        graph.keyframes[e.i].pose, graph.keyframes[e.j].pose, K, pixels, d
    )
    w = e.weight.reshape(-1) * jac["valid"] * d_valid
    r = e.target.reshape(-1, 2) - jac["pred"]
    r = np.where(w[:, None] > 0, r, 0.0)
    return r, w


def edge_valid_pixel_count(graph: FrameGraph, e: Edge) -> int:
    """Pixels with positive weight and valid depth (targets play no role)."""
    _, d, d_valid = _edge_arrays(graph, e)
    return int(np.count_nonzero((e.weight.reshape(-1) > 0) & d_valid & (d > 0)))


def _depth_prior_targets(graph: FrameGraph):
    targets = []
    for kf in graph.keyframes:
        vals = kf.inv_depth.values[kf.inv_depth.valid]
        targets.append(float(vals.mean()) if vals.size else 0.0)
    return targets


def _total_objective(graph: FrameGraph, config: BAConfig, prior_targets) -> float:
    total = energy(graph)
    for kf, target in zip(graph.keyframes, prior_targets):
        diff = kf.inv_depth.values - target
        total += config.depth_prior_weight * float(
            np.sum((diff * kf.inv_depth.valid) ** 2)
        )
    return total


class _NormalEquations:
    """Assembled, undamped normal-equation blocks for one linearization."""

    def __init__(self, graph: FrameGraph, config: BAConfig, prior_targets):
        K = graph.intrinsics
        nkf = len(graph.keyframes)
        npx = K.height * K.width
        P = 6 * (nkf - 1)  # keyframe 0 is the gauge

        self.nkf, self.npx, self.P = nkf, npx, P
        self.B = np.zeros((P, P))
        self.bvec = np.zeros(P)
        # diagonal depth block and its rhs, per keyframe
        self.C = np.full((nkf, npx), config.depth_prior_weight)
        self.w_rhs = np.zeros((nkf, npx))
        for k, (kf, target) in enumerate(zip(graph.keyframes, prior_targets)):
            diff = (target - kf.inv_depth.values.reshape(-1))
            self.w_rhs[k] = config.depth_prior_weight * diff * kf.inv_depth.valid.reshape(-1)
        # pose-depth coupling: host kf -> {pose block: (npx, 6)}
        self.E = [dict() for _ in range(nkf)]

        for e in graph.edges:
            pixels, d, d_valid = _edge_arrays(graph, e)
            jac = reprojection_jacobians(
                graph.keyframes[e.i].pose, graph.keyframes[e.j].pose, K, pixels, d
            )
            w = e.weight.reshape(-1) * jac["valid"] * d_valid
            r = e.target.reshape(-1, 2) - jac["pred"]
            r = np.where(w[:, None] > 0, r, 0.0)

            blocks = []
            if e.i != 0:
                blocks.append((e.i, jac["J_pose_i"]))
            if e.j != 0:
                blocks.append((e.j, jac["J_pose_j"]))

            Jd = jac["J_depth"]  # (N, 2)
            wJd = w[:, None] * Jd
            self.C[e.i] += np.einsum("ni,ni->n", Jd, wJd)
            self.w_rhs[e.i] += np.einsum("ni,ni->n", wJd, r)

            for bk, Jb in blocks:
                sl = self._slice(bk)
                wJb = w[:, None, None] * Jb
                self.bvec[sl] += np.einsum("nia,ni->a", wJb, r)
                for bk2, Jb2 in blocks:
                    self.B[sl, self._slice(bk2)] += np.einsum(
                        "nia,nib->ab", wJb, Jb2
                    )
                g = np.einsum("nia,ni->na", Jb, wJd)  # (npx, 6)
                acc = self.E[e.i].setdefault(bk, np.zeros((npx, 6)))
                acc += g

    def _slice(self, block):
        return slice(6 * (block - 1), 6 * block)

    def solve_schur(self, lam):
        """Depth elimination: solve the reduced pose system, back-substitute."""
        S = self.B + lam * np.eye(self.P)
        rhs = self.bvec.copy()
        C_l = self.C + lam
        for host in range(self.nkf):
            items = list(self.E[host].items())
            inv_c = 1.0 / C_l[host]
            for bk, G in items:
                sl = self._slice(bk)
                rhs[sl] -= (G * (self.w_rhs[host] * inv_c)[:, None]).sum(axis=0)
                for bk2, G2 in items:
                    S[sl, self._slice(bk2)] -= np.einsum(
                        "na,nb->ab", G * inv_c[:, None], G2
                    )
        try:
            dpose = np.linalg.solve(S, rhs)
        except np.linalg.LinAlgError:
            return None
        ddepth = np.empty((self.nkf, self.npx))
        for host in range(self.nkf):
            acc = self.w_rhs[host].copy()
            for bk, G in self.E[host].items():
                acc -= G @ dpose[self._slice(bk)]
            ddepth[host] = acc / C_l[host]
        return dpose, ddepth

    def solve_dense(self, lam):
        """Reference path: one dense solve of the full normal equations."""
        n = self.P + self.nkf * self.npx
        H = np.zeros((n, n))
        g = np.zeros(n)
        H[: self.P, : self.P] = self.B
        g[: self.P] = self.bvec
        for host in range(self.nkf):
            sl_d = slice(self.P + host * self.npx, self.P + (host + 1) * self.npx)
            H[sl_d, sl_d] = np.diag(self.C[host])
            g[sl_d] = self.w_rhs[host]
            for bk, G in self.E[host].items():
                sl_p = self._slice(bk)
                H[sl_p, sl_d] += G.T
                H[sl_d, sl_p] += G
        H += lam * np.eye(n)
        try:
            delta = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            return None
        return delta[: self.P], delta[self.P :].reshape(self.nkf, self.npx)


def _apply_step(graph: FrameGraph, dpose, ddepth) -> FrameGraph:
    out = graph.copy()
    for k in range(1, len(out.keyframes)):
        xi = Twist.from_vector(dpose[6 * (k - 1) : 6 * k])
        out.keyframes[k].pose = retract(out.keyframes[k].pose, xi)
    for k, kf in enumerate(out.keyframes):
        vals = kf.inv_depth.values + ddepth[k].reshape(kf.inv_depth.values.shape)
        vals = np.maximum(vals, DEPTH_MIN)
        out.keyframes[k].inv_depth = InverseDepthMap(vals, kf.inv_depth.valid)
    return out


def _lm_step(graph: FrameGraph, config: BAConfig, lam: float):
    """One accepted Levenberg-Marquardt step (or a no-op if none is found)."""
    prior_targets = _depth_prior_targets(graph)
    e_before = _total_objective(graph, config, prior_targets)
    normals = _NormalEquations(graph, config, prior_targets)

    singular_everywhere = True
    for _ in range(MAX_DAMPING_RETRIES):
        sol = normals.solve_schur(lam)
        if sol is None:
            lam *= config.damping_scale
            continue
        singular_everywhere = False
        candidate = _apply_step(graph, *sol)
        e_after = _total_objective(candidate, config, prior_targets)
        if np.isfinite(e_after) and e_after <= e_before:
            return candidate, e_before, e_after, max(lam / config.damping_relax, 1e-12)
        lam *= config.damping_scale
    if singular_everywhere:
        raise SolverStalledError(
            "reduced pose system singular after maximum damping escalation",
            diagnostics={"energy": e_before, "damping": lam},
        )
    return graph, e_before, e_before, lam


def ba_step(graph: FrameGraph, config: BAConfig, damping: float | None = None):
    """One damped Gauss-Newton step over keyframe twists and inverse depths.

    Returns (graph, energy_before, energy_after) where the energies are the
    total objective (reprojection energy plus the weak depth prior) and
    energy_after <= energy_before. The first keyframe pose is the gauge and
    is never moved.
    """
    lam = config.damping_init if damping is None else damping
    new_graph, e0, e1, _ = _lm_step(graph, config, lam)
    return new_graph, e0, e1


def optimize_graph(graph: FrameGraph, config: BAConfig):
    """Iterates ba_step until the relative energy decrease stalls.

    Returns (graph, diagnostics) with per-iteration energies.
    """
    lam = config.damping_init
    energies = []
    for _ in range(config.max_iterations):
        graph, e0, e1, lam = _lm_step(graph, config, lam)
        energies.append((e0, e1))
        if e0 <= 0 or (e0 - e1) / e0 < config.convergence_tol:
            break
    diag = {
        "iterations": len(energies),
        "energies": energies,
        "edge_valid_pixels": [edge_valid_pixel_count(graph, e) for e in graph.edges],
    }
    return graph, diag


def motion_only_ba(
    flow,
    d_ref: InverseDepthMap,
    K: CameraIntrinsics,
    mask=None,
    init: PoseSE3 | None = None,
    confidence=None,
    iterations: int = 40,
    min_valid_pixels: int = MIN_VALID_PIXELS,
    tukey_px: float = 1.0,
) -> PoseSE3:
    """Pose-only alignment of one frame against a reference keyframe.

    Solves for the relative transform G (reference-camera to frame-camera
    coordinates) minimizing the weighted reprojection energy with the
    reference depths frozen, by Gauss-Newton with iteratively reweighted
    Tukey biweights. The redescending weight fully rejects residuals
    beyond ``tukey_px``, so coherent unmodeled motion (a dynamic object)
    cannot drag the pose the way it does under plain least squares; set it
    to 0 for an unweighted fit. ``mask`` marks excluded (dynamic) pixels.
    Raises DegenerateFrameError when fewer than ``min_valid_pixels``
    remain.
    """
    grid = pixel_grid(K)
    target = (grid + flow.flow).reshape(-1, 2)
    pixels = grid.reshape(-1, 2)
    d = d_ref.values.reshape(-1)
    d_valid = d_ref.valid.reshape(-1)

    w = flow.valid.astype(np.float64).reshape(-1)
    if confidence is not None:
        w = w * np.maximum(np.asarray(confidence, dtype=np.float64).reshape(-1), 0.0)
    if mask is not None:
        m = _mask_grid(mask, flow.valid.shape)
        w = w * (~m).reshape(-1)
    w = w * d_valid

    if np.count_nonzero(w > 0) < min_valid_pixels:
        raise DegenerateFrameError(
            f"only {np.count_nonzero(w > 0)} valid pixels after masking"
        )

    G = init if init is not None else PoseSE3.identity()
    lam = 1e-8
    x = (pixels[:, 0] - K.cx) / K.fx
    y = (pixels[:, 1] - K.cy) / K.fy
    d_safe = np.where(d > 0, d, 1.0)
    X_ref = np.stack([x / d_safe, y / d_safe, 1.0 / d_safe], axis=-1)

    def residual_and_jac(G):
        X_j = X_ref @ G.rotation_matrix().T + G.t
        z = X_j[:, 2]
        good = (z > 1e-8) & (d > 0)
        z_safe = np.where(good, z, 1.0)
        pred = np.stack(
            [K.fx * X_j[:, 0] / z_safe + K.cx, K.fy * X_j[:, 1] / z_safe + K.cy],
            axis=-1,
        )
        w_eff = w * good
        r = np.where(w_eff[:, None] > 0, target - pred, 0.0)
        if tukey_px > 0:
            mag = np.linalg.norm(r, axis=-1)
            u = np.minimum(mag / tukey_px, 1.0)
            w_eff = w_eff * (1.0 - u * u) ** 2
        n = len(z)
        J_proj = np.zeros((n, 2, 3))
        inv_z = 1.0 / z_safe
        J_proj[:, 0, 0] = K.fx * inv_z
        J_proj[:, 0, 2] = -K.fx * X_j[:, 0] * inv_z * inv_z
        J_proj[:, 1, 1] = K.fy * inv_z
        J_proj[:, 1, 2] = -K.fy * X_j[:, 1] * inv_z * inv_z
        # left increment: delta X_j = xi_v + xi_w x X_j
        J_pt = np.zeros((n, 3, 6))
        J_pt[:, 0, 0] = J_pt[:, 1, 1] = J_pt[:, 2, 2] = 1.0
        J_pt[:, 0, 4] = X_j[:, 2]
        J_pt[:, 0, 5] = -X_j[:, 1]
        J_pt[:, 1, 3] = -X_j[:, 2]
        J_pt[:, 1, 5] = X_j[:, 0]
        J_pt[:, 2, 3] = X_j[:, 1]
        J_pt[:, 2, 4] = -X_j[:, 0]
        J = J_proj @ J_pt
        J = np.where(w_eff[:, None, None] > 0, J, 0.0)
        return r, J, w_eff

    for _ in range(iterations):
        r, J, w_eff = residual_and_jac(G)
        wJ = w_eff[:, None, None] * J
        H = np.einsum("nia,nib->ab", wJ, J) + lam * np.eye(6)
        g = np.einsum("nia,ni->a", wJ, r)
        try:
            delta = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            lam *= 100.0
            continue
        G = retract(G, Twist.from_vector(delta))
        if np.linalg.norm(delta) < 1e-12:
            break
    return G


def _interpolate_pose(G_a: PoseSE3, G_b: PoseSE3, frac: float) -> PoseSE3:
    rel = se3_log(G_b.compose(G_a.inverse()))
    return retract(G_a, Twist.from_vector(frac * rel.as_vector()))


def solve(
    timestamps,
    flow_provider,
    K: CameraIntrinsics,
    config: BAConfig | None = None,
    policy: KeyframePolicy | None = None,
    motion_masks=None,
    semantic_masks=None,
    depth_init: float = 0.5,
):
    """Full localization pipeline: graph, masked BA, motion-only fill-in.

    Returns (Trajectory covering every frame, diagnostics dict).
    """
    config = config or BAConfig()
    graph = build_frame_graph(timestamps, flow_provider, K, policy, depth_init)
    graph = apply_masks(graph, motion_masks, semantic_masks)

    kept = []
    dropped = []
    for e in graph.edges:
        if edge_valid_pixel_count(graph, e) >= MIN_VALID_PIXELS:
            kept.append(e)
        else:
            dropped.append((e.i, e.j))
            warnings.warn(
                f"dropping edge {e.i}->{e.j}: too few valid pixels", stacklevel=2
            )
    graph = FrameGraph(graph.keyframes, kept, graph.intrinsics)
    if not _connected(graph):
        raise SolverStalledError(
            "keyframe graph disconnected after edge drops",
            diagnostics={"dropped_edges": dropped},
        )

    graph, diag = optimize_graph(graph, config)
    diag["dropped_edges"] = dropped

    n = len(timestamps)
    kf_by_frame = {kf.frame_id: kf for kf in graph.keyframes}
    kf_ids = sorted(kf_by_frame)
    masks = motion_masks or {}
    sem = semantic_masks or {}
    poses = []
    for f in range(n):
        if f in kf_by_frame:
            poses.append(kf_by_frame[f].pose)
            continue
        ref_id = min(kf_ids, key=lambda k: abs(k - f))
        ref = kf_by_frame[ref_id]
        shape = (K.height, K.width)
        m = _mask_grid(masks.get(ref_id), shape)
        s = _mask_grid(sem.get(ref_id), shape)
        combined = None
        if m is not None or s is not None:
            combined = (m if m is not None else np.zeros(shape, dtype=bool)) | (
                s if s is not None else np.zeros(shape, dtype=bool)
            )
        try:
            flow, conf = flow_provider(ref_id, f)
            G_rel = motion_only_ba(
                flow, ref.inv_depth, K, mask=combined, confidence=conf
            )
            poses.append(ref.pose.compose(G_rel.inverse()))
        except DegenerateFrameError:
            lo = max((k for k in kf_ids if k < f), default=None)
            hi = min((k for k in kf_ids if k > f), default=None)
            if lo is None or hi is None:
                poses.append(ref.pose)
            else:
                frac = (f - lo) / (hi - lo)
                poses.append(
                    _interpolate_pose(kf_by_frame[lo].pose, kf_by_frame[hi].pose, frac)
                )
    traj = Trajectory(np.asarray(timestamps, dtype=np.float64), poses)
    return traj, diag


def _connected(graph: FrameGraph) -> bool:
    n = len(graph.keyframes)
    adj = [set() for _ in range(n)]
    for e in graph.edges:
        adj[e.i].add(e.j)
        adj[e.j].add(e.i)
    seen = {0}
    stack = [0]
    while stack:
        for nxt in adj[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return len(seen) == n


def format_diagnostics(diag: dict) -> str:
    """Line-oriented diagnostics dump (per-iteration energy, edge pixels)."""
    lines = []
    for it, (e0, e1) in enumerate(diag.get("energies", [])):
        lines.append(f"iter {it} energy_before {e0:.9g} energy_after {e1:.9g}")
    for idx, count in enumerate(diag.get("edge_valid_pixels", [])):
        lines.append(f"edge {idx} valid_pixels {count}")
    for i, j in diag.get("dropped_edges", []):
        lines.append(f"dropped_edge {i} {j}")
    return "\n".join(lines) + "\n"
