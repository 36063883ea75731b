"""Volumetric rendering and training of the factorized 4D field.

Casts pinhole rays, samples the field stratified-uniformly along each ray,
composites with the emission-absorption model, and trains field and
decoder with an adaptive-moment optimizer under the combined photometric
plus total-variation loss. Coarse-to-fine: plane resolutions are upsampled
at scheduled iterations and the TV weight halves at each event.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from . import accel, field as field_mod
from .errors import InvalidArgumentError
from .geometry import CameraIntrinsics, PoseSE3


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    time: float
    near: float
    far: float

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise InvalidArgumentError("ray direction must be unit length")
        if not self.near < self.far:
            raise InvalidArgumentError("need near < far")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        object.__setattr__(self, "direction", d)


@dataclass
class RayBatch:
    """Vectorized rays: origins (N, 3), unit directions (N, 3), times (N,)."""

    origins: np.ndarray
    directions: np.ndarray
    times: np.ndarray
    near: float
    far: float

    def __len__(self):
        return len(self.origins)

    def rays(self):
        return [
            Ray(o, d, float(t), self.near, self.far)
            for o, d, t in zip(self.origins, self.directions, self.times)
        ]


@dataclass(frozen=True)
class RenderOutput:
    rgb: np.ndarray
    sample_weights: np.ndarray
    expected_depth: np.ndarray
    transmittance_final: np.ndarray


@dataclass(frozen=True)
class LossBreakdown:
    l_rgb: float
    l_tv_sigma: float
    l_tv_rgb: float


@dataclass
class TrainConfig:
    lambda_tv: float = 0.005
    lambda_ts: float = 20.0
    w_rgb_tv: float = 0.1
    batch_size: int = 512
    samples_per_ray: int = 48
    iterations: int = 3000
    upsample_schedule: tuple = ()  # ((iteration, (rx, ry, rz, rt)), ...)
    lr_grids: float = 0.02
    lr_decoder: float = 0.001
    betas: tuple = (0.9, 0.99)
    eps: float = 1e-8
    near: float = 0.2
    far: float = 4.5
    seed: int = 0
    log_every: int = 50
    holdout_stride: int = 5
    tv_decay_on_upsample: float = 0.5

    def __post_init__(self):
        for name in ("lambda_ts", "w_rgb_tv", "batch_size", "samples_per_ray",
                     "lr_grids", "lr_decoder", "log_every", "holdout_stride"):
            if getattr(self, name) <= 0:
                raise InvalidArgumentError(f"{name} must be positive")
        if self.lambda_tv < 0 or self.iterations < 0:
            raise InvalidArgumentError("lambda_tv and iterations must be >= 0")
        if not self.near < self.far:
            raise InvalidArgumentError("need near < far")
        its = [it for it, _ in self.upsample_schedule]
        if its != sorted(its):
            raise InvalidArgumentError("upsample schedule must be increasing")


def generate_rays(K: CameraIntrinsics, G: PoseSE3, pixels: np.ndarray,
                  t: float, near: float = 0.2, far: float = 4.5) -> RayBatch:
    """World-space rays through pixel centers of a camera at pose G.

    ``pixels`` is (N, 2) in (u, v). The origin is the camera center; the
    direction is the normalized world-frame ray through the pixel.
    """
    pixels = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    x = (pixels[:, 0] - K.cx) / K.fx
    y = (pixels[:, 1] - K.cy) / K.fy
    dirs_cam = np.stack([x, y, np.ones_like(x)], axis=-1)
    dirs_world = dirs_cam @ G.rotation_matrix().T
    dirs_world = dirs_world / np.linalg.norm(dirs_world, axis=-1, keepdims=True)
    origins = np.broadcast_to(G.t, dirs_world.shape).copy()
    times = np.full(len(pixels), float(t))
    return RayBatch(origins, dirs_world, times, near, far)


def composite(densities: np.ndarray, colors: np.ndarray, deltas: np.ndarray,
              sample_depths: np.ndarray | None = None) -> RenderOutput:
    """Emission-absorption compositing over depth-sorted samples.

    densities and deltas are (N, S), colors (N, S, 3). ``sample_depths``
    (N, S), when given, yields the weight-expected depth per ray.
    """
    densities = np.atleast_2d(np.asarray(densities, dtype=np.float64))
    deltas = np.atleast_2d(np.asarray(deltas, dtype=np.float64))
    colors = np.asarray(colors, dtype=np.float64)
    if colors.ndim == 2:
        colors = colors[None]
    if not (np.isfinite(densities).all() and np.isfinite(colors).all()
            and np.isfinite(deltas).all()):
        raise InvalidArgumentError("non-finite compositing inputs")
    if np.any(densities < 0):
        raise InvalidArgumentError("densities must be non-negative")
    if np.any(deltas <= 0):
        raise InvalidArgumentError("deltas must be positive")
    rgb, weights, trans = accel.composite_forward(densities, colors, deltas)
    if sample_depths is None:
        depth = np.zeros(len(rgb))
    else:
        depth = np.sum(weights * np.atleast_2d(sample_depths), axis=-1)
    return RenderOutput(rgb, weights, depth, trans)


def loss_rgb(rendered: np.ndarray, target: np.ndarray) -> float:
    """Batch mean of squared color-error norms."""
    rendered = np.atleast_2d(np.asarray(rendered, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if rendered.shape != target.shape or rendered.size == 0:
        raise InvalidArgumentError("need matching non-empty batches")
    return float(np.mean(np.sum((rendered - target) ** 2, axis=-1)))


def _check_plane(plane):
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim == 2:
        plane = plane[:, :, None]
    if plane.ndim != 3 or plane.shape[0] < 2 or plane.shape[1] < 2:
        raise InvalidArgumentError("plane must be at least 2x2")
    return plane


def loss_tv_spatial(plane: np.ndarray, batch_size: int) -> float:
    """Total variation of one feature plane, normalized per difference.

    With an A x B plane, the first-dimension term averages the (A-1)*B
    squared differences and the second-dimension term the A*(B-1) ones;
    channels are summed, and the whole is scaled by 2 / batch_size.
    """
    plane = _check_plane(plane)
    a, b = plane.shape[0], plane.shape[1]
    n = (a - 1) * b
    m = a * (b - 1)
    d0 = np.sum((plane[:-1] - plane[1:]) ** 2)
    d1 = np.sum((plane[:, :-1] - plane[:, 1:]) ** 2)
    return float((2.0 / batch_size) * (d0 / n + d1 / m))


def loss_tv_spatiotemporal(plane: np.ndarray, lambda_ts: float,
                           batch_size: int) -> float:
    """Spatio-temporal total variation; time is the second plane dimension.

    Identical to :func:`loss_tv_spatial` except the time-difference term is
    weighted by ``lambda_ts``; with lambda_ts = 1 both agree exactly.
    """
    plane = _check_plane(plane)
    a, b = plane.shape[0], plane.shape[1]
    n = (a - 1) * b
    m = a * (b - 1)
    d0 = np.sum((plane[:-1] - plane[1:]) ** 2)
    d1 = np.sum((plane[:, :-1] - plane[:, 1:]) ** 2)
    return float((2.0 / batch_size) * (d0 / n + lambda_ts * d1 / m))


def _tv_grad(plane, lambda_second, batch_size):
    """Analytic gradient of the (spatio-temporal) TV term for one plane."""
    a, b = plane.shape[0], plane.shape[1]
    n = (a - 1) * b
    m = a * (b - 1)
    grad = np.zeros_like(plane)
    d0 = plane[:-1] - plane[1:]
    grad[:-1] += 2.0 * d0 / n
    grad[1:] -= 2.0 * d0 / n
    d1 = plane[:, :-1] - plane[:, 1:]
    grad[:, :-1] += 2.0 * lambda_second * d1 / m
    grad[:, 1:] -= 2.0 * lambda_second * d1 / m
    return grad * (2.0 / batch_size)


# plane indices whose second axis is time (ZT, YT, XT)
SPATIOTEMPORAL_PLANES = (1, 3, 5)


def _split_channels(plane, feature_dim):
    """(density-channel view, color-channel view) of an (A, B, R*F) plane."""
    a, b, c = plane.shape
    ranks = c // feature_dim
    by_rank = plane.reshape(a, b, ranks, feature_dim)
    half = feature_dim // 2
    return by_rank[..., :half], by_rank[..., half:]


def field_tv_losses(hex_field, config: TrainConfig, batch_size: int):
    """(L_TV_sigma, L_TV_rgb) over all six planes with the channel split."""
    l_sigma = 0.0
    l_rgb_tv = 0.0
    for idx, plane in enumerate(hex_field.planes):
        dens, col = _split_channels(plane, hex_field.feature_dim)
        a, b = plane.shape[0], plane.shape[1]
        dens = dens.reshape(a, b, -1)
        col = col.reshape(a, b, -1)
        if idx in SPATIOTEMPORAL_PLANES:
            l_sigma += loss_tv_spatiotemporal(dens, config.lambda_ts, batch_size)
            l_rgb_tv += loss_tv_spatiotemporal(col, config.lambda_ts, batch_size)
        else:
            l_sigma += loss_tv_spatial(dens, batch_size)
            l_rgb_tv += loss_tv_spatial(col, batch_size)
    return l_sigma, l_rgb_tv


def field_tv_gradients(hex_field, config: TrainConfig, batch_size: int,
                       lambda_tv: float):
    """Per-plane gradient of lambda_tv * (L_TV_sigma + w * L_TV_rgb)."""
    grads = []
    half = hex_field.feature_dim // 2
    for idx, plane in enumerate(hex_field.planes):
        a, b, c = plane.shape
        ranks = c // hex_field.feature_dim
        lam2 = config.lambda_ts if idx in SPATIOTEMPORAL_PLANES else 1.0
        g = _tv_grad(plane, lam2, batch_size)
        scale = np.empty(c)
        by_rank = scale.reshape(ranks, hex_field.feature_dim)
        by_rank[:, :half] = lambda_tv
        by_rank[:, half:] = lambda_tv * config.w_rgb_tv
        grads.append(g * scale)
    return grads


def total_loss(rendered, target, hex_field, config: TrainConfig):
    """Eq. 6 objective: photometric plus weighted TV regularization."""
    rendered = np.atleast_2d(rendered)
    l_rgb = loss_rgb(rendered, target)
    l_sig, l_col = field_tv_losses(hex_field, config, len(rendered))
    total = l_rgb + config.lambda_tv * (l_sig + config.w_rgb_tv * l_col)
    return total, LossBreakdown(l_rgb, l_sig, l_col)


class Adam:
    """Adaptive-moment optimizer over a list of arrays."""

    def __init__(self, shapes, lr, betas=(0.9, 0.99), eps=1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]

    def reset(self, shapes):
        self.t = 0
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _sample_points(batch: RayBatch, n_samples: int, rng):
    """Stratified depths along each ray; returns (points, times4, deltas, depths)."""
    n = len(batch)
    edges = np.linspace(batch.near, batch.far, n_samples + 1)
    lo = edges[:-1][None, :]
    width = (edges[1:] - edges[:-1])[None, :]
    depths = lo + width * rng.random((n, n_samples))
    pts = batch.origins[:, None, :] + depths[:, :, None] * batch.directions[:, None, :]
    deltas = np.empty_like(depths)
    deltas[:, :-1] = np.diff(depths, axis=1)
    deltas[:, -1] = np.maximum(batch.far - depths[:, -1], 1e-6)
    deltas = np.maximum(deltas, 1e-6)
    coords = np.concatenate(
        [pts, np.broadcast_to(batch.times[:, None, None], (n, n_samples, 1))],
        axis=-1,
    )
    return coords, deltas, depths


def render_batch(hex_field, decoder, batch: RayBatch, n_samples: int, rng):
    """Forward render of a ray batch; returns output plus a backprop cache."""
    n = len(batch)
    coords, deltas, depths = _sample_points(batch, n_samples, rng)
    flat = coords.reshape(-1, 4)
    u, _ = hex_field.normalize(flat)
    feats = accel.hexplane_query(hex_field.planes, hex_field.vectors, u,
                                 hex_field.feature_dim)
    view = np.repeat(batch.directions, n_samples, axis=0)
    sigma, rgb, dcache = field_mod.decode_forward(feats, view, decoder)
    sigma = sigma.reshape(n, n_samples)
    rgb_s = rgb.reshape(n, n_samples, 3)
    out_rgb, weights, trans = accel.composite_forward(sigma, rgb_s, deltas)
    output = RenderOutput(out_rgb, weights,
                          np.sum(weights * depths, axis=-1), trans)
    cache = {
        "u": u,
        "sigma": sigma,
        "rgb_s": rgb_s,
        "deltas": deltas,
        "weights": weights,
        "dcache": dcache,
        "n": n,
        "n_samples": n_samples,
    }
    return output, cache


def render_backward(hex_field, decoder, cache, grad_rgb_out):
    """Backprop from d(loss)/d(rendered rgb) to all field/decoder params."""
    g_sigma, g_rgb = accel.composite_backward(
        cache["sigma"], cache["rgb_s"], cache["deltas"], cache["weights"],
        grad_rgb_out,
    )
    grad_feats, dec_grads = field_mod.decode_backward(
        decoder, cache["dcache"], g_sigma.reshape(-1), g_rgb.reshape(-1, 3)
    )
    plane_grads, vec_grads = accel.hexplane_query_backward(
        hex_field.planes, hex_field.vectors, cache["u"], grad_feats
    )
    return plane_grads, vec_grads, dec_grads


@dataclass
class TrainResult:
    field: object
    decoder: object
    log: list
    loss_history: list
    holdout_psnr: float


def _holdout_psnr(hex_field, decoder, dataset, holdout_ids, config):
    from .metrics import psnr

    if not holdout_ids:
        return float("nan")
    rng = np.random.default_rng(0)
    vals = []
    for fid in holdout_ids:
        img = render_image(hex_field, decoder, dataset["intrinsics"],
                           dataset["poses"][fid], dataset["times"][fid],
                           config, rng=rng)
        vals.append(psnr(img, dataset["images"][fid]))
    return float(np.mean(vals))


def train(dataset: dict, hex_field, decoder, config: TrainConfig):
    """Trains field and decoder; returns a TrainResult with the metric log.

    ``dataset`` maps ``images`` (list of HxWx3 float arrays), ``poses``
    (list of PoseSE3), ``times`` (normalized [0, 1] floats), and
    ``intrinsics``. Frames at ``holdout_stride`` intervals are excluded
    from sampling and scored with PSNR for the log lines, which follow
    ``iter,loss,l_rgb,l_tv_sigma,l_tv_rgb,psnr_holdout``.
    """
    K = dataset["intrinsics"]
    n_frames = len(dataset["images"])
    if len(dataset["poses"]) != n_frames or len(dataset["times"]) != n_frames:
        raise InvalidArgumentError("dataset fields must align")
    holdout = list(range(config.holdout_stride, n_frames, config.holdout_stride))
    train_ids = [f for f in range(n_frames) if f not in holdout]
    if not train_ids:
        raise InvalidArgumentError("no training frames left after holdout")

    hex_field = hex_field.copy()
    decoder = decoder.copy()
    rng = np.random.default_rng(config.seed)
    dec_names = sorted(decoder.params())
    opt_grid = Adam([p.shape for p in hex_field.planes + hex_field.vectors],
                    config.lr_grids, config.betas, config.eps)
    opt_dec = Adam([decoder.params()[k].shape for k in dec_names],
                   config.lr_decoder, config.betas, config.eps)

    u_grid, v_grid = np.meshgrid(np.arange(K.width), np.arange(K.height))
    all_pix = np.stack([u_grid.reshape(-1), v_grid.reshape(-1)], axis=-1)

    lambda_tv = config.lambda_tv
    schedule = list(config.upsample_schedule)
    log = []
    loss_history = []
    for it in range(config.iterations):
        while schedule and it == schedule[0][0]:
            _, new_res = schedule.pop(0)
            hex_field = field_mod.upsample(hex_field, new_res)
            lambda_tv *= config.tv_decay_on_upsample
            opt_grid.reset([p.shape for p in hex_field.planes + hex_field.vectors])

        fid = train_ids[rng.integers(len(train_ids))]
        sel = rng.integers(len(all_pix), size=config.batch_size)
        pix = all_pix[sel]
        target = dataset["images"][fid].reshape(-1, 3)[sel]
        batch = generate_rays(K, dataset["poses"][fid], pix,
                              dataset["times"][fid], config.near, config.far)
        out, cache = render_batch(hex_field, decoder, batch,
                                  config.samples_per_ray, rng)
        cfg_now = replace(config, lambda_tv=lambda_tv)
        loss, parts = total_loss(out.rgb, target, hex_field, cfg_now)
        if not np.isfinite(loss):
            raise InvalidArgumentError(
                f"non-finite loss at iteration {it}: {parts}"
            )

        loss_history.append(float(loss))
        grad_out = 2.0 * (out.rgb - target) / config.batch_size
        plane_grads, vec_grads, dec_grads = render_backward(
            hex_field, decoder, cache, grad_out
        )
        tv_grads = field_tv_gradients(hex_field, cfg_now, config.batch_size,
                                      lambda_tv)
        for pg, tg in zip(plane_grads, tv_grads):
            pg += tg
        opt_grid.step(hex_field.planes + hex_field.vectors,
                      plane_grads + vec_grads)
        dec_params = decoder.params()
        opt_dec.step([dec_params[k] for k in dec_names],
                     [dec_grads[k] for k in dec_names])

        if it % config.log_every == 0 or it == config.iterations - 1:
            ph = _holdout_psnr(hex_field, decoder,
                               dataset, holdout, cfg_now)
            log.append(
                f"{it},{loss:.6g},{parts.l_rgb:.6g},{parts.l_tv_sigma:.6g},"
                f"{parts.l_tv_rgb:.6g},{ph:.4f}"
            )

    final_psnr = _holdout_psnr(hex_field, decoder, dataset, holdout, config)
    return TrainResult(hex_field, decoder, log, loss_history, final_psnr)


def render_image(hex_field, decoder, K: CameraIntrinsics, pose: PoseSE3,
                 time: float, config: TrainConfig, rng=None,
                 chunk: int = 4096) -> np.ndarray:
    """Full-frame render at the given pose and normalized time."""
    if rng is None:
        rng = np.random.default_rng(0)
    u_grid, v_grid = np.meshgrid(np.arange(K.width), np.arange(K.height))
    pix = np.stack([u_grid.reshape(-1), v_grid.reshape(-1)], axis=-1)
    out = np.empty((len(pix), 3))
    for start in range(0, len(pix), chunk):
        part = pix[start : start + chunk]
        batch = generate_rays(K, pose, part, time, config.near, config.far)
        res, _ = render_batch(hex_field, decoder, batch,
                              config.samples_per_ray, rng)
        out[start : start + len(part)] = res.rgb
    return out.reshape(K.height, K.width, 3)
