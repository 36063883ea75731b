"""Command-line interface orchestrating the full pipeline.

Subcommands: ``synth`` (render a reference scene to a dataset directory),
``localize`` (keyframe bundle adjustment with optional motion/semantic
masking), ``train`` (fit the 4D field on posed images), ``render`` (novel
view from a checkpoint), ``eval-traj`` / ``eval-nvs`` (metrics), and
``pipeline`` (chain everything). Exit codes: 0 success, 2 validation or
usage error, 3 solver failure.
"""

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import dyn_ba, field as field_mod, formats, metrics, motion_mask, renderer, synth
from .errors import (
    DegenerateFrameError,
    DegenerateSpecError,
    EmptyInputError,
    InvalidArgumentError,
    ParseError,
    SolverStalledError,
)
from .geometry import CameraIntrinsics, PoseSE3, backproject, pixel_grid

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_SOLVER = 3

BUILTIN_SPECS = {"box-orbit": synth.box_orbit_spec}


# ---------------------------------------------------------------------------
# Flow provider over on-disk consecutive flow fields


def _bilinear_sample(flow, valid, pts):
    """Samples an (H, W, 2) flow at float pixel positions (N, 2).

    Returns (values, ok); a sample is ok when all four surrounding grid
    cells are valid and inside the image.
    """
    h, w = valid.shape
    x = pts[:, 0]
    y = pts[:, 1]
    x0 = np.floor(x).astype(int)
    y0 = np.floor(y).astype(int)
    inb = (x0 >= 0) & (y0 >= 0) & (x0 + 1 <= w - 1) & (y0 + 1 <= h - 1)
    x0c = np.clip(x0, 0, w - 2)
    y0c = np.clip(y0, 0, h - 2)
    fx = x - x0c
    fy = y - y0c
    w00 = (1 - fx) * (1 - fy)
    w10 = fx * (1 - fy)
    w01 = (1 - fx) * fy
    w11 = fx * fy
    vals = (
        w00[:, None] * flow[y0c, x0c]
        + w10[:, None] * flow[y0c, x0c + 1]
        + w01[:, None] * flow[y0c + 1, x0c]
        + w11[:, None] * flow[y0c + 1, x0c + 1]
    )
    ok = (
        inb
        & valid[y0c, x0c]
        & valid[y0c, x0c + 1]
        & valid[y0c + 1, x0c]
        & valid[y0c + 1, x0c + 1]
    )
    return vals, ok


def _invert_flow(flow_field, iterations=10):
    """Inverts a dense forward flow a->b into the flow b->a.

    Fixed-point iteration p <- q - f(p) per target pixel q; pixels whose
    iterate leaves the image or lands on invalid flow become invalid.
    """
    h, w = flow_field.valid.shape
    grid = np.stack(np.meshgrid(np.arange(w, dtype=np.float64),
                                np.arange(h, dtype=np.float64)), -1)
    q = grid.reshape(-1, 2)
    p = q.copy()
    ok = np.ones(len(q), dtype=bool)
    for _ in range(iterations):
        f_p, s_ok = _bilinear_sample(flow_field.flow, flow_field.valid, p)
        ok &= s_ok
        p = q - f_p
    f_p, s_ok = _bilinear_sample(flow_field.flow, flow_field.valid, p)
    ok &= s_ok & (np.linalg.norm(p + f_p - q, axis=-1) < 1.0)
    inv = (p - q).reshape(h, w, 2)
    return motion_mask.FlowField(np.where(ok.reshape(h, w, 1), inv, 0.0),
                                 ok.reshape(h, w))


class ChainedFlowProvider:
    """Pairwise flow from stored consecutive flow fields.

    Forward pairs are composed by warping; backward pairs chain the
    numerically inverted consecutive flows. Pixels failing a
    forward-backward cycle check are invalidated: composition through an
    intermediate frame silently picks up foreground flow wherever the
    tracked surface is occluded there, and the cycle error exposes that.
    Results are cached.
    """

    def __init__(self, flows, height, width, cycle_tol=1.0,
                 depths=None, depth_tol=0.2):
        self.flows = list(flows)
        self.height = height
        self.width = width
        self.cycle_tol = cycle_tol
        self.depths = list(depths) if depths is not None else None
        self.depth_tol = depth_tol
        self._inv = {}
        self._raw_cache = {}
        self._cache = {}

    def _inverse(self, k):
        if k not in self._inv:
            self._inv[k] = _invert_flow(self.flows[k])
        return self._inv[k]

    def _sample_depth(self, frame, pts):
        grid = self.depths[frame]
        finite = np.isfinite(grid)
        vals, ok = _bilinear_sample(
            np.where(finite, grid, 1e6)[..., None], finite, pts
        )
        return vals[:, 0], ok

    def _compose(self, steps, frame_seq):
        """Chains per-step flows; ``steps[s]`` maps frame_seq[s] to [s+1].

        When depth maps are available the surface depth is tracked along
        the chain and a sudden depth jump (the tracked point passing
        behind a foreground object) invalidates the pixel.
        """
        h, w = self.height, self.width
        grid = np.stack(np.meshgrid(np.arange(w, dtype=np.float64),
                                    np.arange(h, dtype=np.float64)), -1)
        base = grid.reshape(-1, 2)
        acc = steps[0].flow.reshape(-1, 2).copy()
        ok = steps[0].valid.reshape(-1).copy()
        track_depth = self.depths is not None
        if track_depth:
            d = self.depths[frame_seq[0]].reshape(-1)
            ok &= np.isfinite(d)
        for s, nxt in enumerate(steps[1:], start=1):
            if track_depth:
                d_here, d_ok = self._sample_depth(frame_seq[s], base + acc)
                jump = np.abs(d_here - d) / np.maximum(d, 1e-6)
                ok &= d_ok & (jump < self.depth_tol)
                d = d_here
            vals, s_ok = _bilinear_sample(nxt.flow, nxt.valid, base + acc)
            acc = acc + vals
            ok &= s_ok
        if track_depth and len(frame_seq) > 1:
            d_end, d_ok = self._sample_depth(frame_seq[-1], base + acc)
            jump = np.abs(d_end - d) / np.maximum(d, 1e-6)
            ok &= d_ok & (jump < self.depth_tol)
        return motion_mask.FlowField(
            np.where(ok[:, None], acc, 0.0).reshape(h, w, 2),
            ok.reshape(h, w),
        )

    def _raw(self, i, j):
        key = (i, j)
        if key not in self._raw_cache:
            if i == j:
                flow = motion_mask.FlowField(
                    np.zeros((self.height, self.width, 2)),
                    np.ones((self.height, self.width), dtype=bool),
                )
            elif i < j:
                steps = [self.flows[k] for k in range(i, j)]
                flow = self._compose(steps, list(range(i, j + 1)))
            else:
                steps = [self._inverse(k) for k in range(i - 1, j - 1, -1)]
                flow = self._compose(steps, list(range(i, j - 1, -1)))
            self._raw_cache[key] = flow
        return self._raw_cache[key]

    def __call__(self, i, j):
        key = (i, j)
        if key not in self._cache:
            fwd = self._raw(i, j)
            if i == j:
                self._cache[key] = fwd
            else:
                bwd = self._raw(j, i)
                h, w = self.height, self.width
                grid = np.stack(
                    np.meshgrid(np.arange(w, dtype=np.float64),
                                np.arange(h, dtype=np.float64)), -1
                ).reshape(-1, 2)
                f = fwd.flow.reshape(-1, 2)
                back, ok = _bilinear_sample(bwd.flow, bwd.valid, grid + f)
                cycle = np.linalg.norm(f + back, axis=-1)
                valid = (fwd.valid.reshape(-1) & ok
                         & (cycle < self.cycle_tol)).reshape(h, w)
                self._cache[key] = motion_mask.FlowField(
                    np.where(valid[..., None], fwd.flow, 0.0), valid
                )
        flow = self._cache[key]
        return flow, flow.valid.astype(np.float64)


# ---------------------------------------------------------------------------
# Localization with mask refinement


def _refine_masks(graph, provider, mask_cfg, depths):
    """Per-keyframe motion masks from ego-flow residual refinement.

    Segmentation needs the measured depth maps: the bundle adjustment's
    free per-pixel depth absorbs an independently moving object into the
    geometry, leaving no flow residual to segment. Uses the first
    outgoing edge of each keyframe; frames whose refined mask is
    excessive (discard rule) fall back to no mask.
    """
    from .geometry import InverseDepthMap

    from scipy.ndimage import binary_dilation

    masks = {}
    K = graph.intrinsics
    by_ordinal = {}
    for e in graph.edges:
        by_ordinal.setdefault(e.i, []).append(e)
    for ordinal, kf in enumerate(graph.keyframes):
        edges = by_ordinal.get(ordinal, [])[:2]
        if not edges:
            continue
        depth = depths[kf.frame_id]
        good = np.isfinite(depth) & (depth > 0)
        inv = InverseDepthMap(
            np.where(good, 1.0 / np.maximum(depth, 1e-6), 1.0), good
        )
        # the solved poses live in the bundle adjustment's scale gauge;
        # rescale the initial relative motion to the depth-map units
        ba_depth = 1.0 / kf.inv_depth.values[kf.inv_depth.valid]
        scale = float(np.median(depth[good]) / np.median(ba_depth))
        # union over two baselines: a pixel whose object motion happens to
        # parallel the ego flow of one pair stands out against the other
        union = None
        for e in edges:
            other = graph.keyframes[e.j]
            g_init = other.pose.inverse().compose(kf.pose)
            g_init = PoseSE3(g_init.quat, g_init.t * scale)
            flow, _ = provider(kf.frame_id, other.frame_id)
            mask, _, degenerate = motion_mask.refine(
                flow, g_init, inv, K, mask_cfg
            )
            if degenerate:
                continue
            union = mask.grid if union is None else (union | mask.grid)
        if union is None:
            continue
        mask = motion_mask.MotionMask(binary_dilation(union))
        mask, discarded = motion_mask.discard_if_excessive(mask, mask_cfg)
        if not discarded:
            masks[kf.frame_id] = mask
    return masks


def localize_dataset(ds, masks_mode, ba_cfg=None, mask_cfg=None,
                     policy=None, semantic=None):
    """Runs the localization pipeline on an in-memory dataset.

    ``masks_mode`` is 'none', 'ms' (motion segmentation) or 'ms+ss'
    (motion plus file-provided semantic masks). Returns (Trajectory,
    diagnostics).
    """
    ba_cfg = ba_cfg or dyn_ba.BAConfig()
    mask_cfg = mask_cfg or motion_mask.MaskConfig()
    policy = policy or dyn_ba.KeyframePolicy()
    K = ds.intrinsics
    provider = ChainedFlowProvider(ds.flows, K.height, K.width,
                                   depths=ds.depths)

    motion = None
    sem = None
    if masks_mode in ("ms", "ms+ss"):
        pre_cfg = dyn_ba.BAConfig(
            max_iterations=max(5, ba_cfg.max_iterations // 3),
            damping_init=ba_cfg.damping_init,
            convergence_tol=ba_cfg.convergence_tol,
            depth_prior_weight=ba_cfg.depth_prior_weight,
        )
        graph = dyn_ba.build_frame_graph(ds.timestamps, provider, K, policy)
        graph, _ = dyn_ba.optimize_graph(graph, pre_cfg)
        motion = _refine_masks(graph, provider, mask_cfg, ds.depths)
    if masks_mode == "ms+ss":
        sem = semantic or {}
    elif masks_mode not in ("ms", "none"):
        raise InvalidArgumentError(f"unknown masks mode {masks_mode!r}")

    return dyn_ba.solve(
        ds.timestamps, provider, K,
        config=ba_cfg, policy=policy,
        motion_masks=motion, semantic_masks=sem,
    )


# ---------------------------------------------------------------------------
# Field training helpers


def _scene_bounds(ds, traj):
    """Axis-aligned world bounds of the backprojected dataset geometry."""
    pts = []
    grid = pixel_grid(ds.intrinsics).reshape(-1, 2)
    for depth, pose in zip(ds.depths, traj.poses):
        z = depth.reshape(-1)
        good = np.isfinite(z) & (z > 0)
        if not good.any():
            continue
        cam = backproject(ds.intrinsics, grid[good], 1.0 / z[good])
        pts.append(pose.apply(cam))
        pts.append(pose.t[None, :])
    pts = np.concatenate(pts, axis=0)
    lo = np.percentile(pts, 0.5, axis=0)
    hi = np.percentile(pts, 99.5, axis=0)
    margin = 0.05 * (hi - lo) + 1e-3
    bounds = np.zeros((4, 2))
    bounds[:3, 0] = lo - margin
    bounds[:3, 1] = hi + margin
    bounds[3] = [0.0, 1.0]
    return bounds


def _normalized_times(timestamps):
    ts = np.asarray(timestamps, dtype=np.float64)
    span = ts[-1] - ts[0]
    if span <= 0:
        return np.zeros_like(ts)
    return (ts - ts[0]) / span


def train_field(ds, traj, field_cfg=None, train_cfg=None, seed=0):
    """Fits the 4D field to a posed dataset; returns a TrainResult."""
    field_cfg = field_cfg or field_mod.FieldConfig(
        resolutions=(48, 48, 48, 12), ranks=(2, 2, 2), feature_dim=8
    )
    train_cfg = train_cfg or renderer.TrainConfig()
    bounds = field_cfg.bounds
    if bounds is None:
        bounds = _scene_bounds(ds, traj)
    hex_field = field_mod.init_field(
        bounds, field_cfg.resolutions, field_cfg.ranks,
        field_cfg.feature_dim, seed,
    )
    decoder = field_mod.init_decoder(field_cfg.feature_dim, seed + 1)
    depths = np.concatenate([d[np.isfinite(d)] for d in ds.depths])
    near = max(1e-3, 0.8 * float(depths.min()))
    far = 1.2 * float(depths.max())
    train_cfg = dataclasses.replace(train_cfg, near=near, far=far)
    dataset = {
        "images": ds.images,
        "poses": list(traj.poses),
        "times": _normalized_times(ds.timestamps),
        "intrinsics": ds.intrinsics,
    }
    return renderer.train(dataset, hex_field, decoder, train_cfg)


def save_checkpoint(path, hex_field, decoder, K: CameraIntrinsics,
                    train_cfg: renderer.TrainConfig) -> None:
    arrays = {f"plane_{k}": p for k, p in enumerate(hex_field.planes)}
    arrays.update({f"vector_{k}": v for k, v in enumerate(hex_field.vectors)})
    arrays.update(decoder.params())
    arrays["bounds"] = hex_field.bounds
    arrays["ranks"] = np.array(hex_field.ranks)
    arrays["resolutions"] = np.array(hex_field.resolutions)
    arrays["feature_dim"] = np.array(hex_field.feature_dim)
    arrays["intrinsics"] = np.array(
        [K.fx, K.fy, K.cx, K.cy, K.width, K.height]
    )
    arrays["near_far"] = np.array([train_cfg.near, train_cfg.far])
    arrays["samples_per_ray"] = np.array(train_cfg.samples_per_ray)
    np.savez(path, **arrays)


def load_checkpoint(path):
    try:
        data = np.load(path)
    except (OSError, ValueError) as exc:
        raise ParseError(f"{path}: not a readable checkpoint: {exc}") from exc
    hex_field = field_mod.HexPlaneField(
        [data[f"plane_{k}"] for k in range(6)],
        [data[f"vector_{k}"] for k in range(3)],
        data["bounds"],
        tuple(int(r) for r in data["ranks"]),
        int(data["feature_dim"]),
        tuple(int(r) for r in data["resolutions"]),
    )
    decoder = field_mod.Decoder(
        **{k: data[k] for k in field_mod.Decoder(
            *[np.zeros(0)] * 8).params()}
    )
    fx, fy, cx, cy, w, h = data["intrinsics"]
    K = CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy,
                         width=int(w), height=int(h))
    near, far = data["near_far"]
    cfg = renderer.TrainConfig(
        near=float(near), far=float(far),
        samples_per_ray=int(data["samples_per_ray"]),
    )
    return hex_field, decoder, K, cfg


# ---------------------------------------------------------------------------
# Metric reports


def _format_report(rows, header, style):
    """Rows of (label, values...) as csv or an aligned table."""
    lines = []
    if style == "csv":
        lines.append(",".join(header))
        for row in rows:
            lines.append(",".join(str(v) for v in row))
    else:
        widths = [
            max(len(str(h)), *(len(str(r[c])) for r in rows))
            for c, h in enumerate(header)
        ]
        lines.append("  ".join(str(h).ljust(w) for h, w in zip(header, widths)))
        for row in rows:
            lines.append(
                "  ".join(str(v).ljust(w) for v, w in zip(row, widths))
            )
    return "\n".join(lines)


def _eval_nvs(render_dir, gt_dir, style):
    render_dir = Path(render_dir)
    gt_dir = Path(gt_dir)
    names = sorted(p.name for p in render_dir.glob("*.ppm"))
    if not names:
        raise EmptyInputError(f"no .ppm renders in {render_dir}")
    rows = []
    psnrs, ssims = [], []
    for name in names:
        got = formats.read_p6(render_dir / name) / 255.0
        want_path = gt_dir / name
        if not want_path.exists():
            raise ParseError(f"missing ground-truth image {want_path}")
        want = formats.read_p6(want_path) / 255.0
        p = metrics.psnr(got, want)
        s = metrics.ssim(got, want)
        psnrs.append(p)
        ssims.append(s)
        rows.append((name, f"{p:.4f}", f"{s:.6f}"))
    rows.append(("mean", f"{np.mean(psnrs):.4f}", f"{np.mean(ssims):.6f}"))
    return _format_report(rows, ("frame", "psnr_db", "ssim"), style)


# ---------------------------------------------------------------------------
# Subcommand implementations


def _corrupt_frames(frames, noise_sigma, outlier_fraction, seed):
    if noise_sigma <= 0 and outlier_fraction <= 0:
        return frames
    out = list(frames)
    for i, frame in enumerate(out[:-1]):
        out[i] = dataclasses.replace(
            frame,
            flow_to_next=synth.corrupt_flow(
                frame.flow_to_next, noise_sigma, outlier_fraction,
                seed=seed * 7919 + i,
            ),
        )
    return out


def _cmd_synth(args):
    spec = BUILTIN_SPECS[args.spec]()
    frames = synth.generate(spec, seed=args.seed)
    frames = _corrupt_frames(frames, args.noise_sigma,
                             args.outlier_fraction, args.seed)
    formats.write_dataset(frames, spec.intrinsics, args.out)
    print(f"wrote {len(frames)} frames to {args.out}")
    return EXIT_OK


def _load_run_config(path):
    if path is None:
        return formats.RunConfig()
    return formats.read_run_config(path)


def _cmd_localize(args):
    ds = formats.read_dataset(args.data)
    cfg = _load_run_config(args.config)
    sem = None
    if args.masks == "ms+ss":
        if args.semantic_dir is None:
            raise InvalidArgumentError("--masks ms+ss needs --semantic-dir")
        sem = dict(enumerate(formats.read_semantic_masks(
            args.semantic_dir, len(ds))))
    policy = dyn_ba.KeyframePolicy(tau_kf=args.tau_kf,
                                   edge_radius=args.edge_radius)
    traj, diag = localize_dataset(
        ds, args.masks, ba_cfg=cfg.ba, mask_cfg=cfg.mask,
        policy=policy, semantic=sem,
    )
    formats.write_tum_trajectory(traj, args.out)
    if args.diagnostics:
        Path(args.diagnostics).write_text(dyn_ba.format_diagnostics(diag))
    print(f"wrote trajectory ({len(traj)} poses) to {args.out}")
    return EXIT_OK


def _cmd_train(args):
    ds = formats.read_dataset(args.data)
    traj = formats.read_tum_trajectory(args.traj)
    if len(traj) != len(ds):
        raise InvalidArgumentError(
            f"trajectory has {len(traj)} poses for {len(ds)} frames"
        )
    cfg = _load_run_config(args.config)
    res = train_field(ds, traj, field_cfg=cfg.field_cfg,
                      train_cfg=cfg.train, seed=args.seed)
    save_checkpoint(args.out, res.field, res.decoder, ds.intrinsics,
                    _ckpt_cfg(cfg.train, ds))
    for line in res.log:
        print(line)
    print(f"holdout_psnr_db {res.holdout_psnr:.4f}")
    return EXIT_OK


def _ckpt_cfg(train_cfg, ds):
    depths = np.concatenate([d[np.isfinite(d)] for d in ds.depths])
    return renderer.TrainConfig(
        near=max(1e-3, 0.8 * float(depths.min())),
        far=1.2 * float(depths.max()),
        samples_per_ray=train_cfg.samples_per_ray,
    )


def _parse_pose(text):
    vals = [float(v) for v in text.split()]
    if len(vals) != 7:
        raise InvalidArgumentError(
            "--pose needs 'tx ty tz qx qy qz qw'"
        )
    return PoseSE3(np.array(vals[3:]), np.array(vals[:3]))


def _cmd_render(args):
    hex_field, decoder, K, cfg = load_checkpoint(args.ckpt)
    pose = _parse_pose(args.pose)
    img = renderer.render_image(hex_field, decoder, K, pose, args.time, cfg)
    img8 = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    formats.write_p6(img8, args.out)
    print(f"wrote render to {args.out}")
    return EXIT_OK


def _cmd_eval_traj(args):
    est = formats.read_tum_trajectory(args.est)
    ref = formats.read_tum_trajectory(args.ref)
    ate = metrics.ate_rms(est, ref, with_scale=(args.alignment == "similarity"))
    print(f"ate_rms_m {ate:.6f}")
    return EXIT_OK


def _cmd_eval_nvs(args):
    print(_eval_nvs(args.renders, args.gt, args.report))
    return EXIT_OK


def _cmd_pipeline(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_dir = out / "data"

    spec = BUILTIN_SPECS[args.spec]()
    frames = synth.generate(spec, seed=args.seed)
    frames = _corrupt_frames(frames, args.noise_sigma, 0.0, args.seed)
    formats.write_dataset(frames, spec.intrinsics, data_dir)

    ds = formats.read_dataset(data_dir)
    cfg = _load_run_config(args.config)
    policy = dyn_ba.KeyframePolicy(tau_kf=args.tau_kf,
                                   edge_radius=args.edge_radius)
    traj, _ = localize_dataset(ds, args.masks, ba_cfg=cfg.ba,
                               mask_cfg=cfg.mask, policy=policy)
    traj_path = out / "trajectory.txt"
    formats.write_tum_trajectory(traj, traj_path)
    ate = metrics.ate_rms(traj, ds.poses_gt)

    res = train_field(ds, traj, field_cfg=cfg.field_cfg,
                      train_cfg=cfg.train, seed=args.seed)
    save_checkpoint(out / "ckpt.npz", res.field, res.decoder,
                    ds.intrinsics, _ckpt_cfg(cfg.train, ds))

    render_dir = out / "renders"
    gt_dir = out / "holdout_gt"
    render_dir.mkdir(exist_ok=True)
    gt_dir.mkdir(exist_ok=True)
    hex_field, decoder, K, rcfg = load_checkpoint(out / "ckpt.npz")
    times = _normalized_times(ds.timestamps)
    holdout = [i for i in range(len(ds))
               if i % cfg.train.holdout_stride == 0]
    for i in holdout:
        img = renderer.render_image(
            hex_field, decoder, K, traj.poses[i], float(times[i]), rcfg
        )
        img8 = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
        formats.write_p6(img8, render_dir / f"{i:04d}.ppm")
        gt8 = np.clip(np.round(ds.images[i] * 255.0), 0, 255).astype(np.uint8)
        formats.write_p6(gt8, gt_dir / f"{i:04d}.ppm")

    report = [
        f"ate_rms_m {ate:.6f}",
        _eval_nvs(render_dir, gt_dir, args.report),
    ]
    text = "\n".join(report)
    (out / "report.txt").write_text(text + "\n")
    print(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing


def build_parser():
    parser = argparse.ArgumentParser(
        prog="slam4d",
        description="Motion-aware localization and 4D scene reconstruction.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a built-in scene to a dataset")
    p.add_argument("--spec", choices=sorted(BUILTIN_SPECS), default="box-orbit")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-sigma", type=float, default=0.0,
                   help="Gaussian flow noise in pixels")
    p.add_argument("--outlier-fraction", type=float, default=0.0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("localize", help="estimate the camera trajectory")
    p.add_argument("--data", required=True)
    p.add_argument("--masks", choices=("ms", "ms+ss", "none"), default="ms")
    p.add_argument("--out", required=True)
    p.add_argument("--semantic-dir")
    p.add_argument("--config")
    p.add_argument("--diagnostics")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tau-kf", type=float, default=0.8,
                   help="mean-flow keyframe threshold in pixels")
    p.add_argument("--edge-radius", type=int, default=3,
                   help="keyframe-ordinal connection radius")
    p.set_defaults(func=_cmd_localize)

    p = sub.add_parser("train", help="fit the 4D field on posed images")
    p.add_argument("--data", required=True)
    p.add_argument("--traj", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("render", help="render a novel view from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--pose", required=True,
                   help="'tx ty tz qx qy qz qw' (camera to world)")
    p.add_argument("--time", type=float, required=True,
                   help="normalized time in [0, 1]")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("eval-traj", help="absolute trajectory error")
    p.add_argument("--est", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--alignment", choices=("similarity", "rigid"),
                   default="similarity")
    p.set_defaults(func=_cmd_eval_traj)

    p = sub.add_parser("eval-nvs", help="PSNR/SSIM of renders against images")
    p.add_argument("--renders", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--report", choices=("csv", "table"), default="table")
    p.set_defaults(func=_cmd_eval_nvs)

    p = sub.add_parser("pipeline", help="synth, localize, train, evaluate")
    p.add_argument("--spec", choices=sorted(BUILTIN_SPECS), default="box-orbit")
    p.add_argument("--out", required=True)
    p.add_argument("--masks", choices=("ms", "ms+ss", "none"), default="ms")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--tau-kf", type=float, default=0.8)
    p.add_argument("--edge-radius", type=int, default=3)
    p.add_argument("--report", choices=("csv", "table"), default="table")
    p.set_defaults(func=_cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (InvalidArgumentError, ParseError, EmptyInputError,
            DegenerateSpecError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverStalledError, DegenerateFrameError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
