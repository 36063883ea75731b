"""Motion-mask segmentation and refinement tests on the synthetic oracle."""

import numpy as np
import pytest

from slam4d.errors import EmptyInputError, InvalidArgumentError
from slam4d.geometry import InverseDepthMap, relative_pose
from slam4d.motion_mask import (
    FlowField,
    MaskConfig,
    MotionMask,
    SemanticMask,
    combine,
    discard_if_excessive,
    ego_flow,
    motion_residual,
    refine,
    segment,
)
from slam4d.synth import box_orbit_spec, generate, pairwise_flow


@pytest.fixture(scope="module")
def scene():
    spec = box_orbit_spec()
    return spec, generate(spec, seed=0)


def _gt_inv_depth(frame):
    finite = np.isfinite(frame.depth)
    vals = np.where(finite, 1.0 / np.where(finite, frame.depth, 1.0), 1.0)
    return InverseDepthMap(vals, finite)


def test_mask_config_validation():
    MaskConfig()
    with pytest.raises(InvalidArgumentError):
        MaskConfig(threshold_init=0.99, threshold_final=0.95)
    with pytest.raises(InvalidArgumentError):
        MaskConfig(refinement_passes=0)
    with pytest.raises(InvalidArgumentError):
        MaskConfig(max_dynamic_fraction=0.0)


def test_ego_flow_matches_ground_truth_on_static_pixels(scene):
    spec, frames = scene
    f0, f1 = frames[0], frames[1]
    G_ij = relative_pose(f0.pose, f1.pose)
    ef = ego_flow(G_ij, _gt_inv_depth(f0), spec.intrinsics)
    static = ~f0.motion_mask.grid & f0.flow_to_next.valid & ef.valid
    err = np.linalg.norm(f0.flow_to_next.flow - ef.flow, axis=-1)
    assert err[static].max() < 1e-6


def test_motion_residual_nan_where_invalid(scene):
    spec, frames = scene
    f0 = frames[0]
    bad_valid = f0.flow_to_next.valid.copy()
    bad_valid[0, :] = False
    obs = FlowField(f0.flow_to_next.flow, bad_valid)
    G_ij = relative_pose(f0.pose, frames[1].pose)
    r = motion_residual(obs, ego_flow(G_ij, _gt_inv_depth(f0), spec.intrinsics))
    assert np.isnan(r[0, :]).all()
    assert np.isfinite(r[1:, :]).any()


def test_dynamic_residual_exceeds_static_tail(scene):
    spec, frames = scene
    i, j = 0, 4
    obs = pairwise_flow(spec, i, j)
    G_ij = relative_pose(frames[i].pose, frames[j].pose)
    r = motion_residual(obs, ego_flow(G_ij, _gt_inv_depth(frames[i]), spec.intrinsics))
    dyn = frames[i].motion_mask.grid
    static_vals = r[~dyn & np.isfinite(r)]
    dyn_vals = r[dyn & np.isfinite(r)]
    assert np.median(dyn_vals) > np.quantile(static_vals, 0.99)


def test_segment_iou_against_ground_truth(scene):
    spec, frames = scene
    i, j = 0, 4
    obs = pairwise_flow(spec, i, j)
    G_ij = relative_pose(frames[i].pose, frames[j].pose)
    r = motion_residual(obs, ego_flow(G_ij, _gt_inv_depth(frames[i]), spec.intrinsics))
    mask = segment(r, 0.95)
    gt = frames[i].motion_mask.grid
    inter = np.count_nonzero(mask.grid & gt)
    union = np.count_nonzero(mask.grid | gt)
    assert inter / union >= 0.7


def test_segment_floor_suppresses_tiny_residuals():
    rng = np.random.default_rng(0)
    r = rng.uniform(0.0, 0.3, size=(16, 16))  # everything below the 0.5 px floor
    assert segment(r, 0.95).coverage == 0.0


def test_segment_constant_residual_empty():
    r = np.full((8, 8), 2.0)
    assert segment(r, 0.95).coverage == 0.0  # strict > of its own quantile


def test_segment_all_invalid_raises():
    with pytest.raises(EmptyInputError):
        segment(np.full((4, 4), np.nan), 0.95)


def test_discard_rule():
    cfg = MaskConfig(max_dynamic_fraction=0.5)
    heavy = np.zeros((10, 10), dtype=bool)
    heavy[:9, :] = True  # 90% dynamic
    mask, discarded = discard_if_excessive(MotionMask(heavy), cfg)
    assert discarded and mask.coverage == 0.0
    light = np.zeros((10, 10), dtype=bool)
    light[:3, :] = True
    mask, discarded = discard_if_excessive(MotionMask(light), cfg)
    assert not discarded and mask.coverage == 0.3


def test_combine_is_pointwise_or():
    m = MotionMask(np.eye(4, dtype=bool))
    s = SemanticMask(np.flip(np.eye(4, dtype=bool), axis=1), classes=("person",))
    out = combine(m, s)
    assert np.array_equal(out.grid, m.grid | s.grid)
    assert combine(m, None) is m


def test_refine_static_scene_leaves_pose_alone(scene):
    spec, _ = scene
    static_spec = box_orbit_spec()
    static_spec = type(static_spec)(
        intrinsics=static_spec.intrinsics,
        n_frames=static_spec.n_frames,
        dt=static_spec.dt,
        background_z=static_spec.background_z,
        background_seed=static_spec.background_seed,
        movers=(),
        camera_path=static_spec.camera_path,
    )
    frames = generate(static_spec, seed=0)
    i, j = 0, 4
    obs = pairwise_flow(static_spec, i, j)
    d_i = _gt_inv_depth(frames[i])
    K = static_spec.intrinsics
    from slam4d.dyn_ba import motion_only_ba
    from slam4d.geometry import PoseSE3

    unrefined = motion_only_ba(obs, d_i, K)
    mask, pose, degenerate = refine(obs, PoseSE3.identity(), d_i, K, MaskConfig())
    assert not degenerate
    assert mask.coverage < 0.01
    assert np.linalg.norm(pose.t - unrefined.t) < 1e-6
    assert np.linalg.norm(pose.quat - unrefined.quat) < 1e-6


def test_refine_improves_pose_on_dynamic_scene(scene):
    spec, frames = scene
    i, j = 0, 5
    obs = pairwise_flow(spec, i, j)
    d_i = _gt_inv_depth(frames[i])
    K = spec.intrinsics
    gt_rel = relative_pose(frames[i].pose, frames[j].pose)
    from slam4d.dyn_ba import motion_only_ba
    from slam4d.geometry import PoseSE3

    pass0 = motion_only_ba(obs, d_i, K)
    mask, pass2, degenerate = refine(obs, PoseSE3.identity(), d_i, K, MaskConfig())
    assert not degenerate
    e0 = np.linalg.norm(pass0.t - gt_rel.t)
    e2 = np.linalg.norm(pass2.t - gt_rel.t)
    assert e2 < e0


def test_refine_degenerate_returns_initial_pose(scene):
    spec, frames = scene
    obs = pairwise_flow(spec, 0, 1)
    nearly_invalid = np.zeros_like(obs.valid)
    nearly_invalid[0, :10] = True
    starved = FlowField(obs.flow, nearly_invalid)
    from slam4d.geometry import PoseSE3

    init = PoseSE3.identity()
    mask, pose, degenerate = refine(
        starved, init, _gt_inv_depth(frames[0]), spec.intrinsics, MaskConfig()
    )
    assert degenerate
    assert pose is init
