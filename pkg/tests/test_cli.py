"""CLI and flow-provider tests.

Dataset-producing commands are slow, so a session-scoped fixture renders
the reference scene once and the tests share it.
"""

import numpy as np
import pytest

from slam4d import cli, formats, synth
from slam4d.cli import ChainedFlowProvider, main
from slam4d.geometry import PoseSE3


@pytest.fixture(scope="session")
def box_orbit_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "ds"
    assert main(["synth", "--spec", "box-orbit", "--out", str(out),
                 "--seed", "7"]) == 0
    return out


@pytest.fixture(scope="session")
def localized(box_orbit_dataset, tmp_path_factory):
    traj = tmp_path_factory.mktemp("loc") / "traj.txt"
    assert main(["localize", "--data", str(box_orbit_dataset),
                 "--masks", "ms", "--out", str(traj)]) == 0
    return traj


def test_unknown_subcommand_exits_2(capsys):
    assert main(["bogus"]) == 2
    capsys.readouterr()


def test_unknown_flag_exits_2(capsys):
    assert main(["eval-traj", "--est", "a", "--ref", "b", "--bogus"]) == 2
    capsys.readouterr()


def test_missing_file_exits_2(tmp_path, capsys):
    assert main(["eval-traj", "--est", str(tmp_path / "a.txt"),
                 "--ref", str(tmp_path / "b.txt")]) == 2
    capsys.readouterr()


def test_synth_writes_dataset_layout(box_orbit_dataset):
    root = box_orbit_dataset
    assert (root / "poses_gt.txt").exists()
    assert (root / "intrinsics.txt").exists()
    assert (root / "times.txt").exists()
    assert (root / "rgb" / "0000.ppm").exists()
    assert (root / "depth" / "0000.pfm").exists()
    assert (root / "flow" / "0000.pfm").exists()
    assert (root / "mask" / "0000.pbm").exists()
    ds = formats.read_dataset(root)
    assert len(ds) == 20


def test_eval_traj_identical_prints_zero(localized, capsys):
    assert main(["eval-traj", "--est", str(localized),
                 "--ref", str(localized)]) == 0
    out = capsys.readouterr().out
    assert "ate_rms_m 0.000000" in out


def test_localize_masks_beat_none(box_orbit_dataset, localized,
                                  tmp_path, capsys):
    traj_none = tmp_path / "none.txt"
    assert main(["localize", "--data", str(box_orbit_dataset),
                 "--masks", "none", "--out", str(traj_none)]) == 0
    ref = str(box_orbit_dataset / "poses_gt.txt")

    assert main(["eval-traj", "--est", str(localized), "--ref", ref]) == 0
    ate_ms = float(capsys.readouterr().out.split()[-1])
    assert main(["eval-traj", "--est", str(traj_none), "--ref", ref]) == 0
    ate_none = float(capsys.readouterr().out.split()[-1])
    assert ate_ms < ate_none


def test_ms_ss_with_empty_semantics_matches_ms(box_orbit_dataset, localized,
                                               tmp_path, capsys):
    sem_dir = tmp_path / "sem"
    sem_dir.mkdir()
    ds = formats.read_dataset(box_orbit_dataset)
    h, w = ds.intrinsics.height, ds.intrinsics.width
    for i in range(len(ds)):
        formats.write_p4(np.zeros((h, w), dtype=bool),
                         sem_dir / f"{i:04d}.pbm")
    traj_ss = tmp_path / "ss.txt"
    assert main(["localize", "--data", str(box_orbit_dataset),
                 "--masks", "ms+ss", "--semantic-dir", str(sem_dir),
                 "--out", str(traj_ss)]) == 0
    capsys.readouterr()
    assert traj_ss.read_text() == localized.read_text()


def test_ms_ss_without_semantic_dir_exits_2(box_orbit_dataset, tmp_path,
                                            capsys):
    assert main(["localize", "--data", str(box_orbit_dataset),
                 "--masks", "ms+ss", "--out", str(tmp_path / "t.txt")]) == 2
    capsys.readouterr()


def test_localize_deterministic(box_orbit_dataset, localized, tmp_path,
                                capsys):
    again = tmp_path / "again.txt"
    assert main(["localize", "--data", str(box_orbit_dataset),
                 "--masks", "ms", "--out", str(again)]) == 0
    capsys.readouterr()
    assert again.read_text() == localized.read_text()


def test_train_render_eval_nvs(box_orbit_dataset, localized, tmp_path,
                               capsys):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(
        "[train]\niterations = 120\nbatch_size = 256\n"
        "samples_per_ray = 16\nlog_every = 60\n"
        "[field]\nresolutions = [24, 24, 24, 6]\nranks = [2, 2, 2]\n"
        "feature_dim = 8\n"
    )
    ckpt = tmp_path / "ckpt.npz"
    assert main(["train", "--data", str(box_orbit_dataset),
                 "--traj", str(localized), "--config", str(cfg),
                 "--out", str(ckpt)]) == 0
    out = capsys.readouterr().out
    log_lines = [l for l in out.splitlines() if l and l[0].isdigit()]
    assert log_lines and all(len(l.split(",")) == 6 for l in log_lines)

    render_dir = tmp_path / "renders"
    gt_dir = tmp_path / "gt"
    render_dir.mkdir()
    gt_dir.mkdir()
    pose_line = formats.read_tum_trajectory(localized)
    p0 = pose_line.poses[0]
    pose_arg = " ".join(str(v) for v in [*p0.t, *p0.quat])
    assert main(["render", "--ckpt", str(ckpt), "--pose", pose_arg,
                 "--time", "0.0", "--out",
                 str(render_dir / "0000.ppm")]) == 0
    capsys.readouterr()
    img = formats.read_p6(render_dir / "0000.ppm")
    assert img.shape == (48, 64, 3)

    ds = formats.read_dataset(box_orbit_dataset)
    gt8 = np.clip(np.round(ds.images[0] * 255), 0, 255).astype(np.uint8)
    formats.write_p6(gt8, gt_dir / "0000.ppm")
    assert main(["eval-nvs", "--renders", str(render_dir),
                 "--gt", str(gt_dir), "--report", "csv"]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "frame,psnr_db,ssim"
    assert out.splitlines()[-1].startswith("mean,")


def test_pipeline_emits_report(tmp_path, capsys):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(
        "[train]\niterations = 60\nbatch_size = 128\n"
        "samples_per_ray = 12\nlog_every = 60\n"
        "[field]\nresolutions = [24, 24, 24, 6]\nranks = [2, 2, 2]\n"
        "feature_dim = 8\n"
    )
    out_dir = tmp_path / "pipe"
    assert main(["pipeline", "--out", str(out_dir), "--config", str(cfg),
                 "--seed", "3"]) == 0
    out = capsys.readouterr().out
    assert "ate_rms_m" in out
    assert "psnr_db" in out
    assert (out_dir / "report.txt").exists()
    assert (out_dir / "trajectory.txt").exists()
    assert (out_dir / "ckpt.npz").exists()


def _provider_for(spec, frames):
    flows = [f.flow_to_next for f in frames[:-1]]
    depths = [f.depth for f in frames]
    K = spec.intrinsics
    return ChainedFlowProvider(flows, K.height, K.width, depths=depths)


def test_chained_provider_matches_exact_pairwise_flow():
    spec = synth.box_orbit_spec()
    frames = synth.generate(spec, seed=0)
    prov = _provider_for(spec, frames)
    for i, j in [(0, 1), (0, 3), (3, 0), (2, 5)]:
        exact = synth.pairwise_flow(spec, i, j)
        got, conf = prov(i, j)
        static = ~frames[i].motion_mask.grid & exact.valid & got.valid
        err = np.linalg.norm(got.flow - exact.flow, axis=-1)
        assert np.quantile(err[static], 0.95) < 0.2
        assert got.valid.mean() > 0.5
        assert np.array_equal(conf, got.valid.astype(float))


def test_chained_provider_identity_pair():
    spec = synth.box_orbit_spec()
    frames = synth.generate(spec, seed=0)
    prov = _provider_for(spec, frames)
    flow, conf = prov(2, 2)
    assert np.abs(flow.flow).max() == 0.0
    assert flow.valid.all()


def test_invert_flow_recovers_constant_shift():
    shift = np.zeros((20, 30, 2))
    shift[..., 0] = 1.5
    fwd = cli.motion_mask.FlowField(shift, np.ones((20, 30), dtype=bool))
    inv = cli._invert_flow(fwd)
    assert np.abs(inv.flow[inv.valid] + np.array([1.5, 0.0])).max() < 1e-6
    assert inv.valid.mean() > 0.8


def test_scene_bounds_cover_geometry(box_orbit_dataset):
    ds = formats.read_dataset(box_orbit_dataset)
    bounds = cli._scene_bounds(ds, ds.poses_gt)
    assert bounds.shape == (4, 2)
    assert np.all(bounds[:, 1] > bounds[:, 0])
    # mover sits near z = 2, the background plane near z = 3
    assert bounds[2, 0] < 2.0 and bounds[2, 1] > 3.0


def test_parse_pose_round_trip():
    p = PoseSE3(np.array([0.0, 0.0, 0.0, 1.0]), np.array([1.0, 2.0, 3.0]))
    text = " ".join(str(v) for v in [*p.t, *p.quat])
    q = cli._parse_pose(text)
    assert np.abs(q.t - p.t).max() == 0.0
    with pytest.raises(cli.InvalidArgumentError):
        cli._parse_pose("1 2 3")
