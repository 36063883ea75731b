"""Metric tests: alignment invariances and scalar-reference image metrics."""

import numpy as np
import pytest

from slam4d.dyn_ba import Trajectory
from slam4d.errors import EmptyInputError, InvalidArgumentError
from slam4d.geometry import PoseSE3, Twist, retract
from slam4d.metrics import (
    SSIM_C1,
    SSIM_C2,
    SSIM_SIGMA,
    SSIM_WINDOW,
    align,
    associate,
    ate_rms,
    psnr,
    ssim,
)


def _random_traj(rng, n=20):
    poses = [
        retract(PoseSE3.identity(), Twist.from_vector(rng.normal(0, 0.3, 6)))
        for _ in range(n)
    ]
    return Trajectory(np.arange(n, dtype=float) * 0.1, poses)


def _transform_traj(traj, R, t, s=1.0):
    poses = [
        PoseSE3.from_matrix(R @ p.rotation_matrix(), s * R @ p.t + t)
        for p in traj.poses
    ]
    return Trajectory(traj.timestamps, poses)


def test_ate_zero_on_identical():
    rng = np.random.default_rng(0)
    traj = _random_traj(rng)
    assert ate_rms(traj, traj) < 1e-12
    assert ate_rms(traj, traj, with_scale=False) < 1e-12


def test_ate_invariant_under_rigid_and_similarity():
    rng = np.random.default_rng(1)
    traj = _random_traj(rng)
    aa = rng.normal(size=3)
    from slam4d.geometry import se3_exp

    R = se3_exp(Twist(np.zeros(3), aa)).rotation_matrix()
    t = rng.normal(size=3)
    rigid = _transform_traj(traj, R, t)
    assert ate_rms(rigid, traj, with_scale=False) < 1e-9
    sim = _transform_traj(traj, R, t, s=1.7)
    assert ate_rms(sim, traj, with_scale=True) < 1e-9
    # rigid alignment cannot absorb the scale
    assert ate_rms(sim, traj, with_scale=False) > 0.01


def test_align_recovers_known_similarity():
    rng = np.random.default_rng(2)
    src = rng.normal(size=(30, 3))
    from slam4d.geometry import se3_exp

    R = se3_exp(Twist(np.zeros(3), rng.normal(size=3))).rotation_matrix()
    t, s = rng.normal(size=3), 2.3
    dst = s * src @ R.T + t
    res = align(src, dst, with_scale=True)
    assert abs(res.scale - s) < 1e-9
    assert np.abs(res.rotation - R).max() < 1e-9
    assert np.abs(res.translation - t).max() < 1e-9
    assert np.abs(res.apply(src) - dst).max() < 1e-9


def test_associate_window():
    ie, ir = associate([0.0, 0.1, 0.2], [0.005, 0.15, 0.199])
    assert list(ie) == [0, 2]
    assert list(ir) == [0, 2]
    traj_a = Trajectory([0.0, 1.0, 2.0], [PoseSE3.identity()] * 3)
    traj_b = Trajectory([10.0, 11.0, 12.0], [PoseSE3.identity()] * 3)
    with pytest.raises(EmptyInputError):
        ate_rms(traj_a, traj_b)


def test_psnr_basics():
    img = np.full((8, 8, 3), 0.5)
    assert psnr(img, img) == 99.0
    ref = img + 0.1
    # scalar reference: -10 log10(mse)
    assert abs(psnr(img, ref) - (-10 * np.log10(0.01))) < 1e-9
    with pytest.raises(InvalidArgumentError):
        psnr(img, np.zeros((4, 4, 3)))


def test_psnr_matches_scalar_reference_random():
    rng = np.random.default_rng(3)
    for _ in range(10):
        a = rng.uniform(0, 1, (12, 10, 3))
        b = rng.uniform(0, 1, (12, 10, 3))
        mse = np.mean((a - b) ** 2)
        assert abs(psnr(a, b) - (-10 * np.log10(mse))) < 1e-9


def _naive_ssim(x, y):
    """Sliding-window scalar SSIM, fully valid windows only."""
    half = SSIM_WINDOW // 2
    ax = np.arange(SSIM_WINDOW) - half
    k1 = np.exp(-(ax**2) / (2 * SSIM_SIGMA**2))
    k1 /= k1.sum()
    k2 = np.outer(k1, k1)
    h, w = x.shape
    vals = []
    for i in range(half, h - half):
        for j in range(half, w - half):
            px = x[i - half : i + half + 1, j - half : j + half + 1]
            py = y[i - half : i + half + 1, j - half : j + half + 1]
            mx, my = (k2 * px).sum(), (k2 * py).sum()
            vx = (k2 * px * px).sum() - mx * mx
            vy = (k2 * py * py).sum() - my * my
            vxy = (k2 * px * py).sum() - mx * my
            num = (2 * mx * my + SSIM_C1) * (2 * vxy + SSIM_C2)
            den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2)
            vals.append(num / den)
    return float(np.mean(vals))


def test_ssim_identical_is_one():
    rng = np.random.default_rng(4)
    img = rng.uniform(0, 1, (16, 20, 3))
    assert abs(ssim(img, img) - 1.0) < 1e-12


def test_ssim_matches_naive_reference():
    rng = np.random.default_rng(5)
    for _ in range(3):
        a = rng.uniform(0, 1, (18, 14))
        b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
        assert abs(ssim(a, b) - _naive_ssim(a, b)) < 1e-6


def test_ssim_multichannel_is_channel_mean():
    rng = np.random.default_rng(6)
    a = rng.uniform(0, 1, (16, 16, 3))
    b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
    per = [ssim(a[:, :, c], b[:, :, c]) for c in range(3)]
    assert abs(ssim(a, b) - np.mean(per)) < 1e-12
    with pytest.raises(InvalidArgumentError):
        ssim(np.zeros((5, 5)), np.zeros((5, 5)))
