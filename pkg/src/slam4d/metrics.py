"""Trajectory and image-quality metrics.

Absolute trajectory error after closed-form rigid or similarity alignment
(Umeyama), plus PSNR and SSIM for rendered-image evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError, InvalidArgumentError

ASSOCIATION_WINDOW_S = 0.02
PSNR_CAP_DB = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass(frozen=True)
class AlignmentResult:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * points @ self.rotation.T + self.translation


def associate(ts_est: np.ndarray, ts_ref: np.ndarray,
              window: float = ASSOCIATION_WINDOW_S):
    """Nearest-neighbor timestamp matching within a symmetric window.

    Returns (idx_est, idx_ref) index arrays; each reference timestamp is
    used at most once.
    """
    ts_est = np.asarray(ts_est, dtype=np.float64)
    ts_ref = np.asarray(ts_ref, dtype=np.float64)
    used = np.zeros(len(ts_ref), dtype=bool)
    ie, ir = [], []
    for k, t in enumerate(ts_est):
        diffs = np.abs(ts_ref - t)
        diffs[used] = np.inf
        j = int(np.argmin(diffs))
        if diffs[j] <= window:
            used[j] = True
            ie.append(k)
            ir.append(j)
    return np.asarray(ie, dtype=np.int64), np.asarray(ir, dtype=np.int64)


def align(src: np.ndarray, dst: np.ndarray,
          with_scale: bool = True) -> AlignmentResult:
    """Least-squares rigid or similarity alignment mapping src onto dst."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise InvalidArgumentError("need matching (N, 3) point sets")
    if len(src) < 3:
        raise InvalidArgumentError("need at least 3 correspondences")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    cov = xd.T @ xs / len(src)
    U, S, Vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(U @ Vt))
    D = np.diag([1.0, 1.0, d])
    R = U @ D @ Vt
    if with_scale:
        var = float((xs**2).sum()) / len(src)
        if var <= 0:
            raise InvalidArgumentError("degenerate (coincident) source points")
        s = float(np.trace(np.diag(S) @ D)) / var
    else:
        s = 1.0
    t = mu_d - s * R @ mu_s
    return AlignmentResult(s, R, t)


def ate_rms(est, ref, with_scale: bool = True,
            window: float = ASSOCIATION_WINDOW_S) -> float:
    """Root-mean-square translation error after alignment.

    ``est`` and ``ref`` are Trajectory objects; poses are associated by
    nearest timestamp within ``window`` seconds, then the estimated
    translations are aligned onto the reference (similarity by default,
    rigid with ``with_scale=False``).
    """
    ie, ir = associate(est.timestamps, ref.timestamps, window)
    if len(ie) == 0:
        raise EmptyInputError("no timestamp associations within window")
    p_est = est.translations()[ie]
    p_ref = ref.translations()[ir]
    if len(ie) < 3:
        diff = p_est - p_ref
        return float(np.sqrt(np.mean(np.sum(diff**2, axis=1))))
    aligned = align(p_est, p_ref, with_scale).apply(p_est)
    diff = aligned - p_ref
    return float(np.sqrt(np.mean(np.sum(diff**2, axis=1))))


def psnr(image: np.ndarray, reference: np.ndarray,
         cap_db: float = PSNR_CAP_DB) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if image.shape != reference.shape:
        raise InvalidArgumentError("image shapes must match")
    mse = float(np.mean((image - reference) ** 2))
    if mse <= 0:
        return cap_db
    return min(-10.0 * np.log10(mse), cap_db)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def _filter2_valid(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Separable 2-D correlation keeping only fully covered windows."""
    from scipy.ndimage import correlate1d

    pad = len(k) // 2
    out = correlate1d(img, k, axis=0, mode="constant")
    out = correlate1d(out, k, axis=1, mode="constant")
    return out[pad:-pad, pad:-pad]


def ssim(image: np.ndarray, reference: np.ndarray) -> float:
    """Mean structural similarity with an 11x11 Gaussian window.

    Only fully valid windows contribute; multichannel images are averaged
    per channel. Inputs are expected in [0, 1].
    """
    image = np.asarray(image, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if image.shape != reference.shape:
        raise InvalidArgumentError("image shapes must match")
    if image.ndim == 2:
        image = image[:, :, None]
        reference = reference[:, :, None]
    h, w = image.shape[:2]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise InvalidArgumentError("image smaller than the SSIM window")
    k = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    vals = []
    for c in range(image.shape[2]):
        x, y = image[:, :, c], reference[:, :, c]
        mu_x = _filter2_valid(x, k)
        mu_y = _filter2_valid(y, k)
        sxx = _filter2_valid(x * x, k) - mu_x**2
        syy = _filter2_valid(y * y, k) - mu_y**2
        sxy = _filter2_valid(x * y, k) - mu_x * mu_y
        num = (2 * mu_x * mu_y + SSIM_C1) * (2 * sxy + SSIM_C2)
        den = (mu_x**2 + mu_y**2 + SSIM_C1) * (sxx + syy + SSIM_C2)
        vals.append(float(np.mean(num / den)))
    return float(np.mean(vals))
