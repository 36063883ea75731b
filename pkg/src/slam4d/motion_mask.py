"""Motion masks from ego-motion-compensated flow residuals.

The observed flow is compared against the flow a static scene would
produce under the estimated camera motion; pixels whose residual exceeds a
per-frame quantile threshold (and an absolute pixel floor) are marked
dynamic. A two-pass refinement alternates pose re-estimation on the static
pixels with re-segmentation at a raised threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFrameError, EmptyInputError, InvalidArgumentError
from .geometry import CameraIntrinsics, InverseDepthMap, PoseSE3, pixel_grid, reproject

RESIDUAL_FLOOR_PX = 0.5


@dataclass(frozen=True)
class FlowField:
    """Dense optical flow (H, W, 2) with a per-pixel validity grid."""

    flow: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        flow = np.asarray(self.flow, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if flow.ndim != 3 or flow.shape[2] != 2 or valid.shape != flow.shape[:2]:
            raise InvalidArgumentError("flow must be (H, W, 2) with (H, W) validity")
        object.__setattr__(self, "flow", flow)
        object.__setattr__(self, "valid", valid)


@dataclass(frozen=True)
class MotionMask:
    """Boolean dynamic-pixel grid; ``coverage`` is the fraction of true pixels."""

    grid: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=bool)
        if grid.ndim != 2:
            raise InvalidArgumentError("mask grid must be H x W")
        object.__setattr__(self, "grid", grid)

    @property
    def coverage(self) -> float:
        return float(self.grid.mean())

    @staticmethod
    def empty(height: int, width: int) -> "MotionMask":
        return MotionMask(np.zeros((height, width), dtype=bool))


@dataclass(frozen=True)
class SemanticMask:
    """Class-based dynamic-content mask ingested from files."""

    grid: np.ndarray
    classes: tuple = ()

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=bool)
        if grid.ndim != 2:
            raise InvalidArgumentError("mask grid must be H x W")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "classes", tuple(self.classes))


@dataclass
class MaskConfig:
    threshold_init: float = 0.95
    threshold_final: float = 0.98
    refinement_passes: int = 2
    max_dynamic_fraction: float = 0.5

    def __post_init__(self):
        if not (0 < self.threshold_init <= self.threshold_final < 1):
            raise InvalidArgumentError(
                "need 0 < threshold_init <= threshold_final < 1"
            )
        if self.refinement_passes < 1:
            raise InvalidArgumentError("refinement_passes must be >= 1")
        if not (0 < self.max_dynamic_fraction <= 1):
            raise InvalidArgumentError("max_dynamic_fraction must be in (0, 1]")


def ego_flow(G_ij: PoseSE3, d_i: InverseDepthMap, K: CameraIntrinsics) -> FlowField:
    """Flow induced purely by camera motion over the given static depth."""
    grid = pixel_grid(K)
    pred, valid = reproject(G_ij, K, grid, d_i)
    return FlowField(pred - grid, valid)


def motion_residual(observed: FlowField, ego: FlowField) -> np.ndarray:
    """Per-pixel Euclidean flow discrepancy; NaN where either flow is invalid."""
    if observed.flow.shape != ego.flow.shape:
        raise InvalidArgumentError("flow fields must have matching shapes")
    r = np.linalg.norm(observed.flow - ego.flow, axis=-1)
    return np.where(observed.valid & ego.valid, r, np.nan)


def segment(residual: np.ndarray, threshold: float) -> MotionMask:
    """Quantile thresholding of the residual grid.

    A pixel is dynamic when its residual strictly exceeds both the
    ``threshold`` quantile of the static-consistent residuals and an
    absolute floor of ``RESIDUAL_FLOOR_PX`` pixels. The static-consistent
    set is found by fixpoint iteration: start from all valid pixels,
    re-take the quantile over the currently unmasked ones, and repeat. The
    cut is monotonically non-increasing so the iteration converges; the
    floor keeps it from peeling into the noise. Invalid (NaN) pixels are
    never dynamic.
    """
    if not (0 < threshold < 1):
        raise InvalidArgumentError("threshold must be in (0, 1)")
    residual = np.asarray(residual, dtype=np.float64)
    finite = np.isfinite(residual)
    if not finite.any():
        raise EmptyInputError("no valid residuals to segment")
    mask = np.zeros_like(finite)
    for _ in range(100):
        static = finite & ~mask
        if not static.any():
            break
        cut = max(np.quantile(residual[static], threshold), RESIDUAL_FLOOR_PX)
        new_mask = finite & (residual > cut)
        if np.array_equal(new_mask, mask):
            break
        mask = new_mask
    return MotionMask(mask)


def discard_if_excessive(mask: MotionMask, config: MaskConfig) -> tuple:
    """Drops masks that would starve the bundle adjustment of pixels.

    Returns (mask, discarded): the all-false mask with ``discarded=True``
    when coverage strictly exceeds ``max_dynamic_fraction``, otherwise the
    input unchanged.
    """
    if mask.coverage > config.max_dynamic_fraction:
        return MotionMask(np.zeros_like(mask.grid)), True
    return mask, False


def combine(motion: MotionMask, semantic: SemanticMask | None) -> MotionMask:
    """Pointwise OR of motion and (optional) semantic masks."""
    if semantic is None:
        return motion
    if semantic.grid.shape != motion.grid.shape:
        raise InvalidArgumentError("mask shapes must match")
    return MotionMask(motion.grid | semantic.grid)


def _pass_threshold(config: MaskConfig, index: int) -> float:
    if config.refinement_passes == 1:
        return config.threshold_init
    frac = index / (config.refinement_passes - 1)
    return config.threshold_init + frac * (
        config.threshold_final - config.threshold_init
    )


def refine(
    flow_ij: FlowField,
    G_init: PoseSE3,
    d_i: InverseDepthMap,
    K: CameraIntrinsics,
    config: MaskConfig,
) -> tuple:
    """Alternating pose estimation and re-segmentation.

    Each pass solves a pose-only alignment that excludes the current mask,
    recomputes the ego flow and residual, and re-segments with the
    threshold stepped from ``threshold_init`` to ``threshold_final``.
    Returns (mask, pose, degenerate): if the inner solve degenerates the
    initial pose and the latest mask are returned with ``degenerate=True``.
    """
    from .dyn_ba import motion_only_ba

    h, w = d_i.values.shape
    mask = MotionMask.empty(h, w)
    pose = G_init
    for p in range(config.refinement_passes):
        try:
            pose = motion_only_ba(flow_ij, d_i, K, mask=mask.grid, init=pose)
        except DegenerateFrameError:
            return mask, G_init, True
        resid = motion_residual(flow_ij, ego_flow(pose, d_i, K))
        mask = segment(resid, _pass_threshold(config, p))
    return mask, pose, False
