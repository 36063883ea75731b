"""Factorized 4D space-time feature volume with tiny decoders.

The volume is never materialized: six 2D feature planes in rank-decomposed
spatial/spatio-temporal pairs (XY-ZT, XZ-YT, YZ-XT) are bilinearly sampled
pointwise, the pair samples multiplied elementwise, scaled by per-rank
vectors along the feature axis and summed. The first half of the feature
channels feeds the density head, the second half (with an encoded view
direction) the color head.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import accel
from .errors import InvalidArgumentError

HIDDEN_WIDTH = 64
VIEW_FREQS = 4
VIEW_ENC_DIM = 3 + 3 * 2 * VIEW_FREQS

CHECKPOINT_MAGIC = b"S4DF"
CHECKPOINT_VERSION = 1

# (spatial plane axes, spatio-temporal plane axes) per pair; axis order xyzt
PLANE_AXES = [(0, 1), (2, 3), (0, 2), (1, 3), (1, 2), (0, 3)]
PLANE_NAMES = ["xy", "zt", "xz", "yt", "yz", "xt"]


@dataclass
class FieldConfig:
    """Construction parameters for :class:`HexPlaneField`."""

    resolutions: tuple = (64, 64, 64, 32)  # grid nodes along x, y, z, t
    ranks: tuple = (4, 4, 4)
    feature_dim: int = 16
    bounds: np.ndarray | None = None  # (4, 2) min/max per axis


@dataclass
class HexPlaneField:
    """Six factor planes, rank vectors and axis-aligned space-time bounds.

    ``planes[k]`` has shape (A, B, R_i * F) with channel index r * F + f;
    ``vectors[i]`` has shape (R_i, F). ``bounds`` is (4, 2) rows x, y, z, t.
    """

    planes: list
    vectors: list
    bounds: np.ndarray
    ranks: tuple
    feature_dim: int
    resolutions: tuple

    def copy(self) -> "HexPlaneField":
        return HexPlaneField(
            [p.copy() for p in self.planes],
            [v.copy() for v in self.vectors],
            self.bounds.copy(),
            tuple(self.ranks),
            self.feature_dim,
            tuple(self.resolutions),
        )

    def normalize(self, coords: np.ndarray) -> tuple:
        """World (N, 4) coords -> normalized [0, 1] coords + clamp flags."""
        coords = np.asarray(coords, dtype=np.float64)
        if not np.all(np.isfinite(coords)):
            raise InvalidArgumentError("query coordinates must be finite")
        lo = self.bounds[:, 0]
        span = self.bounds[:, 1] - self.bounds[:, 0]
        u = (coords - lo) / span
        clamped = np.any((u < 0) | (u > 1), axis=-1)
        return np.clip(u, 0.0, 1.0), clamped


@dataclass
class Decoder:
    """Two-layer density and color heads (softplus / sigmoid outputs)."""

    w0_sigma: np.ndarray
    b0_sigma: np.ndarray
    w1_sigma: np.ndarray
    b1_sigma: np.ndarray
    w0_color: np.ndarray
    b0_color: np.ndarray
    w1_color: np.ndarray
    b1_color: np.ndarray

    def params(self) -> dict:
        return {
            "w0_sigma": self.w0_sigma,
            "b0_sigma": self.b0_sigma,
            "w1_sigma": self.w1_sigma,
            "b1_sigma": self.b1_sigma,
            "w0_color": self.w0_color,
            "b0_color": self.b0_color,
            "w1_color": self.w1_color,
            "b1_color": self.b1_color,
        }

    def copy(self) -> "Decoder":
        return Decoder(**{k: v.copy() for k, v in self.params().items()})


@dataclass
class FieldGradients:
    """Gradient arrays mirroring field planes, vectors and decoder params."""

    plane_grads: list
    vector_grads: list
    decoder_grads: dict


def _plane_shapes(resolutions, ranks, feature_dim):
    shapes = []
    for k, (a, b) in enumerate(PLANE_AXES):
        r = ranks[k // 2]
        shapes.append((resolutions[a], resolutions[b], r * feature_dim))
    return shapes


def init_field(bounds, resolutions, ranks, feature_dim, seed) -> HexPlaneField:
    """Seeded field: plane values uniform in [-0.1, 0.1], rank vectors at 1."""
    bounds = np.asarray(bounds, dtype=np.float64).reshape(4, 2)
    if np.any(bounds[:, 1] <= bounds[:, 0]):
        raise InvalidArgumentError("bounds must be non-degenerate")
    resolutions = tuple(int(r) for r in resolutions)
    if len(resolutions) != 4 or any(r < 2 for r in resolutions):
        raise InvalidArgumentError("need 4 axis resolutions, each >= 2")
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != 3 or any(r < 1 for r in ranks):
        raise InvalidArgumentError("need 3 positive ranks")
    if feature_dim < 2 or feature_dim % 2 != 0:
        raise InvalidArgumentError("feature_dim must be even and >= 2")
    rng = np.random.default_rng(seed)
    planes = [
        rng.uniform(-0.1, 0.1, size=s)
        for s in _plane_shapes(resolutions, ranks, feature_dim)
    ]
    vectors = [np.ones((r, feature_dim)) for r in ranks]
    return HexPlaneField(planes, vectors, bounds, ranks, feature_dim, resolutions)


def init_decoder(feature_dim, seed) -> Decoder:
    """Seeded decoder with scaled-uniform hidden weights, zero output layer."""
    half = feature_dim // 2
    rng = np.random.default_rng(seed)

    def layer(n_in, n_out):
        lim = np.sqrt(6.0 / (n_in + n_out))
        return rng.uniform(-lim, lim, size=(n_in, n_out))

    return Decoder(
        w0_sigma=layer(half, HIDDEN_WIDTH),
        b0_sigma=np.zeros(HIDDEN_WIDTH),
        w1_sigma=np.zeros((HIDDEN_WIDTH, 1)),
        b1_sigma=np.zeros(1),
        w0_color=layer(half + VIEW_ENC_DIM, HIDDEN_WIDTH),
        b0_color=np.zeros(HIDDEN_WIDTH),
        w1_color=np.zeros((HIDDEN_WIDTH, 3)),
        b1_color=np.zeros(3),
    )


def query_feature(field: HexPlaneField, coords: np.ndarray) -> np.ndarray:
    """Pointwise feature vectors for world-space (N, 4) coords.

    Out-of-bounds coords are clamped to the boundary (see
    ``HexPlaneField.normalize`` for the clamp flags).
    """
    coords = np.atleast_2d(np.asarray(coords, dtype=np.float64))
    u, _ = field.normalize(coords)
    return accel.hexplane_query(field.planes, field.vectors, u, field.feature_dim)


def encode_view_dirs(dirs: np.ndarray) -> np.ndarray:
    """Raw direction plus 4-frequency sinusoidal encoding -> (N, 27)."""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    parts = [dirs]
    for k in range(VIEW_FREQS):
        parts.append(np.sin((2.0**k) * np.pi * dirs))
        parts.append(np.cos((2.0**k) * np.pi * dirs))
    return np.concatenate(parts, axis=-1)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def decode_forward(features, view_dirs, decoder):
    """Forward pass keeping the intermediates needed for backprop.

    Returns (sigma (N,), rgb (N, 3), cache).
    """
    features = np.atleast_2d(features)
    half = features.shape[1] // 2
    f_sigma = features[:, :half]
    f_color = features[:, half:]
    enc = encode_view_dirs(view_dirs)
    if enc.shape[0] == 1 and features.shape[0] > 1:
        enc = np.broadcast_to(enc, (features.shape[0], enc.shape[1]))
    x_color = np.concatenate([f_color, enc], axis=-1)

    h_s_pre = f_sigma @ decoder.w0_sigma + decoder.b0_sigma
    h_s = np.maximum(h_s_pre, 0.0)
    raw_sigma = (h_s @ decoder.w1_sigma + decoder.b1_sigma)[:, 0]
    sigma = _softplus(raw_sigma)

    h_c_pre = x_color @ decoder.w0_color + decoder.b0_color
    h_c = np.maximum(h_c_pre, 0.0)
    raw_rgb = h_c @ decoder.w1_color + decoder.b1_color
    rgb = _sigmoid(raw_rgb)

    cache = {
        "f_sigma": f_sigma,
        "x_color": x_color,
        "h_s": h_s,
        "h_s_pre": h_s_pre,
        "h_c": h_c,
        "h_c_pre": h_c_pre,
        "raw_sigma": raw_sigma,
        "sigma": sigma,
        "rgb": rgb,
        "half": half,
    }
    return sigma, rgb, cache


def decode(features, view_dirs, decoder):
    """Density (softplus, >= 0) and color (sigmoid, in [0, 1]^3)."""
    sigma, rgb, _ = decode_forward(features, view_dirs, decoder)
    return sigma, rgb


def decode_backward(decoder, cache, grad_sigma, grad_rgb):
    """Backprop through both heads.

    Returns (grad_features (N, F), decoder_grads dict).
    """
    grad_sigma = np.asarray(grad_sigma).reshape(-1)
    grad_rgb = np.atleast_2d(grad_rgb)
    half = cache["half"]

    # density head: sigma = softplus(raw); d sigma / d raw = sigmoid(raw)
    g_raw_s = (grad_sigma * _sigmoid(cache["raw_sigma"]))[:, None]
    g_w1_s = cache["h_s"].T @ g_raw_s
    g_b1_s = g_raw_s.sum(axis=0)
    g_h_s = (g_raw_s @ decoder.w1_sigma.T) * (cache["h_s_pre"] > 0)
    g_w0_s = cache["f_sigma"].T @ g_h_s
    g_b0_s = g_h_s.sum(axis=0)
    g_f_sigma = g_h_s @ decoder.w0_sigma.T

    # color head: rgb = sigmoid(raw); d rgb / d raw = rgb (1 - rgb)
    g_raw_c = grad_rgb * cache["rgb"] * (1.0 - cache["rgb"])
    g_w1_c = cache["h_c"].T @ g_raw_c
    g_b1_c = g_raw_c.sum(axis=0)
    g_h_c = (g_raw_c @ decoder.w1_color.T) * (cache["h_c_pre"] > 0)
    g_w0_c = cache["x_color"].T @ g_h_c
    g_b0_c = g_h_c.sum(axis=0)
    g_x_color = g_h_c @ decoder.w0_color.T

    n = g_f_sigma.shape[0]
    grad_features = np.zeros((n, 2 * half))
    grad_features[:, :half] = g_f_sigma
    grad_features[:, half:] = g_x_color[:, :half]

    decoder_grads = {
        "w0_sigma": g_w0_s,
        "b0_sigma": g_b0_s,
        "w1_sigma": g_w1_s,
        "b1_sigma": g_b1_s,
        "w0_color": g_w0_c,
        "b0_color": g_b0_c,
        "w1_color": g_w1_c,
        "b1_color": g_b1_c,
    }
    return grad_features, decoder_grads


def query_backward(field, coords, view_dirs, decoder, grad_sigma, grad_rgb):
    """Exact reverse-mode gradients of decode(query_feature(.)).

    ``grad_sigma`` (N,) and ``grad_rgb`` (N, 3) are the upstream gradients.
    """
    coords = np.atleast_2d(np.asarray(coords, dtype=np.float64))
    u, _ = field.normalize(coords)
    feats = accel.hexplane_query(field.planes, field.vectors, u, field.feature_dim)
    _, _, cache = decode_forward(feats, view_dirs, decoder)
    grad_feats, decoder_grads = decode_backward(decoder, cache, grad_sigma, grad_rgb)
    plane_grads, vector_grads = accel.hexplane_query_backward(
        field.planes, field.vectors, u, grad_feats
    )
    return FieldGradients(plane_grads, vector_grads, decoder_grads)


def _resample_plane(plane, new_a, new_b):
    """Separable linear interpolation of an (A, B, C) grid."""
    A, B, _ = plane.shape
    if new_a == A and new_b == B:
        return plane.copy()
    ia = np.linspace(0.0, A - 1, new_a)
    out = np.empty((new_a, B, plane.shape[2]))
    i0 = np.minimum(ia.astype(np.int64), A - 2)
    fa = ia - i0
    out = plane[i0] * (1 - fa)[:, None, None] + plane[i0 + 1] * fa[:, None, None]
    ib = np.linspace(0.0, B - 1, new_b)
    j0 = np.minimum(ib.astype(np.int64), B - 2)
    fb = ib - j0
    return out[:, j0] * (1 - fb)[None, :, None] + out[:, j0 + 1] * fb[None, :, None]


def upsample(field: HexPlaneField, new_resolutions) -> HexPlaneField:
    """Bilinear coarse-to-fine refinement onto a finer grid."""
    new_resolutions = tuple(int(r) for r in new_resolutions)
    if len(new_resolutions) != 4:
        raise InvalidArgumentError("need 4 axis resolutions")
    if any(n < o for n, o in zip(new_resolutions, field.resolutions)):
        raise InvalidArgumentError("upsample cannot reduce resolution")
    planes = []
    for k, (a, b) in enumerate(PLANE_AXES):
        planes.append(
            np.ascontiguousarray(
                _resample_plane(field.planes[k], new_resolutions[a], new_resolutions[b])
            )
        )
    return HexPlaneField(
        planes,
        [v.copy() for v in field.vectors],
        field.bounds.copy(),
        field.ranks,
        field.feature_dim,
        new_resolutions,
    )


def save_field(path, field: HexPlaneField, decoder: Decoder) -> None:
    """Versioned little-endian binary checkpoint."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<8d", *field.bounds.reshape(-1)))
        fh.write(struct.pack("<4I", *field.resolutions))
        fh.write(struct.pack("<3I", *field.ranks))
        fh.write(struct.pack("<3I", field.feature_dim, HIDDEN_WIDTH, VIEW_FREQS))
        for p in field.planes:
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())
        for v in field.vectors:
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
        for _, arr in sorted(decoder.params().items()):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_field(path):
    """Reads a checkpoint written by :func:`save_field`."""
    from .errors import ParseError

    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ParseError(f"bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise ParseError(f"unsupported checkpoint version {version}")
        bounds = np.array(struct.unpack("<8d", fh.read(64))).reshape(4, 2)
        resolutions = struct.unpack("<4I", fh.read(16))
        ranks = struct.unpack("<3I", fh.read(12))
        feature_dim, hidden, freqs = struct.unpack("<3I", fh.read(12))
        if hidden != HIDDEN_WIDTH or freqs != VIEW_FREQS:
            raise ParseError("checkpoint decoder architecture mismatch")

        def read_array(shape):
            n = int(np.prod(shape))
            buf = fh.read(8 * n)
            if len(buf) != 8 * n:
                raise ParseError("truncated checkpoint payload")
            return np.frombuffer(buf, dtype="<f8").reshape(shape).copy()

        planes = [
            read_array(s) for s in _plane_shapes(resolutions, ranks, feature_dim)
        ]
        vectors = [read_array((r, feature_dim)) for r in ranks]
        half = feature_dim // 2
        shapes = {
            "b0_color": (HIDDEN_WIDTH,),
            "b0_sigma": (HIDDEN_WIDTH,),
            "b1_color": (3,),
            "b1_sigma": (1,),
            "w0_color": (half + VIEW_ENC_DIM, HIDDEN_WIDTH),
            "w0_sigma": (half, HIDDEN_WIDTH),
            "w1_color": (HIDDEN_WIDTH, 3),
            "w1_sigma": (HIDDEN_WIDTH, 1),
        }
        params = {name: read_array(shape) for name, shape in sorted(shapes.items())}
        if fh.read(1):
            raise ParseError("trailing bytes in checkpoint")
    fld = HexPlaneField(planes, vectors, bounds, ranks, feature_dim, resolutions)
    return fld, Decoder(**params)
