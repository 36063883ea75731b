"""Hot numeric kernels: numba-jitted with a pure-numpy fallback.

The fallback path is selected by setting the environment variable
``SLAM4D_DISABLE_NUMBA=1`` before import (or when numba is missing).
Both paths compute identical results; ``benchmarks/bench_kernels.py``
compares their throughput.
"""

from __future__ import annotations

import os

import numpy as np

NUMBA_ENABLED = os.environ.get("SLAM4D_DISABLE_NUMBA", "0") not in ("1", "true", "yes")

if NUMBA_ENABLED:
    try:
        import numba
        from numba import njit
    except ImportError:  # pragma: no cover
        NUMBA_ENABLED = False

ALPHA_MAX = 1.0 - 1e-12

# ---------------------------------------------------------------------------
# Hexplane sampling
#
# Planes are stored as (A, B, R*F) arrays, channel index c = r*F + f.
# The three plane pairs index normalized coords as:
#   pair 0: (x, y) and (z, t)    pair 1: (x, z) and (y, t)
#   pair 2: (y, z) and (x, t)
# Feature: out[f] = sum over pairs, ranks of s1[r,f] * s2[r,f] * v[r,f].
# ---------------------------------------------------------------------------

_PAIR_AXES = ((0, 1, 2, 3), (0, 2, 1, 3), (1, 2, 0, 3))


def _np_bilerp_setup(coord, size):
    """Continuous grid index, corner index and fraction for one axis."""
    idx = np.clip(coord, 0.0, 1.0) * (size - 1)
    i0 = np.minimum(idx.astype(np.int64), size - 2)
    return i0, idx - i0


def _np_sample_plane(plane, a, b):
    """Bilinear sample of an (A, B, C) plane at normalized coords -> (N, C)."""
    ia, fa = _np_bilerp_setup(a, plane.shape[0])
    ib, fb = _np_bilerp_setup(b, plane.shape[1])
    w00 = (1 - fa) * (1 - fb)
    w01 = (1 - fa) * fb
    w10 = fa * (1 - fb)
    w11 = fa * fb
    return (
        plane[ia, ib] * w00[:, None]
        + plane[ia, ib + 1] * w01[:, None]
        + plane[ia + 1, ib] * w10[:, None]
        + plane[ia + 1, ib + 1] * w11[:, None]
    )


def _np_scatter_plane(grad, plane_shape, a, b):
    """Adjoint of :func:`_np_sample_plane`: scatter (N, C) grads to a grid."""
    out = np.zeros(plane_shape)
    ia, fa = _np_bilerp_setup(a, plane_shape[0])
    ib, fb = _np_bilerp_setup(b, plane_shape[1])
    np.add.at(out, (ia, ib), grad * ((1 - fa) * (1 - fb))[:, None])
    np.add.at(out, (ia, ib + 1), grad * ((1 - fa) * fb)[:, None])
    np.add.at(out, (ia + 1, ib), grad * (fa * (1 - fb))[:, None])
    np.add.at(out, (ia + 1, ib + 1), grad * (fa * fb)[:, None])
    return out


def _hexplane_query_numpy(planes, vecs, coords, feature_dim):
    n = coords.shape[0]
    out = np.zeros((n, feature_dim))
    for pair, (a1, b1, a2, b2) in enumerate(_PAIR_AXES):
        s1 = _np_sample_plane(planes[2 * pair], coords[:, a1], coords[:, b1])
        s2 = _np_sample_plane(planes[2 * pair + 1], coords[:, a2], coords[:, b2])
        prod = (s1 * s2) * vecs[pair].reshape(-1)[None, :]
        out += prod.reshape(n, -1, feature_dim).sum(axis=1)
    return out


def _hexplane_backward_numpy(planes, vecs, coords, grad_feat):
    feature_dim = grad_feat.shape[1]
    plane_grads = []
    vec_grads = []
    for pair, (a1, b1, a2, b2) in enumerate(_PAIR_AXES):
        p1, p2 = planes[2 * pair], planes[2 * pair + 1]
        v = vecs[pair].reshape(-1)
        s1 = _np_sample_plane(p1, coords[:, a1], coords[:, b1])
        s2 = _np_sample_plane(p2, coords[:, a2], coords[:, b2])
        g = np.tile(grad_feat, (1, v.size // feature_dim))
        plane_grads.append(
            _np_scatter_plane(g * s2 * v[None, :], p1.shape, coords[:, a1], coords[:, b1])
        )
        plane_grads.append(
            _np_scatter_plane(g * s1 * v[None, :], p2.shape, coords[:, a2], coords[:, b2])
        )
        vec_grads.append((g * s1 * s2).sum(axis=0).reshape(vecs[pair].shape))
    return plane_grads, vec_grads


if NUMBA_ENABLED:

    @njit(cache=True)
    def _sample_one(plane, a, b, out):
        A, B, C = plane.shape
        ia = a * (A - 1)
        i0 = int(ia)
        if i0 > A - 2:
            i0 = A - 2
        fa = ia - i0
        ib = b * (B - 1)
        j0 = int(ib)
        if j0 > B - 2:
            j0 = B - 2
        fb = ib - j0
        w00 = (1 - fa) * (1 - fb)
        w01 = (1 - fa) * fb
        w10 = fa * (1 - fb)
        w11 = fa * fb
        for c in range(C):
            out[c] = (
                w00 * plane[i0, j0, c]
                + w01 * plane[i0, j0 + 1, c]
                + w10 * plane[i0 + 1, j0, c]
                + w11 * plane[i0 + 1, j0 + 1, c]
            )

    @njit(cache=True)
    def _scatter_one(grad_plane, a, b, g):
        A, B, C = grad_plane.shape
        ia = a * (A - 1)
        i0 = int(ia)
        if i0 > A - 2:
            i0 = A - 2
        fa = ia - i0
        ib = b * (B - 1)
        j0 = int(ib)
        if j0 > B - 2:
            j0 = B - 2
        fb = ib - j0
        w00 = (1 - fa) * (1 - fb)
        w01 = (1 - fa) * fb
        w10 = fa * (1 - fb)
        w11 = fa * fb
        for c in range(C):
            grad_plane[i0, j0, c] += w00 * g[c]
            grad_plane[i0, j0 + 1, c] += w01 * g[c]
            grad_plane[i0 + 1, j0, c] += w10 * g[c]
            grad_plane[i0 + 1, j0 + 1, c] += w11 * g[c]

    @njit(cache=True)
    def _hexplane_query_nb(p0, p1, p2, p3, p4, p5, v0, v1, v2, coords, out):
        n, F = out.shape
        c_max = max(p0.shape[2], max(p2.shape[2], p4.shape[2]))
        s1 = np.empty(c_max)
        s2 = np.empty(c_max)
        ax0 = np.array([0, 0, 1])
        ax1 = np.array([1, 2, 2])
        ax2 = np.array([2, 1, 0])
        for i in range(n):
            x = min(max(coords[i, 0], 0.0), 1.0)
            y = min(max(coords[i, 1], 0.0), 1.0)
            z = min(max(coords[i, 2], 0.0), 1.0)
            t = min(max(coords[i, 3], 0.0), 1.0)
            c4 = (x, y, z, t)
            for pair in range(3):
                if pair == 0:
                    pa, pb, v = p0, p1, v0
                elif pair == 1:
                    pa, pb, v = p2, p3, v1
                else:
                    pa, pb, v = p4, p5, v2
                _sample_one(pa, c4[ax0[pair]], c4[ax1[pair]], s1)
                _sample_one(pb, c4[ax2[pair]], c4[3], s2)
                C = pa.shape[2]
                R = C // F
                for r in range(R):
                    base = r * F
                    for f in range(F):
                        out[i, f] += s1[base + f] * s2[base + f] * v[base + f]

    @njit(cache=True)
    def _hexplane_backward_nb(
        p0, p1, p2, p3, p4, p5, v0, v1, v2, coords, grad_feat,
        g0, g1, g2, g3, g4, g5, gv0, gv1, gv2,
    ):
        n, F = grad_feat.shape
        c_max = max(p0.shape[2], max(p2.shape[2], p4.shape[2]))
        s1 = np.empty(c_max)
        s2 = np.empty(c_max)
        t1 = np.empty(c_max)
        t2 = np.empty(c_max)
        ax0 = np.array([0, 0, 1])
        ax1 = np.array([1, 2, 2])
        ax2 = np.array([2, 1, 0])
        for i in range(n):
            x = min(max(coords[i, 0], 0.0), 1.0)
            y = min(max(coords[i, 1], 0.0), 1.0)
            z = min(max(coords[i, 2], 0.0), 1.0)
            t = min(max(coords[i, 3], 0.0), 1.0)
            c4 = (x, y, z, t)
            for pair in range(3):
                if pair == 0:
                    pa, pb, v, ga, gb, gv = p0, p1, v0, g0, g1, gv0
                elif pair == 1:
                    pa, pb, v, ga, gb, gv = p2, p3, v1, g2, g3, gv1
                else:
                    pa, pb, v, ga, gb, gv = p4, p5, v2, g4, g5, gv2
                a1, b1 = c4[ax0[pair]], c4[ax1[pair]]
                a2, b2 = c4[ax2[pair]], c4[3]
                _sample_one(pa, a1, b1, s1)
                _sample_one(pb, a2, b2, s2)
                C = pa.shape[2]
                R = C // F
                for r in range(R):
                    base = r * F
                    for f in range(F):
                        c = base + f
                        g = grad_feat[i, f]
                        t1[c] = g * s2[c] * v[c]
                        t2[c] = g * s1[c] * v[c]
                        gv[c] += g * s1[c] * s2[c]
                _scatter_one(ga, a1, b1, t1[:C])
                _scatter_one(gb, a2, b2, t2[:C])


def hexplane_query(planes, vecs, coords, feature_dim):
    """Pointwise feature of the six-plane factorization.

    planes: six (A, B, R*F) grids ordered XY, ZT, XZ, YT, YZ, XT;
    vecs: three (R, F) rank-scaling vectors; coords: (N, 4) normalized
    (x, y, z, t) in [0, 1]. Returns (N, F).
    """
    coords = np.ascontiguousarray(np.clip(coords, 0.0, 1.0))
    if NUMBA_ENABLED:
        out = np.zeros((coords.shape[0], feature_dim))
        _hexplane_query_nb(
            *planes,
            *(v.reshape(-1) for v in vecs),
            coords,
            out,
        )
        return out
    return _hexplane_query_numpy(planes, vecs, coords, feature_dim)


def hexplane_query_backward(planes, vecs, coords, grad_feat):
    """Gradients of :func:`hexplane_query` w.r.t. planes and vectors.

    Returns (plane_grads, vec_grads) with shapes mirroring the inputs.
    """
    coords = np.ascontiguousarray(np.clip(coords, 0.0, 1.0))
    grad_feat = np.ascontiguousarray(grad_feat)
    if NUMBA_ENABLED:
        plane_grads = [np.zeros(p.shape) for p in planes]
        vec_grads_flat = [np.zeros(v.size) for v in vecs]
        _hexplane_backward_nb(
            *planes,
            *(v.reshape(-1) for v in vecs),
            coords,
            grad_feat,
            *plane_grads,
            *vec_grads_flat,
        )
        vec_grads = [g.reshape(v.shape) for g, v in zip(vec_grads_flat, vecs)]
        return plane_grads, vec_grads
    return _hexplane_backward_numpy(planes, vecs, coords, grad_feat)


# ---------------------------------------------------------------------------
# Emission-absorption compositing
# ---------------------------------------------------------------------------


def _composite_forward_numpy(sigma, rgb, deltas):
    alpha = np.minimum(1.0 - np.exp(-sigma * deltas), ALPHA_MAX)
    one_minus = 1.0 - alpha
    trans = np.cumprod(one_minus, axis=-1)
    T_excl = np.concatenate(
        [np.ones_like(trans[..., :1]), trans[..., :-1]], axis=-1
    )
    weights = T_excl * alpha
    out_rgb = np.einsum("ns,nsc->nc", weights, rgb)
    return out_rgb, weights, trans[..., -1]


def _composite_backward_numpy(sigma, rgb, deltas, weights, grad_out):
    alpha = np.minimum(1.0 - np.exp(-sigma * deltas), ALPHA_MAX)
    q = np.einsum("nc,nsc->ns", grad_out, rgb)
    wq = weights * q
    # suffix[k] = sum_{m > k} w_m q_m
    suffix = np.flip(np.cumsum(np.flip(wq, axis=-1), axis=-1), axis=-1) - wq
    one_minus = np.maximum(1.0 - alpha, 1e-300)
    T_excl = weights / np.maximum(alpha, 1e-300)
    # weights==0 can only happen when alpha==0; recover T there.
    zero = alpha <= 1e-300
    if np.any(zero):
        T_full = np.cumprod(np.concatenate(
            [np.ones_like(alpha[..., :1]), 1.0 - alpha[..., :-1]], axis=-1), axis=-1)
        T_excl = np.where(zero, T_full, T_excl)
    grad_alpha = T_excl * q - suffix / one_minus
    grad_sigma = grad_alpha * deltas * (1.0 - alpha)
    grad_rgb = weights[..., None] * grad_out[:, None, :]
    return grad_sigma, grad_rgb


if NUMBA_ENABLED:

    @njit(cache=True)
    def _composite_forward_nb(sigma, rgb, deltas, out_rgb, weights, trans_final):
        n, S = sigma.shape
        for i in range(n):
            T = 1.0
            r = g = b = 0.0
            for k in range(S):
                a = 1.0 - np.exp(-sigma[i, k] * deltas[i, k])
                if a > ALPHA_MAX:
                    a = ALPHA_MAX
                w = T * a
                weights[i, k] = w
                r += w * rgb[i, k, 0]
                g += w * rgb[i, k, 1]
                b += w * rgb[i, k, 2]
                T *= 1.0 - a
            out_rgb[i, 0] = r
            out_rgb[i, 1] = g
            out_rgb[i, 2] = b
            trans_final[i] = T

    @njit(cache=True)
    def _composite_backward_nb(sigma, rgb, deltas, grad_out, grad_sigma, grad_rgb):
        n, S = sigma.shape
        for i in range(n):
            # forward pass to rebuild alphas and exclusive transmittance
            suffix = 0.0
            T = 1.0
            for k in range(S):
                a = 1.0 - np.exp(-sigma[i, k] * deltas[i, k])
                if a > ALPHA_MAX:
                    a = ALPHA_MAX
                w = T * a
                q = (
                    grad_out[i, 0] * rgb[i, k, 0]
                    + grad_out[i, 1] * rgb[i, k, 1]
                    + grad_out[i, 2] * rgb[i, k, 2]
                )
                suffix += w * q
                grad_rgb[i, k, 0] = w * grad_out[i, 0]
                grad_rgb[i, k, 1] = w * grad_out[i, 1]
                grad_rgb[i, k, 2] = w * grad_out[i, 2]
                T *= 1.0 - a
            # backward sweep: suffix holds sum_{m >= k} w_m q_m
            T = 1.0
            for k in range(S):
                a = 1.0 - np.exp(-sigma[i, k] * deltas[i, k])
                if a > ALPHA_MAX:
                    a = ALPHA_MAX
                q = (
                    grad_out[i, 0] * rgb[i, k, 0]
                    + grad_out[i, 1] * rgb[i, k, 1]
                    + grad_out[i, 2] * rgb[i, k, 2]
                )
                w = T * a
                suffix -= w * q
                grad_alpha = T * q - suffix / (1.0 - a)
                grad_sigma[i, k] = grad_alpha * deltas[i, k] * (1.0 - a)
                T *= 1.0 - a


def composite_forward(sigma, rgb, deltas):
    """Alpha compositing over sorted samples.

    sigma, deltas: (N, S); rgb: (N, S, 3). Returns (rgb_out (N, 3),
    weights (N, S), final transmittance (N,)); weights sum with the final
    transmittance to one per ray.
    """
    sigma = np.ascontiguousarray(sigma)
    rgb = np.ascontiguousarray(rgb)
    deltas = np.ascontiguousarray(deltas)
    if NUMBA_ENABLED:
        n, S = sigma.shape
        out_rgb = np.empty((n, 3))
        weights = np.empty((n, S))
        trans = np.empty(n)
        _composite_forward_nb(sigma, rgb, deltas, out_rgb, weights, trans)
        return out_rgb, weights, trans
    return _composite_forward_numpy(sigma, rgb, deltas)


def composite_backward(sigma, rgb, deltas, weights, grad_out):
    """Gradients of composited rgb w.r.t. per-sample density and color."""
    sigma = np.ascontiguousarray(sigma)
    rgb = np.ascontiguousarray(rgb)
    deltas = np.ascontiguousarray(deltas)
    grad_out = np.ascontiguousarray(grad_out)
    if NUMBA_ENABLED:
        grad_sigma = np.empty_like(sigma)
        grad_rgb = np.empty_like(rgb)
        _composite_backward_nb(sigma, rgb, deltas, grad_out, grad_sigma, grad_rgb)
        return grad_sigma, grad_rgb
    return _composite_backward_numpy(sigma, rgb, deltas, weights, grad_out)
