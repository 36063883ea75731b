import numpy as np
import pytest

from slam4d.errors import InvalidArgumentError, ParseError
from slam4d.field import (
    PLANE_AXES,
    Decoder,
    HexPlaneField,
    decode,
    decode_forward,
    decode_backward,
    init_decoder,
    init_field,
    load_field,
    query_backward,
    query_feature,
    save_field,
    upsample,
)

BOUNDS = np.array([[-1, 1], [-1, 1], [0, 3], [0, 1]], dtype=float)


def small_field(seed=0, resolutions=(5, 6, 7, 4), ranks=(2, 3, 1), feature_dim=4):
    return init_field(BOUNDS, resolutions, ranks, feature_dim, seed)


def naive_query(field, coords):
    """Scalar re-implementation of the factorized feature lookup."""
    coords = np.atleast_2d(coords)
    lo, hi = field.bounds[:, 0], field.bounds[:, 1]
    u_all = np.clip((coords - lo) / (hi - lo), 0.0, 1.0)
    F = field.feature_dim
    out = np.zeros((coords.shape[0], F))

    def bilerp(plane, a, b):
        A, B, _ = plane.shape
        x = a * (A - 1)
        y = b * (B - 1)
        i = min(int(np.floor(x)), A - 2)
        j = min(int(np.floor(y)), B - 2)
        fx, fy = x - i, y - j
        vals = np.zeros(plane.shape[2])
        for c in range(plane.shape[2]):
            vals[c] = (
                plane[i, j, c] * (1 - fx) * (1 - fy)
                + plane[i, j + 1, c] * (1 - fx) * fy
                + plane[i + 1, j, c] * fx * (1 - fy)
                + plane[i + 1, j + 1, c] * fx * fy
            )
        return vals

    for n, u in enumerate(u_all):
        for pair in range(3):
            ax_s = PLANE_AXES[2 * pair]
            ax_t = PLANE_AXES[2 * pair + 1]
            s1 = bilerp(field.planes[2 * pair], u[ax_s[0]], u[ax_s[1]])
            s2 = bilerp(field.planes[2 * pair + 1], u[ax_t[0]], u[ax_t[1]])
            R = field.ranks[pair]
            for r in range(R):
                for f in range(F):
                    c = r * F + f
                    out[n, f] += s1[c] * s2[c] * field.vectors[pair][r, f]
    return out


class TestInit:
    def test_deterministic_per_seed(self):
        a, b = small_field(seed=3), small_field(seed=3)
        for pa, pb in zip(a.planes, b.planes):
            assert np.array_equal(pa, pb)

    def test_minimal_shapes(self):
        f = init_field(BOUNDS, (2, 2, 2, 2), (1, 1, 1), 2, 0)
        assert len(f.planes) == 6
        assert all(p.shape == (2, 2, 2) for p in f.planes)
        assert all(v.shape == (1, 2) for v in f.vectors)

    def test_footprint_closed_form(self):
        f = small_field()
        total = sum(p.size for p in f.planes)
        res, (r1, r2, r3), F = f.resolutions, f.ranks, f.feature_dim
        expected = (
            (res[0] * res[1] + res[2] * res[3]) * r1
            + (res[0] * res[2] + res[1] * res[3]) * r2
            + (res[1] * res[2] + res[0] * res[3]) * r3
        ) * F
        assert total == expected

    def test_degenerate_bounds_rejected(self):
        bad = BOUNDS.copy()
        bad[2] = [1, 1]
        with pytest.raises(InvalidArgumentError):
            init_field(bad, (4, 4, 4, 4), (1, 1, 1), 2, 0)


class TestQuery:
    def test_constant_planes_closed_form(self):
        f = init_field(BOUNDS, (4, 4, 4, 4), (1, 1, 1), 2, 0)
        consts = [0.3, -0.2, 0.5, 0.1, -0.4, 0.7]
        for p, c in zip(f.planes, consts):
            p[:] = c
        expected = consts[0] * consts[1] + consts[2] * consts[3] + consts[4] * consts[5]
        out = query_feature(f, [[0.2, -0.5, 1.7, 0.33]])
        assert np.allclose(out, expected, atol=1e-12)

    def test_grid_node_exact(self):
        f = small_field()
        # node (0, 0, 0, 0) in normalized coords is a corner of every plane
        out = query_feature(f, [BOUNDS[:, 0]])
        expected = np.zeros(f.feature_dim)
        for pair in range(3):
            s1 = f.planes[2 * pair][0, 0]
            s2 = f.planes[2 * pair + 1][0, 0]
            prod = (s1 * s2).reshape(f.ranks[pair], f.feature_dim)
            expected += (prod * f.vectors[pair]).sum(axis=0)
        assert np.allclose(out[0], expected, atol=1e-12)

    def test_matches_naive_oracle(self):
        f = small_field(seed=9)
        rng = np.random.default_rng(1)
        for v in f.vectors:
            v[:] = rng.normal(size=v.shape)
        coords = rng.uniform(BOUNDS[:, 0], BOUNDS[:, 1], size=(30, 4))
        assert np.allclose(query_feature(f, coords), naive_query(f, coords), atol=1e-12)

    def test_continuous_across_cell_boundaries(self):
        f = small_field(seed=5)
        # interior grid line of the x axis
        x_line = BOUNDS[0, 0] + (BOUNDS[0, 1] - BOUNDS[0, 0]) * (2 / 4)
        base = np.array([x_line, 0.1, 1.2, 0.4])
        eps = 1e-9 * (BOUNDS[0, 1] - BOUNDS[0, 0])
        lo = base.copy()
        lo[0] -= eps
        hi = base.copy()
        hi[0] += eps
        d = np.abs(query_feature(f, [lo]) - query_feature(f, [hi]))
        assert d.max() < 1e-6

    def test_rank_additivity(self):
        rng = np.random.default_rng(2)
        f2 = init_field(BOUNDS, (5, 5, 5, 4), (2, 2, 2), 4, 7)
        f1 = init_field(BOUNDS, (5, 5, 5, 4), (1, 1, 1), 4, 0)
        F = 4
        for k in range(6):
            f1.planes[k][:] = f2.planes[k][:, :, :F]
            f2.planes[k][:, :, F:] = 0.0  # zero out the second rank
        for i in range(3):
            f1.vectors[i][:] = f2.vectors[i][:1]
        coords = rng.uniform(BOUNDS[:, 0], BOUNDS[:, 1], size=(20, 4))
        assert np.allclose(
            query_feature(f1, coords), query_feature(f2, coords), atol=1e-12
        )

    def test_nonfinite_coords_rejected(self):
        f = small_field()
        with pytest.raises(InvalidArgumentError):
            query_feature(f, [[np.nan, 0, 0, 0]])


class TestDecode:
    def test_zero_feature_zero_heads(self):
        dec = init_decoder(4, 0)
        sigma, rgb = decode(np.zeros((1, 4)), np.array([[0, 0, 1.0]]), dec)
        assert np.allclose(sigma, np.log(2.0), atol=1e-12)
        assert np.allclose(rgb, 0.5, atol=1e-12)

    def test_ranges(self):
        dec = init_decoder(8, 1)
        dec.w1_sigma[:] = np.random.default_rng(0).normal(size=dec.w1_sigma.shape)
        dec.w1_color[:] = np.random.default_rng(1).normal(size=dec.w1_color.shape)
        feats = np.random.default_rng(2).normal(size=(50, 8)) * 3
        dirs = np.tile([[0, 0, 1.0]], (50, 1))
        sigma, rgb = decode(feats, dirs, dec)
        assert np.all(sigma >= 0)
        assert np.all((rgb >= 0) & (rgb <= 1))

    def test_gradient_wrt_feature_matches_fd(self):
        rng = np.random.default_rng(3)
        dec = init_decoder(6, 2)
        dec.w1_sigma[:] = rng.normal(size=dec.w1_sigma.shape) * 0.3
        dec.w1_color[:] = rng.normal(size=dec.w1_color.shape) * 0.3
        feats = rng.normal(size=(5, 6))
        dirs = rng.normal(size=(5, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        gs = rng.normal(size=5)
        gc = rng.normal(size=(5, 3))

        _, _, cache = decode_forward(feats, dirs, dec)
        grad_feats, _ = decode_backward(dec, cache, gs, gc)

        h = 1e-6
        for n in range(5):
            for f in range(6):
                fp, fm = feats.copy(), feats.copy()
                fp[n, f] += h
                fm[n, f] -= h
                sp, cp = decode(fp, dirs, dec)
                sm, cm = decode(fm, dirs, dec)
                num = ((sp - sm) * gs).sum() + ((cp - cm) * gc).sum()
                num /= 2 * h
                denom = max(abs(num), 1e-6)
                assert abs(num - grad_feats[n, f]) / denom < 1e-4


class TestQueryBackward:
    def test_zero_upstream_zero_grads(self):
        f = small_field()
        dec = init_decoder(f.feature_dim, 0)
        g = query_backward(
            f, [[0.1, 0.2, 1.0, 0.5]], [[0, 0, 1.0]], dec,
            np.zeros(1), np.zeros((1, 3)),
        )
        assert all(np.all(p == 0) for p in g.plane_grads)
        assert all(np.all(v == 0) for v in g.vector_grads)
        assert all(np.all(a == 0) for a in g.decoder_grads.values())

    def test_full_gradients_match_fd(self):
        rng = np.random.default_rng(11)
        f = small_field(seed=4, resolutions=(3, 3, 3, 3), ranks=(1, 2, 1), feature_dim=4)
        # Larger plane values and random biases keep hidden pre-activations
        # away from the ReLU kink, where central differences are invalid.
        for p in f.planes:
            p[:] = rng.normal(size=p.shape) * 0.7
        for v in f.vectors:
            v[:] = rng.normal(size=v.shape)
        dec = init_decoder(4, 5)
        dec.b0_sigma[:] = rng.normal(size=dec.b0_sigma.shape) * 0.5
        dec.b0_color[:] = rng.normal(size=dec.b0_color.shape) * 0.5
        dec.w1_sigma[:] = rng.normal(size=dec.w1_sigma.shape) * 0.3
        dec.w1_color[:] = rng.normal(size=dec.w1_color.shape) * 0.3
        coords = rng.uniform(BOUNDS[:, 0], BOUNDS[:, 1], size=(20, 4))
        dirs = rng.normal(size=(20, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        gs = rng.normal(size=20)
        gc = rng.normal(size=(20, 3))

        grads = query_backward(f, coords, dirs, dec, gs, gc)

        def objective():
            feats = query_feature(f, coords)
            sigma, rgb = decode(feats, dirs, dec)
            return (sigma * gs).sum() + (rgb * gc).sum()

        h = 1e-4
        checked = 0
        params = (
            [("plane", k, f.planes[k], grads.plane_grads[k]) for k in range(6)]
            + [("vec", i, f.vectors[i], grads.vector_grads[i]) for i in range(3)]
            + [("dec", n, f_arr, grads.decoder_grads[n])
               for n, f_arr in (("w0_sigma", dec.w0_sigma), ("w1_sigma", dec.w1_sigma),
                                ("w0_color", dec.w0_color), ("w1_color", dec.w1_color),
                                ("b0_sigma", dec.b0_sigma), ("b1_color", dec.b1_color))]
        )
        for _, _, arr, grad in params:
            flat = arr.reshape(-1)
            gflat = np.asarray(grad).reshape(-1)
            for idx in rng.choice(flat.size, size=min(6, flat.size), replace=False):
                old = flat[idx]
                flat[idx] = old + h
                fp = objective()
                flat[idx] = old - h
                fm = objective()
                flat[idx] = old
                num = (fp - fm) / (2 * h)
                denom = max(abs(num), 1e-4)
                assert abs(num - gflat[idx]) / denom < 1e-3
                checked += 1
        assert checked >= 50


class TestUpsample:
    def test_same_resolution_identical(self):
        f = small_field()
        g = upsample(f, f.resolutions)
        for a, b in zip(f.planes, g.planes):
            assert np.array_equal(a, b)

    def test_constant_preserved(self):
        f = small_field()
        for p in f.planes:
            p[:] = 0.42
        g = upsample(f, (9, 11, 13, 7))
        assert all(np.allclose(p, 0.42, atol=1e-12) for p in g.planes)

    def test_linear_ramp_exact(self):
        f = init_field(BOUNDS, (3, 3, 3, 3), (1, 1, 1), 2, 0)
        for p in f.planes:
            p[:] = np.linspace(0, 1, 3)[:, None, None]
        g = upsample(f, (5, 5, 5, 5))
        for p in g.planes:
            assert np.allclose(p[:, 0, 0], np.linspace(0, 1, 5), atol=1e-12)

    def test_downsample_rejected(self):
        f = small_field()
        with pytest.raises(InvalidArgumentError):
            upsample(f, (2, 2, 2, 2))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        f = small_field(seed=8)
        dec = init_decoder(f.feature_dim, 9)
        path = tmp_path / "field.ckpt"
        save_field(path, f, dec)
        f2, dec2 = load_field(path)
        for a, b in zip(f.planes, f2.planes):
            assert np.array_equal(a, b)
        for a, b in zip(f.vectors, f2.vectors):
            assert np.array_equal(a, b)
        for k, arr in dec.params().items():
            assert np.array_equal(arr, dec2.params()[k])
        assert np.array_equal(f.bounds, f2.bounds)
        assert f.ranks == tuple(f2.ranks)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bogus.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ParseError):
            load_field(path)

    def test_truncated_rejected(self, tmp_path):
        f = small_field()
        dec = init_decoder(f.feature_dim, 0)
        path = tmp_path / "field.ckpt"
        save_field(path, f, dec)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(ParseError):
            load_field(path)
