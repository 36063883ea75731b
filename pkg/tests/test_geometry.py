import numpy as np
import pytest

from slam4d import geometry
from slam4d.errors import BehindCameraError, InvalidArgumentError, InvalidDepthError
from slam4d.geometry import (
    CameraIntrinsics,
    InverseDepthMap,
    PoseSE3,
    Twist,
    backproject,
    pixel_grid,
    project,
    reproject,
    reprojection_jacobians,
    retract,
    se3_exp,
    se3_log,
)

K = CameraIntrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=100, height=100)


def random_twist(rng, rot_scale=1.0):
    return Twist(rng.normal(size=3), rot_scale * rng.normal(size=3))


class TestSE3:
    def test_exp_zero_is_identity(self):
        G = se3_exp(Twist.zero())
        assert np.allclose(G.quat, [0, 0, 0, 1], atol=1e-15)
        assert np.allclose(G.t, 0, atol=1e-15)

    def test_exp_quarter_turn_about_z(self):
        G = se3_exp(Twist(np.zeros(3), [0, 0, np.pi / 2]))
        R = G.rotation_matrix()
        assert np.allclose(R, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-12)
        assert np.allclose(G.t, 0, atol=1e-12)

    def test_exp_log_round_trip(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            xi = random_twist(rng, rot_scale=0.8)
            back = se3_log(se3_exp(xi))
            assert np.allclose(back.as_vector(), xi.as_vector(), atol=1e-9)

    def test_exp_log_small_angle_branch(self):
        xi = Twist([0.3, -0.1, 0.2], [1e-10, -2e-10, 5e-11])
        back = se3_log(se3_exp(xi))
        assert np.allclose(back.as_vector(), xi.as_vector(), atol=1e-12)

    def test_inverse_compose_identity(self):
        rng = np.random.default_rng(1)
        G = se3_exp(random_twist(rng))
        I = G.inverse().compose(G)
        assert np.allclose(I.t, 0, atol=1e-9)
        assert np.allclose(I.rotation_matrix(), np.eye(3), atol=1e-9)

    def test_composition_associative(self):
        rng = np.random.default_rng(2)
        A, B, C = (se3_exp(random_twist(rng)) for _ in range(3))
        left = A.compose(B).compose(C)
        right = A.compose(B.compose(C))
        assert np.allclose(left.t, right.t, atol=1e-9)
        assert np.allclose(left.quat, right.quat, atol=1e-9)

    def test_quaternion_stays_normalized(self):
        rng = np.random.default_rng(3)
        G = PoseSE3.identity()
        for _ in range(200):
            G = G.compose(se3_exp(random_twist(rng, rot_scale=0.3)))
        assert abs(np.linalg.norm(G.quat) - 1.0) < 1e-9

    def test_nonfinite_twist_rejected(self):
        with pytest.raises(InvalidArgumentError):
            Twist([np.nan, 0, 0], [0, 0, 0])

    def test_retract_zero_is_exact(self):
        rng = np.random.default_rng(4)
        G = se3_exp(random_twist(rng))
        G2 = retract(G, Twist.zero())
        assert np.array_equal(G2.t, G.t)
        assert np.array_equal(G2.quat, G.quat)

    def test_retract_identity_base(self):
        xi = Twist([0.1, 0.2, 0.3], [0.02, -0.01, 0.05])
        A = retract(PoseSE3.identity(), xi)
        B = se3_exp(xi)
        assert np.allclose(A.t, B.t, atol=1e-12)
        assert np.allclose(A.quat, B.quat, atol=1e-12)

    def test_small_increments_commute_to_second_order(self):
        # BCH truncation: applying xi then eta differs from the combined
        # increment by O(|xi||eta|).
        rng = np.random.default_rng(5)
        G = se3_exp(random_twist(rng))
        for eps in (1e-2, 1e-3):
            xi = Twist(eps * rng.normal(size=3), eps * rng.normal(size=3))
            eta = Twist(eps * rng.normal(size=3), eps * rng.normal(size=3))
            ab = retract(retract(G, xi), eta)
            combined = retract(
                G, Twist.from_vector(xi.as_vector() + eta.as_vector())
            )
            err = np.linalg.norm(ab.t - combined.t) + np.linalg.norm(
                ab.quat - combined.quat
            )
            assert err < 10 * eps * eps


class TestProjection:
    def test_optical_axis_hits_principal_point(self):
        assert np.allclose(project(K, [0.0, 0.0, 1.0]), [50.0, 50.0])

    def test_off_axis_point(self):
        assert np.allclose(project(K, [1.0, 0.0, 2.0]), [100.0, 50.0])

    def test_behind_camera_raises(self):
        with pytest.raises(BehindCameraError):
            project(K, [0.0, 0.0, -1.0])

    def test_backproject_examples(self):
        assert np.allclose(backproject(K, [50.0, 50.0], 1.0), [0, 0, 1])
        assert np.allclose(backproject(K, [100.0, 50.0], 0.5), [1, 0, 2])

    def test_backproject_rejects_nonpositive_depth(self):
        with pytest.raises(InvalidDepthError):
            backproject(K, [50.0, 50.0], 0.0)

    def test_project_backproject_round_trip(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            p = rng.uniform([0, 0], [K.width - 1, K.height - 1])
            d = 10.0 ** rng.uniform(-3, 3)
            assert np.allclose(project(K, backproject(K, p, d)), p, atol=1e-9)


class TestReproject:
    def test_identity_pose_is_identity_map(self):
        grid = pixel_grid(K)
        d = InverseDepthMap.constant(K.height, K.width, 0.5)
        out, valid = reproject(PoseSE3.identity(), K, grid, d)
        assert valid.all()
        assert np.allclose(out, grid, atol=1e-9)

    def test_forward_translation_moves_pixels_outward(self):
        # Moving toward a fronto-parallel plane: pixels flow away from the
        # principal point, with magnitude growing linearly in the offset.
        grid = pixel_grid(K)
        d = InverseDepthMap.constant(K.height, K.width, 0.5)
        # Camera j is 0.2 units closer to the plane, so mapping cam-i points
        # into cam-j shortens z.
        G_ij = se3_exp(Twist([0, 0, -0.2], [0, 0, 0]))
        out, valid = reproject(G_ij, K, grid, d)
        offset = grid - np.array([K.cx, K.cy])
        flow = out - grid
        radial = np.sum(flow * offset, axis=-1)
        interior = valid & (np.linalg.norm(offset, axis=-1) > 1.0)
        assert np.all(radial[interior] > 0)
        # Analytic check: u' - cx = (u - cx) * z / (z - tz) for this motion.
        z = 2.0
        expected = offset * (z / (z - 0.2) - 1.0)  # z' = z - 0.2
        assert np.allclose(flow[valid], expected[valid], atol=1e-9)

    def test_invalid_depth_pixel_flagged(self):
        grid = pixel_grid(K)
        valid = np.ones((K.height, K.width), dtype=bool)
        valid[7, 11] = False
        d = InverseDepthMap(np.full((K.height, K.width), 0.5), valid)
        _, out_valid = reproject(PoseSE3.identity(), K, grid, d)
        assert not out_valid[7, 11]
        out_valid[7, 11] = True
        assert out_valid.all()

    def test_shape_mismatch_rejected(self):
        d = InverseDepthMap.constant(10, 10, 1.0)
        with pytest.raises(InvalidArgumentError):
            reproject(PoseSE3.identity(), K, pixel_grid(K), d)


class TestReprojectionJacobians:
    def test_jacobians_match_finite_differences(self):
        rng = np.random.default_rng(7)
        G_i = se3_exp(Twist(0.2 * rng.normal(size=3), 0.2 * rng.normal(size=3)))
        G_j = se3_exp(Twist(0.2 * rng.normal(size=3), 0.2 * rng.normal(size=3)))
        pixels = rng.uniform([10, 10], [90, 90], size=(40, 2))
        depth = rng.uniform(0.3, 1.5, size=40)

        res = reprojection_jacobians(G_i, G_j, K, pixels, depth)
        assert res["valid"].all()

        h = 1e-6

        def pred(Gi, Gj, dd):
            r = reprojection_jacobians(Gi, Gj, K, pixels, dd)
            return r["pred"]

        for k in range(6):
            e = np.zeros(6)
            e[k] = h
            xi_p, xi_m = Twist.from_vector(e), Twist.from_vector(-e)
            num_i = (pred(retract(G_i, xi_p), G_j, depth) - pred(retract(G_i, xi_m), G_j, depth)) / (2 * h)
            num_j = (pred(G_i, retract(G_j, xi_p), depth) - pred(G_i, retract(G_j, xi_m), depth)) / (2 * h)
            for num, ana in ((num_i, res["J_pose_i"][:, :, k]), (num_j, res["J_pose_j"][:, :, k])):
                scale = np.maximum(np.abs(num), 1.0)
                assert np.max(np.abs(num - ana) / scale) < 1e-4

        num_d = (pred(G_i, G_j, depth + h) - pred(G_i, G_j, depth - h)) / (2 * h)
        scale = np.maximum(np.abs(num_d), 1.0)
        assert np.max(np.abs(num_d - res["J_depth"]) / scale) < 1e-4
