import math

import numpy as np
import pytest
import torch

from nerfaug.geometry import (CameraIntrinsics, Pose, PoseCorrection, Ray,
                              apply_pose_correction, axis_angle_to_matrix_t,
                              cast_ray_bundle, cast_rays, project_to_pixel,
                              quat_from_axis_angle, sample_along_ray,
                              stratified_depths)


def random_pose(rng):
    q = rng.normal(size=4)
    return Pose(q / np.linalg.norm(q), rng.normal(size=3) * 2.0)


class TestPose:
    def test_quaternion_normalized_on_construction(self):
        p = Pose(np.array([2.0, 0.0, 0.0, 0.0]), np.zeros(3))
        assert abs(np.linalg.norm(p.q) - 1.0) < 1e-9

    def test_compose_with_inverse_is_identity(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            p = random_pose(rng)
            ident = p.compose(p.inverse())
            assert abs(abs(ident.q[0]) - 1.0) < 1e-9
            assert np.linalg.norm(ident.t) < 1e-9

    def test_composition_keeps_unit_norm(self):
        rng = np.random.default_rng(4)
        p = random_pose(rng)
        for _ in range(50):
            p = p.compose(random_pose(rng))
            assert abs(np.linalg.norm(p.q) - 1.0) < 1e-9


class TestCastRays:
    def test_principal_point_ray_is_optical_axis(self):
        # pixel whose center is exactly the principal point
        intr = CameraIntrinsics(100.0, 100.0, 32.5, 32.5, 64, 64)
        [ray] = cast_rays(Pose.identity(), intr, [(32, 32)])
        np.testing.assert_allclose(ray.direction, [0.0, 0.0, 1.0], atol=1e-12)

    def test_pinhole_direction_example(self):
        intr = CameraIntrinsics(100.0, 100.0, 32.0, 32.0, 128, 64)
        [ray] = cast_rays(Pose.identity(), intr, [(82, 32)])
        # hand evaluation of the half-pixel pinhole formula:
        # x = (82.5 - 32)/100 = 0.505, y = (32.5 - 32)/100 = 0.005
        expected = np.array([0.505, 0.005, 1.0])
        expected /= np.linalg.norm(expected)
        np.testing.assert_allclose(ray.direction, expected, atol=1e-12)

    def test_directions_are_unit(self):
        rng = np.random.default_rng(0)
        intr = CameraIntrinsics(80.0, 90.0, 31.0, 30.0, 64, 60)
        for _ in range(10):
            pose = random_pose(rng)
            pix = np.stack([rng.integers(0, 64, 20), rng.integers(0, 60, 20)], -1)
            _, dirs = cast_ray_bundle(pose, intr, pix)
            np.testing.assert_allclose(np.linalg.norm(dirs, axis=-1), 1.0, atol=1e-9)

    def test_origin_equals_translation(self):
        pose = Pose(np.array([1.0, 0, 0, 0]), np.array([1.0, 2.0, 3.0]))
        intr = CameraIntrinsics(100.0, 100.0, 32.0, 32.0, 64, 64)
        origins, _ = cast_ray_bundle(pose, intr, [(5, 5)])
        np.testing.assert_array_equal(origins[0], pose.t)

    def test_out_of_bounds_pixel_rejected(self):
        intr = CameraIntrinsics(100.0, 100.0, 32.0, 32.0, 64, 64)
        with pytest.raises(ValueError):
            cast_rays(Pose.identity(), intr, [(64, 0)])
        with pytest.raises(ValueError):
            cast_rays(Pose.identity(), intr, [(0, -1)])

    def test_reprojection_round_trip(self):
        rng = np.random.default_rng(11)
        intr = CameraIntrinsics(120.0, 110.0, 40.0, 28.0, 96, 64)
        for _ in range(20):
            pose = random_pose(rng)
            pix = np.stack([rng.integers(0, 96, 5), rng.integers(0, 64, 5)], -1)
            origins, dirs = cast_ray_bundle(pose, intr, pix)
            for lam in (0.5, 7.0):
                pts = origins + lam * dirs
                back = project_to_pixel(pose, intr, pts)
                np.testing.assert_allclose(back, pix, atol=1e-6)


class TestPoseCorrection:
    def test_zero_correction_is_exact_identity(self):
        pose = random_pose(np.random.default_rng(5))
        out = apply_pose_correction(pose, PoseCorrection())
        np.testing.assert_array_equal(out.q, pose.q)
        np.testing.assert_array_equal(out.t, pose.t)

    def test_quarter_turn_about_z(self):
        corr = PoseCorrection(rotation=np.array([0.0, 0.0, math.pi / 2]))
        out = apply_pose_correction(Pose.identity(), corr)
        expected = np.array([math.cos(math.pi / 4), 0.0, 0.0, math.sin(math.pi / 4)])
        np.testing.assert_allclose(out.q, expected, atol=1e-9)

    def test_rotation_delta_out_of_branch_rejected(self):
        with pytest.raises(ValueError):
            PoseCorrection(rotation=np.array([0.0, 0.0, 3.2]))

    def test_origin_gradient_wrt_translation_is_identity(self):
        corr = torch.zeros(6, dtype=torch.float64, requires_grad=True)
        t = torch.tensor([1.0, 2.0, 3.0], dtype=torch.float64)

        def origin(c):
            return t + c[3:]

        jac = torch.autograd.functional.jacobian(origin, corr)
        np.testing.assert_array_equal(jac[:, 3:].numpy(), np.eye(3))

    def test_axis_angle_matrix_matches_quaternion_path(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            omega = rng.normal(scale=0.5, size=3)
            m_t = axis_angle_to_matrix_t(torch.tensor(omega)).numpy()
            q = quat_from_axis_angle(omega)
            m_q = Pose(q, np.zeros(3)).rotation_matrix()
            np.testing.assert_allclose(m_t, m_q, atol=1e-12)


class TestSampleAlongRay:
    def ray(self):
        return Ray(np.zeros(3), np.array([0.0, 0.0, 1.0]))

    def test_single_sample_at_bin_midpoint(self):
        [s] = sample_along_ray(self.ray(), 1.0, 2.0, 1)
        np.testing.assert_allclose(s.position, [0, 0, 1.5])
        assert s.delta == pytest.approx(1.0)

    def test_four_midpoints_without_jitter(self):
        samples = sample_along_ray(self.ray(), 1.0, 2.0, 4)
        depths = [s.position[2] for s in samples]
        np.testing.assert_allclose(depths, [1.125, 1.375, 1.625, 1.875])
        np.testing.assert_allclose([s.delta for s in samples], 0.25)

    def test_same_seed_bit_identical(self):
        a = sample_along_ray(self.ray(), 1.0, 2.0, 8, jitter_seed=42)
        b = sample_along_ray(self.ray(), 1.0, 2.0, 8, jitter_seed=42)
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(sa.position, sb.position)
            assert sa.delta == sb.delta

    def test_invalid_bounds_rejected(self):
        with pytest.raises(ValueError):
            sample_along_ray(self.ray(), 2.0, 1.0, 4)
        with pytest.raises(ValueError):
            sample_along_ray(self.ray(), 0.0, 1.0, 4)

    def test_stratification_one_sample_per_bin(self):
        rng = np.random.default_rng(0)
        depths = stratified_depths(1.0, 3.0, 16, True, rng, n_rays=50)
        edges = np.linspace(1.0, 3.0, 17)
        for row in depths:
            counts, _ = np.histogram(row, bins=edges)
            assert (counts == 1).all()

    def test_view_angles_match_direction(self):
        d = np.array([1.0, 1.0, 1.0]) / math.sqrt(3)
        [s] = sample_along_ray(Ray(np.zeros(3), d), 1.0, 2.0, 1)
        assert s.theta == pytest.approx(math.acos(1 / math.sqrt(3)))
        assert s.phi == pytest.approx(math.pi / 4)
