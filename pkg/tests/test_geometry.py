import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from featloc.geometry import (
    DegenerateMatrix,
    Intrinsics,
    MalformedPoseFile,
    Pose,
    PoseError,
    axis_angle_rotation,
    load_pose_file,
    nearest_training_pose,
    perturb_pose,
    pose_error,
    recenter_poses,
    save_pose_file,
    svd_orthonormalize,
)


def random_pose(rng):
    return Pose(Rotation.random(random_state=rng).as_matrix(), rng.normal(size=3))


class TestPoseType:
    def test_valid_rotation_accepted(self):
        p = Pose(np.eye(3), np.array([1.0, 2.0, 3.0]))
        assert np.allclose(p.matrix()[3], [0, 0, 0, 1])

    def test_non_orthonormal_rejected(self):
        with pytest.raises(ValueError):
            Pose(np.eye(3) * 1.1, np.zeros(3))

    def test_reflection_rejected(self):
        with pytest.raises(ValueError):
            Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            Pose(np.eye(3), np.array([np.nan, 0.0, 0.0]))

    def test_compose_inverse_round_trip(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            p = random_pose(rng)
            q = p.compose(p.inverse())
            np.testing.assert_allclose(q.matrix(), np.eye(4), atol=1e-12)

    def test_matrix34_layout(self):
        p = Pose(np.eye(3), np.array([4.0, 5.0, 6.0]))
        m = p.matrix34()
        assert m.shape == (3, 4)
        np.testing.assert_array_equal(m[:, 3], [4, 5, 6])


class TestIntrinsics:
    def test_valid(self):
        k = Intrinsics(100.0, (32.0, 24.0), 64, 48)
        assert k.focal == 100.0

    def test_nonpositive_focal_rejected(self):
        with pytest.raises(ValueError):
            Intrinsics(0.0, (32.0, 24.0), 64, 48)

    def test_principal_point_outside_bounds_rejected(self):
        with pytest.raises(ValueError):
            Intrinsics(100.0, (100.0, 24.0), 64, 48)

    def test_scaled_halves_everything(self):
        k = Intrinsics(100.0, (32.0, 24.0), 64, 48).scaled(0.5)
        assert k.focal == 50.0
        assert k.principal_point == (16.0, 12.0)
        assert (k.width, k.height) == (32, 24)


class TestPoseErrorType:
    def test_negative_translation_rejected(self):
        with pytest.raises(ValueError):
            PoseError(-0.1, 10.0)

    def test_rotation_over_180_rejected(self):
        with pytest.raises(ValueError):
            PoseError(0.1, 181.0)


class TestSvdOrthonormalize:
    def test_rotation_is_fixed_point(self):
        # [TRIVIAL] projection of a rotation is itself
        rng = np.random.default_rng(1)
        for _ in range(50):
            r = Rotation.random(random_state=rng).as_matrix()
            np.testing.assert_allclose(svd_orthonormalize(r), r, atol=1e-6)

    def test_scale_invariance(self):
        # [TRIVIAL] uniform scaling shifts all singular values equally
        rng = np.random.default_rng(2)
        for _ in range(20):
            r = Rotation.random(random_state=rng).as_matrix()
            np.testing.assert_allclose(svd_orthonormalize(2.0 * r), r, atol=1e-6)

    def test_nearest_rotation_against_sampling_oracle(self):
        # [DERIVED] no rotation among 1e5 random samples is closer in
        # Frobenius norm than the projection output
        rng = np.random.default_rng(3)
        samples = Rotation.random(100_000, random_state=rng).as_matrix()
        for _ in range(5):
            m = rng.normal(size=(3, 3))
            if np.linalg.det(m) < 0:
                m[0] = -m[0]
            r = svd_orthonormalize(m)
            d_ours = np.linalg.norm(r - m)
            d_samples = np.linalg.norm(samples - m, axis=(1, 2)).min()
            assert d_ours <= d_samples + 1e-9

    def test_determinant_plus_one_even_for_reflections(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            m = rng.normal(size=(3, 3))
            r = svd_orthonormalize(m)
            assert abs(np.linalg.det(r) - 1.0) < 1e-9

    def test_idempotent(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            m = rng.normal(size=(3, 3))
            once = svd_orthonormalize(m)
            np.testing.assert_allclose(svd_orthonormalize(once), once, atol=1e-6)

    def test_rank_deficient_raises(self):
        m = np.zeros((3, 3))
        m[0, 0] = 1.0
        with pytest.raises(DegenerateMatrix):
            svd_orthonormalize(m)

    def test_nonfinite_raises(self):
        m = np.eye(3)
        m[1, 1] = np.inf
        with pytest.raises(DegenerateMatrix):
            svd_orthonormalize(m)


class TestPoseErrorMetric:
    def test_identical_poses_zero_error(self):
        rng = np.random.default_rng(6)
        p = random_pose(rng)
        e = pose_error(p, p)
        assert e.translation_error == 0.0
        # acos near 1 amplifies double roundoff to about a microdegree
        assert e.rotation_error < 1e-5

    def test_345_triangle_and_z_rotation(self):
        # [TRIVIAL] axis-angle by construction: 10 deg about z, |t| = 0.5
        a = Pose.identity()
        b = Pose(axis_angle_rotation(np.array([0.0, 0.0, 1.0]), math.radians(10.0)),
                 np.array([0.3, 0.0, 0.4]))
        e = pose_error(a, b)
        assert abs(e.translation_error - 0.5) < 1e-12
        assert abs(e.rotation_error - 10.0) < 1e-9

    def test_matches_quaternion_oracle(self):
        # [DERIVED] 2*arccos(|q_a . q_b|) computed via scipy quaternions
        rng = np.random.default_rng(7)
        for _ in range(200):
            a, b = random_pose(rng), random_pose(rng)
            qa = Rotation.from_matrix(a.rotation).as_quat()
            qb = Rotation.from_matrix(b.rotation).as_quat()
            expected = math.degrees(2.0 * math.acos(min(1.0, abs(float(np.dot(qa, qb))))))
            assert abs(pose_error(a, b).rotation_error - expected) < 1e-6

    def test_symmetric(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            a, b = random_pose(rng), random_pose(rng)
            e1, e2 = pose_error(a, b), pose_error(b, a)
            assert abs(e1.translation_error - e2.translation_error) < 1e-9
            assert abs(e1.rotation_error - e2.rotation_error) < 1e-9

    def test_rotation_error_left_invariant(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            a, b, c = random_pose(rng), random_pose(rng), random_pose(rng)
            la = Pose(c.rotation @ a.rotation, a.translation)
            lb = Pose(c.rotation @ b.rotation, b.translation)
            assert abs(pose_error(a, b).rotation_error
                       - pose_error(la, lb).rotation_error) < 1e-6

    def test_arccos_domain_clamped(self):
        # 180-degree rotation puts the trace argument exactly at -1
        r = axis_angle_rotation(np.array([1.0, 0.0, 0.0]), math.pi)
        e = pose_error(Pose.identity(), Pose(svd_orthonormalize(r), np.zeros(3)))
        assert abs(e.rotation_error - 180.0) < 1e-6


class TestPerturbPose:
    def test_zero_noise_is_identity(self):
        rng = np.random.default_rng(10)
        p = random_pose(rng)
        q = perturb_pose(p, 0.0, 0.0, rng)
        np.testing.assert_array_equal(q.matrix(), p.matrix())

    @pytest.mark.parametrize("psi,phi", [(0.2, 10.0), (3.0, 7.5)])
    def test_bounds_hold_over_many_draws(self, psi, phi):
        # [DERIVED] Monte-Carlo bound check over 1e4 draws
        rng = np.random.default_rng(11)
        p = random_pose(rng)
        max_t, max_r = 0.0, 0.0
        for _ in range(10_000):
            q = perturb_pose(p, psi, phi, rng)
            e = pose_error(p, q)
            max_t = max(max_t, e.translation_error)
            max_r = max(max_r, e.rotation_error)
        assert max_t <= psi + 1e-12
        assert max_r <= phi + 1e-9
        # the sampler should actually fill most of the allowed range
        assert max_t > 0.9 * psi
        assert max_r > 0.9 * phi

    def test_deterministic_given_rng_state(self):
        p = random_pose(np.random.default_rng(12))
        q1 = perturb_pose(p, 0.5, 20.0, np.random.default_rng(99))
        q2 = perturb_pose(p, 0.5, 20.0, np.random.default_rng(99))
        np.testing.assert_array_equal(q1.matrix(), q2.matrix())

    def test_negative_noise_rejected(self):
        p = Pose.identity()
        with pytest.raises(ValueError):
            perturb_pose(p, -1.0, 0.0, np.random.default_rng(0))


class TestRecenterPoses:
    def test_single_pose_lands_at_origin(self):
        rng = np.random.default_rng(13)
        p = random_pose(rng)
        out, _ = recenter_poses([p])
        np.testing.assert_allclose(out[0].translation, 0.0, atol=1e-12)

    def test_round_trip_through_inverse_alignment(self):
        rng = np.random.default_rng(14)
        poses = [random_pose(rng) for _ in range(10)]
        out, align = recenter_poses(poses)
        back = [align.inverse().compose(p) for p in out]
        for orig, rec in zip(poses, back):
            np.testing.assert_allclose(rec.matrix(), orig.matrix(), atol=1e-6)

    def test_symmetric_pair_centers_sum_to_zero(self):
        r = np.eye(3)
        poses = [Pose(r, np.array([1.0, 0.0, 0.0])), Pose(r, np.array([-1.0, 0.0, 0.0]))]
        out, _ = recenter_poses(poses)
        np.testing.assert_allclose(out[0].translation + out[1].translation, 0.0, atol=1e-12)

    def test_mean_view_direction_maps_to_plus_z(self):
        rng = np.random.default_rng(15)
        poses = [random_pose(rng) for _ in range(8)]
        out, _ = recenter_poses(poses)
        fwd = np.stack([p.rotation[:, 2] for p in out]).mean(axis=0)
        fwd /= np.linalg.norm(fwd)
        np.testing.assert_allclose(fwd, [0.0, 0.0, 1.0], atol=1e-9)

    def test_empty_list_rejected(self):
        with pytest.raises(ValueError):
            recenter_poses([])


class TestNearestTrainingPose:
    def test_exact_match_returns_its_index(self):
        rng = np.random.default_rng(16)
        train = [random_pose(rng) for _ in range(7)]
        for k in range(7):
            assert nearest_training_pose(train[k], train) == k

    def test_ordered_distances(self):
        q = Pose.identity()
        train = [Pose(np.eye(3), np.array([d, 0.0, 0.0])) for d in (1.0, 0.5, 2.0)]
        assert nearest_training_pose(q, train) == 1

    def test_matches_exhaustive_scan_oracle(self):
        # [DERIVED] exhaustive scan
        rng = np.random.default_rng(17)
        for _ in range(20):
            train = [random_pose(rng) for _ in range(30)]
            q = random_pose(rng)
            best, best_d = 0, np.inf
            for i, p in enumerate(train):
                d = float(np.linalg.norm(q.translation - p.translation))
                if d < best_d:
                    best, best_d = i, d
            assert nearest_training_pose(q, train) == best

    def test_tie_breaks_to_lowest_index(self):
        q = Pose.identity()
        t = Pose(np.eye(3), np.array([1.0, 0.0, 0.0]))
        train = [t, Pose(np.eye(3), np.array([-1.0, 0.0, 0.0])), t]
        assert nearest_training_pose(q, train) == 0

    def test_empty_train_rejected(self):
        with pytest.raises(ValueError):
            nearest_training_pose(Pose.identity(), [])


class TestPoseFileIO:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(18)
        p = random_pose(rng)
        path = tmp_path / "pose.txt"
        save_pose_file(path, p)
        q = load_pose_file(path)
        np.testing.assert_allclose(q.matrix(), p.matrix(), atol=1e-12)

    def test_wrong_count_raises(self, tmp_path):
        path = tmp_path / "pose.txt"
        path.write_text("1 0 0\n0 1 0\n")
        with pytest.raises(MalformedPoseFile):
            load_pose_file(path)

    def test_non_numeric_raises(self, tmp_path):
        path = tmp_path / "pose.txt"
        path.write_text(" ".join(["x"] * 16))
        with pytest.raises(MalformedPoseFile):
            load_pose_file(path)

    def test_bad_last_row_raises(self, tmp_path):
        path = tmp_path / "pose.txt"
        m = np.eye(4)
        m[3, 0] = 0.5
        path.write_text("\n".join(" ".join(str(v) for v in row) for row in m))
        with pytest.raises(MalformedPoseFile):
            load_pose_file(path)

    def test_non_rotation_block_raises(self, tmp_path):
        path = tmp_path / "pose.txt"
        m = np.eye(4)
        m[0, 0] = 0.0  # rank-deficient rotation block
        path.write_text("\n".join(" ".join(str(v) for v in row) for row in m))
        with pytest.raises(MalformedPoseFile):
            load_pose_file(path)
