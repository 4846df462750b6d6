"""Rigid transforms, Kabsch/Umeyama fitting, iterative closest point."""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from occlukit.align import (
    IcpConfig,
    IcpResult,
    RigidTransform,
    apply_transform,
    icp_align,
    kabsch,
)
from occlukit.core import PointCloud, ValidationError


def _rot(deg, axis=(0, 0, 1)):
    return Rotation.from_rotvec(np.deg2rad(deg) * np.asarray(axis, float)
                                / np.linalg.norm(axis)).as_matrix()


def _cloud(n, seed):
    return np.random.default_rng(seed).normal(size=(n, 3))


class TestRigidTransform:
    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValidationError, match="orthonormal"):
            RigidTransform(np.eye(3) * 2.0, np.zeros(3))

    def test_rejects_reflection(self):
        with pytest.raises(ValidationError, match="determinant"):
            RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_rejects_bad_shape(self):
        with pytest.raises(ValidationError, match="3x3"):
            RigidTransform(np.eye(4), np.zeros(3))

    def test_identity(self):
        t = RigidTransform.identity()
        assert np.array_equal(t.rotation, np.eye(3))
        assert np.array_equal(t.translation, np.zeros(3))

    def test_inverse_round_trip(self):
        t = RigidTransform(_rot(33, (1, 2, 3)), np.array([0.4, -1.0, 2.0]))
        pts = _cloud(50, 0)
        back = apply_transform(t.inverse(), apply_transform(t, pts))
        assert np.abs(back - pts).max() < 1e-12

    def test_compose_order(self):
        # compose(self, other) applies other first: p -> self(other(p))
        a = RigidTransform(_rot(90), np.array([1.0, 0.0, 0.0]))
        b = RigidTransform(_rot(-30, (0, 1, 0)), np.array([0.0, 2.0, 0.0]))
        pts = _cloud(20, 1)
        two_step = apply_transform(a, apply_transform(b, pts))
        one_step = apply_transform(a.compose(b), pts)
        assert np.abs(two_step - one_step).max() < 1e-12

    def test_json_round_trip(self):
        t = RigidTransform(_rot(15, (1, 0, 1)), np.array([1.5, -0.5, 3.0]))
        d = t.to_json_dict()
        assert set(d) == {"R", "t"}
        assert len(d["R"]) == 9 and len(d["t"]) == 3
        back = RigidTransform.from_json_dict(d)
        assert np.array_equal(back.rotation, t.rotation)
        assert np.array_equal(back.translation, t.translation)

    def test_from_json_missing_key(self):
        with pytest.raises(ValidationError, match="missing key"):
            RigidTransform.from_json_dict({"R": [0.0] * 9})


class TestApplyTransform:
    def test_matches_scalar_evaluation_exactly(self):
        t = RigidTransform(_rot(40, (2, -1, 5)), np.array([0.3, 0.7, -0.2]))
        pts = _cloud(200, 2)
        got = apply_transform(t, pts, scale=1.7)
        r = t.rotation * 1.7
        for k in range(len(pts)):
            x, y, z = pts[k]
            for axis in range(3):
                want = (r[axis, 0] * x + r[axis, 1] * y + r[axis, 2] * z) + t.translation[axis]
                assert got[k, axis] == want

    def test_preserves_point_cloud_type(self):
        t = RigidTransform.identity()
        out = apply_transform(t, PointCloud(_cloud(5, 3)))
        assert isinstance(out, PointCloud)

    def test_rejects_bad_shape(self):
        with pytest.raises(ValidationError, match="n, 3"):
            apply_transform(RigidTransform.identity(), np.zeros((4, 2)))


class TestKabsch:
    def test_recovers_known_transform(self):
        src = _cloud(40, 4)
        r = _rot(25, (3, 1, -2))
        tvec = np.array([0.5, -2.0, 1.0])
        dst = src @ r.T + tvec
        t = kabsch(src, dst)
        assert np.abs(t.rotation - r).max() < 1e-10
        assert np.abs(t.translation - tvec).max() < 1e-10

    def test_count_mismatch(self):
        with pytest.raises(ValidationError, match="differ"):
            kabsch(_cloud(5, 0), _cloud(6, 0))

    def test_too_few_points(self):
        with pytest.raises(ValidationError, match="at least 3"):
            kabsch(_cloud(2, 0), _cloud(2, 0))

    def test_degenerate_rank(self):
        # collinear points span rank 1: no unique rotation exists
        line = np.outer(np.arange(5, dtype=float), [1.0, 0.0, 0.0])
        with pytest.raises(ValidationError, match="degenerate"):
            kabsch(line, line)


class TestIcp:
    def test_identical_clouds_exact_identity(self):
        pts = _cloud(60, 5)
        res = icp_align(pts, pts)
        assert np.array_equal(res.transform.rotation, np.eye(3))
        assert np.array_equal(res.transform.translation, np.zeros(3))
        assert res.rms == 0.0
        assert res.iterations == 1
        assert res.rms_history == (0.0,)

    def test_recovers_rigid_motion(self):
        src = _cloud(300, 6)
        r = _rot(20, (1, 1, 0))
        tvec = np.array([0.2, -0.1, 0.4])
        dst = src @ r.T + tvec
        res = icp_align(src, dst)
        assert np.abs(res.transform.rotation - r).max() < 1e-5
        assert np.abs(res.transform.translation - tvec).max() < 1e-5
        assert res.rms < 1e-6

    def test_rms_history_non_increasing(self):
        src = _cloud(200, 7)
        dst = src @ _rot(28, (0, 1, 1)).T + np.array([1.0, 0.0, -0.5])
        res = icp_align(src, dst)
        h = np.array(res.rms_history)
        assert len(h) == res.iterations
        assert (np.diff(h) <= 0).all()
        assert res.rms == h[-1]

    def test_deterministic(self):
        src = _cloud(150, 8)
        dst = _cloud(170, 9)
        a = icp_align(src, dst)
        b = icp_align(src, dst)
        assert np.array_equal(a.transform.rotation, b.transform.rotation)
        assert np.array_equal(a.transform.translation, b.transform.translation)
        assert a.rms == b.rms and a.iterations == b.iterations

    def test_with_scale_recovers_similarity(self):
        # modest gap: ICP is a local method, so the similarity must sit
        # inside the nearest-neighbor basin of the centroid-aligned start
        src = _cloud(250, 10)
        r = _rot(15, (2, 1, 1))
        dst = 1.2 * (src @ r.T) + np.array([0.1, 0.2, 0.3])
        res = icp_align(src, dst, IcpConfig(with_scale=True))
        assert res.scale == pytest.approx(1.2, abs=1e-6)
        assert np.abs(res.transform.rotation - r).max() < 1e-6
        assert res.rms < 1e-8

    def test_scale_fixed_at_one_by_default(self):
        src = _cloud(100, 11)
        res = icp_align(src, 1.5 * src)
        assert res.scale == 1.0

    def test_iteration_cap(self):
        src = _cloud(120, 12)
        dst = _cloud(120, 13)
        res = icp_align(src, dst, IcpConfig(max_iterations=3))
        assert res.iterations <= 3

    def test_too_few_points(self):
        with pytest.raises(ValidationError, match="at least 3"):
            icp_align(_cloud(2, 0), _cloud(10, 0))

    def test_accepts_point_clouds(self):
        pts = PointCloud(_cloud(50, 14))
        res = icp_align(pts, pts)
        assert res.rms == 0.0

    def test_result_apply(self):
        src = _cloud(80, 15)
        dst = src @ _rot(10).T + np.array([0.0, 1.0, 0.0])
        res = icp_align(src, dst)
        assert np.abs(res.apply(src) - dst).max() < 1e-5


class TestIcpConfig:
    def test_validates_iterations(self):
        with pytest.raises(ValidationError, match="max_iterations"):
            IcpConfig(max_iterations=0)

    def test_validates_tolerance(self):
        with pytest.raises(ValidationError, match="convergence_tol"):
            IcpConfig(convergence_tol=0.0)

    def test_result_defaults(self):
        res = IcpResult(transform=RigidTransform.identity(), rms=0.0, iterations=1)
        assert res.scale == 1.0
        assert res.rms_history == ()
