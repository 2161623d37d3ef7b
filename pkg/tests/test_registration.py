import math

import numpy as np
import pytest

from ramsim import mesh as meshmod
from ramsim.errors import DegenerateGeometryError, TooFewPointsError
from ramsim.geometry import RigidTransform, compose, invert, pose_error, rot_z
from ramsim.registration import (
    PointCloud,
    icp,
    load_points,
    paired_point_register,
    save_points,
)


def random_transform(rng, t_scale=1.0):
    return RigidTransform(rng.normal(size=4), rng.normal(scale=t_scale, size=3))


class TestPairedPoint:
    def test_identity_on_equal_clouds(self):
        pts = PointCloud([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
        res = paired_point_register(pts, pts)
        assert res.fre_rms < 1e-14
        assert res.transform.allclose(RigidTransform.identity(), 1e-12, 1e-12)

    def test_exact_recovery(self):
        truth = compose(RigidTransform.from_translation(1, 2, 3), rot_z(math.pi / 2))
        src = PointCloud([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
        res = paired_point_register(src, src.transformed(truth))
        assert res.fre_rms < 1e-12
        assert res.transform.allclose(truth, 1e-12, 1e-12)

    def test_noise_monte_carlo(self):
        # 20 random points, ~0.5 mm rms perturbation of the targets; with
        # 6 dof absorbed out of 3N coordinates the expected FRE sits near
        # sigma * sqrt(3 - 6/N) for per-axis sigma = 0.5mm/sqrt(3)
        for seed in range(100):
            rng = np.random.default_rng(seed)
            truth = random_transform(rng, t_scale=0.1)
            src = PointCloud(rng.uniform(-0.1, 0.1, size=(20, 3)))
            noise = rng.normal(scale=0.5e-3 / math.sqrt(3.0), size=(20, 3))
            tgt = PointCloud(truth.apply(src.points) + noise)
            res = paired_point_register(src, tgt)
            assert 0.3e-3 < res.fre_rms < 0.8e-3

    def test_too_few_points(self):
        two = PointCloud([[0, 0, 0], [1, 0, 0]])
        with pytest.raises(TooFewPointsError):
            paired_point_register(two, two)

    def test_collinear_sources(self):
        line = PointCloud([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]])
        with pytest.raises(DegenerateGeometryError):
            paired_point_register(line, line)

    def test_unequal_sizes(self):
        a = PointCloud([[0, 0, 0], [1, 0, 0], [0, 1, 0]])
        b = PointCloud([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]])
        with pytest.raises(ValueError):
            paired_point_register(a, b)

    def test_rotation_never_a_reflection(self):
        # mirror-symmetric correspondence tempts the SVD toward det = -1
        src = PointCloud([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1]])
        tgt = PointCloud(src.points * np.array([1.0, 1.0, -1.0]))
        res = paired_point_register(src, tgt)
        assert np.linalg.det(res.transform.rotation_matrix()) == pytest.approx(1.0)

    def test_returned_fit_is_locally_optimal(self):
        rng = np.random.default_rng(99)
        truth = random_transform(rng)
        src = PointCloud(rng.uniform(-0.1, 0.1, size=(15, 3)))
        tgt = PointCloud(truth.apply(src.points) + rng.normal(scale=1e-3, size=(15, 3)))
        res = paired_point_register(src, tgt)

        def rms(transform):
            r = transform.apply(src.points) - tgt.points
            return float(np.sqrt(np.mean(np.sum(r * r, axis=1))))

        base = rms(res.transform)
        for _ in range(100):
            axis = rng.normal(size=3)
            tweak = RigidTransform.from_axis_angle(axis, math.radians(0.1 * rng.uniform(0.1, 1.0)))
            assert rms(compose(res.transform, tweak)) >= base - 1e-15

    def test_equivariance(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            truth = random_transform(rng)
            r = random_transform(rng)
            src = PointCloud(rng.uniform(-0.2, 0.2, size=(12, 3)))
            tgt = src.transformed(truth)
            t_prime = paired_point_register(src.transformed(r), tgt).transform
            assert compose(t_prime, r).allclose(truth, 1e-9, 1e-9)


@pytest.fixture(scope="module")
def head():
    return meshmod.make_icosphere(radius=0.09, subdivisions=3)


@pytest.fixture(scope="module")
def lumpy():
    return meshmod.make_lumpy_phantom()


def sample_surface(mesh, n, rng):
    areas = mesh.areas()
    idx = rng.choice(len(mesh), size=n, p=areas / areas.sum())
    u = rng.uniform(size=(n, 1))
    v = rng.uniform(size=(n, 1))
    flip = (u + v) > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    corners = mesh.triangle_corners(idx)
    return corners[:, 0] + u * (corners[:, 1] - corners[:, 0]) + v * (corners[:, 2] - corners[:, 0])


class TestIcp:
    def test_exact_start_converges_immediately(self, head):
        rng = np.random.default_rng(0)
        src = PointCloud(sample_surface(head, 100, rng))
        res = icp(src, head, RigidTransform.identity())
        assert res.converged
        assert res.iterations <= 1
        assert res.fre_rms < 1e-9

    def test_recovers_small_offset(self, lumpy):
        for seed in range(3):
            rng = np.random.default_rng(seed)
            pts = sample_surface(lumpy, 200, rng)
            tdir = rng.normal(size=3)
            offset = compose(
                RigidTransform.from_translation(*(5e-3 * tdir / np.linalg.norm(tdir))),
                RigidTransform.from_axis_angle(rng.normal(size=3), math.radians(3.0)))
            # source points live in "subject" space, displaced from the mesh
            src = PointCloud(invert(offset).apply(pts))
            res = icp(src, lumpy, RigidTransform.identity())
            err = pose_error(res.transform, offset)
            assert res.converged
            assert err.translation_error < 0.5e-3
            assert err.rotation_error < math.radians(0.5)

    def test_zero_max_iters_returns_initial(self, head):
        rng = np.random.default_rng(3)
        src = PointCloud(sample_surface(head, 50, rng))
        start = RigidTransform.from_translation(0.01, 0.0, 0.0)
        res = icp(src, head, start, max_iters=0)
        assert not res.converged
        assert res.iterations == 0
        assert res.transform.allclose(start, 0.0, 0.0)

    def test_rms_non_increasing(self, head, monkeypatch):
        from ramsim import registration as reg

        seen = []
        orig = reg.paired_point_register

        def spy(src, tgt):
            out = orig(src, tgt)
            seen.append(out.fre_rms)
            return out

        monkeypatch.setattr(reg, "paired_point_register", spy)
        rng = np.random.default_rng(8)
        src = PointCloud(invert(RigidTransform.from_translation(4e-3, -2e-3, 3e-3)).apply(
            sample_surface(head, 150, rng)))
        reg.icp(src, head, RigidTransform.identity())
        assert len(seen) >= 2
        assert all(b <= a + 1e-15 for a, b in zip(seen, seen[1:]))


class TestPointFiles:
    def test_csv_round_trip(self, tmp_path):
        cloud = PointCloud([[0.001, 0.002, 0.003], [-0.01, 0.0, 0.25]])
        path = tmp_path / "p.csv"
        save_points(path, cloud, units="mm")
        back = load_points(str(path), units="mm")
        np.testing.assert_allclose(back.points, cloud.points, atol=1e-12)

    def test_csv_header_skipped(self, tmp_path):
        path = tmp_path / "h.csv"
        path.write_text("x,y,z\n1,2,3\n4,5,6\n")
        back = load_points(str(path), units="mm")
        np.testing.assert_allclose(back.points, [[1e-3, 2e-3, 3e-3], [4e-3, 5e-3, 6e-3]])

    def test_json_round_trip(self, tmp_path):
        cloud = PointCloud([[1.0, 2.0, 3.0]])
        path = tmp_path / "p.json"
        save_points(path, cloud, units="m")
        back = load_points(str(path), units="m")
        np.testing.assert_allclose(back.points, cloud.points, atol=1e-12)
