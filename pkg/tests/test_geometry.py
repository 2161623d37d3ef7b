import math

import numpy as np
import pytest

from ramsim import geometry
from ramsim.errors import AmbiguousPathError, DisconnectedFramesError
from ramsim.geometry import (
    FrameGraph,
    RigidTransform,
    compose,
    invert,
    per_axis_error,
    pose_error,
    quat_angle,
    quat_conj,
    quat_mul,
    rot_x,
    rot_y,
    rot_z,
    trans,
)

I = RigidTransform.identity()


def random_transform(rng, t_scale=1.0):
    q = rng.normal(size=4)
    return RigidTransform(q, rng.normal(scale=t_scale, size=3))


class TestRigidTransform:
    def test_compose_identity(self):
        assert compose(I, I).allclose(I, 0.0, 0.0)

    def test_compose_inverse_is_identity(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            t = random_transform(rng)
            assert compose(t, invert(t)).allclose(I, 1e-10, 1e-10)
            assert compose(invert(t), t).allclose(I, 1e-10, 1e-10)

    def test_compose_translation_then_rotation(self):
        # trans(1,0,0) after rotZ(90 deg): p=(1,0,0) -> rot -> (0,1,0) -> (1,1,0)
        t = compose(trans(1, 0, 0), rot_z(math.pi / 2))
        np.testing.assert_allclose(t.apply([1.0, 0.0, 0.0]), [1.0, 1.0, 0.0], atol=1e-12)

    def test_invert_identity(self):
        assert invert(I).allclose(I, 0.0, 0.0)

    def test_invert_pure_translation(self):
        assert invert(trans(1, 2, 3)).allclose(trans(-1, -2, -3), 1e-12, 1e-12)

    def test_invert_pure_rotation(self):
        assert invert(rot_z(math.pi / 2)).allclose(rot_z(-math.pi / 2), 1e-12, 1e-12)

    def test_quaternion_stays_normalized(self):
        rng = np.random.default_rng(3)
        t = random_transform(rng)
        for _ in range(200):
            t = compose(t, random_transform(rng))
        assert abs(np.linalg.norm(t.q) - 1.0) < 1e-9

    def test_compose_associative(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            a, b, c = (random_transform(rng) for _ in range(3))
            lhs = compose(compose(a, b), c)
            rhs = compose(a, compose(b, c))
            assert lhs.allclose(rhs, 1e-9, 1e-9)

    def test_double_cover_canonicalized(self):
        q = np.array([-1.0, 0.0, 0.0, 0.0])
        t = RigidTransform(q)
        assert t.q[0] == 1.0

    def test_json_round_trip(self):
        rng = np.random.default_rng(5)
        t = random_transform(rng)
        back = RigidTransform.from_json(t.to_json())
        assert back.allclose(t, 1e-15, 1e-12)
        assert set(t.to_json()) == {"q", "t"}

    def test_matrix_round_trip(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            t = random_transform(rng)
            back = RigidTransform.from_matrix(t.matrix())
            assert back.allclose(t, 1e-12, 1e-12)

    def test_apply_batch(self):
        rng = np.random.default_rng(2)
        t = random_transform(rng)
        pts = rng.normal(size=(10, 3))
        single = np.array([t.apply(p) for p in pts])
        np.testing.assert_allclose(t.apply(pts), single, atol=1e-12)

    def test_immutable(self):
        t = trans(1, 2, 3)
        with pytest.raises(ValueError):
            t.t[0] = 5.0


class TestPoseError:
    def test_zero_for_equal_poses(self):
        rng = np.random.default_rng(1)
        t = random_transform(rng)
        e = pose_error(t, t)
        assert e.translation_error == 0.0
        assert e.rotation_error < 1e-12

    def test_345_triangle(self):
        e = pose_error(trans(0, 0, 0), trans(0.003, 0.004, 0.0))
        assert abs(e.translation_error - 0.005) < 1e-15

    def test_single_axis_rotation(self):
        e = pose_error(I, rot_z(math.pi / 2))
        assert abs(e.rotation_error - math.pi / 2) < 1e-12

    def test_symmetry(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            a, b = random_transform(rng), random_transform(rng)
            ab, ba = pose_error(a, b), pose_error(b, a)
            assert abs(ab.translation_error - ba.translation_error) < 1e-12
            assert abs(ab.rotation_error - ba.rotation_error) < 1e-12

    def test_rotation_error_is_geodesic_distance(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            a, b = random_transform(rng), random_transform(rng)
            # angle via quaternion dot product
            d = abs(float(np.dot(a.q, b.q)))
            expected = 2.0 * math.acos(min(1.0, d))
            got = pose_error(a, b).rotation_error
            assert abs(got - expected) < 1e-9
            # angle-axis of R1^-1 R2
            rel = compose(invert(a), b)
            assert abs(got - quat_angle(rel.q)) < 1e-9

    def test_rotation_error_bounded_by_pi(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            e = pose_error(random_transform(rng), random_transform(rng))
            assert 0.0 <= e.rotation_error <= math.pi + 1e-12


class TestPerAxisError:
    def test_identical_poses(self):
        rng = np.random.default_rng(10)
        t = random_transform(rng)
        e = per_axis_error(t, t)
        np.testing.assert_allclose(e.translation, 0.0, atol=1e-15)
        np.testing.assert_allclose(e.rotation, 0.0, atol=1e-12)
        assert not e.gimbal_degenerate

    def test_translation_offset_passes_through(self):
        offset = np.array([0.001, -0.002, 0.003])
        e = per_axis_error(trans(0, 0, 0), trans(*offset))
        np.testing.assert_allclose(e.translation, offset, atol=1e-15)

    def test_relative_rot_x(self):
        a = math.radians(10.0)
        e = per_axis_error(I, rot_x(a))
        np.testing.assert_allclose(e.rotation, [a, 0.0, 0.0], atol=1e-12)

    def test_decomposition_reconstructs_rotation(self):
        # oracle: rebuild Rz(yaw) Ry(pitch) Rx(roll) and compare matrices
        rng = np.random.default_rng(12)
        for _ in range(200):
            planned = random_transform(rng)
            actual = random_transform(rng)
            e = per_axis_error(planned, actual)
            if e.gimbal_degenerate:
                continue
            roll, pitch, yaw = e.rotation
            rebuilt = compose(rot_z(yaw), compose(rot_y(pitch), rot_x(roll)))
            rel = compose(invert(planned), actual)
            np.testing.assert_allclose(
                rebuilt.rotation_matrix(), rel.rotation_matrix(), atol=1e-9)

    def test_gimbal_flag(self):
        e = per_axis_error(I, rot_y(math.pi / 2))
        assert e.gimbal_degenerate
        # degenerate decomposition still reconstructs the rotation
        roll, pitch, yaw = e.rotation
        rebuilt = compose(rot_z(yaw), compose(rot_y(pitch), rot_x(roll)))
        np.testing.assert_allclose(
            rebuilt.rotation_matrix(), rot_y(math.pi / 2).rotation_matrix(), atol=1e-9)


class TestFrameGraph:
    def test_resolve_self(self):
        g = FrameGraph()
        assert g.resolve("A", "A").allclose(I, 0.0, 0.0)

    def test_two_edge_chain(self):
        rng = np.random.default_rng(21)
        t1, t2 = random_transform(rng), random_transform(rng)
        g = FrameGraph()
        g.add_edge("A", "B", t1)
        g.add_edge("B", "C", t2)
        assert g.resolve("A", "C").allclose(compose(t1, t2), 1e-12, 1e-12)

    def test_reversed_edge(self):
        rng = np.random.default_rng(22)
        t_ab, t_cb = random_transform(rng), random_transform(rng)
        g = FrameGraph()
        g.add_edge("A", "B", t_ab)
        g.add_edge("C", "B", t_cb)
        expected = compose(t_ab, invert(t_cb))
        assert g.resolve("A", "C").allclose(expected, 1e-12, 1e-12)

    def test_disconnected(self):
        g = FrameGraph()
        g.add_edge("A", "B", I)
        g.add_edge("C", "D", I)
        with pytest.raises(DisconnectedFramesError):
            g.resolve("A", "D")
        with pytest.raises(DisconnectedFramesError):
            g.resolve("A", "Z")

    def test_consistent_cycle_ok(self):
        rng = np.random.default_rng(23)
        t1, t2 = random_transform(rng), random_transform(rng)
        g = FrameGraph()
        g.add_edge("A", "B", t1)
        g.add_edge("B", "C", t2)
        g.add_edge("A", "C", compose(t1, t2))
        assert g.resolve("A", "C").allclose(compose(t1, t2), 1e-9, 1e-9)

    def test_inconsistent_cycle_raises(self):
        rng = np.random.default_rng(24)
        t1, t2 = random_transform(rng), random_transform(rng)
        g = FrameGraph()
        g.add_edge("A", "B", t1)
        g.add_edge("B", "C", t2)
        g.add_edge("A", "C", compose(compose(t1, t2), trans(0.01, 0, 0)))
        with pytest.raises(AmbiguousPathError):
            g.resolve("A", "C")

    def test_path_consistency_on_random_trees(self):
        rng = np.random.default_rng(25)
        for _ in range(20):
            n = 8
            names = [f"F{i}" for i in range(n)]
            g = FrameGraph()
            for i in range(1, n):
                parent = names[int(rng.integers(0, i))]
                g.add_edge(parent, names[i], random_transform(rng))
            a, b, c = (names[int(i)] for i in rng.integers(0, n, size=3))
            via = compose(g.resolve(a, b), g.resolve(b, c))
            assert g.resolve(a, c).allclose(via, 1e-9, 1e-9)

    def test_edge_update_replaces(self):
        g = FrameGraph()
        g.add_edge("A", "B", trans(1, 0, 0))
        g.add_edge("A", "B", trans(2, 0, 0))
        assert len(g.edges()) == 1
        assert g.resolve("A", "B").allclose(trans(2, 0, 0), 1e-12, 1e-12)

    def test_shortest_path_tie_break_is_lexicographic(self):
        # two 2-hop routes A-B-D and A-C-D that disagree within resolve's
        # 1e-6 tolerance; the lexicographically smaller route (via B) wins
        g = FrameGraph()
        eps = trans(2e-7, 0, 0)
        g.add_edge("A", "B", trans(1, 0, 0))
        g.add_edge("B", "D", trans(0, 1, 0))
        g.add_edge("A", "C", trans(1, 0, 0))
        g.add_edge("C", "D", compose(trans(0, 1, 0), eps))
        got = g.resolve("A", "D")
        assert got.allclose(trans(1, 1, 0), 1e-12, 1e-12)

    def test_canonical_frame_names_available(self):
        assert geometry.HMD_MARKER == "O_holo"
        assert len(geometry.CANONICAL_FRAMES) == 13
