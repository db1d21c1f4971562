import math

import numpy as np
import pytest

from teleopsim.geometry import (Pose, Quat, Transform, compose, geodesic_distance,
                                hemisphere_align, invert, lerp, random_quat, slerp)
from teleopsim.oracles import slerp_reference


def test_slerp_endpoint_identity():
    rng = np.random.default_rng(0)
    for _ in range(50):
        q1 = random_quat(rng)
        q2 = hemisphere_align(q1, random_quat(rng))
        assert slerp(q1, q2, 0.0).to_array() == pytest.approx(q1.to_array(), abs=0.0)
        assert slerp(q1, q2, 1.0).to_array() == pytest.approx(q2.to_array(), abs=0.0)


def test_slerp_great_circle_midpoint():
    q1 = Quat.identity()
    q2 = Quat.from_axis_angle([0, 0, 1], math.pi / 2)
    mid = slerp(q1, q2, 0.5)
    expected = Quat.from_axis_angle([0, 0, 1], math.pi / 4)
    assert geodesic_distance(mid, expected) < 1e-12


def test_slerp_matches_exp_log_oracle():
    rng = np.random.default_rng(1)
    for _ in range(200):
        q1 = random_quat(rng)
        q2 = hemisphere_align(q1, random_quat(rng))
        got = slerp(q1, q2, 1.0 / 3.0)
        ref = slerp_reference(q1, q2, 1.0 / 3.0)
        assert geodesic_distance(got, ref) < 1e-9


def test_slerp_near_parallel_fallback():
    q1 = Quat.identity()
    q2 = Quat.from_axis_angle([1, 0, 0], 1e-9)
    out = slerp(q1, q2, 0.5)
    assert abs(out.norm() - 1.0) < 1e-9
    assert geodesic_distance(out, q1) < 1e-8


def test_slerp_constant_angular_velocity():
    rng = np.random.default_rng(2)
    n = 16
    for _ in range(100):
        q1 = random_quat(rng)
        q2 = hemisphere_align(q1, random_quat(rng))
        points = [slerp(q1, q2, i / n) for i in range(n + 1)]
        incs = [geodesic_distance(points[i], points[i + 1]) for i in range(n)]
        assert max(incs) - min(incs) < 1e-9


def test_hemisphere_align_basic():
    rng = np.random.default_rng(3)
    q = random_quat(rng)
    assert hemisphere_align(q, q) is q
    flipped = hemisphere_align(q, q.negated())
    assert flipped.to_array() == pytest.approx(q.to_array())


def test_hemisphere_align_property():
    # exhaustive property check over many random pairs
    rng = np.random.default_rng(4)
    for _ in range(10_000):
        a = random_quat(rng)
        b = random_quat(rng)
        assert a.dot(hemisphere_align(a, b)) >= 0.0


def test_hemisphere_gives_shortest_path():
    rng = np.random.default_rng(5)
    for _ in range(200):
        q1 = random_quat(rng)
        q2 = random_quat(rng)
        aligned = hemisphere_align(q1, q2)
        # total path angle equals the sign-invariant geodesic distance
        path = 2.0 * math.acos(min(1.0, abs(q1.dot(aligned))))
        assert abs(path - geodesic_distance(q1, q2)) < 1e-9


def test_lerp():
    assert lerp([0, 0, 0], [1, 2, 3], 0.5) == pytest.approx([0.5, 1.0, 1.5])
    p = np.array([0.3, -0.7, 2.2])
    q = np.array([1.1, 0.0, -4.0])
    assert np.array_equal(lerp(p, q, 0.0), p)
    assert np.array_equal(lerp(p, q, 1.0), q)


def test_geodesic_distance():
    rng = np.random.default_rng(6)
    q = random_quat(rng)
    assert geodesic_distance(q, q) == 0.0
    assert geodesic_distance(q, q.negated()) == 0.0
    assert geodesic_distance(
        Quat.identity(), Quat.from_axis_angle([1, 0, 0], math.pi / 2)
    ) == pytest.approx(math.pi / 2, abs=1e-12)


def test_geodesic_is_metric():
    rng = np.random.default_rng(7)
    for _ in range(500):
        a, b, c = (random_quat(rng) for _ in range(3))
        dab = geodesic_distance(a, b)
        assert dab == pytest.approx(geodesic_distance(b, a), abs=1e-12)
        assert dab >= 0.0
        assert dab <= geodesic_distance(a, c) + geodesic_distance(c, b) + 1e-9


def test_compose_invert_round_trip():
    rng = np.random.default_rng(8)
    ident = Transform.identity()
    assert invert(ident).approx_equal(ident)
    for _ in range(200):
        t = Transform(random_quat(rng), rng.uniform(-1, 1, size=3))
        assert compose(ident, t).approx_equal(t)
        assert compose(t, invert(t)).approx_equal(ident, tol=1e-9)
        assert compose(invert(t), t).approx_equal(ident, tol=1e-9)


def test_compose_associative():
    rng = np.random.default_rng(9)
    for _ in range(100):
        a, b, c = (Transform(random_quat(rng), rng.uniform(-1, 1, 3)) for _ in range(3))
        left = compose(compose(a, b), c)
        right = compose(a, compose(b, c))
        assert left.approx_equal(right, tol=1e-9)


def test_transform_applies_to_pose():
    t = Transform(Quat.from_axis_angle([0, 0, 1], math.pi), np.array([0.85, 0.0, 0.0]))
    p = t.apply_pose(Pose(np.array([0.42, 0.2, 0.3]), Quat.identity()))
    assert p.position == pytest.approx([0.43, -0.2, 0.3])


def test_quaternion_rotate_matches_matrix():
    rng = np.random.default_rng(10)
    for _ in range(100):
        q = random_quat(rng)
        v = rng.uniform(-1, 1, 3)
        assert q.rotate(v) == pytest.approx(q.to_matrix() @ v, abs=1e-12)


def test_unit_norm_maintained():
    rng = np.random.default_rng(11)
    q = random_quat(rng)
    for _ in range(1000):
        q = q * random_quat(rng)
    assert abs(q.norm() - 1.0) < 1e-9
