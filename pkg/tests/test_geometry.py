import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from handcal.geometry import (
    capsule_signed_distance,
    capsule_distance_batch,
    segment_distance_batch,
    segment_segment_distance,
)
from handcal.kinematics import Capsule, Frame


def grid_oracle(p1, p2, p3, p4, n=1001):
    """Brute force: distances between n x n sampled point pairs."""
    s = np.linspace(0.0, 1.0, n)
    a = p1[None, :] + s[:, None] * (p2 - p1)[None, :]
    b = p3[None, :] + s[:, None] * (p4 - p3)[None, :]
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    return np.sqrt(d2.min())


def rand_rigid(rng):
    m = np.linalg.qr(rng.normal(size=(3, 3)))[0]
    if np.linalg.det(m) < 0:
        m[:, 0] = -m[:, 0]
    return Frame(rng.normal(scale=0.5, size=3), m)


def test_identical_points_distance_zero():
    p = np.array([0.3, -0.2, 0.9])
    d, w1, w2 = segment_segment_distance(p, p, p, p)
    assert d == 0.0
    assert np.allclose(w1, p) and np.allclose(w2, p)


def test_parallel_unit_segments_offset():
    d, _, _ = segment_segment_distance(
        np.zeros(3), np.array([1.0, 0, 0]),
        np.array([0.0, 1.0, 0.0]), np.array([1.0, 1.0, 0.0]))
    assert d == pytest.approx(1.0, abs=1e-15)


def test_intersecting_segments_distance_zero():
    d, _, _ = segment_segment_distance(
        np.array([-1.0, 0, 0]), np.array([1.0, 0, 0]),
        np.array([0.0, -1.0, 0]), np.array([0.0, 1.0, 0]))
    assert d == pytest.approx(0.0, abs=1e-12)


def oracle_case(rng, degenerate=False):
    """Fingertip-scale segment pairs; separation >= 2 cm keeps the 1001x1001
    oracle itself accurate to well under 1e-6."""
    while True:
        pts = rng.uniform(-0.12, 0.12, size=(4, 3))
        if degenerate:
            pts[1] = pts[0]
        if grid_oracle(*pts) >= 0.02:
            return pts


@pytest.mark.parametrize("case", range(5))
def test_against_grid_oracle_spotcheck(case):
    rng = np.random.default_rng(100 + case)
    pts = oracle_case(rng)
    d, _, _ = segment_segment_distance(*pts)
    assert d == pytest.approx(grid_oracle(*pts), abs=1e-6)


def test_degenerate_segments_oracle():
    rng = np.random.default_rng(11)
    for _ in range(20):
        pts = oracle_case(rng, degenerate=True)
        d, _, _ = segment_segment_distance(*pts)
        assert d == pytest.approx(grid_oracle(*pts), abs=1e-6)


def test_parallel_overlapping_deterministic():
    p1, p2 = np.zeros(3), np.array([1.0, 0, 0])
    p3, p4 = np.array([0.25, 0.1, 0.0]), np.array([1.25, 0.1, 0.0])
    d_a = segment_segment_distance(p1, p2, p3, p4)
    d_b = segment_segment_distance(p1, p2, p3, p4)
    assert d_a[0] == d_b[0] == pytest.approx(0.1, abs=1e-12)
    assert np.array_equal(d_a[1], d_b[1])


def test_witness_points_realize_distance():
    rng = np.random.default_rng(3)
    for _ in range(200):
        pts = rng.uniform(-1, 1, size=(4, 3))
        d, w1, w2 = segment_segment_distance(*pts)
        assert np.linalg.norm(w1 - w2) == pytest.approx(d, abs=1e-12)


@given(st.integers(min_value=0, max_value=10_000))
@settings(max_examples=60, deadline=None)
def test_symmetry(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1, 1, size=(4, 3))
    d12, _, _ = segment_segment_distance(pts[0], pts[1], pts[2], pts[3])
    d21, _, _ = segment_segment_distance(pts[2], pts[3], pts[0], pts[1])
    assert d12 == pytest.approx(d21, abs=1e-12)


def test_sphere_sphere_trivial():
    c1 = Capsule(np.zeros(3), np.zeros(3), 1.0)
    c2 = Capsule(np.zeros(3), np.zeros(3), 1.0)
    f1 = Frame.identity()
    f2 = Frame(np.array([3.0, 0, 0]), np.eye(3))
    assert capsule_signed_distance(c1, f1, c2, f2) == pytest.approx(1.0, abs=1e-15)


def test_coincident_spheres_full_overlap():
    c = Capsule(np.zeros(3), np.zeros(3), 0.01)
    f = Frame.identity()
    assert capsule_signed_distance(c, f, c, f) == pytest.approx(-0.02, abs=1e-15)


def test_sphere_sphere_reduction_random():
    rng = np.random.default_rng(8)
    for _ in range(100):
        a, b = rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)
        r1, r2 = rng.uniform(0.01, 0.3, 2)
        c1 = Capsule(a, a, r1)
        c2 = Capsule(b, b, r2)
        d = capsule_signed_distance(c1, Frame.identity(), c2, Frame.identity())
        assert d == pytest.approx(np.linalg.norm(a - b) - r1 - r2, abs=1e-12)


def test_capsule_distance_symmetry():
    rng = np.random.default_rng(21)
    c1 = Capsule(rng.normal(size=3) * 0.01, rng.normal(size=3) * 0.01, 0.008)
    c2 = Capsule(rng.normal(size=3) * 0.01, rng.normal(size=3) * 0.01, 0.011)
    f1, f2 = rand_rigid(rng), rand_rigid(rng)
    assert capsule_signed_distance(c1, f1, c2, f2) == capsule_signed_distance(c2, f2, c1, f1)


def test_rigid_invariance():
    rng = np.random.default_rng(31)
    c1 = Capsule(np.array([-0.01, 0, 0]), np.array([0.01, 0, 0]), 0.009)
    c2 = Capsule(np.array([0, -0.02, 0]), np.array([0, 0.01, 0]), 0.007)
    f1, f2 = rand_rigid(rng), rand_rigid(rng)
    d0 = capsule_signed_distance(c1, f1, c2, f2)
    for _ in range(100):
        g = rand_rigid(rng)
        d = capsule_signed_distance(c1, g.compose(f1), c2, g.compose(f2))
        assert d == pytest.approx(d0, abs=1e-10)


def test_translation_lipschitz():
    # moving one capsule along a line changes the distance at most by the
    # translation magnitude
    rng = np.random.default_rng(5)
    c1 = Capsule(np.array([-0.01, 0, 0]), np.array([0.01, 0, 0]), 0.009)
    c2 = Capsule(np.array([0, -0.015, 0]), np.array([0, 0.015, 0]), 0.006)
    f1 = rand_rigid(rng)
    f2 = rand_rigid(rng)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    taus = np.linspace(0, 0.05, 40)
    vals = []
    for tau in taus:
        f2_shift = Frame(f2.position + tau * direction, f2.rotation)
        vals.append(capsule_signed_distance(c1, f1, c2, f2_shift))
    vals = np.array(vals)
    steps = np.abs(np.diff(vals))
    assert np.all(steps <= np.diff(taus) + 1e-12)


def test_batch_matches_scalar():
    rng = np.random.default_rng(17)
    c1 = Capsule(np.array([-0.01, 0, 0]), np.array([0.008, 0, 0]), 0.009)
    c2 = Capsule(np.array([0, -0.012, 0]), np.array([0, 0.01, 0]), 0.0075)
    frames1 = [rand_rigid(rng) for _ in range(32)]
    frames2 = [rand_rigid(rng) for _ in range(32)]
    pos1 = np.stack([f.position for f in frames1])
    rot1 = np.stack([f.rotation for f in frames1])
    pos2 = np.stack([f.position for f in frames2])
    rot2 = np.stack([f.rotation for f in frames2])
    batch = capsule_distance_batch(c1, pos1, rot1, c2, pos2, rot2)
    for i in range(32):
        assert batch[i] == pytest.approx(
            capsule_signed_distance(c1, frames1[i], c2, frames2[i]), abs=1e-14)


def test_segment_batch_matches_scalar():
    rng = np.random.default_rng(19)
    pts = rng.uniform(-1, 1, size=(64, 4, 3))
    batch = segment_distance_batch(pts[:, 0], pts[:, 1], pts[:, 2], pts[:, 3])
    for i in range(64):
        d, _, _ = segment_segment_distance(*pts[i])
        assert batch[i] == pytest.approx(d, abs=1e-14)
