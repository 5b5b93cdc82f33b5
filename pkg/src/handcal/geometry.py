"""Signed distance between fingertip capsules.

The closest-pair computation follows the clamped quadratic minimization over
the (s, t) unit square with an explicit degenerate-case ladder. In the
parallel case the minimizer set is a segment; we pin s = 0 first so results
are deterministic.
"""

from __future__ import annotations

import numpy as np

from .kinematics import Capsule, Frame

_EPS = 1e-12


def segment_segment_distance(p1, p2, p3, p4) -> tuple[float, np.ndarray, np.ndarray]:
    """Distance between closed segments [p1,p2] and [p3,p4] plus witness points.

    Returns (distance, closest point on first segment, closest point on
    second). Distance is 0 iff the segments intersect.
    """
    s, t = _segment_params(*(np.asarray(p, dtype=float) for p in (p1, p2, p3, p4)))
    w1 = p1 + s * (np.asarray(p2, dtype=float) - p1)
    w2 = p3 + t * (np.asarray(p4, dtype=float) - p3)
    return float(np.linalg.norm(w1 - w2)), w1, w2


def _segment_params(p1, p2, p3, p4) -> tuple[np.ndarray, np.ndarray]:
    """Clamped parameters (s, t) of the closest pair; fully vectorized.

    Inputs broadcast over leading dimensions; each is (..., 3).
    """
    d1 = p2 - p1
    d2 = p4 - p3
    r = p1 - p3
    a = np.einsum("...i,...i->...", d1, d1)
    e = np.einsum("...i,...i->...", d2, d2)
    f = np.einsum("...i,...i->...", d2, r)
    c = np.einsum("...i,...i->...", d1, r)
    b = np.einsum("...i,...i->...", d1, d2)
    denom = a * e - b * b

    a_deg = a <= _EPS
    e_deg = e <= _EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        # general case: interior candidate, parallel lines pin s = 0
        s = np.where(denom > _EPS, np.clip((b * f - c * e) / np.where(denom > _EPS, denom, 1.0), 0.0, 1.0), 0.0)
        t = (b * s + f) / np.where(e_deg, 1.0, e)
        # clamp t, then recompute s against the clamped t
        t_low, t_high = t < 0.0, t > 1.0
        t = np.clip(t, 0.0, 1.0)
        s_new = np.clip((t * b - c) / np.where(a_deg, 1.0, a), 0.0, 1.0)
        s = np.where(t_low | t_high, s_new, s)
        # degenerate ladder: point-point and point-segment
        s = np.where(a_deg, 0.0, s)
        t = np.where(a_deg & ~e_deg, np.clip(f / np.where(e_deg, 1.0, e), 0.0, 1.0), t)
        t = np.where(e_deg, 0.0, t)
        s = np.where(e_deg & ~a_deg, np.clip(-c / np.where(a_deg, 1.0, a), 0.0, 1.0), s)
    return s, t


def segment_distance_batch(p1, p2, p3, p4) -> np.ndarray:
    """Vectorized segment-segment distance; inputs (..., 3)."""
    p1, p2, p3, p4 = (np.asarray(p, dtype=float) for p in (p1, p2, p3, p4))
    s, t = _segment_params(p1, p2, p3, p4)
    w1 = p1 + s[..., None] * (p2 - p1)
    w2 = p3 + t[..., None] * (p4 - p3)
    return np.linalg.norm(w1 - w2, axis=-1)


def capsule_signed_distance(c1: Capsule, frame1: Frame, c2: Capsule, frame2: Frame) -> float:
    """Signed distance between two capsules posed by their tip frames.

    Positive = separation, negative = penetration depth (segment distance
    minus the radii sum; smooth unless the segment axes intersect).
    """
    a1 = frame1.transform_point(c1.endpoint_a)
    b1 = frame1.transform_point(c1.endpoint_b)
    a2 = frame2.transform_point(c2.endpoint_a)
    b2 = frame2.transform_point(c2.endpoint_b)
    dist, _, _ = segment_segment_distance(a1, b1, a2, b2)
    return dist - c1.radius - c2.radius


def capsule_witness_points(c1: Capsule, frame1: Frame, c2: Capsule, frame2: Frame):
    """Axis witness points (world frame) of the closest capsule-axis pair."""
    a1 = frame1.transform_point(c1.endpoint_a)
    b1 = frame1.transform_point(c1.endpoint_b)
    a2 = frame2.transform_point(c2.endpoint_a)
    b2 = frame2.transform_point(c2.endpoint_b)
    _, w1, w2 = segment_segment_distance(a1, b1, a2, b2)
    return w1, w2


def capsule_distance_batch(c1: Capsule, pos1, rot1, c2: Capsule, pos2, rot2) -> np.ndarray:
    """Signed capsule distance for batches of poses.

    pos*: (..., 3), rot*: (..., 3, 3) — the tip frames of the two capsules.
    """
    a1 = np.einsum("...ij,j->...i", rot1, c1.endpoint_a) + pos1
    b1 = np.einsum("...ij,j->...i", rot1, c1.endpoint_b) + pos1
    a2 = np.einsum("...ij,j->...i", rot2, c2.endpoint_a) + pos2
    b2 = np.einsum("...ij,j->...i", rot2, c2.endpoint_b) + pos2
    return segment_distance_batch(a1, b1, a2, b2) - c1.radius - c2.radius
