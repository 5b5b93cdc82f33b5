"""The three measurement functions and their parameter Jacobians.

Kinds:
  * ``task`` — fingertip positions relative to the first end-effector,
    stacked xyz-major for fingers 2..N. This is the quantity manipulation
    cares about; it is what calibration quality is judged on.
  * ``cartesian`` — a marker position seen by an external tracking camera.
  * ``contact`` — signed capsule distance of one finger pair; the measured
    value at a real contact is zero by definition.

Jacobians are central finite differences over the tree's calibration
parameters (step 1e-6 rad / 1e-6 m). Stacking order is fixed: rows follow the
sample list, columns the tree layout, so combined Jacobians are reproducible
bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import capsule_distance_batch, capsule_signed_distance, capsule_witness_points
from .kinematics import Frame, KinematicTree, fk_batch, forward_kinematics

TASK = "task"
CARTESIAN = "cartesian"
CONTACT = "contact"

KINDS = (TASK, CARTESIAN, CONTACT)

FD_STEP_ROT = 1e-6
FD_STEP_TRANS = 1e-6


@dataclass(frozen=True)
class BodyPair:
    """Ordered end-effector pair (k < l)."""

    k: int
    l: int

    def __post_init__(self):
        if not (0 <= self.k < self.l):
            raise ValueError(f"body pair must satisfy 0 <= k < l, got ({self.k}, {self.l})")

    def as_tuple(self) -> tuple[int, int]:
        return (self.k, self.l)


def all_pairs(n_end_effectors: int) -> list[BodyPair]:
    """The N_U = C(N_EE, 2) pairs in (k, l)-lexicographic order."""
    return [BodyPair(k, l) for k in range(n_end_effectors)
            for l in range(k + 1, n_end_effectors)]


@dataclass(frozen=True)
class MarkerModel:
    """Marker offsets per end-effector (tip frame) and the camera pose."""

    marker_offsets: np.ndarray  # (N_EE, 3)
    camera_to_base: Frame

    @staticmethod
    def identity(n_end_effectors: int) -> "MarkerModel":
        return MarkerModel(np.zeros((n_end_effectors, 3)), Frame.identity())


@dataclass(frozen=True)
class Measurement:
    """One dataset record: kind, configuration, observed value, tags."""

    kind: str
    q: np.ndarray
    y: np.ndarray | float | None = None
    pair: tuple[int, int] | None = None
    end_effector: int | None = None
    fingers: tuple[int, ...] | None = None  # task kind: restrict/reorder fingers
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown measurement kind {self.kind!r}")
        if self.kind == CONTACT and self.pair is None:
            raise ValueError("contact measurement needs a body pair")
        if self.kind == CARTESIAN and self.end_effector is None:
            raise ValueError("cartesian measurement needs an end-effector index")
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))


def measurement_dim(tree: KinematicTree, kind: str,
                    fingers: Sequence[int] | None = None) -> int:
    if kind == TASK:
        m = tree.n_end_effectors if fingers is None else len(fingers)
        return 3 * (m - 1)
    if kind == CARTESIAN:
        return 3
    return 1


# -- batched evaluators ------------------------------------------------------


def task_measurement_batch(tree: KinematicTree, Q: np.ndarray,
                           thetas: np.ndarray | None = None,
                           fingers: Sequence[int] | None = None) -> np.ndarray:
    """(B, 3*(m-1)) stacked tip positions relative to the first finger."""
    fingers = list(range(tree.n_end_effectors)) if fingers is None else list(fingers)
    pos, _ = fk_batch(tree, Q, thetas)
    rel = pos[:, fingers[1:]] - pos[:, fingers[0]][:, None, :]
    return rel.reshape(rel.shape[0], -1)


def cartesian_measurement_batch(tree: KinematicTree, marker: MarkerModel,
                                Q: np.ndarray, end_effector: int,
                                thetas: np.ndarray | None = None) -> np.ndarray:
    """(B, 3) marker positions in the camera frame."""
    pos, rot = fk_batch(tree, Q, thetas)
    m = marker.marker_offsets[end_effector]
    world = np.einsum("bij,j->bi", rot[:, end_effector], m) + pos[:, end_effector]
    cam = marker.camera_to_base
    return np.einsum("ij,bj->bi", cam.rotation, world) + cam.position


def contact_measurement_batch(tree: KinematicTree, Q: np.ndarray,
                              pair: BodyPair | tuple[int, int],
                              thetas: np.ndarray | None = None) -> np.ndarray:
    """(B,) signed capsule distances for one finger pair."""
    k, l = pair.as_tuple() if isinstance(pair, BodyPair) else tuple(pair)
    pos, rot = fk_batch(tree, Q, thetas)
    return capsule_distance_batch(
        tree.tip_geometry[k], pos[:, k], rot[:, k],
        tree.tip_geometry[l], pos[:, l], rot[:, l])


# -- scalar front ends -------------------------------------------------------


def task_measurement(tree: KinematicTree, q: np.ndarray,
                     fingers: Sequence[int] | None = None) -> np.ndarray:
    return task_measurement_batch(tree, np.atleast_2d(q), fingers=fingers)[0]


def cartesian_measurement(tree: KinematicTree, marker: MarkerModel,
                          q: np.ndarray, end_effector: int) -> np.ndarray:
    if not (0 <= end_effector < tree.n_end_effectors):
        raise ValueError(f"invalid end-effector index {end_effector}")
    return cartesian_measurement_batch(tree, marker, np.atleast_2d(q), end_effector)[0]


def contact_measurement(tree: KinematicTree, q: np.ndarray,
                        pair: BodyPair | tuple[int, int]) -> float:
    k, l = pair.as_tuple() if isinstance(pair, BodyPair) else tuple(pair)
    if not (0 <= k < l < tree.n_end_effectors):
        raise ValueError(f"invalid body pair ({k}, {l})")
    return float(contact_measurement_batch(tree, np.atleast_2d(q), (k, l))[0])


def evaluate(tree: KinematicTree, sample: Measurement,
             marker: MarkerModel | None = None) -> np.ndarray:
    """Model prediction for one measurement record, always as a 1-d array."""
    if sample.kind == TASK:
        return task_measurement(tree, sample.q, sample.fingers)
    if sample.kind == CARTESIAN:
        marker = marker or MarkerModel.identity(tree.n_end_effectors)
        return cartesian_measurement(tree, marker, sample.q, sample.end_effector)
    return np.array([contact_measurement(tree, sample.q, sample.pair)])


def evaluate_batch(tree: KinematicTree, samples: Sequence[Measurement],
                   marker: MarkerModel | None = None,
                   thetas: np.ndarray | None = None) -> np.ndarray:
    """Stacked predictions for a sample list (rows follow the list order)."""
    parts = _grouped_eval(tree, samples, marker, thetas)
    return np.concatenate(parts)


def _group_key(s: Measurement):
    return (s.kind, s.pair, s.end_effector, s.fingers)


def _grouped_eval(tree, samples, marker, thetas) -> list[np.ndarray]:
    """Evaluate heterogenous samples batched per group; returns per-sample rows."""
    marker = marker or MarkerModel.identity(tree.n_end_effectors)
    groups: dict[tuple, list[int]] = {}
    for i, s in enumerate(samples):
        groups.setdefault(_group_key(s), []).append(i)
    out: list[np.ndarray | None] = [None] * len(samples)
    for key, idxs in groups.items():
        kind = key[0]
        Q = np.stack([samples[i].q for i in idxs])
        th = None
        if thetas is not None:
            th = thetas if thetas.ndim == 1 else thetas[idxs]
        if kind == TASK:
            vals = task_measurement_batch(tree, Q, th, key[3])
        elif kind == CARTESIAN:
            vals = cartesian_measurement_batch(tree, marker, Q, key[2], th)
        else:
            vals = contact_measurement_batch(tree, Q, key[1], th)[:, None]
        for row, i in enumerate(idxs):
            out[i] = vals[row]
    return out  # type: ignore[return-value]


# -- Jacobians ----------------------------------------------------------------


def _fd_steps(tree: KinematicTree, step_rot: float, step_trans: float) -> np.ndarray:
    return np.where(tree.parameter_is_rotational(), step_rot, step_trans)


def stacked_jacobian(tree: KinematicTree, samples: Sequence[Measurement],
                     marker: MarkerModel | None = None,
                     theta: np.ndarray | None = None,
                     step_rot: float = FD_STEP_ROT,
                     step_trans: float = FD_STEP_TRANS,
                     param_chunk: int = 16) -> np.ndarray:
    """Central-difference Jacobian of the stacked measurement vector.

    Shape (sum of sample dims, n_parameters); row blocks follow the sample
    list, columns the tree's parameter layout.
    """
    theta0 = tree.parameter_values() if theta is None else np.asarray(theta, dtype=float)
    P = tree.n_parameters
    steps = _fd_steps(tree, step_rot, step_trans)
    marker = marker or MarkerModel.identity(tree.n_end_effectors)

    dims = [measurement_dim(tree, s.kind, s.fingers) for s in samples]
    offsets = np.concatenate([[0], np.cumsum(dims)])
    J = np.empty((int(offsets[-1]), P))

    groups: dict[tuple, list[int]] = {}
    for i, s in enumerate(samples):
        groups.setdefault(_group_key(s), []).append(i)

    for key, idxs in groups.items():
        kind = key[0]
        Q = np.stack([samples[i].q for i in idxs])
        B = Q.shape[0]
        for c0 in range(0, P, param_chunk):
            cols = np.arange(c0, min(c0 + param_chunk, P))
            C = cols.size
            thetas = np.broadcast_to(theta0, (2 * C, P)).copy()
            for n, j in enumerate(cols):
                thetas[2 * n, j] += steps[j]
                thetas[2 * n + 1, j] -= steps[j]
            big_Q = np.tile(Q, (2 * C, 1))
            big_T = np.repeat(thetas, B, axis=0)
            if kind == TASK:
                H = task_measurement_batch(tree, big_Q, big_T, key[3])
            elif kind == CARTESIAN:
                H = cartesian_measurement_batch(tree, marker, big_Q, key[2], big_T)
            else:
                H = contact_measurement_batch(tree, big_Q, key[1], big_T)[:, None]
            H = H.reshape(2 * C, B, -1)
            diff = (H[0::2] - H[1::2]) / (2.0 * steps[cols])[:, None, None]  # (C, B, d)
            for row, i in enumerate(idxs):
                J[offsets[i]:offsets[i + 1], cols] = diff[:, row].T
    return J


def jacobian(tree: KinematicTree, sample: Measurement,
             marker: MarkerModel | None = None,
             theta: np.ndarray | None = None,
             step_rot: float = FD_STEP_ROT,
             step_trans: float = FD_STEP_TRANS) -> np.ndarray:
    """(measurement dim, n_parameters) Jacobian of one sample."""
    return stacked_jacobian(tree, [sample], marker, theta, step_rot, step_trans)


def contact_jacobian_via_witness(tree: KinematicTree, q: np.ndarray,
                                 pair: BodyPair | tuple[int, int],
                                 step_rot: float = FD_STEP_ROT,
                                 step_trans: float = FD_STEP_TRANS) -> np.ndarray:
    """Contact Jacobian through the distance chain rule.

    Freezes the witness points in their local tip frames and differentiates
    only the frame motion; valid away from the closest-pair case boundaries.
    Used to cross-check the plain finite-difference path.
    """
    k, l = pair.as_tuple() if isinstance(pair, BodyPair) else tuple(pair)
    frames = forward_kinematics(tree, q)
    fk_, fl_ = frames[tree.end_effectors[k]], frames[tree.end_effectors[l]]
    w1, w2 = capsule_witness_points(tree.tip_geometry[k], fk_, tree.tip_geometry[l], fl_)
    gap = w1 - w2
    norm = np.linalg.norm(gap)
    if norm < 1e-12:
        raise ValueError("witness points coincide; gradient undefined")
    n_hat = gap / norm
    u1 = fk_.inverse().transform_point(w1)
    u2 = fl_.inverse().transform_point(w2)

    theta0 = tree.parameter_values()
    steps = _fd_steps(tree, step_rot, step_trans)
    grad = np.zeros(tree.n_parameters)
    for j in range(tree.n_parameters):
        dw = []
        for sgn in (+1.0, -1.0):
            th = theta0.copy()
            th[j] += sgn * steps[j]
            fr = forward_kinematics(tree.with_parameters(th), q)
            p1 = fr[tree.end_effectors[k]].transform_point(u1)
            p2 = fr[tree.end_effectors[l]].transform_point(u2)
            dw.append(p1 - p2)
        grad[j] = n_hat @ (dw[0] - dw[1]) / (2.0 * steps[j])
    return grad
