"""DH-parameterized forward kinematics for branched kinematic trees.

Conventions:
  * Each link transform is Rot_x(alpha) @ Trans_x(r) @ Rot_z(theta) @ Trans_z(d).
    The joint variable enters as an offset on theta (revolute) or d (prismatic).
  * Links are stored in topological order; ``parent == -1`` attaches a link
    directly to the base frame (identity).
  * Passive links carry no configuration entry; their joint value is
    ``ratio * q[source joint]``.
  * Poses are kept as (position, rotation matrix) pairs so orthonormality can
    be checked directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

REVOLUTE = "revolute"
PRISMATIC = "prismatic"
FIXED = "fixed"
PASSIVE = "passive"

JOINT_KINDS = (REVOLUTE, PRISMATIC, FIXED, PASSIVE)

#: order of the four DH scalars in masks, layouts and parameter vectors
DH_FIELDS = ("d", "r", "alpha", "theta")

#: which DH fields are angles (rad); the rest are lengths (m)
ROTATIONAL_FIELDS = frozenset({"alpha", "theta"})


@dataclass(frozen=True)
class Frame:
    """Rigid pose: 3-vector position and 3x3 proper-orthogonal rotation."""

    position: np.ndarray
    rotation: np.ndarray

    @staticmethod
    def identity() -> "Frame":
        return Frame(np.zeros(3), np.eye(3))

    def compose(self, other: "Frame") -> "Frame":
        return Frame(self.rotation @ other.position + self.position,
                     self.rotation @ other.rotation)

    def inverse(self) -> "Frame":
        rt = self.rotation.T
        return Frame(-rt @ self.position, rt)

    def transform_point(self, point: np.ndarray) -> np.ndarray:
        return self.rotation @ np.asarray(point, dtype=float) + self.position

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.position
        return m

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Frame":
        m = np.asarray(m, dtype=float)
        return Frame(m[:3, 3].copy(), m[:3, :3].copy())

    def orthonormality_defect(self) -> float:
        return float(np.max(np.abs(self.rotation.T @ self.rotation - np.eye(3))))


@dataclass(frozen=True)
class DHLink:
    """One link of the tree: the four DH scalars plus joint bookkeeping.

    ``calibrate`` and ``sigma_p`` follow the DH_FIELDS order (d, r, alpha,
    theta). ``source`` is the link index a passive joint is coupled to.
    """

    name: str
    parent: int
    kind: str
    d: float = 0.0
    r: float = 0.0
    alpha: float = 0.0
    theta: float = 0.0
    calibrate: tuple[bool, bool, bool, bool] = (False, False, False, False)
    sigma_p: tuple[float, float, float, float] | None = None
    source: int = -1
    ratio: float = 1.0
    limits: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind not in JOINT_KINDS:
            raise ValueError(f"unknown joint kind {self.kind!r}")
        if self.kind == PASSIVE and self.source < 0:
            raise ValueError(f"passive link {self.name!r} needs a source link")
        for v in (self.d, self.r, self.alpha, self.theta):
            if not np.isfinite(v):
                raise ValueError(f"non-finite DH value on link {self.name!r}")

    def dh_values(self) -> np.ndarray:
        return np.array([self.d, self.r, self.alpha, self.theta])


@dataclass(frozen=True)
class Capsule:
    """Collision capsule in the owning tip frame: segment [a, b] plus radius."""

    endpoint_a: np.ndarray
    endpoint_b: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "endpoint_a", np.asarray(self.endpoint_a, dtype=float))
        object.__setattr__(self, "endpoint_b", np.asarray(self.endpoint_b, dtype=float))
        if not (self.radius > 0.0):
            raise ValueError("capsule radius must be positive")
        if not (np.all(np.isfinite(self.endpoint_a)) and np.all(np.isfinite(self.endpoint_b))):
            raise ValueError("capsule endpoints must be finite")


@dataclass(frozen=True)
class KinematicTree:
    """Branched DH chain with one branch per end-effector.

    ``end_effectors[k]`` is the tip link index of branch k; ``tip_geometry[k]``
    the capsule attached to that tip frame. Joint limits live on the links and
    are enforced only by the samplers, never by forward kinematics.
    """

    name: str
    links: tuple[DHLink, ...]
    end_effectors: tuple[int, ...]
    tip_geometry: tuple[Capsule, ...]

    # derived, filled in __post_init__
    active_links: tuple[int, ...] = field(default=(), compare=False)
    joint_index: tuple[int, ...] = field(default=(), compare=False)
    layout: tuple[tuple[int, int], ...] = field(default=(), compare=False)

    def __post_init__(self):
        for i, link in enumerate(self.links):
            if not (-1 <= link.parent < i):
                raise ValueError(f"link {i} ({link.name!r}) breaks topological order")
            if link.kind == PASSIVE:
                src = self.links[link.source]
                if src.kind not in (REVOLUTE, PRISMATIC):
                    raise ValueError(f"passive link {link.name!r} must couple to an active joint")
        if len(self.end_effectors) != len(self.tip_geometry):
            raise ValueError("one capsule per end-effector required")
        active = tuple(i for i, l in enumerate(self.links) if l.kind in (REVOLUTE, PRISMATIC))
        jidx = [-1] * len(self.links)
        for n, i in enumerate(active):
            jidx[i] = n
        layout = tuple((i, f) for i, l in enumerate(self.links)
                       for f in range(4) if l.calibrate[f])
        object.__setattr__(self, "active_links", active)
        object.__setattr__(self, "joint_index", tuple(jidx))
        object.__setattr__(self, "layout", layout)

    @property
    def n_active_joints(self) -> int:
        return len(self.active_links)

    @property
    def n_links(self) -> int:
        return len(self.links)

    @property
    def n_parameters(self) -> int:
        return len(self.layout)

    @property
    def n_end_effectors(self) -> int:
        return len(self.end_effectors)

    def branch(self, k: int) -> tuple[int, ...]:
        """Index path from the base to the tip of end-effector k."""
        path = []
        i = self.end_effectors[k]
        while i >= 0:
            path.append(i)
            i = self.links[i].parent
        return tuple(reversed(path))

    def branch_of_link(self, link_index: int) -> tuple[int, ...]:
        """End-effectors whose base-to-tip path contains ``link_index``."""
        return tuple(k for k in range(self.n_end_effectors)
                     if link_index in self.branch(k))

    # -- calibration parameter handling ------------------------------------

    def parameter_values(self) -> np.ndarray:
        """Current values of the masked DH fields, in layout order."""
        return np.array([self.links[i].dh_values()[f] for i, f in self.layout])

    def parameter_names(self) -> list[str]:
        return [f"{self.links[i].name}.{DH_FIELDS[f]}" for i, f in self.layout]

    def parameter_is_rotational(self) -> np.ndarray:
        return np.array([DH_FIELDS[f] in ROTATIONAL_FIELDS for _, f in self.layout])

    def parameter_prior_sigma(self, default_rot: float = np.deg2rad(5.0),
                              default_trans: float = 5e-3) -> np.ndarray:
        """Per-entry prior std; falls back to the module defaults per unit."""
        out = np.empty(self.n_parameters)
        for n, (i, f) in enumerate(self.layout):
            sp = self.links[i].sigma_p
            if sp is not None and sp[f] is not None:
                out[n] = sp[f]
            else:
                out[n] = default_rot if DH_FIELDS[f] in ROTATIONAL_FIELDS else default_trans
        return out

    def with_parameters(self, values: np.ndarray) -> "KinematicTree":
        """Tree with the masked DH fields replaced by ``values``."""
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_parameters,):
            raise ValueError(
                f"parameter vector has shape {values.shape}, expected ({self.n_parameters},)")
        updates: dict[int, dict[str, float]] = {}
        for (i, f), v in zip(self.layout, values):
            updates.setdefault(i, {})[DH_FIELDS[f]] = float(v)
        links = list(self.links)
        for i, kw in updates.items():
            links[i] = replace(links[i], **kw)
        return replace(self, links=tuple(links))

    def parameter_entries_on_fingers(self, fingers: Sequence[int]) -> np.ndarray:
        """Layout indices whose link lies on one of the given branches."""
        wanted = set()
        for k in fingers:
            wanted.update(self.branch(k))
        return np.array([n for n, (i, _) in enumerate(self.layout) if i in wanted],
                        dtype=int)

    def joint_limits(self) -> np.ndarray:
        """(n_active, 2) array; unlimited joints default to +-pi."""
        lim = np.empty((self.n_active_joints, 2))
        for n, i in enumerate(self.active_links):
            l = self.links[i].limits
            lim[n] = (-np.pi, np.pi) if l is None else l
        return lim

    def joints_of_finger(self, k: int) -> tuple[int, ...]:
        """Configuration indices of the active joints on branch k."""
        return tuple(self.joint_index[i] for i in self.branch(k)
                     if self.joint_index[i] >= 0)


def dh_to_frame(link: DHLink, joint_value: float = 0.0) -> Frame:
    """Single-link transform Rot_x(alpha) Trans_x(r) Rot_z(theta) Trans_z(d).

    ``joint_value`` offsets theta for a revolute joint and d for a prismatic
    one; fixed and passive links take the value as given (the tree-level FK
    resolves coupling before calling this).
    """
    d, r, alpha, theta = link.d, link.r, link.alpha, link.theta
    if link.kind in (REVOLUTE, PASSIVE):
        theta = theta + joint_value
    elif link.kind == PRISMATIC:
        d = d + joint_value
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(alpha), np.sin(alpha)
    rot = np.array([
        [ct, -st, 0.0],
        [ca * st, ca * ct, -sa],
        [sa * st, sa * ct, ca],
    ])
    pos = np.array([r, -sa * d, ca * d])
    return Frame(pos, rot)


def _joint_values(tree: KinematicTree, q: np.ndarray) -> np.ndarray:
    """Per-link joint values with passive coupling resolved. q: (..., n_active)."""
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != tree.n_active_joints:
        raise ValueError(
            f"configuration has {q.shape[-1]} entries, tree expects {tree.n_active_joints}")
    vals = np.zeros(q.shape[:-1] + (tree.n_links,))
    for i, link in enumerate(tree.links):
        if link.kind in (REVOLUTE, PRISMATIC):
            vals[..., i] = q[..., tree.joint_index[i]]
        elif link.kind == PASSIVE:
            vals[..., i] = link.ratio * q[..., tree.joint_index[link.source]]
    return vals


def forward_kinematics(tree: KinematicTree, q: np.ndarray) -> list[Frame]:
    """Frames of every link under configuration ``q`` (length n_active_joints)."""
    vals = _joint_values(tree, np.atleast_1d(q))
    frames: list[Frame] = []
    for i, link in enumerate(tree.links):
        local = dh_to_frame(link, float(vals[i]))
        parent = frames[link.parent] if link.parent >= 0 else Frame.identity()
        frames.append(parent.compose(local))
    return frames


def tip_frames(tree: KinematicTree, q: np.ndarray) -> list[Frame]:
    frames = forward_kinematics(tree, q)
    return [frames[i] for i in tree.end_effectors]


# -- batched evaluation ----------------------------------------------------
#
# The estimation, identifiability and OED modules hammer forward kinematics
# with thousands of (configuration, parameter) combinations; the batched path
# below is the single workhorse they share. Semantics match
# forward_kinematics exactly (same operator order, same coupling).


def _dh_params_batch(tree: KinematicTree, thetas: np.ndarray | None, batch: int) -> np.ndarray:
    """(B, n_links, 4) DH scalars with calibration parameters substituted."""
    base = np.array([l.dh_values() for l in tree.links])  # (L, 4)
    params = np.broadcast_to(base, (batch,) + base.shape).copy()
    if thetas is not None:
        thetas = np.asarray(thetas, dtype=float)
        if thetas.ndim == 1:
            thetas = np.broadcast_to(thetas, (batch, thetas.shape[0]))
        if thetas.shape != (batch, tree.n_parameters):
            raise ValueError("parameter stack does not match batch/layout")
        for n, (i, f) in enumerate(tree.layout):
            params[:, i, f] = thetas[:, n]
    return params


def fk_batch(tree: KinematicTree, q: np.ndarray,
             thetas: np.ndarray | None = None,
             links: Sequence[int] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Batched FK: q is (B, n_active), thetas (B, n_params) or (n_params,).

    Returns (positions, rotations) of shape (B, K, 3) / (B, K, 3, 3) where K
    covers ``links`` (default: the end-effector tips).
    """
    q = np.atleast_2d(np.asarray(q, dtype=float))
    B = q.shape[0]
    params = _dh_params_batch(tree, thetas, B)
    vals = _joint_values(tree, q)  # (B, L)

    d = params[:, :, 0].copy()
    theta = params[:, :, 3].copy()
    for i, link in enumerate(tree.links):
        if link.kind in (REVOLUTE, PASSIVE):
            theta[:, i] += vals[:, i]
        elif link.kind == PRISMATIC:
            d[:, i] += vals[:, i]
    r, alpha = params[:, :, 1], params[:, :, 2]

    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(alpha), np.sin(alpha)
    zero = np.zeros_like(ct)
    # local rotation rows, stacked to (B, L, 3, 3)
    rot_local = np.stack([
        np.stack([ct, -st, zero], axis=-1),
        np.stack([ca * st, ca * ct, -sa], axis=-1),
        np.stack([sa * st, sa * ct, ca], axis=-1),
    ], axis=-2)
    pos_local = np.stack([r, -sa * d, ca * d], axis=-1)

    L = tree.n_links
    pos = np.empty((B, L, 3))
    rot = np.empty((B, L, 3, 3))
    for i, link in enumerate(tree.links):
        if link.parent < 0:
            pos[:, i] = pos_local[:, i]
            rot[:, i] = rot_local[:, i]
        else:
            p = link.parent
            pos[:, i] = np.einsum("bij,bj->bi", rot[:, p], pos_local[:, i]) + pos[:, p]
            rot[:, i] = np.einsum("bij,bjk->bik", rot[:, p], rot_local[:, i])

    keep = list(tree.end_effectors) if links is None else list(links)
    return pos[:, keep], rot[:, keep]


def tip_positions(tree: KinematicTree, q: np.ndarray,
                  thetas: np.ndarray | None = None) -> np.ndarray:
    """(B, N_EE, 3) tip positions for a batch of configurations."""
    pos, _ = fk_batch(tree, q, thetas)
    return pos


def set_parameters(tree: KinematicTree, values: np.ndarray) -> KinematicTree:
    """Tree with the calibration-masked DH fields replaced by ``values``."""
    return tree.with_parameters(values)


def extract_parameters(tree: KinematicTree) -> np.ndarray:
    """Current calibration parameter vector, inverse of set_parameters."""
    return tree.parameter_values()
