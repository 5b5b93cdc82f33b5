"""Sample generation: task test sets, search trajectories, simulated contacts.

The uniform task test set bins fingertip positions into a cartesian grid and
draws occupied cells uniformly, so evaluation covers the workspace instead of
following the joint-space density.

Contact candidates are produced the way a real campaign would run: find the
shared workspace of a pair, pick a colliding configuration under the nominal
model, pick a contact-free start for the moving finger, then walk the
straight-line joint path until the (simulated) hand detects contact. Hardware
torque thresholding is replaced by an event model: contact fires where the
ground-truth signed distance crosses a per-trajectory noise draw, while the
recorded measurement stays exactly zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import capsule_distance_batch
from .kinematics import Capsule, KinematicTree, fk_batch
from .measurement import CONTACT, BodyPair, Measurement
from .models import HandModel


class SamplingError(RuntimeError):
    pass


class DatasetFormatError(RuntimeError):
    pass


@dataclass(frozen=True)
class WorkspaceGrid:
    """Occupied-cell index of one finger's tip positions."""

    finger: int
    cell_size: float
    configs: np.ndarray    # (N, n_finger_joints)
    tips: np.ndarray       # (N, 3)
    cells: dict[tuple[int, int, int], np.ndarray] = field(repr=False, default_factory=dict)

    @property
    def occupied(self) -> set[tuple[int, int, int]]:
        return set(self.cells.keys())


def _cell_of(tips: np.ndarray, cell_size: float) -> np.ndarray:
    return np.floor(tips / cell_size).astype(int)


def build_workspace_grid(tree: KinematicTree, finger: int, n_samples: int,
                         cell_size: float, rng: np.random.Generator) -> WorkspaceGrid:
    """Sample the finger's joint box and bin tip positions into cells."""
    joints = list(tree.joints_of_finger(finger))
    lim = tree.joint_limits()[joints]
    qf = rng.uniform(lim[:, 0], lim[:, 1], size=(n_samples, len(joints)))
    Q = np.zeros((n_samples, tree.n_active_joints))
    Q[:, joints] = qf
    pos, _ = fk_batch(tree, Q)
    tips = pos[:, finger]
    keys = _cell_of(tips, cell_size)
    cells: dict[tuple[int, int, int], list[int]] = {}
    for i, key in enumerate(map(tuple, keys)):
        cells.setdefault(key, []).append(i)
    return WorkspaceGrid(
        finger=finger, cell_size=cell_size, configs=qf, tips=tips,
        cells={k: np.asarray(v, dtype=int) for k, v in cells.items()})


@dataclass(frozen=True)
class TaskTestSet:
    """Uniform-workspace evaluation configurations, one per finger per draw."""

    Q: np.ndarray                    # (n, n_active) assembled full-hand configs
    per_finger: tuple[np.ndarray, ...]  # (n, n_finger_joints) each

    def __len__(self) -> int:
        return self.Q.shape[0]


def uniform_task_test_set(tree: KinematicTree, n: int, cell_size: float = 0.01,
                          seed: int | np.random.Generator = 0,
                          n_pool: int = 20000) -> TaskTestSet:
    """Per finger: draw occupied grid cells uniformly, then one stored
    configuration per drawn cell. Returns n full-hand configurations."""
    if n <= 0:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    Q = np.zeros((n, tree.n_active_joints))
    per_finger = []
    for k in range(tree.n_end_effectors):
        grid = build_workspace_grid(tree, k, n_pool, cell_size, rng)
        keys = sorted(grid.cells.keys())
        if len(keys) < 2:
            raise SamplingError(
                f"degenerate workspace for finger {k}: all samples in one cell")
        drawn = rng.integers(0, len(keys), size=n)
        picks = np.empty(n, dtype=int)
        for i, c in enumerate(drawn):
            members = grid.cells[keys[c]]
            picks[i] = members[rng.integers(0, len(members))]
        qf = grid.configs[picks]
        per_finger.append(qf)
        Q[:, list(tree.joints_of_finger(k))] = qf
    return TaskTestSet(Q=Q, per_finger=tuple(per_finger))


def shared_workspace(tree: KinematicTree, pair: BodyPair | tuple[int, int],
                     n_samples: int = 100000, cell_size: float = 0.012,
                     seed: int | np.random.Generator = 0
                     ) -> tuple[WorkspaceGrid, WorkspaceGrid, set[tuple[int, int, int]]]:
    """Configurations of both fingers whose tips fall in the workspace overlap.

    Returns the two grids filtered to the intersection cells plus the cell
    set itself. Raises if the intersection is empty (invalid pair).
    """
    if n_samples < 1000:
        raise ValueError("n_samples must be at least 1000")
    k, l = pair.as_tuple() if isinstance(pair, BodyPair) else tuple(pair)
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    grid_k = build_workspace_grid(tree, k, n_samples, cell_size, rng)
    grid_l = build_workspace_grid(tree, l, n_samples, cell_size, rng)
    common = grid_k.occupied & grid_l.occupied
    if not common:
        raise SamplingError(f"fingers {k} and {l} share no workspace cells")
    return _filter_grid(grid_k, common), _filter_grid(grid_l, common), common


def _filter_grid(grid: WorkspaceGrid, cells: set[tuple[int, int, int]]) -> WorkspaceGrid:
    keep_cells = {c: grid.cells[c] for c in sorted(cells)}
    idx = np.concatenate([keep_cells[c] for c in keep_cells]) if keep_cells else np.zeros(0, int)
    idx = np.sort(idx)
    remap = {old: new for new, old in enumerate(idx)}
    return WorkspaceGrid(
        finger=grid.finger, cell_size=grid.cell_size,
        configs=grid.configs[idx], tips=grid.tips[idx],
        cells={c: np.asarray([remap[i] for i in v], dtype=int)
               for c, v in keep_cells.items()})


# -- search trajectories -------------------------------------------------------


@dataclass(frozen=True)
class SearchTrajectory:
    """Joint-space line from contact-free start to deep nominal penetration."""

    pair: tuple[int, int]
    moving_finger: int
    static_finger: int
    q_start: np.ndarray   # full-hand configuration
    q_end: np.ndarray     # full-hand configuration; only the moving joints differ
    parked: dict[int, np.ndarray] = field(default_factory=dict)

    def interpolate(self, t: np.ndarray) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return self.q_start[None, :] + t[:, None] * (self.q_end - self.q_start)[None, :]


def _pair_distance_batch(tree: KinematicTree, Q: np.ndarray,
                         pair: tuple[int, int]) -> np.ndarray:
    k, l = pair
    pos, rot = fk_batch(tree, Q)
    return capsule_distance_batch(tree.tip_geometry[k], pos[:, k], rot[:, k],
                                  tree.tip_geometry[l], pos[:, l], rot[:, l])


def _tip_pose_batch(tree: KinematicTree, finger: int,
                    configs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tip poses from the finger's own joints (other branches are irrelevant)."""
    Q = np.zeros((len(configs), tree.n_active_joints))
    Q[:, list(tree.joints_of_finger(finger))] = configs
    pos, rot = fk_batch(tree, Q)
    return pos[:, finger], rot[:, finger]


def _clearance_ok(tree: KinematicTree, pos: np.ndarray, rot: np.ndarray,
                  active: tuple[int, int], parked: Sequence[int],
                  palm: Capsule | None, clearance: float) -> bool:
    """Parked fingertips (and the palm proxy) must stay clear along the path."""
    B = pos.shape[0]
    for a in active:
        for p in parked:
            d = capsule_distance_batch(tree.tip_geometry[a], pos[:, a], rot[:, a],
                                       tree.tip_geometry[p], pos[:, p], rot[:, p])
            if d.min() <= clearance:
                return False
        if palm is not None:
            eye = np.broadcast_to(np.eye(3), (B, 3, 3))
            zero = np.zeros((B, 3))
            d = capsule_distance_batch(tree.tip_geometry[a], pos[:, a], rot[:, a],
                                       palm, zero, eye)
            if d.min() <= clearance:
                return False
    return True


def generate_search_trajectories(model: HandModel, pair: BodyPair | tuple[int, int],
                                 n_trajectories: int,
                                 collision_threshold: float = -0.002,
                                 start_margin: float = 0.015,
                                 clearance: float = 0.003,
                                 seed: int | np.random.Generator = 0,
                                 n_workspace: int = 30000,
                                 cell_size: float = 0.012,
                                 path_checks: int = 48,
                                 max_retries: int = 200) -> list[SearchTrajectory]:
    """Plan contact-search lines for one pair under the nominal model.

    Every returned trajectory starts at nominal distance > start_margin, ends
    below collision_threshold, crosses zero along the straight joint path and
    keeps the parked fingers and palm clear.
    """
    tree = model.tree
    k, l = pair.as_tuple() if isinstance(pair, BodyPair) else tuple(pair)
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    grid_k, grid_l, _ = shared_workspace(tree, (k, l), n_workspace, cell_size, rng)
    parked_fingers = [f for f in range(tree.n_end_effectors) if f not in (k, l)]
    q_parked = model.parked_configuration((k, l))
    joints = {f: list(tree.joints_of_finger(f)) for f in range(tree.n_end_effectors)}
    lim = tree.joint_limits()
    cap_k, cap_l = tree.tip_geometry[k], tree.tip_geometry[l]
    # candidate tip poses are reusable across trajectories: a tip pose only
    # depends on its own finger's joints
    pos_k, rot_k = _tip_pose_batch(tree, k, grid_k.configs)
    pos_l, rot_l = _tip_pose_batch(tree, l, grid_l.configs)

    out: list[SearchTrajectory] = []
    failures = 0
    while len(out) < n_trajectories:
        if failures > max_retries * n_trajectories:
            raise SamplingError(
                f"pair ({k},{l}): no colliding configurations within the retry budget")
        # anchor finger A, scan finger B's shared-workspace configs for collisions
        ia = rng.integers(0, len(grid_k.configs))
        qa = grid_k.configs[ia]
        dists = capsule_distance_batch(cap_k, pos_k[ia][None], rot_k[ia][None],
                                       cap_l, pos_l, rot_l)
        colliding = np.flatnonzero(dists < collision_threshold)
        if colliding.size == 0:
            failures += 1
            continue
        ib = colliding[rng.integers(0, colliding.size)]
        qb = grid_l.configs[ib]

        moving, static = (k, l) if rng.random() < 0.5 else (l, k)
        q_end = q_parked.copy()
        q_end[joints[k]] = qa
        q_end[joints[l]] = qb

        # contact-free random start for the moving finger
        ml = lim[joints[moving]]
        cand = rng.uniform(ml[:, 0], ml[:, 1], size=(32, len(joints[moving])))
        pos_m, rot_m = _tip_pose_batch(tree, moving, cand)
        sp, sr = ((pos_k[ia], rot_k[ia]) if static == k else (pos_l[ib], rot_l[ib]))
        cap_m, cap_s = tree.tip_geometry[moving], tree.tip_geometry[static]
        d0 = capsule_distance_batch(cap_m, pos_m, rot_m,
                                    cap_s, sp[None], sr[None])
        free = np.flatnonzero(d0 > start_margin)
        if free.size == 0:
            failures += 1
            continue
        q_start = q_end.copy()
        q_start[joints[moving]] = cand[free[0]]

        traj = SearchTrajectory(
            pair=(k, l), moving_finger=moving, static_finger=static,
            q_start=q_start, q_end=q_end,
            parked={f: q_parked[joints[f]].copy() for f in parked_fingers})
        ts = np.linspace(0.0, 1.0, path_checks)
        Qpath = traj.interpolate(ts)
        pos, rot = fk_batch(tree, Qpath)
        dpath = capsule_distance_batch(cap_k, pos[:, k], rot[:, k],
                                       cap_l, pos[:, l], rot[:, l])
        crosses = dpath[0] > 0 and np.any(dpath < 0)
        if not crosses:
            failures += 1
            continue
        if not _clearance_ok(tree, pos, rot, (k, l), parked_fingers,
                             model.palm_proxy, clearance):
            failures += 1
            continue
        out.append(traj)
    return out


# -- contact simulation ---------------------------------------------------------


@dataclass(frozen=True)
class ContactEvent:
    """One simulated contact: the configuration where detection fired."""

    q_contact: np.ndarray
    pair: tuple[int, int]
    noise_realization: float
    trajectory: SearchTrajectory

    def to_measurement(self) -> Measurement:
        return Measurement(
            CONTACT, self.q_contact, y=0.0, pair=self.pair,
            meta={"noise_realization": float(self.noise_realization)})


def simulate_contact(trajectory: SearchTrajectory, tree_groundtruth: KinematicTree,
                     noise_sigma: float = 0.0,
                     seed: int | np.random.Generator = 0,
                     tol: float = 1e-6, coarse_steps: int = 256) -> ContactEvent | None:
    """Walk the trajectory under the ground truth until detection triggers.

    Detection fires at the first parameter t where the ground-truth signed
    distance crosses the drawn noise offset; the returned configuration is
    bisected to |distance - noise| < tol. Returns None when the ground truth
    never produces the crossing (a failed measurement, a legitimate outcome).
    """
    events = simulate_contacts([trajectory], tree_groundtruth, noise_sigma, seed,
                               tol=tol, coarse_steps=coarse_steps)
    return events[0]


def simulate_contacts(trajectories: Sequence[SearchTrajectory],
                      tree_groundtruth: KinematicTree,
                      noise_sigma: float = 0.0,
                      seed: int | np.random.Generator | np.random.SeedSequence = 0,
                      tol: float = 1e-6,
                      coarse_steps: int = 256) -> list[ContactEvent | None]:
    """Vectorized contact search over many trajectories.

    Noise draws come from per-trajectory substreams of the master seed, so
    results do not depend on evaluation order or parallel chunking.
    """
    if isinstance(seed, np.random.SeedSequence):
        ss = seed
    elif isinstance(seed, np.random.Generator):
        ss = np.random.SeedSequence(int(seed.integers(2 ** 63)))
    else:
        ss = np.random.SeedSequence(seed)
    subs = ss.spawn(len(trajectories))
    eps = np.array([
        np.random.default_rng(s).normal(0.0, noise_sigma) if noise_sigma > 0 else 0.0
        for s in subs])

    results: list[ContactEvent | None] = [None] * len(trajectories)
    groups: dict[tuple[int, int], list[int]] = {}
    for i, tr in enumerate(trajectories):
        groups.setdefault(tr.pair, []).append(i)

    ts = np.linspace(0.0, 1.0, coarse_steps + 1)
    for pair, idxs in groups.items():
        trs = [trajectories[i] for i in idxs]
        B = len(trs)
        starts = np.stack([t.q_start for t in trs])
        ends = np.stack([t.q_end for t in trs])
        # coarse scan: (B * (coarse+1)) configurations in one batch
        Q = starts[:, None, :] + ts[None, :, None] * (ends - starts)[:, None, :]
        d = _pair_distance_batch(tree_groundtruth, Q.reshape(-1, Q.shape[-1]), pair)
        phi = d.reshape(B, -1) - eps[idxs][:, None]
        sign_change = (phi[:, :-1] > 0) & (phi[:, 1:] <= 0)
        has = sign_change.any(axis=1)
        first = np.where(has, sign_change.argmax(axis=1), 0)
        valid = has & (phi[:, 0] > 0)

        lo = ts[first].copy()
        hi = ts[first + 1].copy()
        t_final = 0.5 * (lo + hi)
        active = valid.copy()
        for _ in range(60):
            if not active.any():
                break
            mid = 0.5 * (lo + hi)
            rows = np.flatnonzero(active)
            Qm = starts[rows] + mid[rows, None] * (ends[rows] - starts[rows])
            dm = _pair_distance_batch(tree_groundtruth, Qm, pair)
            phi_m = dm - eps[np.asarray(idxs)[rows]]
            t_final[rows] = mid[rows]
            shrink_hi = phi_m <= 0
            hi[rows[shrink_hi]] = mid[rows[shrink_hi]]
            lo[rows[~shrink_hi]] = mid[rows[~shrink_hi]]
            active[rows] = np.abs(phi_m) >= tol
        for n, i in enumerate(idxs):
            if not valid[n]:
                continue
            q_star = trs[n].q_start + t_final[n] * (trs[n].q_end - trs[n].q_start)
            results[i] = ContactEvent(
                q_contact=q_star, pair=pair,
                noise_realization=float(eps[idxs[n]]), trajectory=trs[n])
    return results


# -- dataset persistence ---------------------------------------------------------


def save_dataset(path, measurements: Sequence[Measurement]) -> None:
    """JSON-lines, one record per measurement."""
    with open(path, "w") as f:
        for m in measurements:
            rec = {
                "kind": m.kind,
                "q": [float(v) for v in m.q],
                "y": (None if m.y is None else
                      float(m.y) if np.isscalar(m.y) else [float(v) for v in np.atleast_1d(m.y)]),
            }
            if m.pair is not None:
                rec["pair"] = [int(m.pair[0]), int(m.pair[1])]
            if m.end_effector is not None:
                rec["end_effector"] = int(m.end_effector)
            if m.meta:
                rec["meta"] = m.meta
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def load_dataset(path) -> list[Measurement]:
    out: list[Measurement] = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                kind = rec["kind"]
                q = np.asarray(rec["q"], dtype=float)
                y = rec.get("y")
                if isinstance(y, list):
                    y = np.asarray(y, dtype=float)
                pair = rec.get("pair")
                out.append(Measurement(
                    kind, q, y=y,
                    pair=None if pair is None else (int(pair[0]), int(pair[1])),
                    end_effector=rec.get("end_effector"),
                    meta=rec.get("meta", {})))
            except (KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
                raise DatasetFormatError(f"line {lineno}: {exc}") from exc
    return out


def save_trajectories(path, trajectories: Sequence[SearchTrajectory]) -> None:
    with open(path, "w") as f:
        for t in trajectories:
            rec = {
                "pair": [int(t.pair[0]), int(t.pair[1])],
                "moving_finger": int(t.moving_finger),
                "static_finger": int(t.static_finger),
                "q_start": [float(v) for v in t.q_start],
                "q_end": [float(v) for v in t.q_end],
                "parked": {str(k): [float(v) for v in q] for k, q in t.parked.items()},
            }
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def load_trajectories(path) -> list[SearchTrajectory]:
    out: list[SearchTrajectory] = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                out.append(SearchTrajectory(
                    pair=(int(rec["pair"][0]), int(rec["pair"][1])),
                    moving_finger=int(rec["moving_finger"]),
                    static_finger=int(rec["static_finger"]),
                    q_start=np.asarray(rec["q_start"], dtype=float),
                    q_end=np.asarray(rec["q_end"], dtype=float),
                    parked={int(k): np.asarray(v, dtype=float)
                            for k, v in rec.get("parked", {}).items()}))
            except (KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
                raise DatasetFormatError(f"line {lineno}: {exc}") from exc
    return out
