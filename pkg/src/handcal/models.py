"""Hand model construction and config-file round-tripping.

Two models ship with the package:

  * ``dlr_like_hand`` — four fingers, each a fixed two-link mount, one
    abduction joint, three mutually parallel flexion axes with the distal one
    passive (coupled 1:1 to the medial joint), and a fixed tip link carrying
    the fingertip capsule. Middle and ring finger share their mounting
    orientation. Link lengths are representative, not vendor data.
  * ``generic_hand`` — same topology but with twisted (non-parallel) flexion
    axes and four distinct mounting orientations, so every parameter is
    observable in principle.

The YAML schema (``schema_version: 1``) stores per link: parent, joint kind,
the four DH scalars, the calibration mask, optional per-field prior sigmas,
optional joint limits, and coupling (source link + ratio) for passive links.
Per end-effector it stores the tip link and capsule; per finger a parked
configuration used while other pairs measure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from .kinematics import (
    DH_FIELDS,
    FIXED,
    PASSIVE,
    REVOLUTE,
    Capsule,
    DHLink,
    KinematicTree,
)

SCHEMA_VERSION = 1

# default prior scale, mirroring the simulation perturbation scale
DEFAULT_SIGMA_P_ROT = math.radians(5.0)
DEFAULT_SIGMA_P_TRANS = 5e-3


@dataclass(frozen=True)
class HandModel:
    """A kinematic tree plus the measurement-campaign metadata around it."""

    tree: KinematicTree
    parked: dict[int, np.ndarray] = field(default_factory=dict)
    palm_proxy: Capsule | None = None
    single_pair_default: tuple[int, int] = (0, 1)

    @property
    def name(self) -> str:
        return self.tree.name

    def parked_configuration(self, active_pair: tuple[int, int]) -> np.ndarray:
        """Full-hand configuration with every non-pair finger parked."""
        q = np.zeros(self.tree.n_active_joints)
        for k, qf in self.parked.items():
            if k in active_pair:
                continue
            q[list(self.tree.joints_of_finger(k))] = qf
        return q


# -- finger factory ---------------------------------------------------------


@dataclass
class FingerSpec:
    """Numbers that describe one finger; the factory turns this into links."""

    name: str
    # mount link 1: applied first (alpha, r, theta, d in DH order of use)
    mount1: tuple[float, float, float, float]  # (d, r, alpha, theta)
    mount2: tuple[float, float, float, float]
    base_lift: float = 0.012          # d of the abduction joint
    knuckle_offset: float = 0.0       # r of the proximal flexion joint
    proximal: float = 0.055
    medial: float = 0.025
    distal: float = 0.024
    # twists between consecutive flexion axes; zero means parallel axes
    twist_medial: float = 0.0
    twist_distal: float = 0.0
    theta_offsets: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    abduction_limits: tuple[float, float] = (-0.26, 0.26)
    proximal_limits: tuple[float, float] = (-0.087, 1.31)
    medial_limits: tuple[float, float] = (0.0, 1.31)
    coupling_ratio: float = 1.0
    capsule: Capsule = field(default_factory=lambda: Capsule(
        np.array([-0.006, 0.0, 0.0]), np.array([0.004, 0.0, 0.0]), 0.0085))
    parked: tuple[float, float, float] = (0.0, -0.05, 0.0)


def _finger_links(spec: FingerSpec, start: int) -> list[DHLink]:
    """Seven links: two fixed mounts, four joints, one fixed tip."""
    full = (True, True, True, True)
    o1, o2, o3, o4 = spec.theta_offsets
    return [
        DHLink(f"{spec.name}_mount1", -1, FIXED,
               d=spec.mount1[0], r=spec.mount1[1], alpha=spec.mount1[2], theta=spec.mount1[3]),
        DHLink(f"{spec.name}_mount2", start + 0, FIXED,
               d=spec.mount2[0], r=spec.mount2[1], alpha=spec.mount2[2], theta=spec.mount2[3]),
        DHLink(f"{spec.name}_abduction", start + 1, REVOLUTE,
               d=spec.base_lift, r=0.0, alpha=0.0, theta=o1,
               calibrate=full, limits=spec.abduction_limits),
        DHLink(f"{spec.name}_proximal", start + 2, REVOLUTE,
               d=0.0, r=spec.knuckle_offset, alpha=0.5 * math.pi, theta=o2,
               calibrate=full, limits=spec.proximal_limits),
        DHLink(f"{spec.name}_medial", start + 3, REVOLUTE,
               d=0.0, r=spec.proximal, alpha=spec.twist_medial, theta=o3,
               calibrate=full, limits=spec.medial_limits),
        DHLink(f"{spec.name}_distal", start + 4, PASSIVE,
               d=0.0, r=spec.medial, alpha=spec.twist_distal, theta=o4,
               calibrate=full, source=start + 4, ratio=spec.coupling_ratio),
        DHLink(f"{spec.name}_tip", start + 5, FIXED,
               d=0.0, r=spec.distal, alpha=0.0, theta=0.0),
    ]


def _assemble(name: str, specs: list[FingerSpec],
              palm_proxy: Capsule | None,
              single_pair_default: tuple[int, int]) -> HandModel:
    links: list[DHLink] = []
    tips: list[int] = []
    capsules: list[Capsule] = []
    parked: dict[int, np.ndarray] = {}
    base = 0
    for k, spec in enumerate(specs):
        finger = _finger_links(spec, base)
        links.extend(finger)
        tips.append(base + 6)
        capsules.append(spec.capsule)
        parked[k] = np.asarray(spec.parked, dtype=float)
        base += 7
    tree = KinematicTree(name, tuple(links), tuple(tips), tuple(capsules))
    return HandModel(tree=tree, parked=parked, palm_proxy=palm_proxy,
                     single_pair_default=single_pair_default)


def dlr_like_hand() -> HandModel:
    """Four-fingered hand with per-finger parallel flexion axes.

    Fore, middle and ring sit in a row along +y and point along +x, curling
    toward +z; the thumb opposes from above the +y edge. Middle and ring share
    one mounting orientation; the thumb and fore finger are mounted
    generically.
    """
    half_pi = 0.5 * math.pi
    fingers = [
        # thumb: lifted, pointing across the palm (-y), abduction axis tilted
        FingerSpec(
            name="thumb",
            mount1=(0.030, 0.030, 0.0, -half_pi),
            mount2=(0.0, -0.055, -0.55, -0.35),
            parked=(0.26, -0.087, 0.0),
        ),
        # fore finger: +y side of the row, yawed toward the others
        FingerSpec(
            name="fore",
            mount1=(0.0, 0.0, 0.0, half_pi),
            mount2=(0.0, 0.025, 0.0, -half_pi - 0.12),
            parked=(-0.26, -0.087, 0.0),
        ),
        # middle and ring: identical mounting orientation, offset along y
        FingerSpec(
            name="middle",
            mount1=(0.0, 0.0, 0.0, half_pi),
            mount2=(0.0, 0.0, 0.0, -half_pi + 0.10),
            parked=(0.0, -0.087, 0.0),
        ),
        FingerSpec(
            name="ring",
            mount1=(0.0, 0.0, 0.0, half_pi),
            mount2=(0.0, -0.025, 0.0, -half_pi + 0.10),
            parked=(0.26, -0.087, 0.0),
        ),
    ]
    palm = Capsule(np.array([-0.02, -0.05, -0.012]), np.array([-0.02, 0.05, -0.012]), 0.010)
    return _assemble("dlr_like_hand", fingers, palm, single_pair_default=(0, 1))


def generic_hand() -> HandModel:
    """Same topology, but no parallel axes and four distinct mountings."""
    half_pi = 0.5 * math.pi
    fingers = [
        FingerSpec(
            name="thumb",
            mount1=(0.030, 0.030, 0.0, -half_pi),
            mount2=(0.0, -0.055, -0.55, -0.35),
            twist_medial=0.35, twist_distal=-0.30,
            theta_offsets=(0.05, -0.04, 0.06, -0.05),
            parked=(0.26, -0.087, 0.0),
        ),
        FingerSpec(
            name="fore",
            mount1=(0.0, 0.0, 0.08, half_pi),
            mount2=(0.0, 0.025, 0.06, -half_pi - 0.12),
            twist_medial=-0.28, twist_distal=0.33,
            theta_offsets=(-0.03, 0.05, -0.06, 0.04),
            parked=(-0.26, -0.087, 0.0),
        ),
        FingerSpec(
            name="middle",
            mount1=(0.0, 0.0, -0.05, half_pi),
            mount2=(0.004, 0.0, 0.09, -half_pi + 0.16),
            twist_medial=0.31, twist_distal=0.26,
            theta_offsets=(0.04, 0.03, 0.05, -0.04),
            parked=(0.0, -0.087, 0.0),
        ),
        FingerSpec(
            name="ring",
            mount1=(0.0, 0.0, 0.06, half_pi),
            mount2=(-0.003, -0.025, -0.07, -half_pi + 0.04),
            twist_medial=-0.24, twist_distal=-0.36,
            theta_offsets=(-0.05, -0.03, 0.04, 0.06),
            parked=(0.26, -0.087, 0.0),
        ),
    ]
    palm = Capsule(np.array([-0.02, -0.05, -0.012]), np.array([-0.02, 0.05, -0.012]), 0.010)
    return _assemble("generic_hand", fingers, palm, single_pair_default=(0, 1))


_BUILTIN = {"dlr_like_hand": dlr_like_hand, "generic_hand": generic_hand}


# -- YAML round-trip ---------------------------------------------------------


def hand_to_dict(model: HandModel) -> dict:
    tree = model.tree
    links = []
    for link in tree.links:
        entry: dict = {
            "name": link.name,
            "parent": link.parent if link.parent < 0 else tree.links[link.parent].name,
            "kind": link.kind,
            "dh": {f: float(getattr(link, f)) for f in DH_FIELDS},
        }
        cal = [DH_FIELDS[i] for i in range(4) if link.calibrate[i]]
        if cal:
            entry["calibrate"] = cal
        if link.sigma_p is not None:
            entry["sigma_p"] = {DH_FIELDS[i]: float(link.sigma_p[i]) for i in range(4)}
        if link.kind == PASSIVE:
            entry["source"] = tree.links[link.source].name
            entry["ratio"] = float(link.ratio)
        if link.limits is not None:
            entry["limits"] = [float(link.limits[0]), float(link.limits[1])]
        links.append(entry)
    ees = []
    for k in range(tree.n_end_effectors):
        cap = tree.tip_geometry[k]
        ees.append({
            "tip_link": tree.links[tree.end_effectors[k]].name,
            "capsule": {
                "a": [float(v) for v in cap.endpoint_a],
                "b": [float(v) for v in cap.endpoint_b],
                "radius": float(cap.radius),
            },
        })
    doc = {
        "schema_version": SCHEMA_VERSION,
        "name": tree.name,
        "links": links,
        "end_effectors": ees,
        "parked": {str(k): [float(v) for v in q] for k, q in model.parked.items()},
        "single_pair_default": list(model.single_pair_default),
    }
    if model.palm_proxy is not None:
        cap = model.palm_proxy
        doc["palm_proxy"] = {
            "a": [float(v) for v in cap.endpoint_a],
            "b": [float(v) for v in cap.endpoint_b],
            "radius": float(cap.radius),
        }
    return doc


def hand_from_dict(doc: dict) -> HandModel:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {doc.get('schema_version')!r}")
    name_to_idx: dict[str, int] = {}
    links: list[DHLink] = []
    for i, entry in enumerate(doc["links"]):
        parent = entry["parent"]
        if isinstance(parent, str):
            parent = name_to_idx[parent]
        dh = entry["dh"]
        cal_fields = set(entry.get("calibrate", []))
        sigma = entry.get("sigma_p")
        source = entry.get("source", -1)
        if isinstance(source, str):
            source = name_to_idx[source]
        limits = entry.get("limits")
        links.append(DHLink(
            name=entry["name"], parent=parent, kind=entry["kind"],
            d=float(dh["d"]), r=float(dh["r"]),
            alpha=float(dh["alpha"]), theta=float(dh["theta"]),
            calibrate=tuple(f in cal_fields for f in DH_FIELDS),
            sigma_p=None if sigma is None else tuple(float(sigma[f]) for f in DH_FIELDS),
            source=source, ratio=float(entry.get("ratio", 1.0)),
            limits=None if limits is None else (float(limits[0]), float(limits[1])),
        ))
        name_to_idx[entry["name"]] = i
    tips = []
    capsules = []
    for ee in doc["end_effectors"]:
        tips.append(name_to_idx[ee["tip_link"]])
        cap = ee["capsule"]
        capsules.append(Capsule(np.array(cap["a"], dtype=float),
                                np.array(cap["b"], dtype=float), float(cap["radius"])))
    tree = KinematicTree(doc["name"], tuple(links), tuple(tips), tuple(capsules))
    parked = {int(k): np.asarray(v, dtype=float) for k, v in doc.get("parked", {}).items()}
    palm = None
    if "palm_proxy" in doc:
        cap = doc["palm_proxy"]
        palm = Capsule(np.array(cap["a"], dtype=float),
                       np.array(cap["b"], dtype=float), float(cap["radius"]))
    pair = tuple(doc.get("single_pair_default", [0, 1]))
    return HandModel(tree=tree, parked=parked, palm_proxy=palm,
                     single_pair_default=(int(pair[0]), int(pair[1])))


def save_hand_config(model: HandModel, path) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(hand_to_dict(model), f, sort_keys=False)


def load_hand_config(path_or_name) -> HandModel:
    """Load a hand model from a YAML path or a built-in name."""
    key = str(path_or_name)
    if key in _BUILTIN:
        return _BUILTIN[key]()
    with open(path_or_name) as f:
        doc = yaml.safe_load(f)
    return hand_from_dict(doc)
