"""Sensitivity analysis: eigenstructure of the stacked Jacobian Gram matrix.

A parameter direction is identifiable when it lies outside the nullspace of
J^T J for the stacked measurement Jacobian J. Because rotational (rad) and
translational (m) parameters mix units, columns are made commensurate before
the eigendecomposition: rotational columns are divided by a characteristic
length (default 0.1 m, the finger scale), i.e. angles are counted in
tip-displacement equivalents. Kernel dimensions do not depend on this
scaling; eigenvalue magnitudes do, and the default threshold 1e-6 is
calibrated to it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .kinematics import KinematicTree
from .measurement import (
    CONTACT,
    TASK,
    MarkerModel,
    Measurement,
    measurement_dim,
    stacked_jacobian,
)

EIGENVALUE_THRESHOLD = 1e-6
ROTATION_LENGTH_SCALE = 0.1  # m per rad: unit-mixing scale for J columns

MODE_SINGLE_PAIR = "single-pair"
MODE_THREE_FINGERS = "three-fingers"
MODE_ALL_PAIRS = "all-pairs"


@dataclass(frozen=True)
class SensitivityReport:
    """Eigenstructure of the (column-scaled) J^T J for one measurement setup."""

    eigenvalues: np.ndarray   # descending
    eigenvectors: np.ndarray  # column i pairs with eigenvalues[i]
    kernel_dim: int
    threshold: float
    mode: str
    kind: str
    entries: np.ndarray       # layout column indices included in the analysis
    column_scale: np.ndarray  # applied scale per included column
    n_samples: int

    @property
    def n_identifiable(self) -> int:
        return int(np.sum(self.eigenvalues > self.threshold))

    @property
    def n_parameters(self) -> int:
        return self.eigenvalues.size

    def kernel_basis(self) -> np.ndarray:
        """(P, kernel_dim) eigenvectors spanning the numerical nullspace."""
        if self.kernel_dim == 0:
            return np.zeros((self.n_parameters, 0))
        return self.eigenvectors[:, self.n_parameters - self.kernel_dim:]

    def gram(self) -> np.ndarray:
        return (self.eigenvectors * self.eigenvalues) @ self.eigenvectors.T

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "kind": self.kind,
            "threshold": self.threshold,
            "n_samples": self.n_samples,
            "n_parameters": int(self.n_parameters),
            "n_identifiable": self.n_identifiable,
            "kernel_dim": int(self.kernel_dim),
            "entries": [int(i) for i in self.entries],
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "kernel_basis": [[float(v) for v in col] for col in self.kernel_basis().T],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def scope_fingers(tree: KinematicTree, mode: str,
                  fingers: Sequence[int] | None = None) -> tuple[int, ...]:
    if fingers is not None:
        return tuple(fingers)
    if mode == MODE_ALL_PAIRS:
        return tuple(range(tree.n_end_effectors))
    raise ValueError(f"mode {mode!r} needs an explicit finger scope")


def sensitivity(tree: KinematicTree, samples: Sequence[Measurement], kind: str,
                scope: Sequence[int] | None = None,
                theta: np.ndarray | None = None,
                marker: MarkerModel | None = None,
                threshold: float = EIGENVALUE_THRESHOLD,
                rotation_length_scale: float = ROTATION_LENGTH_SCALE,
                mode: str | None = None) -> SensitivityReport:
    """Build the combined Jacobian for the scope and eigendecompose J^T J.

    ``scope`` lists the participating end-effectors (default: all). Contact
    samples outside the scope's pairs are dropped; task samples are evaluated
    restricted to the scope fingers. Parameters are restricted to the scope's
    branches.
    """
    fingers = tuple(range(tree.n_end_effectors)) if scope is None else tuple(scope)
    if len(fingers) < (2 if kind in (CONTACT, TASK) else 1):
        raise ValueError("scope too small for this measurement kind")

    use: list[Measurement] = []
    for s in samples:
        if s.kind != kind:
            continue
        if kind == CONTACT:
            if s.pair is not None and set(s.pair) <= set(fingers):
                use.append(s)
        elif kind == TASK:
            use.append(Measurement(TASK, s.q, fingers=fingers))
        else:
            if s.end_effector in fingers:
                use.append(s)
    if not use:
        raise ValueError("no samples left in scope")

    J = stacked_jacobian(tree, use, marker=marker, theta=theta)
    entries = tree.parameter_entries_on_fingers(fingers)
    J = J[:, entries]

    rot = tree.parameter_is_rotational()[entries]
    scale = np.where(rot, 1.0 / rotation_length_scale, 1.0)
    Js = J * scale

    gram = Js.T @ Js
    evals, evecs = np.linalg.eigh(gram)
    order = np.argsort(evals)[::-1]
    evals = np.maximum(evals[order], 0.0)
    evecs = evecs[:, order]

    if mode is None:
        mode = {2: MODE_SINGLE_PAIR, 3: MODE_THREE_FINGERS}.get(
            len(fingers), MODE_ALL_PAIRS)
    return SensitivityReport(
        eigenvalues=evals, eigenvectors=evecs,
        kernel_dim=int(np.sum(evals <= threshold)),
        threshold=threshold, mode=mode, kind=kind,
        entries=entries, column_scale=scale, n_samples=len(use))


def kernel_included(report_c: SensitivityReport, report_t: SensitivityReport,
                    tol: float = 1e-3) -> tuple[bool, float]:
    """Check kernel(calibration Gram) is inside kernel(task Gram).

    For every kernel eigenvector v of ``report_c`` the normalized response
    ||J_t v|| / ||J_t|| must stay below ``tol``. Returns (pass, worst
    violation). Both reports must share the parameter layout and scaling.
    """
    if not np.array_equal(report_c.entries, report_t.entries):
        raise ValueError("reports use different parameter layouts")
    if not np.allclose(report_c.column_scale, report_t.column_scale):
        raise ValueError("reports use different column scalings")
    basis = report_c.kernel_basis()
    if basis.shape[1] == 0:
        return True, 0.0
    gram_t = report_t.gram()
    lam_max = float(report_t.eigenvalues[0])
    if lam_max <= 0.0:
        return True, 0.0
    responses = np.einsum("pk,pq,qk->k", basis, gram_t, basis)
    worst = float(np.sqrt(np.maximum(responses, 0.0).max() / lam_max))
    return worst <= tol, worst


def propagate_to_task(cov_theta: np.ndarray, tree: KinematicTree,
                      test_Q: np.ndarray,
                      theta: np.ndarray | None = None) -> tuple[np.ndarray, dict]:
    """Map parameter covariance to task-measurement standard deviations.

    For each test configuration returns the per-component std vector of the
    task measurement (sqrt diag of J cov J^T, physical units). The summary
    aggregates the norm of the per-finger 3-vector stds.
    """
    cov_theta = np.asarray(cov_theta, dtype=float)
    evals = np.linalg.eigvalsh(cov_theta)
    if evals.min() < -1e-10 * max(evals.max(), 1.0):
        raise ValueError("covariance matrix is not positive semi-definite")
    test_Q = np.atleast_2d(test_Q)
    samples = [Measurement(TASK, q) for q in test_Q]
    J = stacked_jacobian(tree, samples, theta=theta)
    d = measurement_dim(tree, TASK)
    J = J.reshape(len(samples), d, -1)
    var = np.einsum("nip,pq,niq->ni", J, cov_theta, J)
    stds = np.sqrt(np.maximum(var, 0.0))
    per_finger = stds.reshape(len(samples), -1, 3)
    norms = np.linalg.norm(per_finger, axis=2)
    summary = {
        "mean_norm": float(norms.mean()),
        "max_norm": float(norms.max()),
    }
    return stds, summary
