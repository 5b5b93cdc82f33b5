"""MAP identification of the calibration parameters.

The objective is the measurement-noise-weighted sum of squared residuals plus
a Gaussian-prior penalty:

    sum_n ||y_n - h(q_n, theta)||^2 / sigma_m^2  +  (theta - theta_p)^T
    diag(sigma_p^-2) (theta - theta_p)

The prior keeps the problem bounded even with redundant parameters; entries
with sigma_p = inf drop out of the penalty. Minimization is a damped
Gauss-Newton (Levenberg-Marquardt) with a multiplicative damping schedule;
accepted steps never increase the objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .kinematics import KinematicTree
from .measurement import (
    CARTESIAN,
    CONTACT,
    TASK,
    MarkerModel,
    Measurement,
    evaluate_batch,
    stacked_jacobian,
)


class CalibrationError(RuntimeError):
    pass


class NonFiniteObjectiveError(CalibrationError):
    def __init__(self, message: str, iterate: np.ndarray):
        super().__init__(message)
        self.iterate = iterate


class SingularInformationError(CalibrationError):
    pass


@dataclass(frozen=True)
class NoiseModel:
    """Measurement noise std per kind (meters)."""

    contact: float = 5e-4
    cartesian: float = 5e-4
    task: float = 5e-4

    def __post_init__(self):
        for v in (self.contact, self.cartesian, self.task):
            if not (v > 0.0):
                raise ValueError("noise sigma must be positive")

    def of(self, kind: str) -> float:
        return {CONTACT: self.contact, CARTESIAN: self.cartesian, TASK: self.task}[kind]


@dataclass(frozen=True)
class ParameterVector:
    """Calibration parameter set with its Gaussian prior.

    ``values``, ``prior_mean`` and ``prior_sigma`` share the tree's layout
    order; ``prior_sigma`` entries may be +inf (no prior on that entry).
    """

    values: np.ndarray
    prior_mean: np.ndarray
    prior_sigma: np.ndarray
    names: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        object.__setattr__(self, "prior_mean", np.asarray(self.prior_mean, dtype=float))
        object.__setattr__(self, "prior_sigma", np.asarray(self.prior_sigma, dtype=float))
        if not (self.values.shape == self.prior_mean.shape == self.prior_sigma.shape):
            raise ValueError("parameter vector fields must share one shape")
        if np.any(self.prior_sigma <= 0.0):
            raise ValueError("prior sigmas must be positive (use inf for no prior)")

    @staticmethod
    def nominal(tree: KinematicTree,
                sigma_rot: float = np.deg2rad(5.0),
                sigma_trans: float = 5e-3) -> "ParameterVector":
        """Prior centered on the tree's current values."""
        vals = tree.parameter_values()
        return ParameterVector(
            values=vals.copy(), prior_mean=vals.copy(),
            prior_sigma=tree.parameter_prior_sigma(sigma_rot, sigma_trans),
            names=tuple(tree.parameter_names()))

    def with_values(self, values: np.ndarray) -> "ParameterVector":
        return ParameterVector(values, self.prior_mean, self.prior_sigma, self.names)


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 200
    gradient_tol: float = 1e-10
    cost_tol: float = 1e-12
    damping_init: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 10.0
    damping_max: float = 1e14


@dataclass(frozen=True)
class CalibrationResult:
    theta_star: ParameterVector
    residuals: np.ndarray          # stacked y - h at theta_star, physical units
    cost_trace: np.ndarray         # MAP objective after every accepted step
    parameter_covariance: np.ndarray
    converged: bool
    n_iterations: int
    gradient_norm: float


# -- objective ----------------------------------------------------------------


def _prior_terms(theta: np.ndarray, prior: ParameterVector) -> np.ndarray:
    w = np.where(np.isfinite(prior.prior_sigma), 1.0 / prior.prior_sigma, 0.0)
    return (theta - prior.prior_mean) * w


def _weighted_residuals(tree: KinematicTree, dataset: Sequence[Measurement],
                        theta: np.ndarray, noise: NoiseModel,
                        prior: ParameterVector | None,
                        marker: MarkerModel | None) -> np.ndarray:
    parts = []
    if dataset:
        rows = _grouped_rows(tree, dataset, theta, noise, marker)
        parts.append(rows)
    if prior is not None:
        parts.append(_prior_terms(theta, prior))
    if not parts:
        return np.zeros(0)
    return np.concatenate(parts)


def _grouped_rows(tree, dataset, theta, noise, marker) -> np.ndarray:
    preds = evaluate_batch(tree, dataset, marker=marker, thetas=theta)
    out = np.empty(preds.shape)
    pos = 0
    for s in dataset:
        d = 1 if s.kind == CONTACT else (3 if s.kind == CARTESIAN else
                                         3 * ((len(s.fingers) if s.fingers else tree.n_end_effectors) - 1))
        y = np.zeros(d) if s.y is None else np.atleast_1d(np.asarray(s.y, dtype=float))
        out[pos:pos + d] = (y - preds[pos:pos + d]) / noise.of(s.kind)
        pos += d
    return out


def map_objective(dataset: Sequence[Measurement], tree: KinematicTree,
                  theta: ParameterVector | np.ndarray, noise: NoiseModel,
                  prior: ParameterVector | None = None,
                  marker: MarkerModel | None = None) -> float:
    """Weighted sum of squared residuals plus the quadratic prior penalty."""
    if isinstance(theta, ParameterVector):
        prior = theta if prior is None else prior
        values = theta.values
    else:
        values = np.asarray(theta, dtype=float)
    r = _weighted_residuals(tree, dataset, values, noise, prior, marker)
    return float(r @ r)


# -- Levenberg-Marquardt core --------------------------------------------------


@dataclass(frozen=True)
class LMResult:
    x: np.ndarray
    cost_trace: np.ndarray
    converged: bool
    n_iterations: int
    gradient_norm: float


def lm_solve(residual_fn: Callable[[np.ndarray], np.ndarray],
             jacobian_fn: Callable[[np.ndarray], np.ndarray],
             x0: np.ndarray, options: SolverOptions = SolverOptions()) -> LMResult:
    """Damped Gauss-Newton on 0.5-free least squares cost ||r(x)||^2.

    Damping is multiplicative on the information-matrix diagonal: reject
    multiplies by ``damping_up``, accept divides by ``damping_down``.
    """
    x = np.asarray(x0, dtype=float).copy()
    r = residual_fn(x)
    if not np.all(np.isfinite(r)):
        raise NonFiniteObjectiveError("non-finite residual at the initial point", x)
    cost = float(r @ r)
    trace = [cost]
    lam = options.damping_init
    converged = False
    grad_norm = np.inf
    it = 0
    while it < options.max_iterations:
        J = jacobian_fn(x)
        g = J.T @ r
        grad_norm = float(np.linalg.norm(g))
        if grad_norm < options.gradient_tol:
            converged = True
            break
        A = J.T @ J
        diag = np.diag(A).copy()
        diag = np.maximum(diag, max(diag.max(), 1e-30) * 1e-12)
        accepted = False
        while lam <= options.damping_max:
            try:
                delta = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= options.damping_up
                continue
            x_new = x + delta
            r_new = residual_fn(x_new)
            if not np.all(np.isfinite(r_new)):
                raise NonFiniteObjectiveError("non-finite objective during step search", x_new)
            cost_new = float(r_new @ r_new)
            if cost_new < cost:
                rel_drop = (cost - cost_new) / max(cost, 1e-300)
                x, r, cost = x_new, r_new, cost_new
                trace.append(cost)
                lam = max(lam / options.damping_down, 1e-15)
                accepted = True
                if rel_drop < options.cost_tol:
                    converged = True
                break
            lam *= options.damping_up
        it += 1
        if converged or not accepted:
            # damping exhausted without an acceptable step means we sit at a
            # (numerical) stationary point
            converged = converged or not accepted
            break
    return LMResult(x=x, cost_trace=np.asarray(trace), converged=converged,
                    n_iterations=it, gradient_norm=grad_norm)


# -- public estimation API ------------------------------------------------------


def calibrate(dataset: Sequence[Measurement], tree: KinematicTree,
              initial: ParameterVector, noise: NoiseModel = NoiseModel(),
              options: SolverOptions = SolverOptions(),
              marker: MarkerModel | None = None) -> CalibrationResult:
    """MAP estimate of the calibration parameters from a measurement dataset."""
    if not dataset:
        raise CalibrationError("dataset is empty")
    if initial.values.shape != (tree.n_parameters,):
        raise CalibrationError(
            f"initial parameter vector has {initial.values.size} entries, "
            f"tree expects {tree.n_parameters}")

    prior_w = np.where(np.isfinite(initial.prior_sigma), 1.0 / initial.prior_sigma, 0.0)

    def residual_fn(x: np.ndarray) -> np.ndarray:
        return _weighted_residuals(tree, dataset, x, noise, initial, marker)

    def jacobian_fn(x: np.ndarray) -> np.ndarray:
        Jh = stacked_jacobian(tree, dataset, marker=marker, theta=x)
        w = np.array([1.0 / noise.of(s.kind) for s in dataset])
        dims = _sample_dims(tree, dataset)
        row_w = np.repeat(w, dims)
        J = np.vstack([-Jh * row_w[:, None], np.diag(prior_w)])
        return J

    res = lm_solve(residual_fn, jacobian_fn, initial.values, options)
    theta_star = initial.with_values(res.x)
    tree_star = tree.with_parameters(res.x)
    preds = evaluate_batch(tree_star, dataset, marker=marker)
    ys = np.concatenate([
        np.zeros(d) if s.y is None else np.atleast_1d(np.asarray(s.y, dtype=float))
        for s, d in zip(dataset, _sample_dims(tree, dataset))])
    residuals = ys - preds
    cov = parameter_covariance(dataset, tree, res.x, noise, initial, marker)
    return CalibrationResult(
        theta_star=theta_star, residuals=residuals,
        cost_trace=res.cost_trace, parameter_covariance=cov,
        converged=res.converged, n_iterations=res.n_iterations,
        gradient_norm=res.gradient_norm)


def _sample_dims(tree: KinematicTree, dataset: Sequence[Measurement]) -> list[int]:
    dims = []
    for s in dataset:
        if s.kind == CONTACT:
            dims.append(1)
        elif s.kind == CARTESIAN:
            dims.append(3)
        else:
            m = len(s.fingers) if s.fingers else tree.n_end_effectors
            dims.append(3 * (m - 1))
    return dims


def parameter_covariance(dataset: Sequence[Measurement], tree: KinematicTree,
                         theta: np.ndarray | ParameterVector, noise: NoiseModel,
                         prior: ParameterVector,
                         marker: MarkerModel | None = None) -> np.ndarray:
    """Posterior parameter covariance (J^T W J + prior precision)^-1.

    More or better measurements shrink this; an exactly singular information
    matrix (possible only with infinite prior sigmas on blind directions)
    raises SingularInformationError.
    """
    values = theta.values if isinstance(theta, ParameterVector) else np.asarray(theta, dtype=float)
    P = values.size
    info = np.diag(np.where(np.isfinite(prior.prior_sigma),
                            1.0 / prior.prior_sigma ** 2, 0.0))
    if dataset:
        J = stacked_jacobian(tree, dataset, marker=marker, theta=values)
        w = np.array([1.0 / noise.of(s.kind) ** 2 for s in dataset])
        row_w = np.repeat(w, _sample_dims(tree, dataset))
        info = info + J.T @ (J * row_w[:, None])
    evals = np.linalg.eigvalsh(info)
    if evals.min() <= evals.max() * 1e-14:
        raise SingularInformationError(
            "information matrix numerically singular; an unidentifiable "
            "direction carries an infinite prior sigma")
    return np.linalg.inv(info)
