"""Task D-optimal selection of calibration samples.

The score of a candidate subset couples the posterior parameter covariance
(from the subset's calibration Jacobians plus the prior) with the constant
information matrix of the task test set:

    O_D = det( cov(theta) * sum_s J_t^s^T J_t^s ) / l,  l = n_parameters

Smaller is better. When the test-set information matrix is rank deficient
(the hand has task-irrelevant parameter directions) the determinant is taken
on its range, which reduces to the plain product form at full rank and keeps
the subset ordering meaningful; see the package docs.

Selection is greedy (add the best candidate per step, rank-one covariance
updates) and DETMAX (add-best-then-remove-best excursions from the greedy
set). All comparisons run in log-determinant form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .estimation import NoiseModel, ParameterVector
from .measurement import Measurement


class SelectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class CandidatePool:
    """Measurement prototypes with precomputed calibration Jacobians.

    ``jacobians[i]`` is the (d_i, P) Jacobian of candidate i evaluated at the
    prior mean; ``test_fim`` is sum over the task test set of J_t^T J_t.
    """

    candidates: tuple[Measurement, ...]
    jacobians: tuple[np.ndarray, ...]
    test_fim: np.ndarray
    _basis: np.ndarray = field(init=False, repr=False, compare=False)
    _log_eigs: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.candidates) != len(self.jacobians):
            raise ValueError("one Jacobian per candidate required")
        fim = np.asarray(self.test_fim, dtype=float)
        if fim.ndim != 2 or fim.shape[0] != fim.shape[1]:
            raise ValueError("test_fim must be square")
        if not np.allclose(fim, fim.T, atol=1e-10):
            raise ValueError("test_fim must be symmetric")
        evals, evecs = np.linalg.eigh(fim)
        cut = evals.max() * 1e-12
        keep = evals > cut
        if not keep.any():
            raise ValueError("test_fim has no significant eigenvalues")
        object.__setattr__(self, "_basis", evecs[:, keep])
        object.__setattr__(self, "_log_eigs", float(np.sum(np.log(evals[keep]))))

    def __len__(self) -> int:
        return len(self.candidates)

    @property
    def n_parameters(self) -> int:
        return self.test_fim.shape[0]

    def weighted_rows(self, noise: NoiseModel) -> list[np.ndarray]:
        return [np.atleast_2d(J) / noise.of(c.kind)
                for c, J in zip(self.candidates, self.jacobians)]


@dataclass(frozen=True)
class SelectionResult:
    """Chosen subset with the objective after each accepted change.

    O_D underflows float64 on large well-informed designs, so the log trace
    is the reliable record; ``objective_trace`` holds exp of it.
    """

    selected_indices: tuple[int, ...]
    objective_trace: np.ndarray
    method: str
    log_objective_trace: np.ndarray | None = None

    def __post_init__(self):
        if self.log_objective_trace is None:
            with np.errstate(divide="ignore"):
                object.__setattr__(self, "log_objective_trace", np.log(self.objective_trace))


class _DesignState:
    """Posterior covariance projected onto the task range, with incremental
    rank-one add/remove updates and a from-scratch rebuild for hygiene."""

    REFRESH_EVERY = 64

    def __init__(self, pool: CandidatePool, noise: NoiseModel, prior_sigma: np.ndarray):
        P = pool.n_parameters
        prior_sigma = np.asarray(prior_sigma, dtype=float)
        if prior_sigma.shape != (P,):
            raise ValueError("prior sigma length mismatch")
        self.pool = pool
        self.noise = noise
        self.prior_prec = np.where(np.isfinite(prior_sigma), prior_sigma ** -2, 0.0)
        self.rows = pool.weighted_rows(noise)
        self.V = pool._basis
        self.log_eigs = pool._log_eigs
        self.P = P
        self.members: list[int] = []
        self._updates = 0
        self._rebuild()

    def _rebuild(self):
        info = np.diag(self.prior_prec).astype(float)
        for i in self.members:
            U = self.rows[i]
            info = info + U.T @ U
        evals = np.linalg.eigvalsh(info)
        if evals.min() <= evals.max() * 1e-14:
            raise SelectionError("singular covariance: infinite prior on a blind direction")
        self.cov = np.linalg.inv(info)
        self.A = self.V.T @ self.cov @ self.V
        self.A_inv = np.linalg.inv(self.A)
        sign, logdet = np.linalg.slogdet(self.A)
        if sign <= 0:
            raise SelectionError("projected covariance lost positive definiteness")
        self.logdetA = logdet
        self._updates = 0

    def log_od(self) -> float:
        return self.logdetA + self.log_eigs - np.log(self.P)

    def od(self) -> float:
        return float(np.exp(self.log_od()))

    # -- scoring -------------------------------------------------------------

    def add_ratios(self, row_stack: np.ndarray) -> np.ndarray:
        """det(A') / det(A) for adding each single row of ``row_stack``."""
        CU = row_stack @ self.cov                      # (n, P)
        beta = 1.0 + np.einsum("np,np->n", CU, row_stack)
        W = CU @ self.V                                # (n, m)
        s = np.einsum("nm,nm->n", W @ self.A_inv, W)
        return 1.0 - s / beta

    def remove_factors(self, row_stack: np.ndarray) -> np.ndarray:
        """det(A') / det(A) for removing each single row of ``row_stack``."""
        CU = row_stack @ self.cov
        gamma = 1.0 - np.einsum("np,np->n", CU, row_stack)
        W = CU @ self.V
        s = np.einsum("nm,nm->n", W @ self.A_inv, W)
        return 1.0 + s / np.maximum(gamma, 1e-300)

    def candidate_log_ratio(self, i: int) -> float:
        """log det change from adding candidate i (any row count)."""
        U = self.rows[i]
        if U.shape[0] == 1:
            return float(np.log(self.add_ratios(U)[0]))
        log_ratio = 0.0
        cov, A_inv = self.cov.copy(), self.A_inv.copy()
        for u in U:
            c = cov @ u
            beta = 1.0 + u @ c
            w = self.V.T @ c
            aw = A_inv @ w
            s = w @ aw
            ratio = 1.0 - s / beta
            log_ratio += np.log(ratio)
            cov = cov - np.outer(c, c) / beta
            A_inv = A_inv + np.outer(aw, aw) / (beta - s)
        return float(log_ratio)

    # -- state changes ---------------------------------------------------------

    def _apply_row(self, u: np.ndarray, sign: float):
        c = self.cov @ u
        quad = u @ c
        denom = 1.0 + quad if sign > 0 else 1.0 - quad
        w = self.V.T @ c
        aw = self.A_inv @ w
        s = w @ aw
        if sign > 0:
            factor = 1.0 - s / denom
            self.cov -= np.outer(c, c) / denom
            self.A -= np.outer(w, w) / denom
            self.A_inv += np.outer(aw, aw) / (denom - s)
        else:
            factor = 1.0 + s / denom
            self.cov += np.outer(c, c) / denom
            self.A += np.outer(w, w) / denom
            self.A_inv -= np.outer(aw, aw) / (denom + s)
        self.logdetA += np.log(factor)

    def add(self, i: int):
        for u in self.rows[i]:
            self._apply_row(u, +1.0)
        self.members.append(i)
        self._maybe_refresh()

    def remove(self, i: int):
        for u in self.rows[i]:
            self._apply_row(u, -1.0)
        self.members.remove(i)
        self._maybe_refresh()

    def _maybe_refresh(self):
        self._updates += 1
        if self._updates >= self.REFRESH_EVERY:
            self._rebuild()


def _prior_sigma_of(prior: ParameterVector | np.ndarray) -> np.ndarray:
    return prior.prior_sigma if isinstance(prior, ParameterVector) else np.asarray(prior, float)


def task_d_optimality(pool: CandidatePool, subset: Sequence[int],
                      noise: NoiseModel, prior: ParameterVector | np.ndarray,
                      as_log: bool = False) -> float:
    """O_D of a subset, computed from scratch in log-determinant form."""
    subset = list(subset)
    if len(set(subset)) != len(subset):
        raise ValueError("subset indices must be unique")
    if subset and (min(subset) < 0 or max(subset) >= len(pool)):
        raise ValueError("subset index out of range")
    state = _DesignState(pool, noise, _prior_sigma_of(prior))
    state.members = list(subset)
    state._rebuild()
    return float(state.log_od()) if as_log else state.od()


def select_greedy(pool: CandidatePool, budget: int, noise: NoiseModel,
                  prior: ParameterVector | np.ndarray) -> SelectionResult:
    """Add the candidate that decreases O_D most, budget times.

    Ties break toward the lowest candidate index. Scoring is vectorized via
    rank-one covariance updates for single-row candidates.
    """
    n = len(pool)
    if n == 0:
        raise SelectionError("empty candidate pool")
    if budget > n:
        raise SelectionError(f"budget {budget} exceeds pool size {n}")
    state = _DesignState(pool, noise, _prior_sigma_of(prior))
    single = all(r.shape[0] == 1 for r in state.rows)
    if single:
        U = np.concatenate(state.rows, axis=0)  # (n, P)
    selected: list[int] = []
    trace = []
    available = np.ones(n, dtype=bool)
    for _ in range(budget):
        if single:
            ratios = state.add_ratios(U)
            ratios[~available] = np.inf
            pick = int(np.argmin(ratios))
        else:
            best, pick = np.inf, -1
            for i in range(n):
                if not available[i]:
                    continue
                lr = state.candidate_log_ratio(i)
                if lr < best:
                    best, pick = lr, i
        state.add(pick)
        available[pick] = False
        selected.append(pick)
        trace.append(state.log_od())
    trace = np.asarray(trace)
    return SelectionResult(tuple(selected), np.exp(trace), "greedy", trace)


def select_detmax(pool: CandidatePool, budget: int, noise: NoiseModel,
                  prior: ParameterVector | np.ndarray,
                  max_sweeps: int = 30, rel_tol: float = 1e-9,
                  start: SelectionResult | None = None) -> SelectionResult:
    """Improve the greedy set by add-best-then-remove-best excursions.

    Stops when the excursion removes the sample it just added (no improving
    swap) or the relative O_D gain drops below ``rel_tol``.
    """
    if start is None:
        start = select_greedy(pool, budget, noise, prior)
    state = _DesignState(pool, noise, _prior_sigma_of(prior))
    state.members = list(start.selected_indices)
    state._rebuild()
    selected = list(start.selected_indices)
    trace = [state.log_od()]
    n = len(pool)
    single = all(r.shape[0] == 1 for r in state.rows)
    if single:
        U = np.concatenate(state.rows, axis=0)

    for _ in range(max_sweeps):
        log_before = state.log_od()
        in_set = np.zeros(n, dtype=bool)
        in_set[selected] = True
        # excursion up: best addition
        if single:
            ratios = state.add_ratios(U)
            ratios[in_set] = np.inf
            add_pick = int(np.argmin(ratios))
        else:
            best, add_pick = np.inf, -1
            for i in range(n):
                if not in_set[i]:
                    lr = state.candidate_log_ratio(i)
                    if lr < best:
                        best, add_pick = lr, i
        state.add(add_pick)
        members = selected + [add_pick]
        # excursion down: cheapest removal
        if single:
            factors = state.remove_factors(U[members])
            drop_pos = int(np.argmin(factors))
        else:
            best, drop_pos = np.inf, -1
            for pos, i in enumerate(members):
                save = (state.cov.copy(), state.A.copy(), state.A_inv.copy(),
                        state.logdetA, list(state.members), state._updates)
                state.remove(i)
                lr = state.log_od()
                (state.cov, state.A, state.A_inv, state.logdetA,
                 state.members, state._updates) = save
                if lr < best:
                    best, drop_pos = lr, pos
        drop = members[drop_pos]
        state.remove(drop)
        if drop == add_pick:
            break  # excursion undone itself: no improving swap left
        selected = [i for i in members if i != drop]
        trace.append(state.log_od())
        improvement = 1.0 - np.exp(state.log_od() - log_before)
        if improvement < rel_tol:
            break
    trace = np.asarray(trace)
    return SelectionResult(tuple(selected), np.exp(trace), "detmax", trace)


def select_random(pool: CandidatePool, budget: int, noise: NoiseModel,
                  prior: ParameterVector | np.ndarray,
                  seed: int | np.random.Generator = 0) -> SelectionResult:
    """Uniform subset without replacement; the baseline the designs beat."""
    n = len(pool)
    if n == 0:
        raise SelectionError("empty candidate pool")
    if budget > n:
        raise SelectionError(f"budget {budget} exceeds pool size {n}")
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    picks = rng.choice(n, size=budget, replace=False)
    state = _DesignState(pool, noise, _prior_sigma_of(prior))
    trace = []
    for i in picks:
        state.add(int(i))
        trace.append(state.log_od())
    trace = np.asarray(trace)
    return SelectionResult(tuple(int(i) for i in picks), np.exp(trace), "random", trace)
