import itertools

import numpy as np
import pytest

from handcal.estimation import NoiseModel, ParameterVector
from handcal.measurement import CONTACT, Measurement
from handcal.oed import (
    CandidatePool,
    SelectionError,
    select_detmax,
    select_greedy,
    select_random,
    task_d_optimality,
)


def toy_pool(rng, n_candidates=12, p=4, full_rank_fim=True):
    """Synthetic single-row candidates with a random task information matrix."""
    rows = rng.normal(size=(n_candidates, p))
    M = rng.normal(size=(p, p + 2))
    fim = M @ M.T if full_rank_fim else np.zeros((p, p))
    cands = tuple(Measurement(CONTACT, np.zeros(1), y=0.0, pair=(0, 1))
                  for _ in range(n_candidates))
    return CandidatePool(cands, tuple(r[None, :] for r in rows), fim)


def toy_prior(p, sigma=1.0):
    return ParameterVector(np.zeros(p), np.zeros(p), np.full(p, sigma))


NOISE = NoiseModel(contact=1.0)


def oracle_od(pool, subset, prior_sigma):
    """Explicit small-matrix determinant, independent of the update machinery."""
    p = pool.n_parameters
    info = np.diag(1.0 / np.asarray(prior_sigma) ** 2).astype(float)
    for i in subset:
        J = pool.jacobians[i]
        info += J.T @ J
    cov = np.linalg.inv(info)
    return np.linalg.det(cov @ pool.test_fim) / p


def test_empty_subset_equals_prior_only():
    rng = np.random.default_rng(0)
    pool = toy_pool(rng)
    prior = toy_prior(4, sigma=0.7)
    od = task_d_optimality(pool, [], NOISE, prior)
    expected = np.linalg.det(np.diag(np.full(4, 0.7 ** 2)) @ pool.test_fim) / 4
    assert od == pytest.approx(expected, rel=1e-10)


def test_matches_small_matrix_oracle():
    rng = np.random.default_rng(1)
    for trial in range(20):
        pool = toy_pool(rng, n_candidates=8, p=3)
        prior = toy_prior(3, sigma=rng.uniform(0.3, 2.0))
        subset = list(rng.choice(8, size=rng.integers(0, 6), replace=False))
        od = task_d_optimality(pool, subset, NOISE, prior)
        assert od == pytest.approx(oracle_od(pool, subset, prior.prior_sigma), rel=1e-8)


def test_monotone_under_subset_growth():
    rng = np.random.default_rng(2)
    for _ in range(500):
        p = int(rng.integers(2, 5))
        n = int(rng.integers(3, 9))
        pool = toy_pool(rng, n_candidates=n, p=p)
        prior = toy_prior(p, sigma=float(rng.uniform(0.2, 3.0)))
        k = int(rng.integers(0, n))
        subset = list(rng.choice(n, size=k, replace=False))
        od_small = task_d_optimality(pool, subset, NOISE, prior)
        extra = [i for i in range(n) if i not in subset]
        if not extra:
            continue
        od_big = task_d_optimality(pool, subset + [extra[0]], NOISE, prior)
        assert od_big <= od_small * (1 + 1e-10)
        assert od_big > 0 and np.isfinite(od_big)


def test_duplicate_subset_rejected():
    rng = np.random.default_rng(3)
    pool = toy_pool(rng)
    with pytest.raises(ValueError):
        task_d_optimality(pool, [1, 1], NOISE, toy_prior(4))


def test_greedy_matches_from_scratch_at_every_step():
    rng = np.random.default_rng(4)
    pool = toy_pool(rng, n_candidates=20, p=5)
    prior = toy_prior(5)
    res = select_greedy(pool, 12, NOISE, prior)
    assert len(res.selected_indices) == 12
    assert len(set(res.selected_indices)) == 12
    for step in range(12):
        od_scratch = task_d_optimality(pool, res.selected_indices[:step + 1], NOISE, prior)
        assert res.objective_trace[step] == pytest.approx(od_scratch, rel=1e-8)
    assert np.all(np.diff(res.log_objective_trace) <= 1e-12)


def test_greedy_picks_dominant_candidate_first():
    rng = np.random.default_rng(5)
    p = 4
    rows = np.zeros((6, p))
    rows[3] = 5.0 * np.ones(p) + rng.normal(size=p)  # spans everything, huge
    rows[0] = 1e-6 * rng.normal(size=p)
    M = rng.normal(size=(p, p + 1))
    cands = tuple(Measurement(CONTACT, np.zeros(1), y=0.0, pair=(0, 1)) for _ in range(6))
    pool = CandidatePool(cands, tuple(r[None, :] for r in rows), M @ M.T)
    res = select_greedy(pool, 3, NOISE, toy_prior(p))
    assert res.selected_indices[0] == 3


def test_greedy_budget_equals_pool():
    rng = np.random.default_rng(6)
    pool = toy_pool(rng, n_candidates=7, p=3)
    res = select_greedy(pool, 7, NOISE, toy_prior(3))
    assert sorted(res.selected_indices) == list(range(7))


def test_greedy_tie_breaks_to_lowest_index():
    p = 3
    rows = np.zeros((4, p))
    cands = tuple(Measurement(CONTACT, np.zeros(1), y=0.0, pair=(0, 1)) for _ in range(4))
    pool = CandidatePool(cands, tuple(r[None, :] for r in rows), np.eye(p))
    res = select_greedy(pool, 2, NOISE, toy_prior(p))
    assert res.selected_indices == (0, 1)


def test_greedy_empty_pool_and_budget_errors():
    rng = np.random.default_rng(7)
    pool = toy_pool(rng, n_candidates=3)
    with pytest.raises(SelectionError):
        select_greedy(pool, 5, NOISE, toy_prior(4))


def test_detmax_not_worse_than_greedy():
    rng = np.random.default_rng(8)
    for _ in range(10):
        pool = toy_pool(rng, n_candidates=15, p=4)
        prior = toy_prior(4)
        g = select_greedy(pool, 6, NOISE, prior)
        d = select_detmax(pool, 6, NOISE, prior)
        og = task_d_optimality(pool, g.selected_indices, NOISE, prior)
        od = task_d_optimality(pool, d.selected_indices, NOISE, prior)
        assert od <= og * (1 + 1e-9)
        assert len(set(d.selected_indices)) == 6


def test_detmax_returns_greedy_set_when_optimal():
    # orthogonal single-direction candidates, budget = dimension: greedy is optimal
    p = 4
    rows = np.vstack([3.0 * np.eye(p), 0.01 * np.ones((2, p))])
    cands = tuple(Measurement(CONTACT, np.zeros(1), y=0.0, pair=(0, 1)) for _ in range(6))
    pool = CandidatePool(cands, tuple(r[None, :] for r in rows), np.eye(p))
    prior = toy_prior(p)
    g = select_greedy(pool, p, NOISE, prior)
    d = select_detmax(pool, p, NOISE, prior)
    assert sorted(d.selected_indices) == sorted(g.selected_indices) == list(range(p))


def test_detmax_matches_exhaustive_best():
    rng = np.random.default_rng(9)
    for trial in range(5):
        pool = toy_pool(rng, n_candidates=12, p=5)
        prior = toy_prior(5)
        d = select_detmax(pool, 6, NOISE, prior)
        od = task_d_optimality(pool, d.selected_indices, NOISE, prior)
        best = min(task_d_optimality(pool, list(s), NOISE, prior)
                   for s in itertools.combinations(range(12), 6))
        assert od <= best * (1 + 1e-6)


def test_selection_deterministic():
    rng = np.random.default_rng(10)
    pool = toy_pool(rng, n_candidates=30, p=6)
    prior = toy_prior(6)
    a = select_greedy(pool, 10, NOISE, prior)
    b = select_greedy(pool, 10, NOISE, prior)
    assert a.selected_indices == b.selected_indices
    r1 = select_random(pool, 10, NOISE, prior, seed=77)
    r2 = select_random(pool, 10, NOISE, prior, seed=77)
    assert r1.selected_indices == r2.selected_indices
    assert np.array_equal(r1.objective_trace, r2.objective_trace)


def test_random_trace_matches_scratch():
    rng = np.random.default_rng(11)
    pool = toy_pool(rng, n_candidates=10, p=4)
    prior = toy_prior(4)
    res = select_random(pool, 5, NOISE, prior, seed=3)
    for step in range(5):
        od = task_d_optimality(pool, res.selected_indices[:step + 1], NOISE, prior)
        assert res.objective_trace[step] == pytest.approx(od, rel=1e-8)
