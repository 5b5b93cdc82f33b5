import numpy as np
import pytest

from handcal.estimation import (
    CalibrationError,
    LMResult,
    NoiseModel,
    ParameterVector,
    SingularInformationError,
    SolverOptions,
    calibrate,
    lm_solve,
    map_objective,
    parameter_covariance,
)
from handcal.measurement import CONTACT, Measurement, all_pairs
from handcal.sampling import generate_search_trajectories, simulate_contacts

from conftest import random_configurations


def test_noise_model_validation():
    with pytest.raises(ValueError):
        NoiseModel(contact=0.0)
    assert NoiseModel().of(CONTACT) == 5e-4


def test_parameter_vector_validation():
    with pytest.raises(ValueError):
        ParameterVector(np.zeros(3), np.zeros(3), np.array([1.0, -1.0, 1.0]))
    pv = ParameterVector(np.zeros(2), np.zeros(2), np.array([1.0, np.inf]))
    assert np.isinf(pv.prior_sigma[1])


def test_objective_zero_at_prior_with_zero_residuals(dlr_tree):
    prior = ParameterVector.nominal(dlr_tree)
    q = np.zeros(12)
    from handcal.measurement import contact_measurement
    y = contact_measurement(dlr_tree, q, (0, 1))
    data = [Measurement(CONTACT, q, y=y, pair=(0, 1))]
    assert map_objective(data, dlr_tree, prior, NoiseModel()) == pytest.approx(0.0, abs=1e-18)


def test_objective_reduces_to_wls_with_infinite_prior(dlr_tree):
    vals = dlr_tree.parameter_values()
    prior_inf = ParameterVector(vals + 0.01, vals, np.full(64, np.inf))
    data = [Measurement(CONTACT, np.zeros(12), y=0.0, pair=(0, 1))]
    noise = NoiseModel()
    tree2 = dlr_tree.with_parameters(vals + 0.01)
    from handcal.measurement import contact_measurement
    resid = 0.0 - contact_measurement(tree2, np.zeros(12), (0, 1))
    expected = resid ** 2 / noise.contact ** 2
    assert map_objective(data, dlr_tree, prior_inf, noise) == pytest.approx(expected, rel=1e-12)


def test_objective_matches_ridge_closed_form():
    # frozen-Jacobian linear model: h(x) = A x, prior mean m, sigmas s
    rng = np.random.default_rng(0)
    A = rng.normal(size=(12, 4))
    x = rng.normal(size=4)
    y = rng.normal(size=12)
    m = rng.normal(size=4)
    s = rng.uniform(0.5, 2.0, size=4)
    sigma = 0.3
    expected = np.sum((y - A @ x) ** 2) / sigma ** 2 + np.sum(((x - m) / s) ** 2)
    # evaluate through the same weighted-residual machinery lm_solve sees
    def residual_fn(v):
        return np.concatenate([(y - A @ v) / sigma, (v - m) / s])
    r = residual_fn(x)
    assert r @ r == pytest.approx(expected, rel=1e-12)


def test_lm_matches_closed_form_ridge_solution():
    rng = np.random.default_rng(1)
    for _ in range(10):
        n, p = 20, 5
        A = rng.normal(size=(n, p))
        y = rng.normal(size=n)
        m = rng.normal(size=p)
        s = rng.uniform(0.2, 3.0, size=p)
        sigma = 0.7

        def residual_fn(v):
            return np.concatenate([(y - A @ v) / sigma, (v - m) / s])

        def jacobian_fn(v):
            return np.vstack([-A / sigma, np.diag(1.0 / s)])

        res = lm_solve(residual_fn, jacobian_fn, m.copy())
        info = A.T @ A / sigma ** 2 + np.diag(1.0 / s ** 2)
        rhs = A.T @ y / sigma ** 2 + m / s ** 2
        x_closed = np.linalg.solve(info, rhs)
        assert res.converged
        assert np.max(np.abs(res.x - x_closed)) < 1e-8


def test_lm_cost_trace_monotone():
    rng = np.random.default_rng(4)
    A = rng.normal(size=(30, 6))
    y = rng.normal(size=30)

    def residual_fn(v):
        return np.concatenate([y - A @ v + 0.05 * (A @ v) ** 2, 0.01 * v])

    def jacobian_fn(v):
        h = 1e-7
        J = np.empty((36, 6))
        r0 = residual_fn(v)
        for j in range(6):
            vp = v.copy()
            vp[j] += h
            J[:, j] = (residual_fn(vp) - r0) / h
        return J

    res = lm_solve(residual_fn, jacobian_fn, np.zeros(6))
    assert np.all(np.diff(res.cost_trace) <= 0.0)


def test_calibrate_zero_noise_zero_steps(dlr_model, rng):
    # data generated exactly at the prior mean: the solver accepts no step
    tree = dlr_model.tree
    from handcal.measurement import contact_measurement
    Q = random_configurations(tree, 10, rng)
    data = [Measurement(CONTACT, q, y=contact_measurement(tree, q, (0, 1)), pair=(0, 1))
            for q in Q]
    prior = ParameterVector.nominal(tree)
    res = calibrate(data, tree, prior, NoiseModel())
    assert res.converged
    assert np.array_equal(res.theta_star.values, prior.values)
    assert len(res.cost_trace) == 1 and res.cost_trace[0] == 0.0


def test_calibrate_on_simulated_events_stays_near_prior(dlr_model):
    # contact events bisected to 1e-6 leave only tolerance-level residuals
    tree = dlr_model.tree
    trajs = generate_search_trajectories(dlr_model, (0, 1), 10, seed=3)
    events = simulate_contacts(trajs, tree, 0.0, seed=4)
    data = [e.to_measurement() for e in events if e is not None]
    prior = ParameterVector.nominal(tree)
    res = calibrate(data, tree, prior, NoiseModel())
    assert res.converged
    assert np.max(np.abs(res.theta_star.values - prior.values)) < 1e-4
    assert np.max(np.abs(res.residuals)) < 2e-6


def test_calibrate_empty_dataset_raises(dlr_tree):
    with pytest.raises(CalibrationError):
        calibrate([], dlr_tree, ParameterVector.nominal(dlr_tree), NoiseModel())


def test_calibrate_layout_mismatch(dlr_tree):
    bad = ParameterVector(np.zeros(3), np.zeros(3), np.ones(3))
    with pytest.raises(CalibrationError):
        calibrate([Measurement(CONTACT, np.zeros(12), pair=(0, 1))], dlr_tree, bad,
                  NoiseModel())


def test_covariance_empty_dataset_is_prior(dlr_tree):
    prior = ParameterVector.nominal(dlr_tree)
    cov = parameter_covariance([], dlr_tree, prior.values, NoiseModel(), prior)
    assert np.allclose(cov, np.diag(prior.prior_sigma ** 2), atol=1e-18)


def test_covariance_scalar_bayes():
    # one scalar measurement of one parameter with unit Jacobian:
    # var = 1 / (1/sm^2 + 1/sp^2); realized through a 1-parameter toy tree
    from handcal.kinematics import Capsule, DHLink, KinematicTree, PRISMATIC
    link = DHLink("slide", -1, PRISMATIC, calibrate=(True, False, False, False))
    cap = Capsule(np.zeros(3), np.zeros(3), 0.01)
    tree = KinematicTree("one", (link,), (0,), (cap,))
    from handcal.measurement import CARTESIAN
    sample = Measurement(CARTESIAN, np.zeros(1), end_effector=0)
    sm, sp = 0.25, 0.5
    prior = ParameterVector(np.zeros(1), np.zeros(1), np.array([sp]))
    noise = NoiseModel(cartesian=sm)
    cov = parameter_covariance([sample], tree, prior.values, noise, prior)
    # the prismatic d moves the tip along one axis: J row is a unit vector
    assert cov[0, 0] == pytest.approx(1.0 / (1.0 / sm ** 2 + 1.0 / sp ** 2), rel=1e-6)


def test_covariance_matches_inversion_oracle(dlr_tree, rng):
    q = random_configurations(dlr_tree, 4, rng)
    data = [Measurement(CONTACT, qq, y=0.0, pair=p.as_tuple())
            for qq, p in zip(q, all_pairs(4)[:4])]
    prior = ParameterVector.nominal(dlr_tree)
    noise = NoiseModel()
    cov = parameter_covariance(data, dlr_tree, prior.values, noise, prior)
    from handcal.measurement import stacked_jacobian
    J = stacked_jacobian(dlr_tree, data)
    info = J.T @ J / noise.contact ** 2 + np.diag(1.0 / prior.prior_sigma ** 2)
    assert np.max(np.abs(cov - np.linalg.inv(info))) < 1e-10 * np.abs(cov).max()


def test_covariance_singular_raises(dlr_tree):
    prior = ParameterVector(dlr_tree.parameter_values(), dlr_tree.parameter_values(),
                            np.full(64, np.inf))
    with pytest.raises(SingularInformationError):
        parameter_covariance([], dlr_tree, prior.values, NoiseModel(), prior)


def test_duplicate_measurement_never_grows_covariance(dlr_tree, rng):
    q = random_configurations(dlr_tree, 3, rng)
    data = [Measurement(CONTACT, qq, y=0.0, pair=(0, 1)) for qq in q]
    prior = ParameterVector.nominal(dlr_tree)
    noise = NoiseModel()
    cov1 = parameter_covariance(data, dlr_tree, prior.values, noise, prior)
    cov2 = parameter_covariance(data + [data[0]], dlr_tree, prior.values, noise, prior)
    assert np.all(np.diag(cov2) <= np.diag(cov1) + 1e-18)


def test_information_matrix_positive_definite(dlr_tree, rng):
    # with finite sigmas everywhere the smallest information eigenvalue is at
    # least the smallest prior precision
    prior = ParameterVector.nominal(dlr_tree)
    q = random_configurations(dlr_tree, 2, rng)
    data = [Measurement(CONTACT, qq, y=0.0, pair=(1, 2)) for qq in q]
    from handcal.measurement import stacked_jacobian
    J = stacked_jacobian(dlr_tree, data)
    noise = NoiseModel()
    info = J.T @ J / noise.contact ** 2 + np.diag(1.0 / prior.prior_sigma ** 2)
    lam_min = np.linalg.eigvalsh(info).min()
    assert lam_min >= (1.0 / prior.prior_sigma.max() ** 2) * (1 - 1e-9)
