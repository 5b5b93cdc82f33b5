import numpy as np
import pytest

from handcal.kinematics import (
    DHLink,
    Frame,
    KinematicTree,
    REVOLUTE,
    FIXED,
    PASSIVE,
    Capsule,
    dh_to_frame,
    extract_parameters,
    fk_batch,
    forward_kinematics,
    set_parameters,
)

from conftest import random_configurations


# independent oracle: the four elementary homogeneous matrices multiplied out
def _rot_x(a):
    c, s = np.cos(a), np.sin(a)
    m = np.eye(4)
    m[1, 1], m[1, 2], m[2, 1], m[2, 2] = c, -s, s, c
    return m


def _rot_z(t):
    c, s = np.cos(t), np.sin(t)
    m = np.eye(4)
    m[0, 0], m[0, 1], m[1, 0], m[1, 1] = c, -s, s, c
    return m


def _trans(axis, v):
    m = np.eye(4)
    m[axis, 3] = v
    return m


def oracle_dh_matrix(d, r, alpha, theta):
    return _rot_x(alpha) @ _trans(0, r) @ _rot_z(theta) @ _trans(2, d)


def test_zero_link_is_identity():
    link = DHLink("l", -1, REVOLUTE)
    fr = dh_to_frame(link, 0.0)
    assert np.allclose(fr.position, 0.0)
    assert np.allclose(fr.rotation, np.eye(3))


def test_translation_applied_before_joint_rotation():
    # alpha=0, r=1, theta=q, d=0: the x-translation happens first, so the
    # position stays (1, 0, 0) for every joint value
    link = DHLink("l", -1, REVOLUTE, r=1.0)
    for q in (0.0, 0.3, -1.2, 2.9):
        fr = dh_to_frame(link, q)
        assert np.allclose(fr.position, [1.0, 0.0, 0.0], atol=1e-15)
        assert np.allclose(fr.rotation, _rot_z(q)[:3, :3], atol=1e-15)


def test_dh_to_frame_matches_matrix_product_oracle():
    fr = dh_to_frame(DHLink("l", -1, FIXED, d=0.05, r=0.1, alpha=np.pi / 2, theta=0.3))
    m = oracle_dh_matrix(0.05, 0.1, np.pi / 2, 0.3)
    assert np.allclose(fr.as_matrix(), m, atol=1e-12)


def test_dh_to_frame_oracle_equivalence_random():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        d, r = rng.uniform(-0.3, 0.3, 2)
        alpha, theta = rng.uniform(-np.pi, np.pi, 2)
        q = rng.uniform(-np.pi, np.pi)
        link = DHLink("l", -1, REVOLUTE, d=d, r=r, alpha=alpha, theta=theta)
        fr = dh_to_frame(link, q)
        m = oracle_dh_matrix(d, r, alpha, theta + q)
        assert np.max(np.abs(fr.as_matrix() - m)) < 1e-12


def _serial_chain(params, kinds=None):
    links = []
    for i, (d, r, a, t) in enumerate(params):
        kind = REVOLUTE if kinds is None else kinds[i]
        links.append(DHLink(f"l{i}", i - 1, kind, d=d, r=r, alpha=a, theta=t))
    cap = Capsule(np.zeros(3), np.array([0.01, 0, 0]), 0.005)
    return KinematicTree("chain", tuple(links), (len(links) - 1,), (cap,))


def test_chain_of_zero_links_is_identity():
    tree = _serial_chain([(0, 0, 0, 0), (0, 0, 0, 0)])
    frames = forward_kinematics(tree, np.zeros(2))
    for fr in frames:
        assert np.allclose(fr.position, 0) and np.allclose(fr.rotation, np.eye(3))


def test_forward_kinematics_matches_chain_oracle():
    rng = np.random.default_rng(7)
    for _ in range(50):
        params = rng.uniform(-1.0, 1.0, size=(4, 4))
        tree = _serial_chain(params)
        q = rng.uniform(-np.pi, np.pi, 4)
        frames = forward_kinematics(tree, q)
        m = np.eye(4)
        for i in range(4):
            m = m @ oracle_dh_matrix(params[i, 0], params[i, 1], params[i, 2],
                                     params[i, 3] + q[i])
        assert np.max(np.abs(frames[-1].as_matrix() - m)) < 1e-12


def test_shared_prefix_frames_identical(dlr_tree, rng):
    q = random_configurations(dlr_tree, 1, rng)[0]
    frames = forward_kinematics(dlr_tree, q)
    # a two-branch toy: both branches of the hand tree that share no links
    # must reproduce the same root behaviour; build an explicit shared root
    links = (
        DHLink("root", -1, REVOLUTE, d=0.1, r=0.05, alpha=0.2, theta=0.1),
        DHLink("a", 0, REVOLUTE, r=0.07),
        DHLink("b", 0, REVOLUTE, r=0.04, alpha=0.3),
    )
    cap = Capsule(np.zeros(3), np.array([0.01, 0, 0]), 0.005)
    tree = KinematicTree("fork", links, (1, 2), (cap, cap))
    fr = forward_kinematics(tree, np.array([0.3, -0.2, 0.9]))
    # the root frame used by both branches is one and the same value
    root_a = fr[tree.links[1].parent]
    root_b = fr[tree.links[2].parent]
    assert np.array_equal(root_a.position, root_b.position)
    assert np.array_equal(root_a.rotation, root_b.rotation)
    assert len(frames) == dlr_tree.n_links


def test_forward_kinematics_deterministic(dlr_tree, rng):
    q = random_configurations(dlr_tree, 1, rng)[0]
    f1 = forward_kinematics(dlr_tree, q)
    f2 = forward_kinematics(dlr_tree, q)
    for a, b in zip(f1, f2):
        assert np.array_equal(a.position, b.position)
        assert np.array_equal(a.rotation, b.rotation)


def test_rotations_orthonormal(dlr_tree, rng):
    for q in random_configurations(dlr_tree, 20, rng):
        for fr in forward_kinematics(dlr_tree, q):
            assert fr.orthonormality_defect() < 1e-9


def test_passive_link_uses_coupled_value():
    links = (
        DHLink("j1", -1, REVOLUTE, r=0.1),
        DHLink("j2", 0, PASSIVE, r=0.1, source=0, ratio=0.5),
    )
    cap = Capsule(np.zeros(3), np.array([0.01, 0, 0]), 0.005)
    tree = KinematicTree("coupled", links, (1,), (cap,))
    assert tree.n_active_joints == 1
    q = np.array([0.8])
    frames = forward_kinematics(tree, q)
    expected = oracle_dh_matrix(0, 0.1, 0, 0.8) @ oracle_dh_matrix(0, 0.1, 0, 0.4)
    assert np.allclose(frames[-1].as_matrix(), expected, atol=1e-12)


def test_configuration_length_mismatch_raises(dlr_tree):
    with pytest.raises(ValueError):
        forward_kinematics(dlr_tree, np.zeros(5))


def test_set_parameters_nominal_is_noop(dlr_tree):
    theta = extract_parameters(dlr_tree)
    tree2 = set_parameters(dlr_tree, theta)
    q = np.linspace(-0.1, 0.2, dlr_tree.n_active_joints)
    f1 = forward_kinematics(dlr_tree, q)
    f2 = forward_kinematics(tree2, q)
    for a, b in zip(f1, f2):
        assert np.array_equal(a.position, b.position)


def test_set_parameters_locality(dlr_tree, rng):
    theta = extract_parameters(dlr_tree)
    j = dlr_tree.parameter_names().index("fore_medial.theta")
    theta2 = theta.copy()
    theta2[j] += 0.1
    tree2 = set_parameters(dlr_tree, theta2)
    q = random_configurations(dlr_tree, 1, rng)[0]
    f1 = forward_kinematics(dlr_tree, q)
    f2 = forward_kinematics(tree2, q)
    moved = [i for i in range(dlr_tree.n_links)
             if not np.allclose(f1[i].position, f2[i].position, atol=1e-15)]
    # only the fore finger's medial link and its descendants move
    fore_branch = dlr_tree.branch(1)
    assert moved and set(moved) <= set(fore_branch)


def test_set_parameters_round_trip(dlr_tree, rng):
    theta = extract_parameters(dlr_tree) + rng.normal(0, 0.01, dlr_tree.n_parameters)
    assert np.array_equal(extract_parameters(set_parameters(dlr_tree, theta)), theta)
    assert dlr_tree.n_parameters == 64


def test_set_parameters_layout_mismatch(dlr_tree):
    with pytest.raises(ValueError):
        set_parameters(dlr_tree, np.zeros(10))


def test_fk_batch_matches_scalar(dlr_tree, rng):
    Q = random_configurations(dlr_tree, 16, rng)
    pos, rot = fk_batch(dlr_tree, Q, links=range(dlr_tree.n_links))
    for n in (0, 7, 15):
        frames = forward_kinematics(dlr_tree, Q[n])
        for i, fr in enumerate(frames):
            assert np.allclose(pos[n, i], fr.position, atol=1e-14)
            assert np.allclose(rot[n, i], fr.rotation, atol=1e-14)


def test_fk_batch_parameter_stacks(dlr_tree, rng):
    Q = random_configurations(dlr_tree, 3, rng)
    thetas = extract_parameters(dlr_tree)[None, :] + rng.normal(0, 0.005, (3, 64))
    pos, _ = fk_batch(dlr_tree, Q, thetas)
    for n in range(3):
        tree_n = set_parameters(dlr_tree, thetas[n])
        frames = forward_kinematics(tree_n, Q[n])
        tips = [frames[i].position for i in dlr_tree.end_effectors]
        assert np.allclose(pos[n], tips, atol=1e-14)


def test_frame_compose_inverse(rng):
    def rand_frame():
        a = rng.normal(size=3)
        m = oracle_dh_matrix(a[0], a[1], rng.uniform(-3, 3), rng.uniform(-3, 3))
        return Frame(m[:3, 3], m[:3, :3])

    f1, f2, f3 = rand_frame(), rand_frame(), rand_frame()
    lhs = f1.compose(f2).compose(f3)
    rhs = f1.compose(f2.compose(f3))
    assert np.allclose(lhs.as_matrix(), rhs.as_matrix(), atol=1e-12)
    eye = f1.compose(f1.inverse())
    assert np.allclose(eye.as_matrix(), np.eye(4), atol=1e-12)
