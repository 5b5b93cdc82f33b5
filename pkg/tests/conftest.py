import numpy as np
import pytest

from handcal.models import dlr_like_hand, generic_hand


@pytest.fixture(scope="session")
def dlr_model():
    return dlr_like_hand()


@pytest.fixture(scope="session")
def dlr_tree(dlr_model):
    return dlr_model.tree


@pytest.fixture(scope="session")
def generic_model():
    return generic_hand()


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)


def random_configurations(tree, n, rng):
    lim = tree.joint_limits()
    return rng.uniform(lim[:, 0], lim[:, 1], size=(n, tree.n_active_joints))
