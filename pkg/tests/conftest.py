from pathlib import Path

import numpy as np
import pytest

from rgroups import manifold as mf

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def sphere():
    return mf.sphere()


@pytest.fixture(scope="session")
def halfplane():
    return mf.halfplane()


@pytest.fixture(scope="session")
def flat():
    return mf.euclidean(2)


@pytest.fixture(scope="session")
def warped():
    """A generic non-diagonal 3D metric: cyclic and Jacobi sums are trivial in 2D."""
    return mf.resolve(str(DATA / "warped3.metric"))


def random_points(M, count, seed):
    lo, hi = M.sample_box()
    return np.random.default_rng(seed).uniform(lo, hi, size=(count, M.dim))
