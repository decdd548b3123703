import numpy as np
import pytest
from hypothesis import settings

from turnpike_lab import GenLQProblem

settings.register_profile("default", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("default")


def scalar(a=0.0, b=1.0, c=1.0, k=1.0, z=0.0, v=0.0, w=1.0):
    return GenLQProblem(a=[[a]], b=[[b]], c=[[c]], k=[[k]], z=[z], v=[v],
                        state_weight=[[w]])


@pytest.fixture
def tanh_problem():
    return scalar()


@pytest.fixture
def tracking_problem():
    # A=-1, B=C=K=1, z=-1: optimal steady state (1/2, 1/2)
    return scalar(a=-1.0, z=-1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
