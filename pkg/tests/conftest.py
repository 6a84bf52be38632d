import numpy as np
import pytest

from chain_oracle import FiniteChain

TWO_STATE_P = [[0.9, 0.1], [0.2, 0.8]]


@pytest.fixture
def two_state():
    """pi = (2/3, 1/3); for either state indicator the long-run variance is 34/27."""
    return FiniteChain(TWO_STATE_P)


@pytest.fixture
def indicator():
    """1{state 1}: pi(f) = 1/3, G = (-10/9, 20/9), PG = (-7/9, 14/9)."""
    return np.array([0.0, 1.0])


@pytest.fixture
def three_state():
    return FiniteChain([[0.5, 0.3, 0.2], [0.1, 0.6, 0.3], [0.25, 0.25, 0.5]])
