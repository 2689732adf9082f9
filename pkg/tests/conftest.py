"""Shared instances used across test modules."""

import numpy as np
import pytest


@pytest.fixture(scope="session")
def zuec_instance():
    """Ternary channel with an erasures-only (support indicator) metric."""
    w = np.array([[0.75, 0.25, 0.0],
                  [0.0, 0.75, 0.25],
                  [0.25, 0.0, 0.75]])
    q = np.array([[1.0, 1.0, 0.0],
                  [0.0, 1.0, 1.0],
                  [1.0, 0.0, 1.0]])
    return w, q


@pytest.fixture(scope="session")
def min_distance_instance():
    """Asymmetric ternary channel decoded with a minimum-distance metric."""
    d0, d1, d2, d = 0.01, 0.05, 0.25, 0.1
    w = np.array([[1 - 2 * d0, d0, d0],
                  [d1, 1 - 2 * d1, d1],
                  [d2, d2, 1 - 2 * d2]])
    q = np.array([[1 - 2 * d, d, d],
                  [d, 1 - 2 * d, d],
                  [d, d, 1 - 2 * d]])
    q_in = np.array([0.1, 0.3, 0.6])
    return w, q, q_in


@pytest.fixture(scope="session")
def bsc_matched():
    """BSC(0.11) decoded with its own transition law."""
    w = np.array([[0.89, 0.11], [0.11, 0.89]])
    return w, w.copy(), np.array([0.5, 0.5])


@pytest.fixture(scope="session")
def parallel_bsc_mac():
    """Two senders over independent binary symmetric channels; the metric
    scores agreement of each sender's bit with its own output half."""
    d1, d2 = 0.05, 0.15
    w3 = np.zeros((2, 2, 4))
    q3 = np.zeros((2, 2, 4))
    for x1, x2, y1, y2 in np.ndindex(2, 2, 2, 2):
        y = 2 * y1 + y2
        w3[x1, x2, y] = ((1 - d1) if y1 == x1 else d1) * ((1 - d2) if y2 == x2 else d2)
        q3[x1, x2, y] = np.exp(0.5 * ((x1 == y1) + (x2 == y2)))
    return w3, q3, d1, d2


@pytest.fixture(scope="session")
def adder_mac():
    """Noisy adder: Y = X1 + X2 plus noise whose level depends on X2,
    decoded with a metric that assumes one common noise level."""
    deltas, dq = (0.25, 0.01), 0.1
    w3 = np.zeros((2, 2, 3))
    q3 = np.zeros((2, 2, 3))
    for x1, x2, y in np.ndindex(2, 2, 3):
        w3[x1, x2, y] = 1 - 2 * deltas[x2] if y == x1 + x2 else deltas[x2]
        q3[x1, x2, y] = 1 - 2 * dq if y == x1 + x2 else dq
    return w3, q3


@pytest.fixture(scope="session")
def binary_mismatched():
    """Small asymmetric binary channel with a mismatched metric."""
    w = np.array([[0.89, 0.11], [0.25, 0.75]])
    q = np.array([[0.9, 0.1], [0.18, 0.82]])
    q_in = np.array([0.45, 0.55])
    return w, q, q_in
