"""Shared plant/polytope data used across the test modules."""

import numpy as np
import pytest

from ribc import geometry
from ribc.system import AffineSystem


def _double_integrator(b):
    return AffineSystem(np.array([[0.0, 1.0], [0.0, 0.0]]),
                        np.array(b, dtype=float).reshape(2, 1),
                        np.zeros(2))


@pytest.fixture
def skew_pair():
    """Planar plant with velocity coupling entering both states."""
    return _double_integrator([1.0, 1.0])


@pytest.fixture
def dbl_int():
    """Classic double integrator, force on the second state only."""
    return _double_integrator([0.0, 1.0])


@pytest.fixture
def square():
    return geometry.from_vertices([(1, 1), (1, -1), (-1, -1), (-1, 1)])


@pytest.fixture
def cart():
    """Cart on a table with viscous friction, unit mass and coefficient."""
    return AffineSystem(np.array([[0.0, 1.0], [0.0, -1.0]]),
                        np.array([[0.0], [1.0]]), np.zeros(2))


@pytest.fixture
def circuit():
    """Two inductors and a capacitor driven through the first loop."""
    A = np.array([[-1.0, -1.0, 0.0], [1.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
    return AffineSystem(A, np.array([[1.0], [0.0], [0.0]]), np.zeros(3))


def cube(r, n=3):
    pts = np.array(np.meshgrid(*([[-r, r]] * n))).reshape(n, -1).T
    return geometry.from_vertices(pts)


@pytest.fixture
def balance():
    """Cart with an inverted payload, linearized about upright.

    States: cart position/velocity x1, x3 and payload angle/rate x2, x4.
    Numbers follow a standard bench-scale parameterization.
    """
    M, m, J, ell = 1.0, 0.2, 0.01, 0.5
    c, gamma, g = 0.1, 0.01, 9.8
    Jt = J + m * ell ** 2
    Mt = M + m
    mu = Mt * Jt - m ** 2 * ell ** 2
    A = np.array([
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, m ** 2 * ell ** 2 * g / mu, -c * Jt / mu, -gamma * Jt * ell * m / mu],
        [0.0, Mt * m * g * ell / mu, -c * ell * m / mu, -gamma * Mt / mu],
    ])
    B = np.array([[0.0], [0.0], [Jt / mu], [ell * m / mu]])
    return AffineSystem(A, B, np.zeros(4))


def box4(x1, x2, x3, x4):
    """Axis-aligned box in R^4 from per-coordinate (lo, hi) pairs."""
    corners = []
    for s1 in x1:
        for s2 in x2:
            for s3 in x3:
                for s4 in x4:
                    corners.append((s1, s2, s3, s4))
    return geometry.from_vertices(corners)


@pytest.fixture
def balance_boxes():
    inner = box4((-1, 1), (0.2, 0.3), (-0.1, 0.1), (-0.1, 0.1))
    outer = box4((-1, 1), (0.0, 0.3), (-0.1, 0.1), (-0.1, 0.1))
    return inner, outer
