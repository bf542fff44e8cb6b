"""
Bilinear reference element on [0, 1]^2 with a 2x2 Gauss rule.

Corner order is (0,0), (1,0), (1,1), (0,1) everywhere in the package.
"""

import numpy as np

_A = 0.5 - 0.5 / np.sqrt(3.0)
_B = 0.5 + 0.5 / np.sqrt(3.0)

# Quadrature points (xi, eta) and weights on the unit reference square
GAUSS_POINTS = np.array([[_A, _A], [_B, _A], [_B, _B], [_A, _B]])
GAUSS_WEIGHTS = np.full(4, 0.25)


def shape_functions(xi, eta):
    """Values of the four bilinear shape functions, shape (..., 4)."""
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    return np.stack([
        (1.0 - xi) * (1.0 - eta),
        xi * (1.0 - eta),
        xi * eta,
        (1.0 - xi) * eta,
    ], axis=-1)


def shape_derivatives(xi, eta):
    """Reference derivatives (d/dxi, d/deta) of the shape functions."""
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    dxi = np.stack([-(1.0 - eta), 1.0 - eta, eta, -eta], axis=-1)
    deta = np.stack([-(1.0 - xi), -xi, xi, 1.0 - xi], axis=-1)
    return dxi, deta


# Tabulated at the quadrature points: rows are points, columns are corners
SHAPE = shape_functions(GAUSS_POINTS[:, 0], GAUSS_POINTS[:, 1])
SHAPE_DXI, SHAPE_DETA = shape_derivatives(GAUSS_POINTS[:, 0], GAUSS_POINTS[:, 1])

# Corner offsets in units of the cell span
CORNER_OFFSETS = np.array([[0, 0], [1, 0], [1, 1], [0, 1]])
