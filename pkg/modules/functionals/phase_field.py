"""
Phase-field functionals on a QuadMesh: double well, approximate characteristic
function, the diffuse perimeter energy and the volume, each with the exact
derivative of its discrete value with respect to the conforming nodal values.
"""

import logging
from dataclasses import dataclass

import numpy as np

from modules.mesh.quadtree_mesh import NodalField, QuadMesh
from modules.mesh.reference_element import GAUSS_WEIGHTS, SHAPE, SHAPE_DETA, SHAPE_DXI

logger = logging.getLogger("PhaseField")


@dataclass
class PhaseFieldParams:
    """Interface width and its shrinking schedule across refinements."""
    epsilon: float = 0.025
    epsilon_factor: float = 0.75
    epsilon_min: float = 7.91e-3

    def __post_init__(self):
        if not 0.0 < self.epsilon_min <= self.epsilon:
            raise ValueError(f"Need 0 < epsilon_min <= epsilon, got {self.epsilon_min}, {self.epsilon}")
        if not 0.0 < self.epsilon_factor < 1.0:
            raise ValueError(f"epsilon_factor must lie in (0, 1), got {self.epsilon_factor}")

    def next_epsilon(self, epsilon):
        return max(epsilon * self.epsilon_factor, self.epsilon_min)


@dataclass
class CostWeights:
    """Weights of the volume and perimeter terms in the per-scenario cost."""
    nu: float = 0.04096
    eta_weight: float = 0.00064

    def __post_init__(self):
        if self.nu <= 0 or self.eta_weight <= 0:
            raise ValueError(f"Cost weights must be positive, got nu={self.nu}, eta_weight={self.eta_weight}")


def double_well(v):
    """Psi(v) = 9/16 (v^2 - 1)^2 and its derivative."""
    v = np.asarray(v, dtype=float)
    s = v * v - 1.0
    return 0.5625 * s * s, 2.25 * v * s


def char_approx(v):
    """chi(v) = (v + 1)^2 / 4 and its derivative."""
    v = np.asarray(v, dtype=float)
    return 0.25 * (v + 1.0) ** 2, 0.5 * (v + 1.0)


def _dof_values(V):
    return V.values if isinstance(V, NodalField) else np.asarray(V, dtype=float)


def _field_values(mesh: QuadMesh, V):
    return (mesh.prolongation @ _dof_values(V))[mesh.cell_nodes]


def _to_dofs(mesh: QuadMesh, corner_grad):
    """Sum per-cell corner contributions into nodes, then apply the hanging node chain rule."""
    node_grad = np.bincount(mesh.cell_nodes.ravel(), weights=corner_grad.ravel(), minlength=mesh.nnodes)
    return mesh.prolongation.T @ node_grad


def cell_gradients(mesh: QuadMesh, corner_values):
    """Physical gradient components at the quadrature points, shape (ncells, nq)."""
    gx = corner_values @ SHAPE_DXI.T / mesh.cell_hx[:, None]
    gy = corner_values @ SHAPE_DETA.T / mesh.cell_hy[:, None]
    return gx, gy


def perimeter_energy(mesh: QuadMesh, V, epsilon: float):
    """L = 1/2 * integral of eps |grad V|^2 + I_h(Psi(V)) / eps.

    Returns:
        (value, gradient) with the gradient as a NodalField.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    values = _dof_values(V)
    vc = _field_values(mesh, values)
    gx, gy = cell_gradients(mesh, vc)
    w = mesh.cell_area[:, None] * GAUSS_WEIGHTS[None, :]
    # hanging nodes take the average of Psi at their parents
    psi_dofs, dpsi_dofs = double_well(values)
    psi = (mesh.prolongation @ psi_dofs)[mesh.cell_nodes]
    # integral of each shape function over the cell
    shape_mass = mesh.cell_area[:, None] * (GAUSS_WEIGHTS @ SHAPE)[None, :]

    value = 0.5 * epsilon * np.sum(w * (gx * gx + gy * gy)) + 0.5 / epsilon * np.sum(shape_mass * psi)

    corner_grad = epsilon * ((w * gx) @ SHAPE_DXI / mesh.cell_hx[:, None]
                             + (w * gy) @ SHAPE_DETA / mesh.cell_hy[:, None])
    grad = _to_dofs(mesh, corner_grad) + 0.5 / epsilon * dpsi_dofs * _to_dofs(mesh, shape_mass)
    return float(value), NodalField(mesh, grad)


def volume(mesh: QuadMesh, V):
    """Integral of chi(V) with chi composed at the quadrature points."""
    vc = _field_values(mesh, V)
    vq = vc @ SHAPE.T
    chi, dchi = char_approx(vq)
    w = mesh.cell_area[:, None] * GAUSS_WEIGHTS[None, :]
    value = np.sum(w * chi)
    corner_grad = (w * dchi) @ SHAPE
    return float(value), NodalField(mesh, _to_dofs(mesh, corner_grad))


def nodal_chi(mesh: QuadMesh, V):
    """I_h(chi(V)) at every node, hanging nodes included, and chi'(V) at the conforming nodes.

    A hanging node carries the average of chi at its parents, so d I_h(chi(V)) / dV = P diag(chi'(V)).
    """
    chi, dchi = char_approx(_dof_values(V))
    return mesh.prolongation @ chi, dchi
