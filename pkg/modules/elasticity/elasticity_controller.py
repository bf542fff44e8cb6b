"""
Linearized elasticity on a phase-field weighted material.

The stiffness coefficient is (1 - delta) * I_h(chi(V)) + delta, the loads are
piecewise constant tractions on Neumann segments, and the displacement lives on
the conforming nodes of the mesh with hanging nodes eliminated by averaging.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from modules.elasticity.linear_solver import ElasticityError, SparseSolver, backward_error
from modules.functionals.phase_field import (CostWeights, cell_gradients, nodal_chi, perimeter_energy,
                                             volume)
from modules.mesh.quadtree_mesh import NodalField, QuadMesh, Rectangle, BoundarySegment
from modules.mesh.reference_element import GAUSS_WEIGHTS, SHAPE, SHAPE_DETA, SHAPE_DXI

logger = logging.getLogger("Elasticity")


class SingularSystemError(ElasticityError):
    """The elasticity operator would be singular."""


class EquilibriumError(ElasticityError):
    """A displacement is not an equilibrium to the required accuracy."""


@dataclass
class MaterialParams:
    """Lame parameters of the hard phase and the ersatz factor of the soft phase."""
    lam: float = 80.0
    mu: float = 80.0
    delta: float = 1e-4

    def __post_init__(self):
        if self.mu <= 0 or self.lam < 0:
            raise ValueError(f"Need mu > 0 and lambda >= 0, got lambda={self.lam}, mu={self.mu}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")

    def voigt(self):
        lam, mu = self.lam, self.mu
        return np.array([[lam + 2 * mu, lam, 0.0],
                         [lam, lam + 2 * mu, 0.0],
                         [0.0, 0.0, mu]])


@dataclass
class ElasticityConfig:
    linear_solver: str = 'auto'
    rtol: float = 1e-12
    direct_max_unknowns: int = 200000
    max_workers: int = 4


@dataclass(frozen=True)
class SegmentLoad:
    """Constant traction on the Neumann segment with the given index."""
    segment: int
    traction: Tuple[float, float]


@dataclass
class BoundaryConditions:
    """Clamped and loaded boundary pieces plus the regions where the phase is pinned to 1."""
    dirichlet: Sequence[BoundarySegment] = ()
    neumann: Sequence[BoundarySegment] = ()
    pinned: Sequence[Rectangle] = ()
    dirichlet_values: Optional[Callable] = None

    def pinned_dofs(self, mesh: QuadMesh):
        """Conforming phase dofs fixed to 1: Neumann nodes and nodes inside the strips."""
        nodes = set(mesh.segment_nodes(mesh.neumann).tolist())
        xy = mesh.node_coords
        for rect in self.pinned:
            nodes.update(np.flatnonzero(rect.contains(xy[:, 0], xy[:, 1])).tolist())
        dofs = mesh.node_dof[sorted(nodes)] if nodes else np.zeros(0, dtype=np.int64)
        return np.unique(dofs[dofs >= 0])


@dataclass
class EquilibriumState:
    scenario_id: int
    U: NodalField
    W: float
    C: float
    J: float
    residual: float


@dataclass
class LinearSystem:
    """Reduced system on the non-Dirichlet displacement unknowns."""
    matrix: sparse.csr_matrix
    rhs: np.ndarray
    free: np.ndarray
    fixed: np.ndarray
    fixed_values: np.ndarray
    ndofs: int
    solver: Optional[SparseSolver] = field(default=None, repr=False)


class ElasticityController:
    """Assembles and solves the phase-field elasticity problem on one mesh."""

    def __init__(self, mesh: QuadMesh, material: MaterialParams = None,
                 bc: BoundaryConditions = None, config: ElasticityConfig = None):
        self.mesh = mesh
        self.material = material or MaterialParams()
        self.bc = bc or BoundaryConditions()
        self.config = config or ElasticityConfig()
        self.D = self.material.voigt()

        # Quadrature stiffness blocks only depend on the cell aspect ratio, which is shared by all levels
        hx, hy = mesh.cell_hx[0], mesh.cell_hy[0]
        B = np.zeros((len(GAUSS_WEIGHTS), 3, 8))
        B[:, 0, 0::2] = SHAPE_DXI / hx
        B[:, 1, 1::2] = SHAPE_DETA / hy
        B[:, 2, 0::2] = SHAPE_DETA / hy
        B[:, 2, 1::2] = SHAPE_DXI / hx
        area = hx * hy
        self.Kq = np.einsum('q,qki,kl,qlj->qij', GAUSS_WEIGHTS * area, B, self.D, B)

        local = 2 * mesh.cell_nodes[:, :, None] + np.arange(2)[None, None, :]
        self._local_dofs = local.reshape(mesh.ncells, 8)
        self._rows = np.repeat(self._local_dofs, 8, axis=1).ravel()
        self._cols = np.tile(self._local_dofs, (1, 8)).ravel()
        self.Pu = sparse.kron(mesh.prolongation, sparse.identity(2), format='csr')

        self._fixed = self._dirichlet_dofs()
        self._free = np.setdiff1d(np.arange(2 * mesh.ndofs), self._fixed)
        self.pinned = self.bc.pinned_dofs(mesh)
        logger.debug(f"Elasticity on {mesh}: {len(self._free)} free displacement unknowns, "
                     f"{len(self.pinned)} pinned phase nodes")

    def _dirichlet_dofs(self):
        nodes = self.mesh.segment_nodes(self.mesh.dirichlet)
        dofs = self.mesh.node_dof[nodes]
        dofs = dofs[dofs >= 0]
        return np.sort(np.concatenate([2 * dofs, 2 * dofs + 1]))

    # ------------------------------------------------------------------
    # Assembly
    # ------------------------------------------------------------------

    def coefficient(self, V: NodalField):
        """(1 - delta) I_h(chi(V)) + delta at the quadrature points, shape (ncells, nq)."""
        chi, _ = nodal_chi(self.mesh, V)
        chi_q = chi[self.mesh.cell_nodes] @ SHAPE.T
        delta = self.material.delta
        return (1.0 - delta) * chi_q + delta

    def stiffness(self, V: NodalField):
        """Hessian of the elastic energy on all conforming displacement unknowns."""
        coef = self.coefficient(V)
        Ke = np.einsum('cq,qij->cij', coef, self.Kq)
        n = 2 * self.mesh.nnodes
        K_node = sparse.coo_matrix((Ke.ravel(), (self._rows, self._cols)), shape=(n, n)).tocsr()
        K = (self.Pu.T @ K_node @ self.Pu).tocsr()
        return ((K + K.T) * 0.5).tocsr()

    def load_vector(self, loads: Sequence[SegmentLoad]):
        """Derivative of the compliance: edge-wise trapezoidal integration of g . U."""
        mesh = self.mesh
        f_node = np.zeros(2 * mesh.nnodes)
        if loads:
            a, b, seg, length = mesh.boundary_edges(mesh.neumann)
            traction = np.zeros((len(mesh.neumann), 2))
            for load in loads:
                if not 0 <= load.segment < len(mesh.neumann):
                    raise ElasticityError(f"Load on unknown Neumann segment {load.segment}")
                traction[load.segment] += load.traction
            g = traction[seg] * (0.5 * length)[:, None]
            for comp in range(2):
                np.add.at(f_node, 2 * a + comp, g[:, comp])
                np.add.at(f_node, 2 * b + comp, g[:, comp])
        return self.Pu.T @ f_node

    def assemble_system(self, V: NodalField, loads) -> LinearSystem:
        """Reduced operator and load for one or several load cases.

        Args:
            loads: a sequence of SegmentLoad, or a list of such sequences for several load cases.
        """
        if V.mesh is not self.mesh and V.mesh.fingerprint != self.mesh.fingerprint:
            raise ElasticityError("Phase field is not defined on this mesh")
        if len(self._fixed) == 0:
            raise SingularSystemError("Empty Dirichlet boundary: the elasticity operator is singular")

        multiple = bool(loads) and not isinstance(loads[0], SegmentLoad)
        cases = list(loads) if multiple else [loads]
        f = np.column_stack([self.load_vector(c) for c in cases])

        fixed_values = self._fixed_values()
        K = self.stiffness(V)
        K_ff = K[self._free][:, self._free].tocsr()
        rhs = f[self._free]
        if np.any(fixed_values):
            rhs = rhs - (K[self._free][:, self._fixed] @ fixed_values)[:, None]
        if not multiple:
            rhs = rhs[:, 0]
        return LinearSystem(K_ff, rhs, self._free, self._fixed, fixed_values, self.mesh.ndofs)

    def _fixed_values(self):
        values = np.zeros(len(self._fixed))
        if self.bc.dirichlet_values is not None:
            dofs = self._fixed // 2
            xy = self.mesh.conforming_coords()[dofs]
            ux, uy = self.bc.dirichlet_values(xy[:, 0], xy[:, 1])
            comp = self._fixed % 2
            values = np.where(comp == 0, np.broadcast_to(ux, dofs.shape), np.broadcast_to(uy, dofs.shape))
        return np.asarray(values, dtype=float)

    def _solver_for(self, system: LinearSystem):
        if system.solver is None:
            method = self.config.linear_solver
            if method == 'auto':
                method = 'direct' if len(system.free) <= self.config.direct_max_unknowns else 'cg'
            system.solver = SparseSolver(system.matrix, method, self.config.rtol)
        return system.solver

    def solve_equilibrium(self, system: LinearSystem):
        """Solve the reduced system.

        Returns:
            (U, residual); U is a two-component NodalField, or a list of them for several load cases.
        """
        solver = self._solver_for(system)
        x, residual = solver.solve(system.rhs)

        def expand(xf):
            u = np.zeros(2 * system.ndofs)
            u[system.free] = xf
            u[system.fixed] = system.fixed_values
            return NodalField(self.mesh, u.reshape(-1, 2))

        if x.ndim == 1:
            return expand(x), residual
        return [expand(x[:, k]) for k in range(x.shape[1])], residual

    # ------------------------------------------------------------------
    # Energies and cost
    # ------------------------------------------------------------------

    def strains(self, U: NodalField):
        """Voigt strains (exx, eyy, gamma_xy) at the quadrature points, each (ncells, nq)."""
        u = U.node_values()[self.mesh.cell_nodes]
        ux_x, ux_y = cell_gradients(self.mesh, u[..., 0])
        uy_x, uy_y = cell_gradients(self.mesh, u[..., 1])
        return ux_x, uy_y, ux_y + uy_x

    def energy_density(self, U: NodalField):
        """C eps[U] : eps[U] at the quadrature points for the hard material."""
        exx, eyy, gxy = self.strains(U)
        lam, mu = self.material.lam, self.material.mu
        return (lam + 2 * mu) * (exx ** 2 + eyy ** 2) + 2 * lam * exx * eyy + mu * gxy ** 2

    def elastic_energy(self, V: NodalField, U: NodalField):
        w = self.mesh.cell_area[:, None] * GAUSS_WEIGHTS[None, :]
        return float(0.5 * np.sum(w * self.coefficient(V) * self.energy_density(U)))

    def compliance(self, U: NodalField, loads: Sequence[SegmentLoad]):
        return float(self.load_vector(loads) @ U.values.ravel())

    def shape_terms(self, V: NodalField, weights: CostWeights, epsilon: float):
        """nu * Vol + eta * L and its gradient, shared by every scenario."""
        vol, dvol = volume(self.mesh, V)
        per, dper = perimeter_energy(self.mesh, V, epsilon)
        return weights.nu * vol + weights.eta_weight * per, weights.nu * dvol.values + weights.eta_weight * dper.values

    def cost_J(self, V: NodalField, U: NodalField, weights: CostWeights, epsilon: float):
        """J = 2 W + nu Vol + eta L."""
        shape_value, _ = self.shape_terms(V, weights, epsilon)
        return 2.0 * self.elastic_energy(V, U) + shape_value

    def elastic_gradient(self, V: NodalField, U: NodalField):
        """Derivative of the reduced compliance with respect to the conforming phase values."""
        _, dchi = nodal_chi(self.mesh, V)
        w = self.mesh.cell_area[:, None] * GAUSS_WEIGHTS[None, :]
        corner = (w * self.energy_density(U)) @ SHAPE
        node_grad = np.bincount(self.mesh.cell_nodes.ravel(), weights=corner.ravel(), minlength=self.mesh.nnodes)
        return -(1.0 - self.material.delta) * dchi * (self.mesh.prolongation.T @ node_grad)

    def cost_gradient(self, V: NodalField, state: EquilibriumState, weights: CostWeights, epsilon: float):
        """Total derivative of J[V, U[V]] using the explicit adjoint P = 2U."""
        if not state.residual <= self.config.rtol:
            raise EquilibriumError(f"Scenario {state.scenario_id}: residual {state.residual:.3e} "
                                   f"exceeds {self.config.rtol:.1e}")
        _, shape_grad = self.shape_terms(V, weights, epsilon)
        return NodalField(self.mesh, shape_grad + self.elastic_gradient(V, state.U))

    # ------------------------------------------------------------------
    # Scenarios
    # ------------------------------------------------------------------

    def solve_load_cases(self, V: NodalField, load_cases: Sequence[Sequence[SegmentLoad]],
                         weights: CostWeights, epsilon: float, ids: Sequence[int] = None) -> List[EquilibriumState]:
        """Equilibria and costs for several load cases sharing one factorization."""
        if not load_cases:
            return []
        ids = list(ids) if ids is not None else list(range(len(load_cases)))
        system = self.assemble_system(V, [list(c) for c in load_cases])
        shape_value, _ = self.shape_terms(V, weights, epsilon)
        solver = self._solver_for(system)

        if solver.method == 'direct':
            # the factorization handles all right-hand sides in one call
            X, _ = solver.solve(system.rhs)
            columns = [X[:, k] for k in range(X.shape[1])]
        else:
            columns = [None] * len(load_cases)

        def solve_one(k):
            x = columns[k]
            if x is None:
                x, _ = solver.solve(system.rhs[:, k])
            residual = float(backward_error(system.matrix, x, system.rhs[:, k], solver.matrix_norm))
            u = np.zeros(2 * system.ndofs)
            u[system.free] = x
            u[system.fixed] = system.fixed_values
            U = NodalField(self.mesh, u.reshape(-1, 2))
            W = self.elastic_energy(V, U)
            C = self.compliance(U, load_cases[k])
            return EquilibriumState(ids[k], U, W, C, 2.0 * W + shape_value, residual)

        with ThreadPoolExecutor(max_workers=self.config.max_workers) as pool:
            states = list(pool.map(solve_one, range(len(load_cases))))
        logger.debug(f"Solved {len(states)} load cases, max residual {max(s.residual for s in states):.2e}")
        return states

    # ------------------------------------------------------------------
    # Post-processing
    # ------------------------------------------------------------------

    def von_mises_field(self, V: NodalField, U: NodalField):
        """Nodal von Mises stress of the hard material and the same field masked to chi(V) > 0.5."""
        exx, eyy, gxy = self.strains(U)
        lam, mu = self.material.lam, self.material.mu
        s11 = (lam + 2 * mu) * exx + lam * eyy
        s22 = lam * exx + (lam + 2 * mu) * eyy
        s12 = mu * gxy
        mesh = self.mesh
        count = np.maximum(np.bincount(mesh.cell_nodes.ravel(), minlength=mesh.nnodes), 1)

        def to_nodes(s):
            total = np.bincount(mesh.cell_nodes.ravel(), weights=np.repeat(s.mean(axis=1), 4), minlength=mesh.nnodes)
            return (total / count)[mesh.conforming_nodes]

        # stresses are averaged first, the invariant is taken of the averages
        n11, n22, n12 = to_nodes(s11), to_nodes(s22), to_nodes(s12)
        vm_node = np.sqrt(np.maximum(n11 ** 2 - n11 * n22 + n22 ** 2 + 3 * n12 ** 2, 0.0))
        chi, _ = nodal_chi(mesh, V)
        masked = np.where(chi[mesh.conforming_nodes] > 0.5, vm_node, 0.0)
        return NodalField(mesh, vm_node), NodalField(mesh, masked)
