"""
Tests for the phase-field elasticity assembly, solves, cost derivatives and
stress post-processing.
"""

import logging

import numpy as np

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.StreamHandler()
    ]
)

logger = logging.getLogger("ElasticityTest")

from modules.elasticity.elasticity_controller import (BoundaryConditions, ElasticityConfig, ElasticityController,
                                                      MaterialParams, SegmentLoad, SingularSystemError)
from modules.elasticity.linear_solver import ElasticityError, SparseSolver
from modules.functionals.phase_field import CostWeights
from modules.mesh.quadtree_mesh import BoundarySegment, NodalField, QuadMesh, refine_cells
from modules.optimize.nlp_solver import finite_difference_check

ALL_SIDES = [BoundarySegment(side, 0.0, 1.0) for side in ('left', 'right', 'bottom', 'top')]
LOADS = [SegmentLoad(0, (0.0, -1.0))]


def cantilever_mesh(level=3, refine=True):
    mesh = QuadMesh.uniform(level=level, max_level=6, dirichlet=[BoundarySegment('left', 0.0, 1.0)],
                            neumann=[BoundarySegment('bottom', 0.375, 0.625)])
    if refine:
        mesh = refine_cells(mesh, [c for c in mesh.cells if c[2] == 0])
    return mesh


def clamped_mesh():
    mesh = QuadMesh.uniform(level=2, max_level=6, dirichlet=ALL_SIDES)
    mesh = refine_cells(mesh, [(2, 1, 1), (2, 2, 1)])
    return refine_cells(mesh, [(3, 3, 3)])


def random_phase(mesh, seed=0, spread=0.8):
    rng = np.random.default_rng(seed)
    return NodalField(mesh, rng.uniform(-spread, spread, mesh.ndofs))


def reference_element_stiffness(corners, material):
    """Q1 stiffness on the unit square by explicit loops over Gauss points and corners."""
    D = material.voigt()
    g = 1 / np.sqrt(3.0)
    points = [(0.5 * (1 + a * g), 0.5 * (1 + b * g)) for a in (-1, 1) for b in (-1, 1)]
    K = np.zeros((8, 8))
    for x, y in points:
        B = np.zeros((3, 8))
        for k, (xa, ya) in enumerate(corners):
            fx = x if xa > 0.5 else 1 - x
            fy = y if ya > 0.5 else 1 - y
            dx = (1 if xa > 0.5 else -1) * fy
            dy = (1 if ya > 0.5 else -1) * fx
            B[0, 2 * k] = dx
            B[1, 2 * k + 1] = dy
            B[2, 2 * k] = dy
            B[2, 2 * k + 1] = dx
        K += 0.25 * B.T @ D @ B
    return K


def test_coefficient_of_pure_phases():
    mesh = cantilever_mesh()
    controller = ElasticityController(mesh)
    assert np.allclose(controller.coefficient(NodalField.constant(mesh, 1.0)), 1.0)
    assert np.allclose(controller.coefficient(NodalField.constant(mesh, -1.0)), controller.material.delta)


def test_single_cell_matches_reference_assembly():
    material = MaterialParams(lam=30.0, mu=50.0)
    mesh = QuadMesh.uniform(level=0, max_level=3)
    controller = ElasticityController(mesh, material)
    K = controller.stiffness(NodalField.constant(mesh, 1.0)).toarray()
    nodes = mesh.cell_nodes[0]
    dofs = np.ravel([[2 * d, 2 * d + 1] for d in mesh.node_dof[nodes]])
    reference = reference_element_stiffness(mesh.node_coords[nodes], material)
    assert np.allclose(K[np.ix_(dofs, dofs)], reference, rtol=1e-12, atol=1e-12)


def test_stiffness_symmetric_positive_definite():
    mesh = cantilever_mesh()
    controller = ElasticityController(mesh)
    system = controller.assemble_system(random_phase(mesh), LOADS)
    A = system.matrix
    assert abs(A - A.T).max() == 0.0
    rng = np.random.default_rng(1)
    for _ in range(20):
        x = rng.standard_normal(A.shape[0])
        assert x @ (A @ x) > 0.0


def test_zero_load_gives_zero_displacement():
    mesh = cantilever_mesh()
    controller = ElasticityController(mesh)
    weights = CostWeights()
    V = random_phase(mesh, 2)
    state = controller.solve_load_cases(V, [[SegmentLoad(0, (0.0, 0.0))]], weights, 0.05)[0]
    assert np.max(np.abs(state.U.values)) == 0.0
    shape_value, _ = controller.shape_terms(V, weights, 0.05)
    assert np.isclose(state.J, shape_value)


def test_affine_patch_is_reproduced():
    a = np.array([0.01, 0.02, -0.03, 0.005, 0.04, -0.01])

    def affine(x, y):
        return a[0] + a[1] * x + a[2] * y, a[3] + a[4] * x + a[5] * y

    mesh = clamped_mesh()
    assert len(mesh.hanging_parents) > 0
    controller = ElasticityController(mesh, bc=BoundaryConditions(dirichlet_values=affine))
    system = controller.assemble_system(NodalField.constant(mesh, 0.4), [])
    U, residual = controller.solve_equilibrium(system)
    exact = NodalField.from_function(mesh, affine)
    assert residual <= 1e-12
    assert np.max(np.abs(U.values - exact.values)) < 1e-12
    assert np.max(np.abs(U.node_values() - exact.node_values())) < 1e-12


def test_compliance_is_twice_the_energy():
    mesh = cantilever_mesh()
    controller = ElasticityController(mesh)
    V = random_phase(mesh, 3)
    state = controller.solve_load_cases(V, [LOADS], CostWeights(), 0.05)[0]
    assert state.residual <= 1e-12
    assert state.C > 0
    assert abs(state.C - 2 * state.W) <= 1e-9 * state.C


def test_reduced_cost_gradient():
    mesh = cantilever_mesh()
    controller = ElasticityController(mesh)
    weights = CostWeights()
    eps = 0.1

    def reduced_cost(x):
        V = NodalField(mesh, x)
        state = controller.solve_load_cases(V, [LOADS], weights, eps)[0]
        return state.J, controller.cost_gradient(V, state, weights, eps).values

    x = random_phase(mesh, 4, spread=0.5).values
    sample = np.random.default_rng(5).choice(mesh.ndofs, size=10, replace=False)
    assert finite_difference_check(reduced_cost, x, sample, step=1e-6) < 1e-4


def test_cost_gradient_is_mirror_symmetric():
    mesh = QuadMesh.uniform(level=3, dirichlet=[BoundarySegment('left', 0.0, 1.0)],
                            neumann=[BoundarySegment('right', 0.375, 0.625)])
    controller = ElasticityController(mesh)
    weights = CostWeights()
    V = NodalField.from_function(mesh, lambda x, y: 0.6 * np.cos(3 * x) - 2.0 * (y - 0.5) ** 2)
    state = controller.solve_load_cases(V, [[SegmentLoad(0, (1.0, 0.0))]], weights, 0.1)[0]
    grad = controller.cost_gradient(V, state, weights, 0.1).values

    xy = mesh.conforming_coords()
    index = {(round(x, 9), round(y, 9)): k for k, (x, y) in enumerate(xy)}
    mirror = np.array([index[(round(x, 9), round(1.0 - y, 9))] for x, y in xy])
    assert np.allclose(grad, grad[mirror], rtol=1e-8, atol=1e-12 * np.max(np.abs(grad)))
    U = state.U.values
    assert np.allclose(U[:, 0], U[mirror, 0], atol=1e-10 * np.max(np.abs(U)))
    assert np.allclose(U[:, 1], -U[mirror, 1], atol=1e-10 * np.max(np.abs(U)))


def test_more_material_is_stiffer():
    mesh = cantilever_mesh()
    controller = ElasticityController(mesh)
    weights = CostWeights()

    def compliance(V):
        return controller.solve_load_cases(V, [LOADS], weights, 0.05)[0].C

    assert compliance(NodalField.constant(mesh, 1.0)) < compliance(NodalField.constant(mesh, 0.0))
    V1 = random_phase(mesh, 6)
    V2 = NodalField(mesh, np.maximum(V1.values, 0.2))
    assert compliance(V2) <= compliance(V1)


def test_von_mises_uniaxial_and_rotation():
    material = MaterialParams(lam=80.0, mu=80.0)
    mesh = clamped_mesh()
    s = 1e-3
    controller = ElasticityController(mesh, material, BoundaryConditions(dirichlet_values=lambda x, y: (s * x, 0.0)))
    V = NodalField.constant(mesh, 1.0)
    U, _ = controller.solve_equilibrium(controller.assemble_system(V, []))
    vm, masked = controller.von_mises_field(V, U)
    s11 = (material.lam + 2 * material.mu) * s
    s22 = material.lam * s
    expected = np.sqrt(s11 ** 2 - s11 * s22 + s22 ** 2)
    assert np.allclose(vm.values, expected, rtol=1e-8)
    assert np.allclose(masked.values, vm.values)
    _, masked_void = controller.von_mises_field(NodalField.constant(mesh, -1.0), U)
    assert np.max(np.abs(masked_void.values)) == 0.0

    theta = 1e-3
    rotating = ElasticityController(mesh, material,
                                    BoundaryConditions(dirichlet_values=lambda x, y: (-theta * y, theta * x)))
    U, _ = rotating.solve_equilibrium(rotating.assemble_system(V, []))
    vm, _ = rotating.von_mises_field(V, U)
    assert np.max(vm.values) < 1e-10

def test_von_mises_averages_stresses_before_the_invariant():
    # u_y = k |x - 1/2|: the shear stress flips sign across x = 1/2 and cancels at the nodes on that line
    mesh = QuadMesh.uniform(level=1, max_level=3)
    material = MaterialParams(lam=80.0, mu=80.0)
    controller = ElasticityController(mesh, material)
    k = 1e-3
    xy = mesh.conforming_coords()
    u = np.column_stack([np.zeros(len(xy)), k * np.abs(xy[:, 0] - 0.5)])
    vm, _ = controller.von_mises_field(NodalField.constant(mesh, 1.0), NodalField(mesh, u))
    middle = np.isclose(xy[:, 0], 0.5)
    assert np.max(vm.values[middle]) < 1e-12
    assert np.allclose(vm.values[~middle], np.sqrt(3.0) * material.mu * k, rtol=1e-10)



def test_direct_and_cg_agree():
    mesh = cantilever_mesh()
    V = NodalField.constant(mesh, 1.0)
    direct = ElasticityController(mesh, config=ElasticityConfig(linear_solver='direct'))
    cg = ElasticityController(mesh, config=ElasticityConfig(linear_solver='cg', rtol=1e-12))
    U1, _ = direct.solve_equilibrium(direct.assemble_system(V, LOADS))
    U2, _ = cg.solve_equilibrium(cg.assemble_system(V, LOADS))
    assert np.max(np.abs(U1.values - U2.values)) <= 1e-8 * np.max(np.abs(U1.values))


def test_several_load_cases_share_one_solve():
    mesh = cantilever_mesh()
    controller = ElasticityController(mesh)
    V = random_phase(mesh, 7)
    cases = [[SegmentLoad(0, (0.0, -1.0))], [SegmentLoad(0, (0.5, -0.5))]]
    states = controller.solve_load_cases(V, cases, CostWeights(), 0.05, ids=[3, 9])
    assert [s.scenario_id for s in states] == [3, 9]
    for case, state in zip(cases, states):
        U, _ = controller.solve_equilibrium(controller.assemble_system(V, case))
        assert np.allclose(U.values, state.U.values, rtol=1e-10, atol=1e-14)


def test_empty_dirichlet_boundary_is_singular():
    mesh = QuadMesh.uniform(level=2, neumann=[BoundarySegment('bottom', 0.25, 0.75)])
    controller = ElasticityController(mesh)
    try:
        controller.assemble_system(NodalField.constant(mesh, 1.0), LOADS)
    except SingularSystemError:
        pass
    else:
        raise AssertionError("an empty Dirichlet boundary must be rejected")


def test_unknown_solver_rejected():
    try:
        SparseSolver(np.eye(2), method='gmres')
    except ElasticityError:
        pass
    else:
        raise AssertionError("unknown solver must fail")


TESTS = [
    test_coefficient_of_pure_phases,
    test_single_cell_matches_reference_assembly,
    test_stiffness_symmetric_positive_definite,
    test_zero_load_gives_zero_displacement,
    test_affine_patch_is_reproduced,
    test_compliance_is_twice_the_energy,
    test_reduced_cost_gradient,
    test_cost_gradient_is_mirror_symmetric,
    test_more_material_is_stiffer,
    test_von_mises_uniaxial_and_rotation,
    test_von_mises_averages_stresses_before_the_invariant,
    test_direct_and_cg_agree,
    test_several_load_cases_share_one_solve,
    test_empty_dirichlet_boundary_is_singular,
    test_unknown_solver_rejected,
]


def main():
    """Run the elasticity tests."""
    failed = 0
    for test in TESTS:
        try:
            test()
            logger.info(f"{test.__name__}: ok")
        except Exception as e:
            failed += 1
            logger.error(f"{test.__name__}: FAILED ({e!r})", exc_info=True)
    logger.info(f"{len(TESTS) - failed}/{len(TESTS)} elasticity tests passed")
    return 1 if failed else 0


if __name__ == "__main__":
    exit(main())
