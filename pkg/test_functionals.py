"""
Tests for the phase-field functionals: double well, characteristic function,
perimeter energy and volume.
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

logger = logging.getLogger("FunctionalsTest")

from modules.functionals.phase_field import (CostWeights, PhaseFieldParams, char_approx, double_well,
                                             nodal_chi, perimeter_energy, volume)
from modules.mesh.quadtree_mesh import NodalField, QuadMesh, refine_cells
from modules.optimize.nlp_solver import NlpProblem, NlpSolverConfig, finite_difference_check, solve_constrained


def refined_mesh():
    mesh = QuadMesh.uniform(level=3, max_level=6)
    mesh = refine_cells(mesh, [c for c in mesh.cells if c[1] in (3, 4)])
    return refine_cells(mesh, [c for c in mesh.cells if c[0] == 4 and c[2] in (7, 8)])


def test_double_well_values():
    psi, dpsi = double_well([-1.0, 0.0, 1.0, 2.0])
    assert np.allclose(psi, [0.0, 9 / 16, 0.0, 81 / 16])
    assert np.allclose(dpsi, [0.0, 0.0, 0.0, 13.5])


def test_char_approx_values():
    chi, dchi = char_approx([-1.0, 0.0, 1.0])
    assert np.allclose(chi, [0.0, 0.25, 1.0])
    assert np.allclose(dchi, [0.0, 0.5, 1.0])


def test_perimeter_of_zero_field():
    mesh = QuadMesh.uniform(level=3)
    for eps in (0.1, 0.025):
        value, _ = perimeter_energy(mesh, NodalField.constant(mesh, 0.0), eps)
        assert np.isclose(value, (9 / 16) / (2 * eps), rtol=1e-12)


def test_perimeter_of_pure_phases():
    mesh = refined_mesh()
    for c in (-1.0, 1.0):
        value, grad = perimeter_energy(mesh, NodalField.constant(mesh, c), 0.05)
        assert abs(value) < 1e-14
        assert np.max(np.abs(grad.values)) < 1e-14


def test_perimeter_of_linear_profile_converges():
    eps = 0.05
    exact = 2 * eps + 3 / (20 * eps)
    errors = []
    for level in (3, 4, 5):
        mesh = QuadMesh.uniform(level=level)
        value, _ = perimeter_energy(mesh, NodalField.from_function(mesh, lambda x, y: 2 * x - 1), eps)
        errors.append(abs(value - exact) / exact)
    assert errors[-1] < 1e-2
    assert errors[2] < errors[1] < errors[0]


def test_perimeter_rejects_nonpositive_epsilon():
    mesh = QuadMesh.uniform(level=1)
    try:
        perimeter_energy(mesh, NodalField.constant(mesh, 0.0), 0.0)
    except ValueError:
        pass
    else:
        raise AssertionError("epsilon = 0 must be rejected")


def test_volume_values():
    mesh = refined_mesh()
    assert np.isclose(volume(mesh, NodalField.constant(mesh, 1.0))[0], 1.0)
    assert abs(volume(mesh, NodalField.constant(mesh, -1.0))[0]) < 1e-15
    assert np.isclose(volume(mesh, NodalField.constant(mesh, 0.0))[0], 0.25)
    # chi(2x - 1) = x^2 is integrated exactly by 2x2 Gauss
    V = NodalField.from_function(mesh, lambda x, y: 2 * x - 1)
    assert np.isclose(volume(mesh, V)[0], 1 / 3, rtol=1e-12)


def test_gradients_match_finite_differences():
    mesh = refined_mesh()
    rng = np.random.default_rng(0)
    x = rng.uniform(-0.9, 0.9, mesh.ndofs)
    sample = rng.choice(mesh.ndofs, size=12, replace=False)

    def perimeter(z):
        value, grad = perimeter_energy(mesh, z, 0.05)
        return value, grad.values

    def vol(z):
        value, grad = volume(mesh, z)
        return value, grad.values

    assert finite_difference_check(perimeter, x, sample, step=1e-6) < 1e-5
    assert finite_difference_check(vol, x, sample, step=1e-6) < 1e-5


def test_one_dimensional_transition_energy():
    """Minimal 1D transition from -1 to 1 costs one unit of perimeter."""
    eps, n = 0.02, 512
    h = 1.0 / n

    def energy(v):
        dv = np.diff(v) / h
        psi, dpsi = double_well(v)
        mass = np.full(n + 1, h)
        mass[[0, -1]] = 0.5 * h
        value = 0.5 * eps * np.sum(dv * dv) * h + 0.5 / eps * np.sum(mass * psi)
        grad = 0.5 / eps * mass * dpsi
        grad[:-1] -= eps * dv
        grad[1:] += eps * dv
        return value, grad

    x = np.linspace(0.0, 1.0, n + 1)
    problem = NlpProblem(n + 1, energy, pinned=[0, n], pinned_values=[-1.0, 1.0])
    config = NlpSolverConfig(max_inner_iterations=5000)
    result = solve_constrained(problem, 2 * x - 1, tol=1e-7, config=config)
    value, _ = energy(result.x)
    assert abs(value - 1.0) < 0.05, value


def test_epsilon_schedule():
    params = PhaseFieldParams()
    trace = [params.epsilon]
    for _ in range(6):
        trace.append(params.next_epsilon(trace[-1]))
    assert np.allclose(trace[:5], [0.025, 0.01875, 0.0140625, 0.010546875, 0.00791015625])
    assert trace[5] == 7.91e-3 and trace[6] == 7.91e-3


def test_parameter_validation():
    for bad in (dict(epsilon=0.01, epsilon_min=0.02), dict(epsilon_factor=1.0)):
        try:
            PhaseFieldParams(**bad)
        except ValueError:
            continue
        raise AssertionError(f"PhaseFieldParams({bad}) must fail")
    try:
        CostWeights(nu=-1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("negative volume weight must fail")

def test_hanging_nodes_interpolate_nonlinear_terms():
    """Psi(V) and chi(V) at a hanging node are the averages over its parents."""
    mesh = refined_mesh()
    pairs = [(h, a, b) for h, (a, b) in mesh.hanging_parents.items()
             if not mesh.is_hanging[a] and not mesh.is_hanging[b]]
    assert pairs
    h, a, b = pairs[0]
    V = np.ones(mesh.ndofs)
    V[np.searchsorted(mesh.conforming_nodes, b)] = -1.0

    # Psi vanishes at every unknown, so only the gradient part of L remains: L(eps) / eps is constant
    small, _ = perimeter_energy(mesh, V, 0.5)
    large, _ = perimeter_energy(mesh, V, 2.0)
    assert small > 0
    assert np.isclose(small / 0.5, large / 2.0, rtol=1e-12)

    chi, dchi = nodal_chi(mesh, V)
    assert chi.shape == (mesh.nnodes,) and dchi.shape == (mesh.ndofs,)
    assert np.isclose(chi[h], 0.5)
    assert np.isclose(chi[a], 1.0) and abs(chi[b]) < 1e-15



TESTS = [
    test_double_well_values,
    test_char_approx_values,
    test_perimeter_of_zero_field,
    test_perimeter_of_pure_phases,
    test_perimeter_of_linear_profile_converges,
    test_perimeter_rejects_nonpositive_epsilon,
    test_volume_values,
    test_gradients_match_finite_differences,
    test_hanging_nodes_interpolate_nonlinear_terms,
    test_one_dimensional_transition_energy,
    test_epsilon_schedule,
    test_parameter_validation,
]


def main():
    """Run the functional tests."""
    failed = 0
    for test in TESTS:
        try:
            test()
            logger.info(f"{test.__name__}: ok")
        except Exception as e:
            failed += 1
            logger.error(f"{test.__name__}: FAILED ({e!r})", exc_info=True)
    logger.info(f"{len(TESTS) - failed}/{len(TESTS)} functional tests passed")
    return 1 if failed else 0


if __name__ == "__main__":
    exit(main())
