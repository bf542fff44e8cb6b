"""
Tests for cost distributions, dominance predicates, smoothing and the
smoothed dominance constraint rows.
"""

import dataclasses
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

logger = logging.getLogger("StochasticTest")

from modules.elasticity.elasticity_controller import ElasticityController, SegmentLoad
from modules.functionals.phase_field import CostWeights
from modules.mesh.quadtree_mesh import BoundarySegment, NodalField, QuadMesh
from modules.optimize.nlp_solver import finite_difference_check
from modules.stochastic.distribution import (CostDistribution, DistributionError, SmoothingParams, cdf,
                                             dominates_first_order, dominates_second_order, expected_disutility,
                                             integrated_survival, risk_measures, smoothed_heaviside,
                                             smoothed_max, table_grid)
from modules.stochastic.dominance_controller import (DominanceController, DominanceError, DominanceOrder, Scenario,
                                                     ScenarioSolveError, smoothed_rows)

TWO_ATOMS = CostDistribution([1.0, 2.0], [0.5, 0.5])
SPREAD = CostDistribution([0.0, 3.0], [0.5, 0.5])


def random_distribution(rng, size=None):
    k = size or rng.integers(1, 7)
    p = rng.dirichlet(np.ones(k))
    p[-1] = 1.0 - p[:-1].sum()
    return CostDistribution(rng.uniform(0, 10, k), p)


def dominated_pair(rng):
    """A pair (X, Y) with X <= Y atom by atom, hence X dominates Y in first order."""
    Y = random_distribution(rng)
    shift = rng.uniform(0, 3, len(Y)) * (rng.uniform(size=len(Y)) < 0.7)
    return CostDistribution(Y.values - shift, Y.probabilities), Y


def test_cdf_examples():
    assert cdf(TWO_ATOMS, 1.0) == 0.5
    assert cdf(TWO_ATOMS, 0.999) == 0.0
    assert cdf(TWO_ATOMS, 2.0) == 1.0
    assert np.allclose(cdf(TWO_ATOMS, np.array([0.0, 1.5, 3.0])), [0.0, 0.5, 1.0])


def test_cdf_is_nondecreasing_and_right_continuous():
    rng = np.random.default_rng(0)
    dist = random_distribution(rng, 6)
    grid = table_grid(dist)
    values = cdf(dist, grid)
    assert np.all(np.diff(values) >= 0)
    atoms = np.unique(dist.values)
    assert np.allclose(cdf(dist, atoms), cdf(dist, atoms + 1e-9))


def test_integrated_survival_examples():
    assert integrated_survival(TWO_ATOMS, 0.0) == 1.5
    assert integrated_survival(TWO_ATOMS, 1.5) == 0.25
    assert integrated_survival(TWO_ATOMS, 2.0) == 0.0


def test_risk_measures_examples():
    r = risk_measures(TWO_ATOMS, 1.5)
    assert (r.mean, r.excess_probability, r.expected_excess) == (1.5, 0.5, 0.25)
    r = risk_measures(random_distribution(np.random.default_rng(1)), np.inf)
    assert r.excess_probability == 0.0 and r.expected_excess == 0.0
    r = risk_measures(CostDistribution([3.0], [1.0]), 3.0)
    assert r.excess_probability == 0.0 and r.expected_excess == 0.0


def test_isf_equals_expected_excess():
    rng = np.random.default_rng(2)
    for _ in range(50):
        dist = random_distribution(rng)
        t = rng.uniform(-1, 11)
        assert integrated_survival(dist, t) == risk_measures(dist, t).expected_excess


def test_distribution_validation():
    try:
        CostDistribution([1.0, 2.0], [0.5, 0.6])
    except DistributionError as e:
        assert "1.1" in str(e)
    else:
        raise AssertionError("probabilities summing to 1.1 must fail")
    try:
        CostDistribution([1.0, np.nan], [0.5, 0.5])
    except DistributionError:
        pass
    else:
        raise AssertionError("non-finite costs must fail")


def test_first_order_examples():
    assert dominates_first_order(CostDistribution([1.0], [1.0]), CostDistribution([2.0], [1.0])).dominates
    report = dominates_first_order(SPREAD, TWO_ATOMS)
    assert not report.dominates
    assert np.isclose(report.slacks[list(report.thresholds).index(2.0)], -0.5)
    same = dominates_first_order(TWO_ATOMS, TWO_ATOMS)
    assert same.dominates and np.all(same.slacks == 0.0)


def test_second_order_examples():
    report = dominates_second_order(TWO_ATOMS, SPREAD)
    assert report.dominates
    assert not dominates_first_order(TWO_ATOMS, SPREAD).dominates
    report = dominates_second_order(SPREAD, TWO_ATOMS)
    assert not report.dominates
    assert np.isclose(report.slacks[0], -0.5)
    assert dominates_second_order(TWO_ATOMS, TWO_ATOMS).dominates


def test_first_order_tolerance_is_a_cost_shift():
    near = CostDistribution([1.0005, 2.0], [0.5, 0.5])
    assert not dominates_first_order(near, TWO_ATOMS).dominates
    assert not dominates_first_order(near, TWO_ATOMS, tol=1e-4).dominates
    report = dominates_first_order(near, TWO_ATOMS, tol=1e-3)
    assert report.dominates
    assert np.isclose(report.slacks[0], -0.5)


def test_first_order_implies_second_order():
    rng = np.random.default_rng(3)
    found = 0
    for n in range(1000):
        X, Y = dominated_pair(rng) if n % 2 else (random_distribution(rng), random_distribution(rng))
        if dominates_first_order(X, Y).dominates:
            found += 1
            assert dominates_second_order(X, Y, tol=1e-12).dominates
    assert found >= 500


def test_checks_at_benchmark_atoms_match_dense_grid():
    rng = np.random.default_rng(4)
    for _ in range(300):
        X, Y = random_distribution(rng), random_distribution(rng)
        grid = table_grid(X, Y)
        grid = np.concatenate([grid, [grid[0] - 1.0, grid[-1] + 1.0]])
        brute_first = np.all(cdf(X, grid) >= cdf(Y, grid))
        brute_second = np.all(integrated_survival(X, grid) <= integrated_survival(Y, grid) + 1e-12)
        assert dominates_first_order(X, Y).dominates == brute_first
        assert dominates_second_order(X, Y, tol=1e-12).dominates == brute_second


def test_disutility_characterization():
    rng = np.random.default_rng(5)
    checked_first = checked_second = 0
    while checked_first < 200 or checked_second < 200:
        X, Y = dominated_pair(rng) if rng.uniform() < 0.8 else (random_distribution(rng), random_distribution(rng))
        b = rng.uniform(-1, 11, 4)
        a = rng.uniform(0, 2, 4)
        w = rng.uniform(0, 3, 4)
        if dominates_first_order(X, Y).dominates and checked_first < 200:
            def step_like(t):
                return np.sum(a[:, None] * np.clip(t[None, :] - b[:, None], 0, w[:, None]), axis=0)
            assert expected_disutility(X, step_like) <= expected_disutility(Y, step_like) + 1e-12
            checked_first += 1
        if dominates_second_order(X, Y).dominates and checked_second < 200:
            def convex(t):
                return np.sum(a[:, None] * np.maximum(t[None, :] - b[:, None], 0), axis=0) + w[0] * t
            assert expected_disutility(X, convex) <= expected_disutility(Y, convex) + 1e-12
            checked_second += 1


def test_smoothed_heaviside_examples():
    assert smoothed_heaviside(0.0, 3.0)[0] == 0.5
    value, derivative = smoothed_heaviside(1.0, 1.0)
    assert np.isclose(value, 1 / (1 + np.exp(-2.0)))
    assert np.isclose(derivative, 2 * value * (1 - value))
    assert np.allclose(smoothed_heaviside(np.array([-1e3, 1e3]), 1.0)[0], [0.0, 1.0])
    previous = [1.0, 1.0]
    for gamma in (1.0, 10.0, 100.0):
        lo, hi = smoothed_heaviside(np.array([-0.1, 0.1]), gamma)[0]
        assert lo < previous[0] and 1 - hi < previous[1]
        previous = [lo, 1 - hi]


def test_smoothed_max_examples():
    assert smoothed_max(0.0, 1.0)[0] == 0.5
    assert np.isclose(smoothed_max(3.0, 1.0)[0], (np.sqrt(10) + 3) / 2)
    assert np.isclose(smoothed_max(3.0, 1e-14)[0], 3.0)
    x = np.linspace(-5, 5, 41)
    for gamma in (1.0, 1e-2, 1e-4):
        assert np.all(smoothed_max(x, gamma)[0] >= np.maximum(x, 0.0))


def test_smoothed_second_order_rows_converge():
    rng = np.random.default_rng(6)
    X, Y = random_distribution(rng, 5), random_distribution(rng, 5)
    eta = Y.values
    exact = integrated_survival(Y, eta) - integrated_survival(X, eta)
    errors = []
    for gamma in (1e-2, 1e-4, 1e-6):
        smoothing = SmoothingParams(gamma_m=gamma, gamma_m_min=gamma)
        rows_x, _ = smoothed_rows(X.values, X.probabilities, eta, DominanceOrder.SECOND, smoothing, 1.0)
        rows_y, _ = smoothed_rows(Y.values, Y.probabilities, eta, DominanceOrder.SECOND, smoothing, 1.0)
        assert np.all(rows_x <= -integrated_survival(X, eta))
        errors.append(np.max(np.abs(rows_x + integrated_survival(X, eta))))
        smoothed_c = rows_x - rows_y
    assert errors[0] > errors[1] > errors[2]
    assert np.max(np.abs(smoothed_c - exact)) < 1e-3


def test_single_scenario_sharp_first_order_row():
    smoothing = SmoothingParams(gamma_h=1e4)
    probs = np.array([1.0])
    eta = np.array([1.0])
    rows, _ = smoothed_rows(np.array([0.5]), probs, eta, DominanceOrder.FIRST, smoothing, 1.0)
    rhs, _ = smoothed_rows(eta, probs, eta, DominanceOrder.FIRST, smoothing, 1.0)
    assert np.isclose(rows[0] - rhs[0], 0.5)


def test_smoothing_schedule():
    smoothing = SmoothingParams()
    for _ in range(5):
        smoothing = smoothing.advance()
    assert smoothing.gamma_h == 4.0 ** 5
    assert smoothing.gamma_m == 1.95e-3


def test_order_parsing():
    assert DominanceOrder.parse('First') is DominanceOrder.FIRST
    assert DominanceOrder.parse(DominanceOrder.SECOND) is DominanceOrder.SECOND
    try:
        DominanceOrder.parse('third')
    except DominanceError:
        pass
    else:
        raise AssertionError("unknown order must fail")


# ----------------------------------------------------------------------
# Constraint rows on a finite element model
# ----------------------------------------------------------------------

def small_model(epsilon=0.1):
    mesh = QuadMesh.uniform(level=3, dirichlet=[BoundarySegment('left', 0.0, 1.0)],
                            neumann=[BoundarySegment('bottom', 0.25, 0.5), BoundarySegment('bottom', 0.5, 0.75)])
    scenarios = [Scenario(0, (SegmentLoad(0, (0.0, -1.0)),), 0.2),
                 Scenario(1, (SegmentLoad(1, (0.5, -1.0)),), 0.3),
                 Scenario(2, (SegmentLoad(1, (-0.5, -0.5)),), 0.5)]
    controller = DominanceController(ElasticityController(mesh), CostWeights(), epsilon)
    return mesh, scenarios, controller


def test_cost_distribution_of_unloaded_void():
    mesh, _, controller = small_model()
    zero = [Scenario(0, (SegmentLoad(0, (0.0, 0.0)),), 1.0)]
    dist = controller.evaluate_cost_distribution(NodalField.constant(mesh, -1.0), zero)
    assert dist.values.tolist() == [0.0] and dist.probabilities.tolist() == [1.0]
    twins = [Scenario(0, (SegmentLoad(0, (0.0, -1.0)),), 0.5), Scenario(1, (SegmentLoad(0, (0.0, -1.0)),), 0.5)]
    dist = controller.evaluate_cost_distribution(NodalField.constant(mesh, 0.5), twins)
    assert dist.values[0] == dist.values[1]


def test_constraints_vanish_at_benchmark():
    mesh, scenarios, controller = small_model()
    rng = np.random.default_rng(7)
    V_b = NodalField(mesh, rng.uniform(-0.5, 0.9, mesh.ndofs))
    benchmark = controller.build_benchmark(V_b, scenarios)
    for order in ('first', 'second'):
        c, grads, _ = controller.dominance_constraints(V_b, benchmark, order, SmoothingParams())
        assert c.shape == (3,) and grads.shape == (3, mesh.ndofs)
        assert np.all(c == 0.0)


def test_constraint_gradients_match_finite_differences():
    mesh, scenarios, controller = small_model()
    rng = np.random.default_rng(8)
    V_b = NodalField(mesh, rng.uniform(-0.5, 0.9, mesh.ndofs))
    benchmark = controller.build_benchmark(V_b, scenarios)
    x = V_b.values + rng.uniform(-0.1, 0.1, mesh.ndofs)
    sample = rng.choice(mesh.ndofs, size=8, replace=False)
    smoothing = SmoothingParams(gamma_m=benchmark.cost_scale ** 2)
    for order in ('first', 'second'):
        def rows(z):
            c, grads, _ = controller.dominance_constraints(NodalField(mesh, z), benchmark, order, smoothing)
            return c, grads
        assert finite_difference_check(rows, x, sample, step=1e-6) < 1e-4, order


def test_stale_benchmark_and_missing_order_rejected():
    mesh, scenarios, controller = small_model()
    V_b = NodalField.constant(mesh, 0.5)
    benchmark = controller.build_benchmark(V_b, scenarios)
    _, _, other = small_model(epsilon=0.05)
    for call in (lambda: other.dominance_constraints(V_b, benchmark, 'first', SmoothingParams()),
                 lambda: controller.dominance_constraints(V_b, benchmark, None, SmoothingParams())):
        try:
            call()
        except DominanceError:
            continue
        raise AssertionError("stale benchmark or missing order must fail")


def test_states_are_reused_for_one_phase_field():
    mesh, scenarios, controller = small_model()
    V = NodalField.constant(mesh, 0.5)
    states = controller.evaluate_states(V, scenarios)
    benchmark = controller.build_benchmark(V, scenarios)
    controller.dominance_constraints(NodalField(mesh, V.values.copy()), benchmark, 'second', SmoothingParams())
    controller.expected_cost(V, scenarios)
    assert controller.solves == 1
    assert [s.J for s in controller.evaluate_states(V, scenarios)] == [s.J for s in states]

    controller.evaluate_states(V, scenarios[:2])
    assert controller.solves == 2
    for value in (0.1, 0.2, 0.3, 0.4):
        controller.evaluate_states(NodalField.constant(mesh, value), scenarios)
    controller.evaluate_states(V, scenarios)
    assert controller.solves == 7


def test_constraints_reject_unconverged_states():
    mesh, scenarios, controller = small_model()
    V = NodalField.constant(mesh, 0.5)
    benchmark = controller.build_benchmark(V, scenarios)
    states = controller.evaluate_states(V, scenarios)
    bad = [dataclasses.replace(states[0], residual=1.0)] + list(states[1:])
    try:
        controller.dominance_constraints(V, benchmark, 'first', SmoothingParams(), states=bad)
    except ScenarioSolveError as e:
        assert e.scenario_id == 0
    else:
        raise AssertionError("a state with a large residual must be rejected")


TESTS = [
    test_cdf_examples,
    test_cdf_is_nondecreasing_and_right_continuous,
    test_integrated_survival_examples,
    test_risk_measures_examples,
    test_isf_equals_expected_excess,
    test_distribution_validation,
    test_first_order_examples,
    test_second_order_examples,
    test_first_order_tolerance_is_a_cost_shift,
    test_first_order_implies_second_order,
    test_checks_at_benchmark_atoms_match_dense_grid,
    test_disutility_characterization,
    test_smoothed_heaviside_examples,
    test_smoothed_max_examples,
    test_smoothed_second_order_rows_converge,
    test_single_scenario_sharp_first_order_row,
    test_smoothing_schedule,
    test_order_parsing,
    test_cost_distribution_of_unloaded_void,
    test_constraints_vanish_at_benchmark,
    test_constraint_gradients_match_finite_differences,
    test_stale_benchmark_and_missing_order_rejected,
    test_states_are_reused_for_one_phase_field,
    test_constraints_reject_unconverged_states,
]


def main():
    """Run the stochastic tests."""
    failed = 0
    for test in TESTS:
        try:
            test()
            logger.info(f"{test.__name__}: ok")
        except Exception as e:
            failed += 1
            logger.error(f"{test.__name__}: FAILED ({e!r})", exc_info=True)
    logger.info(f"{len(TESTS) - failed}/{len(TESTS)} stochastic tests passed")
    return 1 if failed else 0


if __name__ == "__main__":
    exit(main())
