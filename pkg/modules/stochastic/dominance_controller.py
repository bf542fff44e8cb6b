"""
Scenario costs, the benchmark record and the smoothed dominance constraint
rows with their gradients.
"""

import logging
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Sequence, Tuple

import numpy as np

from modules.elasticity.elasticity_controller import ElasticityController, EquilibriumState, SegmentLoad
from modules.elasticity.linear_solver import ElasticityError
from modules.functionals.phase_field import CostWeights
from modules.mesh.quadtree_mesh import NodalField, prolongate
from modules.stochastic.distribution import (CostDistribution, DominanceReport, SmoothingParams,
                                             dominates_first_order, dominates_second_order, smoothed_heaviside,
                                             smoothed_max)

logger = logging.getLogger("Dominance")


class DominanceError(Exception):
    """Unknown dominance order or a benchmark that does not match the current discretization."""


class ScenarioSolveError(Exception):
    """An equilibrium solve failed for one scenario."""

    def __init__(self, scenario_id, cause):
        super().__init__(f"Scenario {scenario_id}: {cause}")
        self.scenario_id = scenario_id
        self.cause = cause


class DominanceOrder(Enum):
    FIRST = 'first'
    SECOND = 'second'

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise DominanceError(f"Unknown dominance order: {value!r} (expected 'first' or 'second')")


@dataclass(frozen=True)
class Scenario:
    id: int
    loads: Tuple[SegmentLoad, ...]
    probability: float


@dataclass
class Benchmark:
    """Benchmark phase field and its cost distribution on one discretization."""
    phase_field: NodalField
    scenarios: Sequence[Scenario]
    distribution: CostDistribution
    mesh_fingerprint: int
    epsilon: float
    states: List[EquilibriumState] = field(default_factory=list, repr=False)

    @property
    def thresholds(self):
        return self.distribution.values

    @property
    def cost_scale(self):
        """Spread of the benchmark atoms, or their mean magnitude when all coincide."""
        spread = self.distribution.spread
        if spread > 0:
            return spread
        magnitude = float(np.mean(np.abs(self.distribution.values)))
        return magnitude if magnitude > 0 else 1.0

    def right_hand_sides(self, order, smoothing: SmoothingParams):
        """Smoothed benchmark side of every constraint row."""
        order = DominanceOrder.parse(order)
        scale = smoothing.cost_scale or self.cost_scale
        rows, _ = smoothed_rows(self.distribution.values, self.distribution.probabilities,
                                self.thresholds, order, smoothing, scale)
        return rows

    def exact_report(self, X: CostDistribution, order, tol=0.0) -> DominanceReport:
        order = DominanceOrder.parse(order)
        check = dominates_first_order if order is DominanceOrder.FIRST else dominates_second_order
        return check(X, self.distribution, tol)


def smoothed_rows(values, probabilities, thresholds, order: DominanceOrder, smoothing: SmoothingParams, scale):
    """Row functions R_j(J) with c_j = R_j(J[V]) - R_j(J[V_b]) and their derivatives dR_j/dJ_k.

    First order: R_j = sum_k pi_k H((eta_j - J_k) / scale).
    Second order: R_j = -sum_k pi_k max_gamma(J_k - eta_j).
    """
    diff = thresholds[:, None] - values[None, :]
    if order is DominanceOrder.FIRST:
        h, dh = smoothed_heaviside(diff / scale, smoothing.gamma_h)
        return h @ probabilities, -dh * probabilities[None, :] / scale
    m, dm = smoothed_max(-diff, smoothing.gamma_m)
    return -(m @ probabilities), -dm * probabilities[None, :]


class DominanceController:
    """Scenario costs and dominance constraints for one mesh and interface width."""

    def __init__(self, elasticity: ElasticityController, weights: CostWeights, epsilon: float,
                 cache_size: int = 4):
        self.elasticity = elasticity
        self.mesh = elasticity.mesh
        self.weights = weights
        self.epsilon = epsilon
        self.cache_size = cache_size
        # (phase field bytes, scenario ids) -> states
        self._states = OrderedDict()
        self.solves = 0

    def evaluate_states(self, V: NodalField, scenarios: Sequence[Scenario]) -> List[EquilibriumState]:
        """One equilibrium per scenario, in scenario order.

        The last few phase fields are remembered, so the objective, constraint and
        bookkeeping evaluations at one iterate share a single set of solves.
        """
        key = (np.ascontiguousarray(V.values).tobytes(), tuple(s.id for s in scenarios))
        cached = self._states.get(key)
        if cached is not None:
            self._states.move_to_end(key)
            return list(cached)
        states = self._solve_states(V, scenarios)
        self._states[key] = tuple(states)
        while len(self._states) > self.cache_size:
            self._states.popitem(last=False)
        return states

    def _solve_states(self, V: NodalField, scenarios: Sequence[Scenario]) -> List[EquilibriumState]:
        self.solves += 1
        load_cases = [s.loads for s in scenarios]
        ids = [s.id for s in scenarios]
        try:
            states = self.elasticity.solve_load_cases(V, load_cases, self.weights, self.epsilon, ids)
        except ElasticityError as exc:
            # solve one by one to name the failing scenario
            for scenario in scenarios:
                try:
                    self.elasticity.solve_load_cases(V, [scenario.loads], self.weights, self.epsilon, [scenario.id])
                except ElasticityError as single:
                    raise ScenarioSolveError(scenario.id, single) from single
            raise ScenarioSolveError(ids[0], exc) from exc
        self.check_states(states)
        return states

    def check_states(self, states: Sequence[EquilibriumState]):
        """Reject states whose cost is not finite or whose residual exceeds the solver tolerance."""
        rtol = self.elasticity.config.rtol
        for state in states:
            if not np.isfinite(state.J) or not state.residual <= rtol:
                raise ScenarioSolveError(state.scenario_id,
                                         f"equilibrium residual {state.residual:.3e} above {rtol:.1e}")

    def evaluate_cost_distribution(self, V: NodalField, scenarios: Sequence[Scenario]) -> CostDistribution:
        states = self.evaluate_states(V, scenarios)
        return CostDistribution([s.J for s in states], [s.probability for s in scenarios])

    def build_benchmark(self, V_b: NodalField, scenarios: Sequence[Scenario]) -> Benchmark:
        states = self.evaluate_states(V_b, scenarios)
        dist = CostDistribution([s.J for s in states], [s.probability for s in scenarios])
        logger.info(f"Benchmark on {self.mesh.ncells} cells (eps={self.epsilon:.4g}): {dist}")
        return Benchmark(V_b, list(scenarios), dist, self.mesh.fingerprint, self.epsilon, states)

    def refresh_benchmark(self, benchmark: Benchmark) -> Benchmark:
        """Carry the benchmark phase field to this mesh and recompute its distribution."""
        V_b = benchmark.phase_field
        if V_b.mesh.fingerprint != self.mesh.fingerprint:
            V_b = prolongate(V_b, V_b.mesh, self.mesh)
        return self.build_benchmark(V_b, benchmark.scenarios)

    def check_benchmark(self, benchmark: Benchmark):
        if benchmark.mesh_fingerprint != self.mesh.fingerprint or benchmark.epsilon != self.epsilon:
            raise DominanceError("Benchmark is stale: it was computed on another mesh or interface width")

    def cost_gradients(self, V: NodalField, states: Sequence[EquilibriumState]):
        """Gradient of every scenario cost, shape (K, ndofs)."""
        elasticity = self.elasticity

        def gradient(state):
            return elasticity.cost_gradient(V, state, self.weights, self.epsilon).values

        with ThreadPoolExecutor(max_workers=elasticity.config.max_workers) as pool:
            return np.array(list(pool.map(gradient, states)))

    def dominance_constraints(self, V: NodalField, benchmark: Benchmark, order, smoothing: SmoothingParams,
                              scenarios: Sequence[Scenario] = None, states: Sequence[EquilibriumState] = None):
        """Smoothed constraint rows c_j(V) >= 0, one per benchmark atom, and their gradients.

        Returns:
            (values of shape (K,), gradients of shape (K, ndofs), states of V).
        """
        if order is None:
            raise DominanceError("Dominance order must be given")
        order = DominanceOrder.parse(order)
        self.check_benchmark(benchmark)
        scenarios = scenarios if scenarios is not None else benchmark.scenarios
        if states is None:
            states = self.evaluate_states(V, scenarios)
        else:
            self.check_states(states)

        values = np.array([s.J for s in states])
        probabilities = np.array([s.probability for s in scenarios])
        scale = smoothing.cost_scale or benchmark.cost_scale
        rows, dJ = smoothed_rows(values, probabilities, benchmark.thresholds, order, smoothing, scale)
        c = rows - benchmark.right_hand_sides(order, smoothing)

        elastic = np.array([self.elasticity.elastic_gradient(V, s.U) for s in states])
        _, shape_grad = self.elasticity.shape_terms(V, self.weights, self.epsilon)
        gradients = dJ @ elastic + dJ.sum(axis=1)[:, None] * shape_grad[None, :]
        return c, gradients, states

    def expected_cost(self, V: NodalField, scenarios: Sequence[Scenario], states=None):
        """Expected cost sum_k pi_k J_k and its gradient."""
        if states is None:
            states = self.evaluate_states(V, scenarios)
        probabilities = np.array([s.probability for s in scenarios])
        value = float(probabilities @ np.array([s.J for s in states]))
        return value, probabilities @ self.cost_gradients(V, states), states
