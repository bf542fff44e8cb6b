"""
Outer continuation loop: solve the dominance-constrained shape problem on the
current mesh, refine around the interface, shrink the interface width and
sharpen the constraint smoothing, then restart on the finer mesh.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from modules.elasticity.elasticity_controller import (BoundaryConditions, ElasticityConfig, ElasticityController,
                                                      MaterialParams)
from modules.functionals.phase_field import CostWeights, PhaseFieldParams, perimeter_energy, volume
from modules.mesh.quadtree_mesh import NodalField, QuadMesh, mark_interface_cells, prolongate, refine_cells
from modules.optimize.nlp_solver import NlpProblem, NlpSolverConfig, solve_constrained
from modules.stochastic.distribution import SmoothingParams
from modules.stochastic.dominance_controller import Benchmark, DominanceController, DominanceOrder, Scenario

logger = logging.getLogger("Continuation")

# Relative tolerance when comparing epsilon against its floor
_EPS_RTOL = 1e-12


@dataclass
class ContinuationConfig:
    stage_tol: float = 1e-3
    final_tol: float = 1e-5
    max_stages: int = 20
    max_refinements: Optional[int] = None
    marking_threshold: float = 1.0
    cells_per_epsilon: float = 1.0
    bounds: bool = False
    bound_value: float = 1.2
    perimeter_weight: Optional[float] = None
    nlp: NlpSolverConfig = field(default_factory=NlpSolverConfig)


@dataclass
class StageRecord:
    stage: int
    epsilon: float
    gamma_h: float
    gamma_m: float
    ncells: int
    objective: float
    kkt: float
    min_slack: float
    start_slack: float
    converged: bool
    volume: float
    seconds: float = 0.0

    def log_line(self):
        return (f"{self.stage} {self.epsilon:.6g} {self.gamma_h:.6g} {self.gamma_m:.6g} {self.ncells} "
                f"{self.objective:.8e} {self.kkt:.3e} {self.min_slack:.3e}")


@dataclass
class ContinuationState:
    stage: int
    mesh: QuadMesh
    epsilon: float
    smoothing: SmoothingParams
    V: NodalField
    benchmark: Optional[Benchmark]
    multipliers: np.ndarray
    history: List[StageRecord] = field(default_factory=list)
    converged: bool = False
    partial: bool = False
    message: str = ''
    dominance: Optional[DominanceController] = None

    @property
    def flagged(self):
        return self.partial or not self.converged


class ContinuationController:
    """Runs the stage loop for one experiment."""

    def __init__(self, bc: BoundaryConditions, material: MaterialParams = None, weights: CostWeights = None,
                 phase: PhaseFieldParams = None, smoothing: SmoothingParams = None,
                 elasticity_config: ElasticityConfig = None, config: ContinuationConfig = None, order=None):
        self.bc = bc
        self.material = material or MaterialParams()
        self.weights = weights or CostWeights()
        self.phase = phase or PhaseFieldParams()
        self.smoothing = smoothing or SmoothingParams()
        self.elasticity_config = elasticity_config or ElasticityConfig()
        self.config = config or ContinuationConfig()
        self.order = DominanceOrder.parse(order) if order is not None else None

    def controllers(self, mesh: QuadMesh, epsilon: float):
        elasticity = ElasticityController(mesh, self.material, self.bc, self.elasticity_config)
        return elasticity, DominanceController(elasticity, self.weights, epsilon)

    def objective_value(self, mesh: QuadMesh, V: NodalField, epsilon: float):
        """G(V) = Vol(V) + eps_G * L(V) and its gradient."""
        weight = self.config.perimeter_weight if self.config.perimeter_weight is not None else epsilon
        vol, dvol = volume(mesh, V)
        per, dper = perimeter_energy(mesh, V, epsilon)
        return vol + weight * per, dvol.values + weight * dper.values

    def build_problem(self, dominance: DominanceController, benchmark: Optional[Benchmark],
                      smoothing: SmoothingParams, epsilon: float) -> NlpProblem:
        """NLP for one stage, scaled by the number of free nodes per unit area."""
        mesh = dominance.mesh
        pinned = dominance.elasticity.pinned
        scale = max(mesh.ndofs - len(pinned), 1) / mesh.area

        def objective(x):
            value, grad = self.objective_value(mesh, NodalField(mesh, x), epsilon)
            return scale * value, scale * grad

        constrained = self.order is not None and benchmark is not None
        n_constraints = len(benchmark.thresholds) if constrained else 0

        last = {}

        def constraints(x):
            key = np.asarray(x, dtype=float).tobytes()
            if last.get('key') != key:
                c, grads, _ = dominance.dominance_constraints(NodalField(mesh, x.copy()), benchmark, self.order,
                                                              smoothing)
                last.update(key=key, value=(scale * c, scale * grads))
            return last['value']

        lower = upper = None
        if self.config.bounds:
            lower, upper = -self.config.bound_value, self.config.bound_value
        return NlpProblem(mesh.ndofs, objective, constraints if constrained else None, n_constraints,
                          pinned, 1.0, lower, upper)

    def _at_floor(self, epsilon):
        return epsilon <= self.phase.epsilon_min * (1.0 + _EPS_RTOL)

    def run(self, mesh: QuadMesh, benchmark_field: Optional[NodalField], scenarios: Sequence[Scenario],
            V0: NodalField = None, stage_callback: Callable = None) -> ContinuationState:
        """Continuation from V0 (default: the benchmark phase field) until the stage at epsilon_min."""
        if V0 is None:
            if benchmark_field is None:
                raise ValueError("Need an initial phase field or a benchmark phase field")
            V0 = benchmark_field
        if V0.mesh.fingerprint != mesh.fingerprint:
            V0 = prolongate(V0, V0.mesh, mesh)

        epsilon = self.phase.epsilon
        smoothing = self.smoothing
        V = V0
        benchmark = None
        multipliers = None
        refinements = 0
        state = None

        for stage in range(self.config.max_stages):
            start = time.time()
            elasticity, dominance = self.controllers(mesh, epsilon)
            if self.order is not None and benchmark_field is not None:
                if benchmark is None:
                    bench_V = benchmark_field
                    if bench_V.mesh.fingerprint != mesh.fingerprint:
                        bench_V = prolongate(bench_V, bench_V.mesh, mesh)
                    benchmark = dominance.build_benchmark(bench_V, scenarios)
                else:
                    benchmark = dominance.refresh_benchmark(benchmark)

            final = self._at_floor(epsilon)
            tol = self.config.final_tol if final else self.config.stage_tol
            problem = self.build_problem(dominance, benchmark, smoothing, epsilon)
            # pinned values are part of the feasible set
            x0 = V.values.copy()
            x0[problem.pinned] = 1.0

            start_slack = float('nan')
            if problem.n_constraints:
                c0, _, _ = dominance.dominance_constraints(NodalField(mesh, x0), benchmark, self.order, smoothing)
                start_slack = float(c0.min())
                if multipliers is None or len(multipliers) != problem.n_constraints:
                    multipliers = np.zeros(problem.n_constraints)

            logger.info(f"Stage {stage}: eps={epsilon:.6g}, gamma_h={smoothing.gamma_h:.4g}, "
                        f"gamma_m={smoothing.gamma_m:.4g}, {mesh.ncells} cells, tol={tol:.1e}, "
                        f"start slack={start_slack:.3e}")
            result = solve_constrained(problem, x0, tol, self.config.nlp, multipliers)
            V = NodalField(mesh, result.x)
            multipliers = result.multipliers

            objective, _ = self.objective_value(mesh, V, epsilon)
            vol, _ = volume(mesh, V)
            min_slack = float('nan')
            if problem.n_constraints:
                c, _, _ = dominance.dominance_constraints(V, benchmark, self.order, smoothing)
                min_slack = float(c.min())
            record = StageRecord(stage, epsilon, smoothing.gamma_h, smoothing.gamma_m, mesh.ncells, objective,
                                 result.kkt_error, min_slack, start_slack, result.converged, vol,
                                 time.time() - start)
            logger.info(f"stage {record.log_line()}")

            history = state.history if state is not None else []
            history.append(record)
            state = ContinuationState(stage, mesh, epsilon, smoothing, V, benchmark, multipliers, history,
                                      result.converged, False, result.message, dominance)
            if stage_callback is not None:
                stage_callback(state, record)

            if final:
                state.message = 'finished at epsilon_min' if result.converged else result.message
                return state

            can_refine = self.config.max_refinements is None or refinements < self.config.max_refinements
            if can_refine:
                # the band stops at cells already resolving the next interface width
                min_size = self.phase.next_epsilon(epsilon) / self.config.cells_per_epsilon
                marks = mark_interface_cells(mesh, V, self.config.marking_threshold, min_size=min_size)
                capped = {c for c in marks if c[0] >= mesh.max_level}
                if marks and capped == marks:
                    state.partial = True
                    state.message = f"maximum level {mesh.max_level} reached before epsilon_min"
                    logger.warning(f"Stopping: {state.message} (eps={epsilon:.6g})")
                    return state
                if capped:
                    logger.warning(f"Dropped {len(capped)} marks at the maximum level {mesh.max_level}")
                new_mesh = refine_cells(mesh, marks - capped)
                if new_mesh is not mesh:
                    refinements += 1
                    logger.info(f"Refinement {refinements}: {mesh.ncells} -> {new_mesh.ncells} cells")
                    V = prolongate(V, mesh, new_mesh)
                    mesh = new_mesh
            else:
                logger.info(f"Refinement budget of {self.config.max_refinements} used; keeping the mesh")

            epsilon = self.phase.next_epsilon(epsilon)
            smoothing = smoothing.advance()

        state.partial = True
        state.message = f"stage limit {self.config.max_stages} reached before epsilon_min"
        logger.warning(state.message)
        return state
