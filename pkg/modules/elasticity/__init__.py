"""
Phase-field weighted linearized elasticity.
"""

from modules.elasticity.elasticity_controller import (BoundaryConditions, ElasticityConfig, ElasticityController,
                                                      EquilibriumError, EquilibriumState, LinearSystem,
                                                      MaterialParams, SegmentLoad, SingularSystemError)
from modules.elasticity.linear_solver import ElasticityError, SolverConvergenceError, SparseSolver

__all__ = ['BoundaryConditions', 'ElasticityConfig', 'ElasticityController', 'ElasticityError',
           'EquilibriumError', 'EquilibriumState', 'LinearSystem', 'MaterialParams', 'SegmentLoad',
           'SingularSystemError', 'SolverConvergenceError', 'SparseSolver']
