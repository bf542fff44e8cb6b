"""
Constrained NLP solver and the continuation driver.
"""

from modules.optimize.continuation_controller import (ContinuationConfig, ContinuationController,
                                                      ContinuationState, StageRecord)
from modules.optimize.nlp_solver import (NlpProblem, NlpResult, NlpSolverConfig, OptimizationError,
                                         finite_difference_check, kkt_error, solve_constrained)

__all__ = ['ContinuationConfig', 'ContinuationController', 'ContinuationState', 'NlpProblem', 'NlpResult',
           'NlpSolverConfig', 'OptimizationError', 'StageRecord', 'finite_difference_check', 'kkt_error',
           'solve_constrained']
