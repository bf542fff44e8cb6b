"""
Discrete cost distributions and stochastic dominance constraints.
"""

from modules.stochastic.distribution import (CostDistribution, DistributionError, DominanceReport, RiskMeasures,
                                             SmoothingParams, cdf, dominates_first_order, dominates_second_order,
                                             expected_disutility, integrated_survival, risk_measures,
                                             smoothed_heaviside, smoothed_max, table_grid)
from modules.stochastic.dominance_controller import (Benchmark, DominanceController, DominanceError,
                                                     DominanceOrder, Scenario, ScenarioSolveError)

__all__ = ['Benchmark', 'CostDistribution', 'DistributionError', 'DominanceController', 'DominanceError',
           'DominanceOrder', 'DominanceReport', 'RiskMeasures', 'Scenario', 'ScenarioSolveError',
           'SmoothingParams', 'cdf', 'dominates_first_order', 'dominates_second_order', 'expected_disutility',
           'integrated_survival', 'risk_measures', 'smoothed_heaviside', 'smoothed_max', 'table_grid']
