"""
Shape Dominance - phase-field elastic shape optimization under stochastic
surface loads with stochastic dominance constraints.
"""

__version__ = '0.1.0'
