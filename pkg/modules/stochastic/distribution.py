"""
Discrete cost distributions: CDF, integrated survival function, risk
measures, exact dominance predicates and the smoothed step and max functions
used by the differentiable constraint rows.
"""

import logging
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.special import expit

logger = logging.getLogger("Distribution")

PROBABILITY_TOL = 1e-12


class DistributionError(Exception):
    """Invalid probabilities or cost values."""


class CostDistribution:
    """Finitely many cost atoms J_k with probabilities pi_k."""

    def __init__(self, values, probabilities):
        self.values = np.asarray(values, dtype=float).ravel()
        self.probabilities = np.asarray(probabilities, dtype=float).ravel()
        if self.values.shape != self.probabilities.shape:
            raise DistributionError(f"{len(self.values)} values but {len(self.probabilities)} probabilities")
        if self.values.size == 0:
            raise DistributionError("A distribution needs at least one atom")
        if not np.all(np.isfinite(self.values)):
            raise DistributionError("Cost values must be finite")
        if np.any(self.probabilities < 0) or np.any(self.probabilities > 1):
            raise DistributionError("Probabilities must lie in [0, 1]")
        total = self.probabilities.sum()
        if abs(total - 1.0) > PROBABILITY_TOL:
            raise DistributionError(f"probabilities sum to {total:.12g}")

    def __len__(self):
        return len(self.values)

    @property
    def mean(self):
        return float(self.probabilities @ self.values)

    @property
    def spread(self):
        return float(self.values.max() - self.values.min())

    def __repr__(self):
        return f"CostDistribution(K={len(self)}, mean={self.mean:.6g}, range=[{self.values.min():.6g}, {self.values.max():.6g}])"


@dataclass
class RiskMeasures:
    mean: float
    excess_probability: float
    expected_excess: float


@dataclass
class DominanceReport:
    """Outcome of an exact dominance check at the benchmark atoms."""
    order: str
    dominates: bool
    thresholds: np.ndarray
    slacks: np.ndarray

    @property
    def min_slack(self):
        return float(self.slacks.min()) if self.slacks.size else 0.0


def cdf(dist: CostDistribution, t):
    """P[X <= t]; vectorized over t."""
    t = np.asarray(t, dtype=float)
    result = (dist.values[None, :] <= t.reshape(-1, 1)) @ dist.probabilities
    return result.reshape(t.shape) if t.ndim else float(result[0])


def integrated_survival(dist: CostDistribution, t):
    """E max(X - t, 0); vectorized over t."""
    t = np.asarray(t, dtype=float)
    result = np.maximum(dist.values[None, :] - t.reshape(-1, 1), 0.0) @ dist.probabilities
    return result.reshape(t.shape) if t.ndim else float(result[0])


def risk_measures(dist: CostDistribution, eta_threshold: float) -> RiskMeasures:
    """Mean, probability of exceeding the target (strictly) and expected excess over it."""
    excess_probability = float(dist.probabilities[dist.values > eta_threshold].sum())
    return RiskMeasures(dist.mean, excess_probability, integrated_survival(dist, eta_threshold))


def expected_disutility(dist: CostDistribution, h: Callable) -> float:
    return float(dist.probabilities @ np.asarray(h(dist.values), dtype=float))


def benchmark_thresholds(Y: CostDistribution):
    return np.unique(Y.values)


def dominates_first_order(X: CostDistribution, Y: CostDistribution, tol: float = 0.0) -> DominanceReport:
    """F_X >= F_Y at every atom of Y.

    tol is a cost shift: an atom of X within tol above a threshold counts as below it.
    """
    eta = benchmark_thresholds(Y)
    slacks = cdf(X, eta) - cdf(Y, eta)
    shifted = cdf(X, eta + tol) - cdf(Y, eta)
    return DominanceReport('first', bool(np.all(shifted >= 0.0)), eta, slacks)


def dominates_second_order(X: CostDistribution, Y: CostDistribution, tol: float = 0.0) -> DominanceReport:
    """Integrated survival of X below that of Y at every atom of Y, to within tol in cost units."""
    eta = benchmark_thresholds(Y)
    slacks = integrated_survival(Y, eta) - integrated_survival(X, eta)
    return DominanceReport('second', bool(np.all(slacks >= -tol)), eta, slacks)


def table_grid(*dists: CostDistribution):
    """Merged sorted atoms of all distributions plus the midpoints between them."""
    atoms = np.unique(np.concatenate([d.values for d in dists]))
    if atoms.size < 2:
        return atoms
    grid = np.empty(2 * atoms.size - 1)
    grid[0::2] = atoms
    grid[1::2] = 0.5 * (atoms[:-1] + atoms[1:])
    return grid


def smoothed_heaviside(x, gamma_h):
    """H(x) = 1 / (1 + exp(-2 gamma x)) and its derivative."""
    if gamma_h <= 0:
        raise ValueError(f"gamma_h must be positive, got {gamma_h}")
    value = expit(2.0 * gamma_h * np.asarray(x, dtype=float))
    return value, 2.0 * gamma_h * value * (1.0 - value)


def smoothed_max(x, gamma_m):
    """max_gamma(x, 0) = (sqrt(x^2 + gamma) + x) / 2 and its derivative."""
    if gamma_m <= 0:
        raise ValueError(f"gamma_m must be positive, got {gamma_m}")
    x = np.asarray(x, dtype=float)
    root = np.sqrt(x * x + gamma_m)
    return 0.5 * (root + x), 0.5 * (x / root + 1.0)


@dataclass
class SmoothingParams:
    """Heaviside sharpness and max smoothing together with their per-stage schedules.

    gamma_h acts on cost differences divided by a cost scale; gamma_m acts on raw
    cost differences. cost_scale=None takes the scale from the benchmark.
    """
    gamma_h: float = 1.0
    gamma_h_factor: float = 4.0
    gamma_m: float = 1.0
    gamma_m_factor: float = 0.25
    gamma_m_min: float = 1.95e-3
    cost_scale: float = None

    def __post_init__(self):
        if self.gamma_h <= 0 or self.gamma_m <= 0 or self.gamma_m_min <= 0:
            raise ValueError("Smoothing parameters must be positive")
        if self.gamma_h_factor < 1 or not 0 < self.gamma_m_factor <= 1:
            raise ValueError("Smoothing schedules must sharpen: gamma_h_factor >= 1, gamma_m_factor in (0, 1]")
        if self.cost_scale is not None and self.cost_scale <= 0:
            raise ValueError(f"cost_scale must be positive, got {self.cost_scale}")

    def advance(self):
        return replace(self, gamma_h=self.gamma_h * self.gamma_h_factor,
                       gamma_m=max(self.gamma_m * self.gamma_m_factor, self.gamma_m_min))
