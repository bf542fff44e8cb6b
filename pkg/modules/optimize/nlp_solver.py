"""
Augmented Lagrangian solver for smooth problems

    min f(x)  subject to  c(x) >= 0,  x[pinned] = fixed values,  lower <= x <= upper,

with the inequality slacks eliminated in closed form and L-BFGS-B inner solves.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize

logger = logging.getLogger("NlpSolver")


class OptimizationError(Exception):
    """Inconsistent problem definition or callback output."""


@dataclass
class NlpProblem:
    """Objective and constraint callbacks on the full variable vector.

    objective(x) returns (f, grad); constraints(x) returns (c, jacobian) with
    jacobian of shape (n_constraints, n).
    """
    n: int
    objective: Callable
    constraints: Optional[Callable] = None
    n_constraints: int = 0
    pinned: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    pinned_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        self.pinned = np.asarray(self.pinned, dtype=np.int64)
        self.pinned_values = np.broadcast_to(np.asarray(self.pinned_values, dtype=float), self.pinned.shape).copy()
        if self.n_constraints and self.constraints is None:
            raise OptimizationError("n_constraints > 0 but no constraint callback")
        self.free = np.setdiff1d(np.arange(self.n), self.pinned)

    def evaluate_constraints(self, x):
        if not self.n_constraints:
            return np.zeros(0), np.zeros((0, self.n))
        c, jac = self.constraints(x)
        c = np.asarray(c, dtype=float)
        jac = np.asarray(jac, dtype=float)
        if c.shape != (self.n_constraints,) or jac.shape != (self.n_constraints, self.n):
            raise OptimizationError(f"Constraint callback returned shapes {c.shape}, {jac.shape}; "
                                    f"expected ({self.n_constraints},), ({self.n_constraints}, {self.n})")
        return c, jac

    def bounds(self):
        if self.lower is None and self.upper is None:
            return None
        lower = np.full(self.n, -np.inf) if self.lower is None else np.broadcast_to(self.lower, (self.n,))
        upper = np.full(self.n, np.inf) if self.upper is None else np.broadcast_to(self.upper, (self.n,))
        return [(lo if np.isfinite(lo) else None, up if np.isfinite(up) else None)
                for lo, up in zip(lower[self.free], upper[self.free])]


@dataclass
class NlpSolverConfig:
    max_outer_iterations: int = 30
    max_inner_iterations: int = 500
    rho_initial: float = 10.0
    rho_factor: float = 10.0
    rho_max: float = 1e8
    multiplier_max: float = 1e6
    memory: int = 20
    check_gradients: bool = False


@dataclass
class NlpResult:
    x: np.ndarray
    multipliers: np.ndarray
    kkt_error: float
    converged: bool
    iterations: int
    objective: float
    message: str = ''


def kkt_error(x, multipliers, problem: NlpProblem):
    """Scaled KKT error max(dual / s_d, primal, complementarity / s_d).

    s_d = max(100, |lambda|_1 / (m + n_free)) / 100 keeps large multipliers from
    dominating. With bounds the dual residual is projected on the active bounds.
    """
    x = np.asarray(x, dtype=float)
    lam = np.asarray(multipliers, dtype=float)
    _, g = problem.objective(x)
    c, jac = problem.evaluate_constraints(x)
    r = (np.asarray(g, dtype=float) - jac.T @ lam)[problem.free]

    if problem.lower is not None:
        at_lower = x[problem.free] <= np.broadcast_to(problem.lower, (problem.n,))[problem.free] + 1e-12
        r = np.where(at_lower, np.minimum(r, 0.0), r)
    if problem.upper is not None:
        at_upper = x[problem.free] >= np.broadcast_to(problem.upper, (problem.n,))[problem.free] - 1e-12
        r = np.where(at_upper, np.maximum(r, 0.0), r)

    dual = float(np.max(np.abs(r))) if r.size else 0.0
    primal = float(np.max(np.maximum(-c, 0.0))) if c.size else 0.0
    complementarity = float(np.max(np.abs(lam * c))) if c.size else 0.0
    s_d = max(100.0, np.sum(np.abs(lam)) / max(1, len(c) + len(problem.free))) / 100.0
    return max(dual / s_d, primal, complementarity / s_d)


def finite_difference_check(callback, x, indices, step=1e-6):
    """Largest relative deviation between analytic and central-difference derivatives.

    callback(x) returns (value, gradient) for a scalar function, or
    (values, jacobian) for a vector of functions.
    """
    x = np.asarray(x, dtype=float)
    _, analytic = callback(x)
    analytic = np.atleast_2d(np.asarray(analytic, dtype=float))[:, indices]
    fd = np.empty_like(analytic)
    for col, i in enumerate(indices):
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        fp, _ = callback(xp)
        fm, _ = callback(xm)
        fd[:, col] = (np.atleast_1d(fp) - np.atleast_1d(fm)) / (2 * step)
    scale = max(np.max(np.abs(analytic)), 1e-300)
    return float(np.max(np.abs(fd - analytic)) / scale)


def _augmented_terms(c, lam, rho):
    """Penalty value and its derivative in c after eliminating the slacks."""
    active = lam - rho * c > 0
    value = np.where(active, -lam * c + 0.5 * rho * c * c, -0.5 * lam * lam / rho)
    dvalue = np.where(active, -lam + rho * c, 0.0)
    return float(np.sum(value)), dvalue


def solve_constrained(problem: NlpProblem, x0, tol=1e-5, config: NlpSolverConfig = None,
                      multipliers0=None, stop: Optional[Callable] = None) -> NlpResult:
    """Minimize to a KKT error below tol, or return the best iterate flagged as not converged.

    Iterates that satisfy the constraints to within tol rank ahead of those that do not;
    within each group the smaller KKT error wins. stop(x) -> True ends the solve at the
    current inner iterate, which is returned with the message 'stopped'.
    """
    config = config or NlpSolverConfig()
    m = problem.n_constraints
    x = np.array(x0, dtype=float)
    if x.shape != (problem.n,):
        raise OptimizationError(f"Initial point has shape {x.shape}, expected ({problem.n},)")
    if problem.pinned.size and not np.array_equal(x[problem.pinned], problem.pinned_values):
        logger.warning("Initial point violates pinned values; resetting them")
        x[problem.pinned] = problem.pinned_values
    lam = np.zeros(m) if multipliers0 is None else np.clip(np.asarray(multipliers0, dtype=float), 0.0,
                                                             config.multiplier_max)
    rho = config.rho_initial
    free = problem.free
    bounds = problem.bounds()

    if config.check_gradients and free.size:
        sample = free[np.linspace(0, free.size - 1, min(free.size, 10)).astype(int)]
        err = finite_difference_check(problem.objective, x, sample)
        logger.debug(f"Objective gradient check: relative error {err:.2e}")
        if m:
            err = finite_difference_check(problem.evaluate_constraints, x, sample)
            logger.debug(f"Constraint jacobian check: relative error {err:.2e}")

    def full(z):
        xx = x.copy()
        xx[free] = z
        return xx

    def lagrangian(z, lam, rho):
        xx = full(z)
        f, g = problem.objective(xx)
        g = np.asarray(g, dtype=float)
        if m:
            c, jac = problem.evaluate_constraints(xx)
            psi, dpsi = _augmented_terms(c, lam, rho)
            f = f + psi
            g = g + jac.T @ dpsi
        return float(f), g[free]

    def feasible(xx):
        if not m:
            return True
        c, _ = problem.evaluate_constraints(xx)
        return bool(np.min(c) >= -tol)

    stopped = {}

    def inner_callback(intermediate_result):
        xx = full(intermediate_result.x)
        if stop(xx):
            stopped['x'] = xx
            raise StopIteration

    best = None
    best_feasible = False
    kkt = kkt_error(x, lam, problem)
    measure_prev = np.inf
    gtol = min(1e-2, max(kkt, tol))
    iterations = 0
    message = 'maximum outer iterations reached'

    for outer in range(config.max_outer_iterations):
        iterations = outer + 1
        result = minimize(lagrangian, x[free], args=(lam, rho), jac=True, method='L-BFGS-B', bounds=bounds,
                          callback=inner_callback if stop is not None else None,
                          options={'gtol': gtol, 'ftol': 1e-15, 'maxiter': config.max_inner_iterations,
                                   'maxcor': config.memory})
        x = full(result.x)
        if stopped:
            x = stopped['x']
            f, _ = problem.objective(x)
            logger.info(f"Stopped in AL iteration {iterations}: f={f:.6e}")
            return NlpResult(x.copy(), lam.copy(), kkt_error(x, lam, problem), False, iterations, float(f),
                             'stopped')

        if m:
            c, _ = problem.evaluate_constraints(x)
            measure = float(np.max(np.abs(np.minimum(c, lam / rho))))
            lam = np.clip(lam - rho * c, 0.0, config.multiplier_max)
        kkt = kkt_error(x, lam, problem)
        f, _ = problem.objective(x)
        logger.debug(f"AL iteration {iterations}: f={f:.6e} kkt={kkt:.3e} rho={rho:.1e} "
                     f"inner={result.nit} ({result.message})")

        is_feasible = feasible(x)
        if best is None or (is_feasible, -kkt) > (best_feasible, -best.kkt_error):
            best = NlpResult(x.copy(), lam.copy(), kkt, False, iterations, float(f))
            best_feasible = is_feasible
        if kkt <= tol:
            message = 'converged'
            break

        if m:
            if measure > 0.25 * measure_prev:
                rho = min(rho * config.rho_factor, config.rho_max)
            measure_prev = measure
        gtol = max(0.1 * tol, min(0.1 * gtol, kkt * 0.1))

    converged = best.kkt_error <= tol and best_feasible
    if not converged:
        logger.warning(f"NLP not converged after {iterations} outer iterations: kkt={best.kkt_error:.3e} > {tol:.1e}")
    best.converged = converged
    best.iterations = iterations
    best.message = message if converged else 'not converged: ' + message
    return best
