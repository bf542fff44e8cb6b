"""
Sparse symmetric positive definite solves: a reusable LU factorization for
moderate sizes, Jacobi-preconditioned conjugate gradients beyond that.
"""

import logging

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

logger = logging.getLogger("LinearSolver")


class ElasticityError(Exception):
    """Base class for elasticity failures."""


class SolverConvergenceError(ElasticityError):
    """The iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


def backward_error(matrix, x, b, matrix_norm=None):
    """Normwise backward error |Ax - b| / (|A| |x| + |b|) in the max norm."""
    if np.size(b) == 0:
        return 0.0
    if matrix_norm is None:
        matrix_norm = spla.norm(matrix, np.inf)
    r = matrix @ x - b
    denom = matrix_norm * np.max(np.abs(x), axis=0) + np.max(np.abs(b), axis=0)
    denom = np.where(denom > 0, denom, 1.0)
    return np.max(np.abs(r), axis=0) / denom


class SparseSolver:
    """Solver for one fixed matrix and any number of right-hand sides."""

    def __init__(self, matrix, method='direct', rtol=1e-12, maxiter=None):
        if method not in ('direct', 'cg'):
            raise ElasticityError(f"Unknown linear solver: {method}")
        self.matrix = sparse.csr_matrix(matrix)
        self.method = method
        self.rtol = rtol
        n = self.matrix.shape[0]
        self.maxiter = maxiter or max(1, int(50 * np.sqrt(n)))
        self.matrix_norm = spla.norm(self.matrix, np.inf) if n else 0.0
        self._lu = None
        self._precond = None
        if n == 0:
            return
        if method == 'direct':
            self._lu = spla.splu(self.matrix.tocsc())
        else:
            diag = self.matrix.diagonal()
            if np.any(diag <= 0):
                raise ElasticityError("Matrix has a non-positive diagonal entry")
            self._precond = sparse.diags(1.0 / diag)

    def solve(self, rhs):
        """Solve for one (n,) or several (n, m) right-hand sides.

        Returns:
            (x, residual) where residual is the largest normwise backward error.
        """
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] == 0:
            return rhs.copy(), 0.0
        if self.method == 'direct':
            x = self._lu.solve(rhs)
            # one step of iterative refinement
            x += self._lu.solve(rhs - self.matrix @ x)
        elif rhs.ndim == 1:
            x = self._cg(rhs)
        else:
            x = np.column_stack([self._cg(rhs[:, k]) for k in range(rhs.shape[1])])
        residual = float(np.max(backward_error(self.matrix, x, rhs, self.matrix_norm)))
        logger.debug(f"{self.method} solve: n={rhs.shape[0]}, backward error {residual:.3e}")
        return x, residual

    def _cg(self, b):
        if not np.any(b):
            return np.zeros_like(b)
        x, info = spla.cg(self.matrix, b, rtol=self.rtol, atol=0.0, maxiter=self.maxiter, M=self._precond)
        if info != 0:
            rel = np.linalg.norm(self.matrix @ x - b) / np.linalg.norm(b)
            raise SolverConvergenceError(f"CG did not converge in {self.maxiter} iterations", rel)
        return x
