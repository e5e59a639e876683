"""Sparse solves with a reusable factorisation.

The moving-domain operators change a little every step. Refactoring each
time dominates the run time, so the last LU factors are kept and used to
correct solves with the current matrix (iterative refinement, then GMRES
preconditioned by the stale factors); a fresh factorisation is made only
when that stops converging quickly.
"""

import logging

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres, splu

log = logging.getLogger(__name__)


class FactorisationError(RuntimeError):
    pass


class ReusedFactorisation:
    def __init__(self, rtol=1e-12, max_iter=12):
        self.rtol, self.max_iter = rtol, max_iter
        self._lu = None
        self._key = None
        self.matrix = None
        self.key = None
        self.refactorisations = 0

    def update(self, matrix, key):
        """Make ``matrix`` (identified by ``key``) the operator to solve with."""
        self.matrix, self.key = matrix.tocsc(), key
        if self._lu is None:
            self._factor()

    def _factor(self):
        try:
            self._lu = splu(self.matrix)
        except RuntimeError as exc:
            raise FactorisationError(f"factorisation failed: {exc}") from exc
        self._key = self.key
        self.refactorisations += 1

    def solve(self, rhs):
        """Solve for one right-hand side or for the columns of a 2-D array."""
        rhs = np.asarray(rhs, dtype=float)
        if self._key == self.key:
            return self._lu.solve(rhs)
        if rhs.ndim == 2:
            return np.column_stack([self.solve(rhs[:, k]) for k in range(rhs.shape[1])])
        x, its = self._krylov(rhs)
        if x is None:
            log.debug("preconditioner stale after %d iterations; refactoring", its)
            self._factor()
            return self._lu.solve(rhs)
        return x

    def _krylov(self, rhs):
        scale = float(np.linalg.norm(rhs)) or 1.0
        target = self.rtol * scale
        # iterative refinement first: cheap when the matrix has barely moved
        x = self._lu.solve(rhs)
        r = rhs - self.matrix @ x
        rn = float(np.linalg.norm(r))
        for _ in range(self.max_iter):
            if rn <= target:
                return x, 0
            x_new = x + self._lu.solve(r)
            r_new = rhs - self.matrix @ x_new
            rn_new = float(np.linalg.norm(r_new))
            if rn_new > 0.1 * rn:
                break
            x, r, rn = x_new, r_new, rn_new
        n = rhs.size
        pre = LinearOperator((n, n), matvec=self._lu.solve, dtype=float)
        count = [0]

        def tick(_):
            count[0] += 1

        x, info = gmres(self.matrix, rhs, x0=x, M=pre, rtol=0.0, atol=target,
                        restart=self.max_iter, maxiter=1, callback=tick,
                        callback_type="pr_norm")
        if info != 0 or np.linalg.norm(self.matrix @ x - rhs) > 10 * target:
            return None, count[0]
        return x, count[0]
