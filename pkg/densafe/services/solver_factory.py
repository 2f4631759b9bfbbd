import logging
import time

import cvxpy as cp
import numpy as np

from densafe.config import Config
from densafe.services.sosprog import AdapterResult, ConicProblem, SolverFailure, SolveStatus, Tolerances

_FEASIBLE = {cp.OPTIMAL, cp.OPTIMAL_INACCURATE}
_INFEASIBLE = {cp.INFEASIBLE}


def _setting(settings, key, default=None):
    if settings is None:
        return getattr(Config, key, default)
    if isinstance(settings, dict):
        return settings.get(key, default)
    return getattr(settings, key, default)


class CvxpyAdapter:
    """Hands a ConicProblem to one cvxpy backend."""

    def __init__(self, solver: str, verbose: bool = False):
        if solver not in cp.installed_solvers():
            raise cp.error.SolverError(f"solver {solver} is not installed")
        self.solver = solver
        self.verbose = verbose

    def _options(self, tolerances: Tolerances) -> dict:
        opts = {}
        if self.solver == cp.CLARABEL:
            opts = {"tol_gap_abs": 1e-9, "tol_gap_rel": 1e-9, "tol_feas": 1e-9}
            if tolerances.max_iter:
                opts["max_iter"] = tolerances.max_iter
        elif self.solver == cp.SCS:
            opts = {"eps_abs": 1e-8, "eps_rel": 1e-8, "max_iters": 200_000}
            if tolerances.max_iter:
                opts["max_iters"] = tolerances.max_iter
        return opts

    def solve(self, problem: ConicProblem, tolerances: Tolerances | None = None) -> AdapterResult:
        tolerances = tolerances or Tolerances()
        z = cp.Variable(problem.n_free) if problem.n_free else None
        Xs = [cp.Variable((k, k), symmetric=True) for k in problem.block_sizes]
        constraints = [X >> 0 for X in Xs]

        if problem.n_rows:
            lhs = 0
            if z is not None:
                lhs = cp.Constant(problem.A_free) @ z
            for A, X, k in zip(problem.A_blocks, Xs, problem.block_sizes):
                if A.nnz:
                    lhs = lhs + cp.Constant(A) @ cp.reshape(X, (k * k,), order="F")
            constraints.append(lhs == problem.b)
        if problem.h.shape[0] and z is not None:
            constraints.append(cp.Constant(problem.G_free) @ z <= problem.h)

        if problem.has_objective() and z is not None:
            objective = cp.Maximize(problem.c @ z)
        else:
            objective = cp.Minimize(0)
        prob = cp.Problem(objective, constraints)

        start = time.perf_counter()
        prob.solve(solver=self.solver, verbose=self.verbose, **self._options(tolerances))
        elapsed = time.perf_counter() - start

        stats = prob.solver_stats
        iterations = getattr(stats, "num_iters", None) if stats is not None else None
        if prob.status in _FEASIBLE:
            status = SolveStatus.FEASIBLE
        elif prob.status in _INFEASIBLE:
            status = SolveStatus.INFEASIBLE
        else:
            status = SolveStatus.NUMERICAL_FAILURE

        z_value, grams, obj = None, [], None
        if status is SolveStatus.FEASIBLE:
            z_value = np.asarray(z.value, dtype=float).reshape(-1) if z is not None else np.zeros(0)
            grams = [np.asarray(X.value, dtype=float) for X in Xs]
            obj = float(prob.value) if prob.value is not None else None
        return AdapterResult(status, z_value, grams, obj, self.solver, iterations, elapsed, str(prob.status))


class FallbackAdapter:
    """Primary backend first; on an exception or a numerical failure, the fallback."""

    def __init__(self, primary_name: str, fallback_name: str | None):
        self.primary_name = primary_name
        self.fallback_name = fallback_name

    def solve(self, problem: ConicProblem, tolerances: Tolerances | None = None) -> AdapterResult:
        try:
            result = SolverFactory.get_solver(self.primary_name).solve(problem, tolerances)
            if result.status is not SolveStatus.NUMERICAL_FAILURE or not self.fallback_name:
                return result
            logging.warning(f"{self.primary_name} reported {result.raw_status}, retrying with {self.fallback_name}")
        except Exception as e:
            if not self.fallback_name:
                raise SolverFailure(f"{self.primary_name} failed: {e}") from e
            logging.warning(f"{self.primary_name} failed, falling back to {self.fallback_name}: {e}")
        try:
            return SolverFactory.get_solver(self.fallback_name).solve(problem, tolerances)
        except Exception as e:
            raise SolverFailure(f"{self.fallback_name} failed as well: {e}") from e


class SolverFactory:
    @staticmethod
    def get_solver(name: str):
        return CvxpyAdapter(name.upper())

    @staticmethod
    def get_solver_with_fallback(settings=None):
        primary = _setting(settings, "SOLVER", "CLARABEL")
        fallback = _setting(settings, "FALLBACK_SOLVER", "SCS")
        if fallback and fallback.upper() == primary.upper():
            fallback = None
        return FallbackAdapter(primary, fallback)
