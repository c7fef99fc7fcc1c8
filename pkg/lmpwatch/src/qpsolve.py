"""Dense primal active-set solver for the market-clearing QP.

The starting point comes from the LP relaxation (HiGHS through scipy), the
working set grows by ratio test and shrinks by dropping the most negative
multiplier. The last working set is re-solved exactly as an equality
constrained QP, so the returned x and mu satisfy the KKT conditions to
round-off.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
import scipy.linalg
from scipy.optimize import linprog

from lmpwatch.src.errors import InfeasibleError, NonConvergenceError, NumericError
from lmpwatch.src.netmodel import MarketQP

_LOGGER = logging.getLogger('lmpwatch.' + Path(__file__).stem)


class KktResiduals(NamedTuple):
    primal: float
    dual: float
    complementarity: float
    stationarity: float


class ActiveSet(NamedTuple):
    rows: Tuple[int, ...]
    degenerate: Tuple[int, ...] = ()


@dataclass(frozen=True, eq=False)
class PrimalDualSolution:
    x: np.ndarray
    mu: np.ndarray
    active_set: Tuple[int, ...]
    objective: float
    residuals: KktResiduals
    iterations: int = 0


def kkt_residuals(qp: MarketQP, xi, x: np.ndarray, mu: np.ndarray) -> KktResiduals:
    slack = qp.rhs(xi) - qp.A @ x
    return KktResiduals(
        primal=float(max(0.0, -slack.min(initial=0.0))),
        dual=float(max(0.0, -mu.min(initial=0.0))),
        complementarity=float(np.abs(mu * slack).max(initial=0.0)),
        stationarity=float(np.abs(qp.Q @ x + qp.q + qp.A.T @ mu).max(initial=0.0)),
    )


class QpSolver():

    def __init__(self,
                 active_tol: float = 1e-7,
                 dual_tol: float = 1e-9,
                 stationarity_tol: float = 1e-6,
                 max_iterations: int = 500,
                 ):
        self.active_tol = active_tol
        self.dual_tol = dual_tol
        self.stationarity_tol = stationarity_tol
        self.max_iterations = max_iterations

    def _start(self, qp: MarketQP, rhs: np.ndarray) -> np.ndarray:
        res = linprog(c=qp.q, A_ub=qp.A, b_ub=rhs, bounds=[(None, None)] * qp.n_vars, method='highs')
        if res.status == 2:
            raise InfeasibleError(f'market of structure {qp.structure_id} is infeasible',
                                  report={'status': int(res.status), 'message': res.message,
                                          'max_rhs_violation': None})
        if res.status != 0 or res.x is None:
            raise NumericError(f'starting point search failed for structure {qp.structure_id}: {res.message}')
        return np.asarray(res.x, dtype=float)

    @staticmethod
    def _eqp(q_factor, A_w: np.ndarray, g: np.ndarray, r: np.ndarray):
        """min 1/2 p'Qp + g'p s.t. A_w p = r. Returns (p, multipliers)."""
        qinv_g = scipy.linalg.cho_solve(q_factor, g)
        if A_w.shape[0] == 0:
            return -qinv_g, np.zeros(0)
        qinv_at = scipy.linalg.cho_solve(q_factor, A_w.T)
        m = A_w @ qinv_at
        lam = -np.linalg.solve(m, r + A_w @ qinv_g)
        return -qinv_g - qinv_at @ lam, lam

    def solve(self, qp: MarketQP, xi) -> PrimalDualSolution:
        xi = np.asarray(xi, dtype=float)
        rhs = qp.rhs(xi)
        A = qp.A
        q_factor = scipy.linalg.cho_factor(qp.Q)

        x = self._start(qp, rhs)
        working: List[int] = []
        step_tol = 1e-12 * (1.0 + np.abs(rhs).max(initial=0.0))
        drop_tol = self.dual_tol * (1.0 + np.abs(qp.q).max(initial=0.0))

        for iteration in range(1, self.max_iterations + 1):
            A_w = A[working]
            try:
                p, lam = self._eqp(q_factor, A_w, qp.Q @ x + qp.q, np.zeros(len(working)))
            except np.linalg.LinAlgError as e:
                raise NonConvergenceError(f'singular working set {sorted(working)}: {e}',
                                          residuals=kkt_residuals(qp, xi, x, self._full_mu(qp, working, np.zeros(len(working)))))

            if np.abs(p).max(initial=0.0) <= step_tol:
                if len(working) == 0 or lam.min() >= -drop_tol:
                    return self._finish(qp, xi, rhs, q_factor, working, iteration)
                working.pop(int(np.argmin(lam)))
                continue

            ap = A @ p
            slack = np.maximum(rhs - A @ x, 0.0)
            alpha, blocking = 1.0, None
            for i in range(qp.n_rows):
                if i in working or ap[i] <= 1e-14:
                    continue
                ratio = slack[i] / ap[i]
                if ratio < alpha:
                    alpha, blocking = ratio, i
            x = x + alpha * p
            if blocking is not None:
                working.append(blocking)

        mu = self._full_mu(qp, working, self._eqp(q_factor, A[working], qp.Q @ x + qp.q, np.zeros(len(working)))[1])
        raise NonConvergenceError(f'no optimum after {self.max_iterations} active-set iterations',
                                  residuals=kkt_residuals(qp, xi, x, mu))

    @staticmethod
    def _full_mu(qp: MarketQP, working: List[int], lam: np.ndarray) -> np.ndarray:
        mu = np.zeros(qp.n_rows)
        mu[list(working)] = lam
        return mu

    def _finish(self, qp: MarketQP, xi, rhs, q_factor, working: List[int], iterations: int) -> PrimalDualSolution:
        working = sorted(working)
        A_w = qp.A[working]
        # exact equality constrained solve on the final working set
        x, lam = self._eqp(q_factor, A_w, qp.q, rhs[working])
        mu = self._full_mu(qp, working, lam)
        residuals = kkt_residuals(qp, xi, x, mu)

        scale_q = 1.0 + np.abs(qp.q).max(initial=0.0)
        scale_rhs = 1.0 + np.abs(rhs).max(initial=0.0)
        if (residuals.stationarity > self.stationarity_tol * scale_q
                or residuals.primal > self.stationarity_tol * scale_rhs
                or residuals.dual > self.dual_tol * scale_q
                or residuals.complementarity > self.stationarity_tol * scale_q * scale_rhs):
            raise NonConvergenceError(f'KKT residuals out of tolerance for structure {qp.structure_id}',
                                      residuals=residuals)

        solution = PrimalDualSolution(x=x, mu=mu, active_set=(), objective=qp.objective(x),
                                      residuals=residuals, iterations=iterations)
        active = self.classify_active(solution, qp, xi)
        solution = PrimalDualSolution(x=x, mu=mu, active_set=active.rows, objective=solution.objective,
                                      residuals=residuals, iterations=iterations)

        balance = qp.rows('balance')
        if len(balance) and balance[0] not in active.rows:
            _LOGGER.warning(f'Balance row inactive at xi={xi.tolist()} in structure {qp.structure_id}; '
                            f'supply exceeds demand at the optimum')
        return solution

    def classify_active(self, sol: PrimalDualSolution, qp: MarketQP, xi, tol: Optional[float] = None) -> ActiveSet:
        tol = self.active_tol if tol is None else tol
        rhs = qp.rhs(xi)
        slack = rhs - qp.A @ sol.x
        active = np.flatnonzero(slack <= tol * (1.0 + np.abs(rhs)))
        dual_floor = tol * (1.0 + np.abs(qp.q).max(initial=0.0))
        degenerate = [int(i) for i in active if sol.mu[i] <= dual_floor]
        return ActiveSet(rows=tuple(int(i) for i in active), degenerate=tuple(degenerate))


def solve(qp: MarketQP, xi, solver: Optional[QpSolver] = None) -> PrimalDualSolution:
    return (solver or QpSolver()).solve(qp, xi)


def classify_active(sol: PrimalDualSolution, qp: MarketQP, xi, tol: float = 1e-7) -> ActiveSet:
    return QpSolver(active_tol=tol).classify_active(sol, qp, xi)


def lmp(sol: PrimalDualSolution, qp: MarketQP) -> np.ndarray:
    """Locational marginal prices, Lambda @ mu."""
    return qp.Lambda @ sol.mu
