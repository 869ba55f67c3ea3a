"""Dense strictly-convex QP solver (primal active set) with warm starting.

Solves
    min 1/2 w^T H w + g^T w
    s.t. A_eq w == b_eq
         A_in w <= b_in
         lb <= w <= ub

Problem sizes here are tiny (tens of variables), so every working-set
iteration solves a dense KKT system directly.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import linprog

DEFAULT_TOL = 1e-8


class QpStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITER = "max_iter"


@dataclass(frozen=True)
class QpProblem:
    H: np.ndarray
    g: np.ndarray
    A_eq: np.ndarray = None
    b_eq: np.ndarray = None
    A_in: np.ndarray = None
    b_in: np.ndarray = None
    lb: np.ndarray = None
    ub: np.ndarray = None

    def __post_init__(self):
        n = self.n
        H = np.asarray(self.H, dtype=float)
        if H.shape != (n, n):
            raise ValueError("H must be square and match g")
        if np.linalg.norm(H - H.T, ord=np.inf) > 1e-9 * max(1.0, np.linalg.norm(H, ord=np.inf)):
            raise ValueError("H must be symmetric")
        for A, b, name in ((self.A_eq, self.b_eq, "eq"), (self.A_in, self.b_in, "in")):
            if (A is None) != (b is None):
                raise ValueError(f"A_{name} and b_{name} must be given together")
            if A is not None and (np.asarray(A).ndim != 2 or np.asarray(A).shape[1] != n
                                  or np.asarray(b).reshape(-1).shape[0] != np.asarray(A).shape[0]):
                raise ValueError(f"inconsistent {name}-constraint dimensions")

    @property
    def n(self):
        return np.asarray(self.g).reshape(-1).shape[0]

    def expanded_inequalities(self):
        """All inequality rows a^T w <= b, with bounds folded in.

        Returns (A, b, kind) where kind[i] is one of 'in', 'lb', 'ub' plus the
        original row/variable index, used to split the dual vector afterwards.
        """
        n = self.n
        rows, rhs, kind = [], [], []
        if self.A_in is not None:
            A = np.asarray(self.A_in, dtype=float)
            b = np.asarray(self.b_in, dtype=float).reshape(-1)
            for i in range(A.shape[0]):
                rows.append(A[i])
                rhs.append(b[i])
                kind.append(("in", i))
        for bound, sign, label in ((self.ub, 1.0, "ub"), (self.lb, -1.0, "lb")):
            if bound is None:
                continue
            bv = np.asarray(bound, dtype=float).reshape(-1)
            for j in range(n):
                if np.isfinite(bv[j]):
                    e = np.zeros(n)
                    e[j] = sign
                    rows.append(e)
                    rhs.append(sign * bv[j])
                    kind.append((label, j))
        if rows:
            return np.vstack(rows), np.asarray(rhs), kind
        return np.zeros((0, n)), np.zeros(0), []

    def objective(self, w):
        w = np.asarray(w, dtype=float).reshape(-1)
        return 0.5 * w @ np.asarray(self.H, dtype=float) @ w + np.asarray(self.g, dtype=float) @ w

    def dump(self):
        """Textual dump of all problem sections, for debugging."""
        out = []

        def section(name, M):
            out.append(f"[{name}]")
            if M is None:
                out.append("(none)")
            else:
                M = np.atleast_2d(np.asarray(M, dtype=float))
                for row in M:
                    out.append(" ".join(f"{v:.17g}" for v in row))
        section("H", self.H)
        section("g", self.g)
        section("A_eq", self.A_eq)
        section("b_eq", self.b_eq)
        section("A_in", self.A_in)
        section("b_in", self.b_in)
        section("lb", self.lb)
        section("ub", self.ub)
        return "\n".join(out) + "\n"


@dataclass
class QpSolution:
    w: np.ndarray
    status: QpStatus
    iterations: int
    dual_eq: np.ndarray
    dual_in: np.ndarray
    dual_lb: np.ndarray
    dual_ub: np.ndarray
    active_set: tuple = ()
    residuals: dict = field(default_factory=dict)


class QpInfeasibleError(RuntimeError):
    def __init__(self, message, violation=None):
        super().__init__(message)
        self.violation = violation


class QpSolver:
    """Primal active-set solver; one instance per control loop (warm starts)."""

    def __init__(self, tol=DEFAULT_TOL, max_iter=200):
        self.tol = tol
        self.max_iter = max_iter

    def solve(self, problem, warm_start=None):
        n = problem.n
        H = np.asarray(problem.H, dtype=float)
        g = np.asarray(problem.g, dtype=float).reshape(-1)
        if problem.A_eq is not None:
            A_eq = np.asarray(problem.A_eq, dtype=float)
            b_eq = np.asarray(problem.b_eq, dtype=float).reshape(-1)
        else:
            A_eq = np.zeros((0, n))
            b_eq = np.zeros(0)
        A_all, b_all, kind = problem.expanded_inequalities()
        m = A_all.shape[0]

        w, active = self._initial_point(problem, A_eq, b_eq, A_all, b_all, warm_start)
        if w is None:
            return self._infeasible(problem, n, A_eq.shape[0], m, kind)

        working = set(active)
        lam_eq = np.zeros(A_eq.shape[0])
        mu = np.zeros(m)
        it = 0
        while it < self.max_iter:
            it += 1
            idx = sorted(working)
            A_w = np.vstack([A_eq, A_all[idx]]) if idx else A_eq
            grad = H @ w + g
            p, duals = self._kkt_step(H, grad, A_w)
            if p is None:
                # Dependent working set; drop the most recent inequality row.
                if idx:
                    working.discard(idx[-1])
                    continue
                return self._infeasible(problem, n, A_eq.shape[0], m, kind)
            if np.linalg.norm(p, ord=np.inf) <= self.tol * max(1.0, np.linalg.norm(w, ord=np.inf)):
                lam_eq = duals[:A_eq.shape[0]]
                mu = np.zeros(m)
                mu_w = duals[A_eq.shape[0]:]
                for k, i in enumerate(idx):
                    mu[i] = mu_w[k]
                # Inequality duals must be nonnegative at the optimum.
                if idx and mu_w.size and mu_w.min() < -self.tol:
                    worst = idx[int(np.argmin(mu_w))]
                    working.discard(worst)
                    continue
                sol = QpSolution(
                    w=w.copy(), status=QpStatus.OPTIMAL, iterations=it,
                    dual_eq=lam_eq, dual_in=np.zeros(0), dual_lb=np.zeros(n),
                    dual_ub=np.zeros(n), active_set=tuple(sorted(working)))
                self._split_duals(sol, problem, mu, kind)
                sol.residuals = kkt_residuals(problem, sol)
                return sol
            # Line search toward w + p against inactive inequality rows.
            alpha = 1.0
            blocking = None
            for i in range(m):
                if i in working:
                    continue
                ap = A_all[i] @ p
                if ap > 1e-14:
                    a_i = (b_all[i] - A_all[i] @ w) / ap
                    if a_i < alpha - 1e-15:
                        alpha = max(a_i, 0.0)
                        blocking = i
            w = w + alpha * p
            if blocking is not None:
                working.add(blocking)
        sol = QpSolution(w=w.copy(), status=QpStatus.MAX_ITER, iterations=it,
                         dual_eq=lam_eq, dual_in=np.zeros(0), dual_lb=np.zeros(n),
                         dual_ub=np.zeros(n), active_set=tuple(sorted(working)))
        self._split_duals(sol, problem, mu, kind)
        sol.residuals = kkt_residuals(problem, sol)
        return sol

    def _kkt_step(self, H, grad, A_w):
        n = H.shape[0]
        mw = A_w.shape[0]
        K = np.zeros((n + mw, n + mw))
        K[:n, :n] = H
        K[:n, n:] = A_w.T
        K[n:, :n] = A_w
        rhs = np.concatenate([-grad, np.zeros(mw)])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            return None, None
        if not np.all(np.isfinite(sol)):
            return None, None
        return sol[:n], sol[n:]

    def _initial_point(self, problem, A_eq, b_eq, A_all, b_all, warm_start):
        n = problem.n
        active = ()
        w = None
        if warm_start is not None:
            w0 = np.asarray(warm_start.get("w"), dtype=float).reshape(-1) \
                if isinstance(warm_start, dict) else np.asarray(warm_start, dtype=float).reshape(-1)
            if isinstance(warm_start, dict):
                active = tuple(warm_start.get("active_set", ()))
            if w0.shape == (n,) and self._feasible(w0, A_eq, b_eq, A_all, b_all):
                active = tuple(i for i in active if i < A_all.shape[0]
                               and abs(A_all[i] @ w0 - b_all[i]) <= 10 * self.tol)
                return w0, active
        # Cold start: least-squares on the equalities, then Phase-1 if needed.
        if A_eq.shape[0]:
            w = np.linalg.lstsq(A_eq, b_eq, rcond=None)[0]
        else:
            w = np.zeros(n)
        if self._feasible(w, A_eq, b_eq, A_all, b_all):
            return w, ()
        w = self._phase1(problem)
        if w is None or not self._feasible(w, A_eq, b_eq, A_all, b_all, slack=100 * self.tol):
            return None, ()
        return w, ()

    def _feasible(self, w, A_eq, b_eq, A_all, b_all, slack=None):
        slack = self.tol if slack is None else slack
        if A_eq.shape[0] and np.linalg.norm(A_eq @ w - b_eq, ord=np.inf) > slack:
            return False
        if A_all.shape[0] and np.max(A_all @ w - b_all) > slack:
            return False
        return True

    def _phase1(self, problem):
        n = problem.n
        res = linprog(
            c=np.zeros(n),
            A_ub=problem.A_in, b_ub=problem.b_in,
            A_eq=problem.A_eq, b_eq=problem.b_eq,
            bounds=list(zip(
                np.full(n, -np.inf) if problem.lb is None else np.asarray(problem.lb, dtype=float),
                np.full(n, np.inf) if problem.ub is None else np.asarray(problem.ub, dtype=float))),
            method="highs")
        if not res.success:
            return None
        return np.asarray(res.x, dtype=float)

    def _split_duals(self, sol, problem, mu, kind):
        n = problem.n
        n_in = 0 if problem.A_in is None else np.asarray(problem.A_in).shape[0]
        sol.dual_in = np.zeros(n_in)
        sol.dual_lb = np.zeros(n)
        sol.dual_ub = np.zeros(n)
        for val, (label, i) in zip(mu, kind):
            if label == "in":
                sol.dual_in[i] = val
            elif label == "lb":
                sol.dual_lb[i] = val
            else:
                sol.dual_ub[i] = val

    def _infeasible(self, problem, n, m_eq, m_in, kind):
        A_all, b_all, _ = problem.expanded_inequalities()
        viol = None
        if A_all.shape[0]:
            w0 = np.zeros(n)
            viol = float(np.max(A_all @ w0 - b_all))
        return QpSolution(w=np.full(n, np.nan), status=QpStatus.INFEASIBLE, iterations=0,
                          dual_eq=np.zeros(m_eq), dual_in=np.zeros(
                              0 if problem.A_in is None else np.asarray(problem.A_in).shape[0]),
                          dual_lb=np.zeros(n), dual_ub=np.zeros(n),
                          residuals={"infeasible": viol})


def solve(problem, warm_start=None, tol=DEFAULT_TOL, max_iter=200):
    return QpSolver(tol=tol, max_iter=max_iter).solve(problem, warm_start)


def kkt_residuals(problem, solution):
    """Stationarity, equality violation, inequality violation, complementarity."""
    w = np.asarray(solution.w, dtype=float).reshape(-1)
    if not np.all(np.isfinite(w)):
        return {"stationarity": np.inf, "eq_violation": np.inf,
                "in_violation": np.inf, "complementarity": np.inf}
    H = np.asarray(problem.H, dtype=float)
    g = np.asarray(problem.g, dtype=float).reshape(-1)
    grad = H @ w + g
    eq_violation = 0.0
    if problem.A_eq is not None:
        A_eq = np.asarray(problem.A_eq, dtype=float)
        b_eq = np.asarray(problem.b_eq, dtype=float).reshape(-1)
        grad = grad + A_eq.T @ solution.dual_eq
        eq_violation = float(np.linalg.norm(A_eq @ w - b_eq, ord=np.inf))
    in_violation = 0.0
    complementarity = 0.0
    if problem.A_in is not None:
        A_in = np.asarray(problem.A_in, dtype=float)
        b_in = np.asarray(problem.b_in, dtype=float).reshape(-1)
        slack = A_in @ w - b_in
        in_violation = float(max(0.0, np.max(slack))) if slack.size else 0.0
        grad = grad + A_in.T @ solution.dual_in
        if slack.size:
            complementarity = float(np.max(np.abs(solution.dual_in * slack)))
    for bound, dual, sign in ((problem.lb, solution.dual_lb, -1.0),
                              (problem.ub, solution.dual_ub, 1.0)):
        if bound is None:
            continue
        bv = np.asarray(bound, dtype=float).reshape(-1)
        finite = np.isfinite(bv)
        slack = sign * (w - bv)
        slack = np.where(finite, slack, 0.0)
        in_violation = max(in_violation, float(np.max(slack)) if slack.size else 0.0)
        grad = grad + sign * dual
        complementarity = max(complementarity,
                              float(np.max(np.abs(dual * slack))) if slack.size else 0.0)
    return {"stationarity": float(np.linalg.norm(grad, ord=np.inf)),
            "eq_violation": eq_violation,
            "in_violation": in_violation,
            "complementarity": complementarity}
