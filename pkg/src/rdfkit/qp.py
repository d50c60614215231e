"""Dense strictly convex QP by a primal active-set method.

Solves ``min 0.5 x'Hx + g'x`` subject to ``A x <= b`` and ``lower <= x <= upper``.
A feasible starting point comes from the caller or from a phase-one linear
program.  Each iteration solves the equality-constrained subproblem on the
working set through its KKT system.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import linprog

KKT_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class QpProblem:
    hessian: np.ndarray
    gradient: np.ndarray
    a_ineq: np.ndarray | None = None
    b_ineq: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        h = np.asarray(self.hessian, dtype=float)
        n = h.shape[0]
        if h.shape != (n, n):
            raise ValueError(f"hessian must be square, got {h.shape}")
        if not np.allclose(h, h.T, rtol=0, atol=1e-12 * max(1.0, np.abs(h).max(initial=0.0))):
            raise ValueError("hessian must be symmetric")
        g = np.asarray(self.gradient, dtype=float).reshape(-1)
        if g.shape != (n,):
            raise ValueError(f"gradient has {g.shape[0]} entries, expected {n}")
        a = np.zeros((0, n)) if self.a_ineq is None else np.asarray(self.a_ineq, dtype=float).reshape(-1, n)
        b = np.zeros(0) if self.b_ineq is None else np.asarray(self.b_ineq, dtype=float).reshape(-1)
        if a.shape[0] != b.shape[0]:
            raise ValueError(f"{a.shape[0]} constraint rows but {b.shape[0]} bounds")
        lo = np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != (n,) or hi.shape != (n,):
            raise ValueError("variable bounds must match the number of variables")
        for k, v in (("hessian", h), ("gradient", g), ("a_ineq", a), ("b_ineq", b)):
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{k} must be finite")
        for k, v in (("hessian", h), ("gradient", g), ("a_ineq", a), ("b_ineq", b), ("lower", lo), ("upper", hi)):
            object.__setattr__(self, k, v)

    @property
    def n(self) -> int:
        return self.hessian.shape[0]

    def all_rows(self) -> tuple:
        """General rows followed by the finite box limits, all as ``A x <= b``."""
        eye = np.eye(self.n)
        up = np.isfinite(self.upper)
        lo = np.isfinite(self.lower)
        a = np.vstack([self.a_ineq, eye[up], -eye[lo]])
        b = np.concatenate([self.b_ineq, self.upper[up], -self.lower[lo]])
        return a, b

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.hessian @ x + self.gradient @ x)


@dataclass
class QpResult:
    x: np.ndarray | None
    status: str                       # optimal | infeasible
    active: list = field(default_factory=list)        # indices into all_rows()
    general_active: list = field(default_factory=list)  # indices into a_ineq
    multipliers: np.ndarray | None = None
    iterations: int = 0
    kkt: dict = field(default_factory=dict)
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def kkt_residuals(prob: QpProblem, x, lam) -> dict:
    """Stationarity, primal feasibility and complementarity for the stacked rows."""
    a, b = prob.all_rows()
    slack = a @ x - b
    stat = prob.hessian @ x + prob.gradient + a.T @ lam
    return {
        "stationarity": float(np.abs(stat).max(initial=0.0)),
        "primal": float(np.maximum(slack, 0.0).max(initial=0.0)),
        "dual": float(np.maximum(-lam, 0.0).max(initial=0.0)),
        "complementarity": float(np.abs(lam * slack).max(initial=0.0)),
    }


def find_feasible(a: np.ndarray, b: np.ndarray, n: int):
    """Phase one: any point with ``a x <= b``, or None."""
    if a.shape[0] == 0:
        return np.zeros(n)
    res = linprog(np.zeros(n), A_ub=a, b_ub=b, bounds=[(None, None)] * n, method="highs")
    if res.status != 0:
        return None
    return np.asarray(res.x, dtype=float)


def _solve_eqp(h, grad, aw):
    """Step p and multipliers for min 0.5 p'Hp + grad'p s.t. aw p = 0."""
    n, m = h.shape[0], aw.shape[0]
    if m == 0:
        return -scipy.linalg.cho_solve(scipy.linalg.cho_factor(h), grad), np.zeros(0)
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = h
    kkt[:n, n:] = aw.T
    kkt[n:, :n] = aw
    sol = np.linalg.solve(kkt, np.concatenate([-grad, np.zeros(m)]))
    return sol[:n], sol[n:]


def _polish(h, g, a, b, work, x, lam_w, feas):
    """Re-solve the final working-set KKT system directly, with one refinement pass.

    Accumulated steps leave roundoff in stationarity; a direct solve on the
    converged working set removes it.  The polished point is kept only if it
    is still feasible and its multipliers keep their signs.
    """
    n, k = h.shape[0], len(work)
    aw = a[work]
    kkt = np.zeros((n + k, n + k))
    kkt[:n, :n] = h
    kkt[:n, n:] = aw.T
    kkt[n:, :n] = aw
    rhs = np.concatenate([-g, b[work]])
    try:
        lu = scipy.linalg.lu_factor(kkt)
    except (ValueError, np.linalg.LinAlgError):
        return x, lam_w
    sol = scipy.linalg.lu_solve(lu, rhs)
    sol += scipy.linalg.lu_solve(lu, rhs - kkt @ sol)
    x_new, lam_new = sol[:n], sol[n:]
    if not np.all(np.isfinite(sol)) or np.any(a @ x_new - b > feas) or (k and lam_new.min() < min(0.0, lam_w.min())):
        return x, lam_w
    return x_new, lam_new


def _independent(rows: np.ndarray, candidates, tol=1e-10) -> list:
    keep = []
    for i in candidates:
        trial = rows[keep + [i]]
        if np.linalg.matrix_rank(trial, tol=tol) == len(keep) + 1:
            keep.append(i)
    return keep


def solve_qp(prob: QpProblem, x0=None, max_iter: int | None = None, tol: float = KKT_TOL) -> QpResult:
    """Primal active-set solve.

    ``x0``, if given and feasible, skips the phase-one LP.  The iteration cap
    (default ``50 * (n + rows)``) guards against cycling; tripping it returns
    ``infeasible`` with a message.  The returned ``kkt`` dict holds the
    verified residuals of the final point.
    """
    h, g = prob.hessian, prob.gradient
    n = prob.n
    a, b = prob.all_rows()
    m = a.shape[0]
    try:
        scipy.linalg.cho_factor(h)
    except np.linalg.LinAlgError:
        raise ValueError("hessian must be positive definite") from None

    feas_tol = tol * 1e-2
    x = None
    if x0 is not None:
        x0 = np.asarray(x0, dtype=float).reshape(-1)
        if x0.shape == (n,) and np.all(a @ x0 - b <= feas_tol):
            x = x0.copy()
    if x is None:
        x_free = -scipy.linalg.cho_solve(scipy.linalg.cho_factor(h), g)
        if np.all(a @ x_free - b <= feas_tol):
            x = x_free
        else:
            x = find_feasible(a, b, n)
    if x is None:
        return QpResult(None, "infeasible", message="constraints admit no feasible point")

    scale = np.maximum(1.0, np.abs(b))
    on = [i for i in range(m) if abs(a[i] @ x - b[i]) <= feas_tol * scale[i]]
    work = _independent(a, on)
    cap = max_iter or 50 * (n + m + 1)
    lam_w = np.zeros(0)
    # after a full unblocked step x already minimizes over the working set;
    # the next solve then only supplies multipliers, whatever roundoff p shows
    at_min = False
    for it in range(1, cap + 1):
        p, lam_w = _solve_eqp(h, h @ x + g, a[work])
        if at_min or np.linalg.norm(p) <= 1e-12 * max(1.0, np.linalg.norm(x)):
            if len(work) == 0 or lam_w.min() >= -tol * 1e-3:
                break
            work.pop(int(np.argmin(lam_w)))
            at_min = False
            continue
        alpha, block = 1.0, None
        ap = a @ p
        for i in range(m):
            if i in work or ap[i] <= 1e-14:
                continue
            step = (b[i] - a[i] @ x) / ap[i]
            if step < alpha:
                alpha, block = max(step, 0.0), i
        x = x + alpha * p
        if block is not None:
            work.append(block)
        at_min = block is None
    else:
        return QpResult(x, "infeasible", active=list(work), iterations=cap,
                        message=f"active-set iteration cap {cap} reached (possible cycling)")

    x, lam_w = _polish(h, g, a, b, work, x, lam_w, feas_tol * scale)
    lam = np.zeros(m)
    lam[work] = lam_w
    lam = np.maximum(lam, 0.0)
    kkt = kkt_residuals(prob, x, lam)
    n_general = prob.a_ineq.shape[0]
    return QpResult(x, "optimal", active=sorted(work), general_active=sorted(i for i in work if i < n_general),
                    multipliers=lam, iterations=it, kkt=kkt)
