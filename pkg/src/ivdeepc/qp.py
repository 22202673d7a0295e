"""Dense convex quadratic programming.

Solves::

    minimize    1/2 z' H z + c' z
    subject to  A_eq z  = b_eq
                A_in z <= b_in

with the dual active-set method of Goldfarb and Idnani (Math. Prog. 27, 1983).
The method starts from the unconstrained minimizer and adds violated
constraints one at a time while keeping dual feasibility, so no feasible
starting point is needed and infeasibility is detected when a violated
constraint cannot be reached. On exit the final active set is re-solved as
one KKT system and the KKT residual is reported on the original problem.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"


@dataclass(frozen=True)
class QuadraticProgram:
    H: np.ndarray
    c: np.ndarray
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    A_in: Optional[np.ndarray] = None
    b_in: Optional[np.ndarray] = None

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        m = H.shape[0]
        if H.shape != (m, m):
            raise ValueError("H must be square")
        scale = max(np.abs(H).max(), 1.0)
        if np.abs(H - H.T).max() > 1e-12 * scale:
            raise ValueError("H must be symmetric")
        c = np.asarray(self.c, dtype=float).reshape(-1)
        if c.shape != (m,):
            raise ValueError(f"c must have length {m}")
        object.__setattr__(self, "H", 0.5 * (H + H.T))
        object.__setattr__(self, "c", c)
        for A_name, b_name in (("A_eq", "b_eq"), ("A_in", "b_in")):
            A, b = getattr(self, A_name), getattr(self, b_name)
            A = np.zeros((0, m)) if A is None else np.atleast_2d(np.asarray(A, dtype=float))
            b = np.zeros(0) if b is None else np.asarray(b, dtype=float).reshape(-1)
            if A.shape[1] != m or A.shape[0] != b.shape[0]:
                raise ValueError(f"{A_name}/{b_name} have inconsistent shapes {A.shape}, {b.shape}")
            object.__setattr__(self, A_name, A)
            object.__setattr__(self, b_name, b)

    @property
    def m(self) -> int:
        return self.H.shape[0]

    def objective(self, z) -> float:
        return float(0.5 * z @ self.H @ z + self.c @ z)


@dataclass
class QpSolution:
    z: np.ndarray
    eq_duals: np.ndarray
    ineq_duals: np.ndarray
    kkt_residual: float
    status: str
    iterations: int = 0
    active: list = field(default_factory=list)  # active inequality rows

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def kkt_residual(qp: QuadraticProgram, z, eq_duals=None, ineq_duals=None) -> float:
    """Largest violation among stationarity, primal/dual feasibility and complementarity.

    Multipliers follow the Lagrangian ``L = f(z) + lam'(A_eq z - b_eq) + mu'(A_in z - b_in)``.
    All terms are absolute infinity norms. Complementarity is measured by the
    natural residual ``|min(mu_i, b_i - A_i z)|``, which vanishes exactly when
    ``mu_i (A_i z - b_i) = 0`` and stays bounded for large multipliers.
    """
    z = np.asarray(z, dtype=float)
    lam = np.zeros(qp.A_eq.shape[0]) if eq_duals is None else np.asarray(eq_duals, dtype=float)
    mu = np.zeros(qp.A_in.shape[0]) if ineq_duals is None else np.asarray(ineq_duals, dtype=float)
    grad = qp.H @ z + qp.c + qp.A_eq.T @ lam + qp.A_in.T @ mu
    terms = [np.abs(grad).max(initial=0.0)]
    terms.append(np.abs(qp.A_eq @ z - qp.b_eq).max(initial=0.0))
    slack = qp.A_in @ z - qp.b_in
    terms.append(max(slack.max(initial=0.0), 0.0))
    terms.append(max((-mu).max(initial=0.0), 0.0))
    terms.append(np.abs(np.minimum(mu, -slack)).max(initial=0.0))
    return float(max(terms))


class _Factor:
    """Reduced-space quantities for the current active set.

    With ``H = L L'``, transformed normals ``T = L^-1 N`` and ``T_active = Q R``,
    the primal step for a new normal ``n`` is ``L^-T Q2 Q2' L^-1 n`` and the
    change of active multipliers is ``R^-1 Q1' L^-1 n``. The QR factors are
    updated by Givens rotations when a column enters or leaves.
    """

    def __init__(self, J: np.ndarray, T_active: np.ndarray):
        self.J = J
        self.k = T_active.shape[1]
        if self.k:
            self.Q, self.R = sla.qr(T_active, check_finite=False)
        else:
            self.Q, self.R = np.eye(J.shape[0]), np.zeros((J.shape[0], 0))

    def add(self, t: np.ndarray) -> None:
        self.Q, self.R = sla.qr_insert(self.Q, self.R, t, self.k, which="col", check_finite=False)
        self.k += 1

    def remove(self, j: int) -> None:
        self.Q, self.R = sla.qr_delete(self.Q, self.R, j, 1, which="col", check_finite=False)
        self.k -= 1

    def directions(self, t_plus: np.ndarray):
        k = self.k
        v = self.Q.T @ t_plus
        v2 = v[k:]
        z = self.J @ (self.Q[:, k:] @ v2)
        if k == 0:
            return z, np.zeros(0), not np.any(t_plus)
        r = sla.solve_triangular(self.R[:k], v[:k], check_finite=False)
        dependent = np.linalg.norm(v2) <= 1e-12 * max(np.linalg.norm(v), 1e-300)
        return z, r, dependent


def solve(qp: QuadraticProgram, tol: float = 1e-8, max_iter: Optional[int] = None, active_set=None) -> QpSolution:
    """Solve a convex QP; ``status == "optimal"`` certifies ``kkt_residual <= tol``.

    ``active_set`` optionally lists inequality rows expected to be active
    (e.g. from a previous receding-horizon step). Rows whose multipliers come
    out negative are discarded, so any guess is safe; a good one saves
    iterations.

    Linearly dependent but consistent equality rows are merged first. If
    ``H`` is singular but positive definite on the nullspace of the
    equality constraints, the equalities are eliminated and their
    multipliers recovered from stationarity afterwards.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter is None:
        max_iter = 10 * qp.m + 200
    reduced, U = _independent_equalities(qp, tol)
    if reduced is None:
        z, *_ = np.linalg.lstsq(qp.A_eq, qp.b_eq, rcond=None)
        return QpSolution(z, np.zeros(qp.A_eq.shape[0]), np.zeros(qp.A_in.shape[0]), kkt_residual(qp, z), INFEASIBLE)
    sol = _solve_reduced(reduced, tol, max_iter, active_set)
    if U is None:
        return sol
    lam = U @ sol.eq_duals
    res = kkt_residual(qp, sol.z, lam, sol.ineq_duals)
    status = MAX_ITER if sol.status == OPTIMAL and res > tol else sol.status
    return QpSolution(sol.z, lam, sol.ineq_duals, res, status, sol.iterations, sol.active)


def _solve_reduced(qp: QuadraticProgram, tol: float, max_iter: int, active_set) -> QpSolution:
    try:
        L = np.linalg.cholesky(qp.H)
    except np.linalg.LinAlgError:
        if qp.A_eq.shape[0]:
            return _solve_nullspace(qp, tol, max_iter, active_set)
        L = _shifted_cholesky(qp.H)
    return _dual_active_set(qp, L, tol, max_iter, active_set)


def _independent_equalities(qp: QuadraticProgram, tol: float):
    """Replace dependent equality rows by an independent combination ``U' A``.

    Returns ``(qp, None)`` when the rows are already independent and
    ``(None, None)`` when they are inconsistent. Multipliers of the reduced
    problem map back as ``lam = U lam_reduced``.
    """
    A, b = qp.A_eq, qp.b_eq
    if A.shape[0] == 0:
        return qp, None
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    rank = int(np.count_nonzero(s > max(A.shape) * np.finfo(float).eps * s[0])) if s[0] > 0 else 0
    if rank == A.shape[0]:
        return qp, None
    U = U[:, :rank]
    if np.abs(b - U @ (U.T @ b)).max() > tol * max(1.0, np.abs(b).max()):
        return None, None
    return QuadraticProgram(qp.H, qp.c, A_eq=U.T @ A, b_eq=U.T @ b, A_in=qp.A_in, b_in=qp.b_in), U


def _shifted_cholesky(H: np.ndarray) -> np.ndarray:
    scale = max(np.linalg.norm(H, 2), 1.0)
    if np.linalg.eigvalsh(H).min() < -1e-10 * scale:
        raise ValueError("H is not positive semidefinite")
    # roundoff-level semidefiniteness
    return np.linalg.cholesky(H + 1e-10 * scale * np.eye(H.shape[0]))


def _refined_solve(M: np.ndarray, lu, B: np.ndarray, trans: int = 0, iters: int = 2) -> np.ndarray:
    """LU solve with refinement sweeps whose residuals are formed in long double."""
    X = sla.lu_solve(lu, B, trans=trans, check_finite=False)
    ML = (M.T if trans else M).astype(np.longdouble)
    BL = np.asarray(B).astype(np.longdouble)
    for _ in range(iters):
        X = X + sla.lu_solve(lu, (BL - ML @ X).astype(float), trans=trans, check_finite=False)
    return X


def _solve_nullspace(qp: QuadraticProgram, tol: float, max_iter: int, active_set=None) -> QpSolution:
    """Eliminate the (independent) equalities by variable reduction.

    A pivoted QR of ``A_eq`` picks well-conditioned basic columns ``B``; with
    the remaining columns ``F`` the feasible set is ``z = z0 + Z y`` where
    ``z0 = [B^-1 b; 0]`` and ``Z = [-B^-1 F; I]``.
    """
    A, b = qp.A_eq, qp.b_eq
    m_e, m = A.shape
    _, _, piv = sla.qr(A, mode="economic", pivoting=True, check_finite=False)
    basic, free = np.sort(piv[:m_e]), np.sort(piv[m_e:])
    B = A[:, basic]
    lu = sla.lu_factor(B, check_finite=False)
    z0 = np.zeros(m)
    z0[basic] = _refined_solve(B, lu, b)
    Z = np.zeros((m, m - m_e))
    Z[basic] = -_refined_solve(B, lu, A[:, free])
    Z[free] = np.eye(m - m_e)

    if m == m_e:
        z, mu, sol = z0, np.zeros(qp.A_in.shape[0]), None
        feasible = np.all(qp.A_in @ z - qp.b_in <= tol)
    else:
        Hr = Z.T @ qp.H @ Z
        reduced = QuadraticProgram(
            0.5 * (Hr + Hr.T),
            Z.T @ (qp.H @ z0 + qp.c),
            A_in=qp.A_in @ Z,
            b_in=qp.b_in - qp.A_in @ z0,
        )
        try:
            L = np.linalg.cholesky(reduced.H)
        except np.linalg.LinAlgError:
            L = _shifted_cholesky(reduced.H)
        sol = _dual_active_set(reduced, L, tol, max_iter, active_set)
        z = z0 + Z @ sol.z
        mu = sol.ineq_duals
    # equality multipliers from the basic rows of stationarity: B' lam = -(H z + c + A_in' mu)_B
    g = qp.H @ z + qp.c + qp.A_in.T @ mu
    lam = _refined_solve(B, lu, -g[basic], trans=1)
    res = kkt_residual(qp, z, lam, mu)
    if sol is None:
        status = OPTIMAL if feasible and res <= tol else INFEASIBLE
        return QpSolution(z, lam, mu, res, status, 0, [])
    status = MAX_ITER if sol.status == OPTIMAL and res > tol else sol.status
    return QpSolution(z, lam, mu, res, status, sol.iterations, sol.active)


def _dual_active_set(qp: QuadraticProgram, L: np.ndarray, tol: float, max_iter: int, active_set=None) -> QpSolution:
    sol = _dual_active_set_run(qp, L, tol, max_iter, active_set)
    if sol.status == INFEASIBLE and active_set is not None and len(active_set):
        # a warm start carries rounding that can fake a dependency; only a cold start proves infeasibility
        return _dual_active_set_run(qp, L, tol, max_iter, None)
    return sol


def _dual_active_set_run(qp: QuadraticProgram, L: np.ndarray, tol: float, max_iter: int, active_set=None) -> QpSolution:
    n_eq = qp.A_eq.shape[0]
    # all constraints written as n_j' z >= b_j; equalities first
    normals = np.vstack([qp.A_eq, -qp.A_in]).T
    rhs = np.concatenate([qp.b_eq, -qp.b_in])
    Linv = sla.solve_triangular(L, np.eye(L.shape[0]), lower=True, check_finite=False)
    J = Linv.T
    T = Linv @ normals

    y0 = -(Linv @ qp.c)
    z = J @ y0
    active: list[int] = []
    sign = np.ones(normals.shape[1])
    u = np.zeros(0)
    if active_set is not None and len(active_set):
        warm = sorted({n_eq + int(j) for j in active_set if 0 <= int(j) < qp.A_in.shape[0]})
        start = _warm_start(T, rhs, y0, warm, tol)
        if start is not None:
            active, u, y = start
            z = J @ y
    status, iterations = MAX_ITER, 0

    fac = _Factor(J, T[:, active] * sign[active])

    while iterations < max_iter:
        slack = normals.T @ z - rhs
        p = _pick_violated(slack, active, n_eq, tol)
        if p is None:
            status = OPTIMAL
            break
        sp = 1.0 if p >= n_eq or slack[p] < 0 else -1.0
        t_plus = sp * T[:, p]
        u_plus = np.append(u, 0.0)
        added = False
        while not added and iterations < max_iter:
            iterations += 1
            z_dir, r, dependent = fac.directions(t_plus)
            # partial step limit from active inequalities (equalities never leave)
            t1, drop = np.inf, None
            if active:
                cand = (r > 0) & (np.asarray(active) >= n_eq)
                if cand.any():
                    ratios = np.where(cand, u_plus[:-1] / np.where(cand, r, 1.0), np.inf)
                    drop = int(np.argmin(ratios))
                    t1 = float(ratios[drop])
            if dependent:
                if drop is None:
                    return _finish(qp, z, active, sign, u, n_eq, INFEASIBLE, iterations, tol)
                u_plus[:-1] -= t1 * r
                u_plus[-1] += t1
                u_plus = np.delete(u_plus, drop)
                active.pop(drop)
                fac.remove(drop)
                continue
            t2 = -(sp * _slack(normals, rhs, z, p)) / float(z_dir @ (sp * normals[:, p]))
            t = min(t1, t2)
            z = z + t * z_dir
            u_plus[:-1] -= t * r
            u_plus[-1] += t
            if t2 <= t1:
                active.append(p)
                sign[p] = sp
                u = u_plus
                added = True
                fac.add(t_plus)
            else:
                u_plus = np.delete(u_plus, drop)
                active.pop(drop)
                fac.remove(drop)
        if not added:
            break
    return _finish(qp, z, active, sign, u, n_eq, status, iterations, tol)


def _warm_start(T, rhs, y0, candidates, tol):
    """Drop candidate rows until the equality-constrained optimum is dual feasible.

    Works in the transformed variable ``y = L' z`` where the subproblem is
    ``min 1/2 ||y - y0||^2`` s.t. ``T_S' y = b_S``.
    """
    S = list(candidates)
    if S:
        # keep a linearly independent subset (at most dim y rows)
        _, R, piv = sla.qr(T[:, S], mode="economic", pivoting=True, check_finite=False)
        d = np.abs(np.diag(R))
        rank = int(np.count_nonzero(d > 1e-10 * d[0])) if d.size and d[0] > 0 else 0
        S = sorted(S[j] for j in piv[:rank])
    while S:
        TS = T[:, S]
        Q, R = np.linalg.qr(TS)
        d = np.abs(np.diag(R))
        if d.min() <= 1e-10 * d.max():
            S.pop(int(np.argmin(d)))
            continue
        w = sla.solve_triangular(R, sla.solve_triangular(R, rhs[S] - TS.T @ y0, trans="T", check_finite=False), check_finite=False)
        if w.min() < 0:
            S.pop(int(np.argmin(w)))
            continue
        return S, w, y0 + TS @ w
    return None


def _slack(normals, rhs, z, j) -> float:
    return float(normals[:, j] @ z - rhs[j])


def _pick_violated(slack, active, n_eq, tol):
    viol = np.empty_like(slack)
    viol[:n_eq] = -np.abs(slack[:n_eq])
    viol[n_eq:] = slack[n_eq:]
    viol[active] = 0.0
    if n_eq:
        j = int(np.argmin(viol[:n_eq]))
        if viol[j] < -0.1 * tol:
            return j
    if viol.shape[0] > n_eq:
        j = n_eq + int(np.argmin(viol[n_eq:]))
        if viol[j] < -0.1 * tol:
            return j
    return None


def _duals(qp, active, sign, u, n_eq):
    lam = np.zeros(n_eq)
    mu = np.zeros(qp.A_in.shape[0])
    for j, idx in enumerate(active):
        if idx < n_eq:
            # stationarity H z + c - n u = 0 with n = sign * A_eq row
            lam[idx] = -sign[idx] * u[j]
        else:
            mu[idx - n_eq] = u[j]
    return lam, mu


def _finish(qp, z, active, sign, u, n_eq, status, iterations, tol):
    lam, mu = _duals(qp, active, sign, u, n_eq)
    res = kkt_residual(qp, z, lam, mu)
    if status == OPTIMAL and res > tol:
        z, lam, mu, res = _polish(qp, z, lam, mu, res, active, n_eq)
    if status == OPTIMAL and res > tol:
        status = MAX_ITER
    return QpSolution(z, lam, mu, res, status, iterations, sorted(j - n_eq for j in active if j >= n_eq))


def _polish(qp, z, lam, mu, res, active, n_eq):
    """Re-solve the KKT system of the final active set with iterative refinement."""
    eq_idx = [j for j in active if j < n_eq]
    in_idx = [j - n_eq for j in active if j >= n_eq]
    Aa = np.vstack([qp.A_eq[eq_idx], qp.A_in[in_idx]])
    ba = np.concatenate([qp.b_eq[eq_idx], qp.b_in[in_idx]])
    m, k = qp.m, Aa.shape[0]
    KKT = np.block([[qp.H, Aa.T], [Aa, np.zeros((k, k))]])
    rhs = np.concatenate([-qp.c, ba])
    try:
        lu = sla.lu_factor(KKT)
    except (ValueError, np.linalg.LinAlgError):
        return z, lam, mu, res
    sol = np.concatenate([z, lam[eq_idx], mu[in_idx]])
    best = (z, lam, mu, res)
    for _ in range(3):
        sol = sol + sla.lu_solve(lu, rhs - KKT @ sol)
        z_new = sol[:m]
        lam_new, mu_new = np.zeros_like(lam), np.zeros_like(mu)
        lam_new[eq_idx] = sol[m:m + len(eq_idx)]
        mu_new[in_idx] = np.maximum(sol[m + len(eq_idx):], 0.0)
        r_new = kkt_residual(qp, z_new, lam_new, mu_new)
        if r_new < best[3]:
            best = (z_new, lam_new, mu_new, r_new)
    return best
