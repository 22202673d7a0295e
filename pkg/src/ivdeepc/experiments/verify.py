"""Self-checks behind ``ivdeepc verify``.

Each check returns ``(name, passed, value, threshold)``. The quick battery
runs in a few seconds and touches the data equation, the DeePC/SPC
equivalence, noiseless behavioral prediction and the QP solver against an
exhaustive active-set oracle.
"""
from __future__ import annotations

import itertools
from typing import NamedTuple

import numpy as np

from .. import qp as qpsolve
from ..hankel import data_equation_residual
from ..lti_sim import (
    NoiseSpec,
    benchmark_system,
    deadbeat_gain,
    decay_norm,
    simulate,
    white_noise,
)
from ..predictor import assert_deepc_spc_equivalence, build_data_matrices, deepc_predict


class Check(NamedTuple):
    name: str
    passed: bool
    value: float
    threshold: float


def exhaustive_qp(qp: qpsolve.QuadraticProgram, max_active: int = None, tol: float = 1e-9):
    """Strictly convex QP with inequalities only, by enumerating active sets.

    Returns the minimizer, or ``None`` if no KKT point exists (infeasible).
    Only practical for a handful of constraints.
    """
    m, k_in = qp.m, qp.A_in.shape[0]
    max_active = min(m, k_in) if max_active is None else max_active
    for k in range(max_active + 1):
        for S in itertools.combinations(range(k_in), k):
            A = qp.A_in[list(S)]
            KKT = np.block([[qp.H, A.T], [A, np.zeros((k, k))]])
            try:
                sol = np.linalg.solve(KKT, np.concatenate([-qp.c, qp.b_in[list(S)]]))
            except np.linalg.LinAlgError:
                continue
            z, mu = sol[:m], sol[m:]
            if np.all(qp.A_in @ z - qp.b_in <= tol) and np.all(mu >= -tol):
                return z
    return None


def random_qp(rng: np.random.Generator, m: int = 2, max_rows: int = 4) -> qpsolve.QuadraticProgram:
    M = rng.standard_normal((m, m))
    k = int(rng.integers(0, max_rows + 1))
    return qpsolve.QuadraticProgram(
        M @ M.T + 0.1 * np.eye(m),
        3 * rng.standard_normal(m),
        A_in=rng.standard_normal((k, m)),
        b_in=rng.standard_normal(k),
    )


def qp_battery(n: int = 500, seed: int = 0, tol: float = 1e-8):
    """Worst relative deviation from the oracle and the number of mismatches.

    A mismatch is a wrong status, a minimizer further than
    ``tol * max(1, |z|_inf)`` from the oracle, or an ``optimal`` solve whose
    recomputed KKT residual exceeds ``tol``.
    """
    rng = np.random.default_rng(seed)
    worst, mismatches = 0.0, 0
    for _ in range(n):
        qp = random_qp(rng)
        sol = qpsolve.solve(qp, tol=tol)
        ref = exhaustive_qp(qp)
        if ref is None:
            mismatches += sol.status != qpsolve.INFEASIBLE
            continue
        if not sol.optimal:
            mismatches += 1
            continue
        if qpsolve.kkt_residual(qp, sol.z, sol.eq_duals, sol.ineq_duals) > tol:
            mismatches += 1
        dev = float(np.abs(sol.z - ref).max() / max(1.0, np.abs(ref).max()))
        worst = max(worst, dev)
        mismatches += dev > tol
    return worst, mismatches


def _noisy_trajectory(var: float, T: int, seed: int = 0):
    sys = benchmark_system()
    u = white_noise(NoiseSpec(1.0, seed, 1), T)
    e = white_noise(NoiseSpec(var, seed, 2), T)
    return sys, simulate(sys, u, e)


def run_checks(n_qp: int = 500) -> list:
    sys = benchmark_system()
    p = f = 20
    n_cols = 500
    N = n_cols + p + f - 1
    checks = []

    _, clean = _noisy_trajectory(0.0, N)
    _, noisy = _noisy_trajectory(0.1 ** 2, 200 + N)
    checks.append(Check("data equation, noiseless, p=20", *_below(
        data_equation_residual(sys, clean, 0, p, f, n_cols, include_noise=False), 1e-6)))
    checks.append(Check("data equation, noisy with innovations, p=20", *_below(
        data_equation_residual(sys, noisy, 0, p, f, n_cols), 1e-6)))
    checks.append(Check("truncation ||(A-KC)^20||_F", *_below(decay_norm(sys, 20), 1e-3)))
    checks.append(Check("data equation, noiseless, deadbeat observer, p=20", *_below(
        data_equation_residual(sys, clean, 0, p, f, n_cols, include_noise=False,
                               observer_gain=deadbeat_gain(sys)), 1e-8)))
    _, long_noisy = _noisy_trajectory(0.1 ** 2, 80 + f + n_cols - 1)
    checks.append(Check("data equation, noisy with innovations, p=80", *_below(
        data_equation_residual(sys, long_noisy, 0, 80, f, n_cols), 1e-6)))

    dm = build_data_matrices(noisy, 0, p, f, n_cols)
    checks.append(Check("DeePC/SPC equivalence", *_below(assert_deepc_spc_equivalence(dm), 1e-8)))

    _, held = _noisy_trajectory(0.0, 60 + p + f - 1 + 200, seed=3)
    dm_clean = build_data_matrices(held, 0, p, f, 60)
    worst = 0.0
    for k in range(160, 260, 10):
        y_hat = deepc_predict(dm_clean, held.u[:, k - p:k], held.y[:, k - p:k], held.u[:, k:k + f])
        y_true = held.y[0, k:k + f]
        worst = max(worst, float(np.linalg.norm(y_hat - y_true) / np.linalg.norm(y_true)))
    checks.append(Check("noiseless DeePC prediction, N=60", *_below(worst, 1e-6)))

    worst, mism = qp_battery(n_qp)
    checks.append(Check(f"QP oracle battery ({n_qp} problems)", mism == 0 and worst <= 1e-8, worst, 1e-8))
    return checks


def _below(value: float, threshold: float):
    return value < threshold, float(value), threshold
