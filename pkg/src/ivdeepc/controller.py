"""Receding-horizon data-driven predictive controllers.

Four variants share one closed-loop driver:

``nominal``
    DeePC over the raw Hankel data with a ``lambda_g * ||g||^2`` penalty.
    By default ``g`` is minimized out in closed form, leaving an exact QP in
    ``u_fut``; ``condensed=False`` keeps ``(g, u_fut)`` as decision variables.
``iv``
    DeePC with the past/future-input instruments. By default the dummy
    vector is eliminated (condensed form, identical to SPC); ``condensed=False``
    keeps ``(g_hat, u_fut)`` as decision variables.
``spc``
    Least-squares subspace predictor.
``random_avg``
    DeePC compressed with a Gaussian random matrix of
    ``(r+l)p + rf`` rows.

Every variant tracks ``(y - ref)' Q (y - ref) + u' R u`` under
``|u| <= u_max`` and ``|u[k+1] - u[k]| <= du_max``, where the first rate
constraint is taken against the last applied input.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from . import qp as qpsolve
from .lti_sim import NoiseSpec, SystemRealization, Trajectory, simulate, white_noise
from .predictor import (
    DataMatrices,
    PredictorModel,
    build_data_matrices,
    compress,
    iv_instrument,
    random_instrument,
    spc_fit,
)

log = logging.getLogger(__name__)

VARIANTS = ("nominal", "iv", "spc", "random_avg")

# seed streams; one seed drives a whole realization
EXCITATION_STREAM = 1
NOISE_STREAM = 2
INSTRUMENT_STREAM = 3


class ControlInfeasibleError(RuntimeError):
    """The constrained tracking problem has no feasible input sequence."""


@dataclass
class ControllerConfig:
    p: int = 20
    f: int = 20
    n_cols: int = 500
    q_weight: float = 1.0
    r_weight: float = 1e-4
    Q: Optional[np.ndarray] = None
    R: Optional[np.ndarray] = None
    lambda_g: float = 1e-6
    ridge: Optional[float] = None
    u_max: float = 15.0
    du_max: float = 3.75
    variant: str = "iv"
    seed: int = 0
    condensed: bool = True
    qp_tol: float = 1e-8

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.p < 1 or self.f < 1:
            raise ValueError("p and f must be >= 1")
        if not (self.u_max >= 0 and self.du_max >= 0):
            raise ValueError("u_max and du_max must be nonnegative")

    def weights(self, r: int, l: int):
        Q = self.q_weight * np.eye(l * self.f) if self.Q is None else np.asarray(self.Q, dtype=float)
        R = self.r_weight * np.eye(r * self.f) if self.R is None else np.asarray(self.R, dtype=float)
        return Q, R


@dataclass
class ControllerState:
    """Past window (most recent sample last) and the identified model."""

    past_u: np.ndarray
    past_y: np.ndarray
    u_prev: np.ndarray
    model: object
    pending_u: Optional[np.ndarray] = None
    history: list = field(default_factory=list)
    last_active: list = field(default_factory=list)

    def push(self, u, y) -> None:
        self.past_u = np.hstack([self.past_u[:, 1:], np.reshape(u, (-1, 1))])
        self.past_y = np.hstack([self.past_y[:, 1:], np.reshape(y, (-1, 1))])

    @property
    def window(self) -> np.ndarray:
        """``[u_past; y_past]`` stacked time-major within each signal."""
        return np.concatenate([self.past_u.ravel(order="F"), self.past_y.ravel(order="F")])


@dataclass(frozen=True)
class NominalModel:
    """Nominal DeePC with ``g`` eliminated.

    For fixed ``v = [w; u_fut]`` the ``g`` subproblem
    ``min ||Y_f g - ref||_Q^2 + lambda ||g||^2  s.t.  D g = v`` splits into
    the least-norm part ``D^+ v`` and a ridge problem on the nullspace of
    ``D``, whose optimal value is ``s' Wy s`` with ``s = Y_f D^+ v - ref``.
    """

    dm: DataMatrices
    gain: np.ndarray  # Y_f D^+
    pinv_t: np.ndarray  # ||D^+ v|| = ||pinv_t v||
    Wy: np.ndarray
    lambda_g: float

    @property
    def n_past(self) -> int:
        return self.dm.n_past

    @property
    def r(self) -> int:
        return self.dm.r

    @property
    def l(self) -> int:
        return self.dm.l


def condense_nominal(config: ControllerConfig, dm: DataMatrices) -> NominalModel:
    # truncated SVD: noiseless data make D rank deficient
    Ud, sd, Vt = np.linalg.svd(dm.regressor, full_matrices=False)
    keep = sd > 1e-10 * sd[0]
    Ud, sd, Vt = Ud[:, keep], sd[keep], Vt[keep]
    pinv_t = Ud.T / sd[:, None]
    YV = dm.Y_f @ Vt.T
    gain = YV @ pinv_t
    Y_perp = dm.Y_f - YV @ Vt
    Qw, _ = config.weights(dm.r, dm.l)
    Lq = np.linalg.cholesky(Qw)
    M = Lq.T @ Y_perp
    ev, V = np.linalg.eigh(M @ M.T)
    ev = np.where(ev > 1e-12 * max(ev.max(), 1e-300), ev, 0.0)
    lam = config.lambda_g
    # lam / (ev + lam), with directions outside the range of M kept at weight 1
    w = np.divide(lam, ev + lam, out=np.ones_like(ev), where=(ev + lam) > 0)
    Wy = Lq @ (V * w) @ V.T @ Lq.T
    return NominalModel(dm, gain, pinv_t, 0.5 * (Wy + Wy.T), lam)


def build_model(config: ControllerConfig, dm: DataMatrices):
    """Identify the variant's model from frozen data matrices."""
    if config.variant == "nominal":
        return condense_nominal(config, dm) if config.condensed else dm
    if config.variant == "spc":
        return spc_fit(dm, ridge=config.ridge)
    if config.variant == "iv":
        # unscaled: the raw form then uses the very matrix the gains were solved with
        return compress(dm, iv_instrument(dm), ridge=config.ridge, scaled=False)
    q = dm.regressor.shape[0]
    Z = random_instrument(q, dm.n_cols, config.seed, INSTRUMENT_STREAM)
    return compress(dm, Z, ridge=config.ridge, scaled=False)


def input_constraints(config: ControllerConfig, r: int, u_prev) -> tuple:
    """Rows ``A u <= b`` for magnitude and rate bounds on a time-major ``u_fut``."""
    f = config.f
    m = r * f
    u_prev = np.reshape(u_prev, -1)
    rows, rhs = [], []
    if np.isfinite(config.u_max):
        rows += [np.eye(m), -np.eye(m)]
        rhs += [np.full(m, config.u_max)] * 2
    if np.isfinite(config.du_max):
        Dlt = np.eye(m) - np.eye(m, k=-r)
        d = np.zeros(m)
        d[:r] = u_prev
        rows += [Dlt, -Dlt]
        rhs += [config.du_max + d, config.du_max - d]
    if not rows:
        return np.zeros((0, m)), np.zeros(0)
    return np.vstack(rows), np.concatenate(rhs)


def _embed(A: np.ndarray, offset: int, width: int) -> np.ndarray:
    out = np.zeros((A.shape[0], width))
    out[:, offset:offset + A.shape[1]] = A
    return out


def _normalized(H, c, **constraints) -> qpsolve.QuadraticProgram:
    # argmin is invariant to positive cost scaling; keep the Hessian O(1)
    s = max(np.abs(np.diag(H)).max(), 1e-300)
    return qpsolve.QuadraticProgram(H / s, c / s, **constraints)


def assemble_nominal(config: ControllerConfig, dm: DataMatrices, state: ControllerState, reference) -> qpsolve.QuadraticProgram:
    """DeePC problem in ``(g, u_fut)`` with ``Y_fut = Y_f g`` eliminated."""
    r, l, N = dm.r, dm.l, dm.n_cols
    Q, R = config.weights(r, l)
    m_u = r * config.f
    m = N + m_u
    ref = np.ravel(reference, order="F")
    H = np.zeros((m, m))
    H[:N, :N] = 2 * (dm.Y_f.T @ Q @ dm.Y_f + config.lambda_g * np.eye(N))
    H[N:, N:] = 2 * R
    c = np.zeros(m)
    c[:N] = -2 * dm.Y_f.T @ Q @ ref
    past = np.vstack([dm.U_p, dm.Y_p])
    A_eq = np.vstack([
        _embed(past, 0, m),
        np.hstack([dm.U_f, -np.eye(m_u)]),
    ])
    b_eq = np.concatenate([state.window, np.zeros(m_u)])
    A_u, b_u = input_constraints(config, r, state.u_prev)
    return _normalized(H, c, A_eq=A_eq, b_eq=b_eq, A_in=_embed(A_u, N, m), b_in=b_u)


def assemble_nominal_condensed(config: ControllerConfig, model: NominalModel, state: ControllerState, reference) -> qpsolve.QuadraticProgram:
    """Nominal DeePC as a QP in ``u_fut`` (same minimizer as :func:`assemble_nominal`)."""
    _, R = config.weights(model.r, model.l)
    n = model.n_past
    w = state.window
    Gu, Eu = model.gain[:, n:], model.pinv_t[:, n:]
    s0 = model.gain[:, :n] @ w - np.ravel(reference, order="F")
    e0 = model.pinv_t[:, :n] @ w
    H = 2 * (Gu.T @ model.Wy @ Gu + model.lambda_g * Eu.T @ Eu + R)
    c = 2 * (Gu.T @ model.Wy @ s0 + model.lambda_g * Eu.T @ e0)
    A_u, b_u = input_constraints(config, model.r, state.u_prev)
    return _normalized(0.5 * (H + H.T), c, A_in=A_u, b_in=b_u)


def assemble_condensed(config: ControllerConfig, model: PredictorModel, state: ControllerState, reference) -> qpsolve.QuadraticProgram:
    """Tracking problem in ``u_fut`` alone with ``y = P_past w + P_fut u``."""
    Q, R = config.weights(model.r, model.l)
    ref = np.ravel(reference, order="F")
    free = model.P_past @ state.window - ref
    H = 2 * (model.P_fut.T @ Q @ model.P_fut + R)
    c = 2 * model.P_fut.T @ Q @ free
    A_u, b_u = input_constraints(config, model.r, state.u_prev)
    return _normalized(H, c, A_in=A_u, b_in=b_u)


def assemble_iv(config: ControllerConfig, model: PredictorModel, state: ControllerState, reference, condensed: Optional[bool] = None) -> qpsolve.QuadraticProgram:
    """IV (or random-averaging) DeePC problem.

    Condensed: decision ``u_fut`` only. Raw: decision ``(g_hat, u_fut)`` with
    ``W g_hat = [w; u_fut]`` as equality constraints and ``Y_fut = Yc g_hat``.
    Both share the last ``r f`` entries as ``u_fut``.
    """
    condensed = config.condensed if condensed is None else condensed
    if condensed:
        return assemble_condensed(config, model, state, reference)
    Q, R = config.weights(model.r, model.l)
    W = model.W_shifted
    q = W.shape[0]
    m_u = model.r * config.f
    m = q + m_u
    ref = np.ravel(reference, order="F")
    H = np.zeros((m, m))
    H[:q, :q] = 2 * model.Yc.T @ Q @ model.Yc
    H[q:, q:] = 2 * R
    c = np.zeros(m)
    c[:q] = -2 * model.Yc.T @ Q @ ref
    n_past = model.n_past
    A_eq = np.vstack([
        _embed(W[:n_past], 0, m),
        np.hstack([W[n_past:], -np.eye(m_u)]),
    ])
    b_eq = np.concatenate([state.window, np.zeros(m_u)])
    A_u, b_u = input_constraints(config, model.r, state.u_prev)
    return _normalized(H, c, A_eq=A_eq, b_eq=b_eq, A_in=_embed(A_u, q, m), b_in=b_u)


def assemble(config: ControllerConfig, state: ControllerState, reference) -> qpsolve.QuadraticProgram:
    if config.variant == "nominal":
        if isinstance(state.model, NominalModel):
            return assemble_nominal_condensed(config, state.model, state, reference)
        return assemble_nominal(config, state.model, state, reference)
    if config.variant == "spc":
        return assemble_condensed(config, state.model, state, reference)
    return assemble_iv(config, state.model, state, reference)


def step(config: ControllerConfig, state: ControllerState, reference, measurement=None) -> np.ndarray:
    """One receding-horizon step; returns the applied input.

    ``measurement`` is the output paired with the previously applied input.
    ``reference`` covers the horizon (``l x f`` or a time-major vector).
    """
    if measurement is not None:
        if state.pending_u is None:
            raise ValueError("measurement given but no input was applied")
        state.push(state.pending_u, measurement)
    qp = assemble(config, state, reference)
    r = state.past_u.shape[0]
    t0 = time.perf_counter()
    warm = shift_active_set(state.last_active, r * config.f, r)
    sol = qpsolve.solve(qp, tol=config.qp_tol, active_set=warm)
    elapsed = time.perf_counter() - t0
    if sol.status == qpsolve.INFEASIBLE:
        raise ControlInfeasibleError(
            f"tracking QP infeasible (u_prev={state.u_prev}, u_max={config.u_max}, du_max={config.du_max})"
        )
    state.last_active = sol.active
    u_fut = sol.z[-r * config.f:]
    u0 = clamp_input(u_fut[:r], state.u_prev, config.u_max, config.du_max)
    state.history.append((sol.status, sol.iterations, sol.kkt_residual, elapsed))
    state.u_prev = u0
    state.pending_u = u0
    return u0


def shift_active_set(active, m: int, r: int) -> list:
    """Move active input-constraint rows one time step earlier.

    Rows come in blocks of ``m = r f`` (see :func:`input_constraints`); the
    last slot of each block is kept as well.
    """
    out = set()
    for idx in active:
        block, t = divmod(idx, m)
        if t >= r:
            out.add(block * m + t - r)
        if t >= m - r:
            out.add(idx)
    return sorted(out)


def clamp_input(u, u_prev, u_max, du_max) -> np.ndarray:
    """Project onto the box and rate bounds so that both hold exactly in floating point."""
    u_prev = np.asarray(u_prev, dtype=float)
    lo = np.maximum(-u_max, u_prev - du_max)
    hi = np.minimum(u_max, u_prev + du_max)
    u = np.clip(u, lo, hi)
    # u_prev +- du_max is rounded, so |u - u_prev| can still exceed du_max by an ulp
    for _ in range(8):
        bad = np.abs(u - u_prev) > du_max
        if not bad.any():
            break
        u = np.where(bad, np.nextafter(u, u_prev), u)
    return u


@dataclass
class ClosedLoopResult:
    trajectory: Trajectory
    excitation_length: int
    u: np.ndarray
    y: np.ndarray
    reference: np.ndarray
    diagnostics: list

    @property
    def solve_time(self) -> float:
        return float(sum(d[3] for d in self.diagnostics))

    @property
    def n_not_optimal(self) -> int:
        return sum(d[0] != qpsolve.OPTIMAL for d in self.diagnostics)


def run_closed_loop(
    sys: SystemRealization,
    config: ControllerConfig,
    reference,
    noise,
    T_control: int,
    excitation=None,
    excitation_length: int = 1200,
    x0=None,
) -> ClosedLoopResult:
    """Open-loop excitation followed by receding-horizon control.

    ``noise`` is one innovation stream of length ``excitation_length + T_control``.
    ``excitation`` defaults to unit-variance white noise from ``config.seed``.
    ``reference`` must cover ``T_control + f - 1`` samples (the controller
    sees the true reference over its horizon); shorter references are held
    at their last value.
    """
    e = np.atleast_2d(np.asarray(noise, dtype=float))
    total = excitation_length + T_control
    if e.shape[1] < total:
        raise ValueError(f"noise covers {e.shape[1]} samples, need {total}")
    if excitation is None:
        excitation = white_noise(NoiseSpec(1.0, config.seed, EXCITATION_STREAM), excitation_length, sys.r)
    excitation = np.atleast_2d(np.asarray(excitation, dtype=float))
    p, f = config.p, config.f
    N = config.n_cols + p + f - 1
    if N > excitation_length:
        raise ValueError(f"data needs {N} samples, excitation has {excitation_length}")

    data, X = simulate(sys, excitation, e[:, :excitation_length], x0=x0, return_states=True)
    dm = build_data_matrices(data, excitation_length - N, p, f, config.n_cols)
    state = ControllerState(
        past_u=data.u[:, -p:].copy(),
        past_y=data.y[:, -p:].copy(),
        u_prev=data.u[:, -1].copy(),
        model=build_model(config, dm),
    )

    ref = np.atleast_2d(np.asarray(reference, dtype=float))
    need = T_control + f - 1
    if ref.shape[1] < need:
        ref = np.hstack([ref, np.repeat(ref[:, -1:], need - ref.shape[1], axis=1)])

    x = X[:, -1]
    u_log = np.empty((sys.r, T_control))
    y_log = np.empty((sys.l, T_control))
    y_meas = None
    for k in range(T_control):
        u = step(config, state, ref[:, k:k + f], y_meas)
        ek = e[:, excitation_length + k]
        y_meas = sys.C @ x + sys.D @ u + ek
        x = sys.A @ x + sys.B @ u + sys.K @ ek
        u_log[:, k] = u
        y_log[:, k] = y_meas
    full = Trajectory(
        np.hstack([data.u, u_log]),
        np.hstack([data.y, y_log]),
        e[:, :total],
    )
    return ClosedLoopResult(full, excitation_length, u_log, y_log, ref[:, :T_control], state.history)
