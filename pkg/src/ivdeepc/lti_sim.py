"""Innovation-form LTI systems: simulation, predictor form and test signals.

Signals are stored channel-major, i.e. an input sequence of an ``r``-input
system over ``T`` samples is an array of shape ``(r, T)``.

Random numbers come from :class:`numpy.random.Generator` on top of the
counter-based Philox bit generator; Gaussian samples use numpy's ziggurat
sampler. A (seed, stream) pair therefore fixes a sequence on every platform.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator keyed by ``seed`` with an independent sub-stream index."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


def _as_matrix(M, name: str) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {M.shape}")
    return M


@dataclass(frozen=True)
class SystemRealization:
    """Innovation-form system

        x[k+1] = A x[k] + B u[k] + K e[k]
        y[k]   = C x[k] + D u[k] + e[k]
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    K: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        n = A.shape[0]
        # 1-D B and K are read as column vectors
        B = _as_matrix(self.B, "B").reshape(n, -1) if np.ndim(self.B) < 2 else _as_matrix(self.B, "B")
        K = _as_matrix(self.K, "K").reshape(n, -1) if np.ndim(self.K) < 2 else _as_matrix(self.K, "K")
        C = _as_matrix(self.C, "C")
        r, l = B.shape[1], C.shape[0]
        D = np.full((l, r), float(self.D)) if np.ndim(self.D) == 0 else _as_matrix(self.D, "D")
        expected = {"A": (n, n), "B": (n, r), "C": (l, n), "D": (l, r), "K": (n, l)}
        for name, M in zip("ABCDK", (A, B, C, D, K)):
            if M.shape != expected[name]:
                raise ValueError(f"{name} has shape {M.shape}, expected {expected[name]}")
            M = M.copy()
            M.setflags(write=False)
            object.__setattr__(self, name, M)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def r(self) -> int:
        return self.B.shape[1]

    @property
    def l(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class PredictorRealization:
    """Predictor form: x[k+1] = A_tilde x[k] + B_tilde u[k] + K y[k]."""

    A_tilde: np.ndarray
    B_tilde: np.ndarray
    K: np.ndarray
    C: np.ndarray
    D: np.ndarray

    @property
    def n(self) -> int:
        return self.A_tilde.shape[0]

    @property
    def r(self) -> int:
        return self.B_tilde.shape[1]

    @property
    def l(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class Trajectory:
    """Synchronized input/output (and optionally innovation) sequences."""

    u: np.ndarray
    y: np.ndarray
    e: Optional[np.ndarray] = None

    def __post_init__(self):
        u = np.atleast_2d(np.asarray(self.u, dtype=float))
        y = np.atleast_2d(np.asarray(self.y, dtype=float))
        e = None if self.e is None else np.atleast_2d(np.asarray(self.e, dtype=float))
        if u.shape[1] != y.shape[1] or (e is not None and e.shape[1] != u.shape[1]):
            raise ValueError("u, y and e must share the same length")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "e", e)

    @property
    def T(self) -> int:
        return self.u.shape[1]

    def window(self, start: int, stop: int) -> "Trajectory":
        e = None if self.e is None else self.e[:, start:stop]
        return Trajectory(self.u[:, start:stop], self.y[:, start:stop], e)


@dataclass(frozen=True)
class NoiseSpec:
    variance: float = 1.0
    seed: int = 0
    stream: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError("variance must be nonnegative")


def benchmark_system() -> SystemRealization:
    """Fifth-order two-plate flexible-shaft setup (single input, single output)."""
    A = np.array([
        [4.4, 1, 0, 0, 0],
        [-8.09, 0, 1, 0, 0],
        [7.83, 0, 0, 1, 0],
        [-4, 0, 0, 0, 1],
        [0.86, 0, 0, 0, 0],
    ])
    B = np.array([[0.00098], [0.01299], [0.01859], [0.0033], [-0.00002]])
    C = np.array([[1.0, 0, 0, 0, 0]])
    K = np.array([[2.3], [-6.64], [7.515], [-4.0146], [0.86336]])
    return SystemRealization(A, B, C, np.zeros((1, 1)), K)


def predictor_form(sys: SystemRealization) -> PredictorRealization:
    A_tilde = sys.A - sys.K @ sys.C
    B_tilde = sys.B - sys.K @ sys.D
    return PredictorRealization(A_tilde, B_tilde, sys.K, sys.C, sys.D)


def _check_inputs(n, r, l, u, e, x0):
    u = np.atleast_2d(np.asarray(u, dtype=float))
    if u.shape[0] != r:
        raise ValueError(f"u must have {r} rows, got {u.shape[0]}")
    if e is None:
        e = np.zeros((l, u.shape[1]))
    e = np.atleast_2d(np.asarray(e, dtype=float))
    if e.shape != (l, u.shape[1]):
        raise ValueError(f"e must have shape {(l, u.shape[1])}, got {e.shape}")
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).reshape(-1)
    if x.shape != (n,):
        raise ValueError(f"x0 must have length {n}")
    return u, e, x


def simulate(sys: SystemRealization, u, e=None, x0=None, return_states: bool = False):
    """Run the innovation-form recursion from ``x0`` (zero by default).

    Returns a :class:`Trajectory`; with ``return_states`` also the ``(n, T+1)``
    state sequence including the final state.
    """
    u, e, x = _check_inputs(sys.n, sys.r, sys.l, u, e, x0)
    T = u.shape[1]
    X = np.empty((sys.n, T + 1))
    y = np.empty((sys.l, T))
    A, B, C, D, K = sys.A, sys.B, sys.C, sys.D, sys.K
    X[:, 0] = x
    for k in range(T):
        y[:, k] = C @ x + D @ u[:, k] + e[:, k]
        x = A @ x + B @ u[:, k] + K @ e[:, k]
        X[:, k + 1] = x
    traj = Trajectory(u, y, e)
    return (traj, X) if return_states else traj


def simulate_predictor(pred: PredictorRealization, u, y, e, x0=None) -> np.ndarray:
    """Re-generate outputs from the predictor form driven by measured ``y``.

    The state is propagated with the measured outputs; the returned outputs
    are ``C x + D u + e`` along that state path.
    """
    u, e, x = _check_inputs(pred.n, pred.r, pred.l, u, e, x0)
    y = np.atleast_2d(np.asarray(y, dtype=float))
    out = np.empty_like(y)
    for k in range(u.shape[1]):
        out[:, k] = pred.C @ x + pred.D @ u[:, k] + e[:, k]
        x = pred.A_tilde @ x + pred.B_tilde @ u[:, k] + pred.K @ y[:, k]
    return out


def white_noise(spec: NoiseSpec, T: int, channels: int = 1) -> np.ndarray:
    """Zero-mean i.i.d. Gaussian samples of shape ``(channels, T)``."""
    if T <= 0:
        raise ValueError("T must be positive")
    if spec.variance == 0:
        return np.zeros((channels, T))
    rng = make_rng(spec.seed, spec.stream)
    return np.sqrt(spec.variance) * rng.standard_normal((channels, T))


def square_wave(amplitude: float, offset: float, period: int, T: int) -> np.ndarray:
    """Square wave starting high, switching every ``period // 2`` samples."""
    if period < 2 or int(period) != period:
        raise ValueError("period must be an integer >= 2")
    if T <= 0:
        raise ValueError("T must be positive")
    half = period // 2
    k = np.arange(T)
    high = (k % period) < half
    return np.where(high, offset + amplitude, offset - amplitude).astype(float)


def decay_norm(sys: SystemRealization, p: int) -> float:
    """Frobenius norm of (A - K C)^p, the past-window truncation error."""
    if p < 0:
        raise ValueError("p must be nonnegative")
    return float(np.linalg.norm(np.linalg.matrix_power(predictor_form(sys).A_tilde, p), "fro"))


def deadbeat_gain(sys: SystemRealization) -> np.ndarray:
    """Observer gain placing every eigenvalue of A - L C at zero (single output).

    Only meaningful for noiseless data, where any observer gain gives an exact
    predictor form.
    """
    if sys.l != 1:
        raise ValueError("deadbeat_gain supports single-output systems only")
    n = sys.n
    obs = np.vstack([sys.C @ np.linalg.matrix_power(sys.A, j) for j in range(n)])
    # Ackermann's formula on the dual pair with characteristic polynomial z^n
    return np.linalg.matrix_power(sys.A, n) @ np.linalg.solve(obs, np.eye(n)[:, [-1]])
