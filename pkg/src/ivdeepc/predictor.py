"""Data matrices, instrumental-variable compression and SPC predictors.

A predictor maps a past window ``w = [u_past; y_past]`` and future inputs
``u_fut`` to future outputs, ``y_fut = P [w; u_fut]``. Three routes build
``P`` from one block-Hankel data set:

* :func:`spc_fit` -- least squares of ``Y_f`` on ``D = [U_p; Y_p; U_f]``.
* :func:`compress` with :func:`iv_instrument` -- solve ``(D Z'/N) g = v``
  for the dummy vector ``g`` and predict ``(Y_f Z'/N) g``; with ``Z = D``
  this is algebraically the SPC predictor.
* :func:`compress` with :func:`random_instrument` -- the random-averaging
  baseline, ``Z`` i.i.d. Gaussian.

Ridge convention: ``eps`` is added to the instrument Gram matrix ``D Z'``
(unscaled units), i.e. ``P = Y_f Z' (D Z' + eps I)^-1``. The default is
``eps = 1e-8 * trace(Z Z') / q``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .hankel import block_hankel
from .lti_sim import Trajectory, make_rng

PO_MOESP = "po_moesp"
RANDOM_AVERAGING = "random_averaging"
IDENTITY = "identity"

DEFAULT_RIDGE_REL = 1e-8


class SingularDataError(np.linalg.LinAlgError):
    """Compressed data matrix is singular and no ridge was given."""


@dataclass(frozen=True)
class DataMatrices:
    U_p: np.ndarray
    Y_p: np.ndarray
    U_f: np.ndarray
    Y_f: np.ndarray
    p: int
    f: int

    @property
    def n_cols(self) -> int:
        return self.U_p.shape[1]

    @property
    def r(self) -> int:
        return self.U_p.shape[0] // self.p

    @property
    def l(self) -> int:
        return self.Y_p.shape[0] // self.p

    @property
    def regressor(self) -> np.ndarray:
        """``[U_p; Y_p; U_f]``, the matrix multiplying g in the characteristic equation."""
        return np.vstack([self.U_p, self.Y_p, self.U_f])

    @property
    def n_past(self) -> int:
        return (self.r + self.l) * self.p


def build_data_matrices(traj: Trajectory, i: int, p: int, f: int, n_cols: int) -> DataMatrices:
    """Hankel blocks over samples ``i .. i+N-1`` with ``N = n_cols + p + f - 1``."""
    N = n_cols + p + f - 1
    if i < 0 or i + N > traj.T:
        raise ValueError(f"need {N} samples from index {i}, trajectory has {traj.T}")
    return DataMatrices(
        U_p=block_hankel(traj.u, i, p, n_cols),
        Y_p=block_hankel(traj.y, i, p, n_cols),
        U_f=block_hankel(traj.u, i + p, f, n_cols),
        Y_f=block_hankel(traj.y, i + p, f, n_cols),
        p=p,
        f=f,
    )


@dataclass(frozen=True)
class Instrument:
    Z: np.ndarray
    kind: str

    @property
    def q(self) -> int:
        return self.Z.shape[0]


def iv_instrument(dm: DataMatrices) -> Instrument:
    """Past inputs, past outputs and future inputs as instruments (PO-MOESP style)."""
    return Instrument(dm.regressor, PO_MOESP)


def random_instrument(q: int, n_cols: int, seed: int, stream: int = 0) -> Instrument:
    if q <= 0 or n_cols <= 0:
        raise ValueError("q and n_cols must be positive")
    return Instrument(make_rng(seed, stream).standard_normal((q, n_cols)), RANDOM_AVERAGING)


def identity_instrument(n_cols: int) -> Instrument:
    return Instrument(np.eye(n_cols), IDENTITY)


@dataclass(frozen=True)
class PredictorModel:
    """Compressed data and the multi-step predictor gains.

    ``W`` and ``Yc`` carry the ``1/N`` scaling; ``gains`` is ``[P_past, P_fut]``
    and ``ridge`` the absolute shift that was applied to ``N * W``.
    """

    W: Optional[np.ndarray]
    Yc: Optional[np.ndarray]
    gains: np.ndarray
    ridge: float
    n_cols: int
    p: int
    f: int
    r: int
    l: int
    kind: str
    scaled: bool = True

    @property
    def n_past(self) -> int:
        return (self.r + self.l) * self.p

    @property
    def P_past(self) -> np.ndarray:
        """Estimate of Gamma K (maps ``[u_past; y_past]``)."""
        return self.gains[:, :self.n_past]

    @property
    def P_fut(self) -> np.ndarray:
        """Estimate of the (B, D) Toeplitz matrix (maps ``u_fut``)."""
        return self.gains[:, self.n_past:]

    @property
    def W_shifted(self) -> np.ndarray:
        """Square compressed matrix with the ridge applied in the same ``1/N`` units."""
        if self.W is None or self.W.shape[0] != self.W.shape[1]:
            raise ValueError("only defined for square compressed models")
        return self.W + (self.ridge / self._scale_n) * np.eye(self.W.shape[0])

    @property
    def _scale_n(self) -> float:
        return float(self.n_cols) if self.scaled else 1.0


def _gram(D: np.ndarray) -> np.ndarray:
    """``D D'``; the single place both IV and SPC form it, so their Gram matrices agree bit for bit."""
    return D @ D.T


def default_ridge(Z: np.ndarray, rel: float = DEFAULT_RIDGE_REL) -> float:
    return rel * float(np.einsum("ij,ij->", Z, Z)) / Z.shape[0]


def _refined(M: np.ndarray, B: np.ndarray, solve, iters: int = 3, extended: bool = False) -> np.ndarray:
    """Solve ``M X = B`` with ``solve`` plus iterative refinement.

    Residuals are formed in long double, so each sweep recovers digits lost
    to the condition number of ``M``. The iterate with the smallest residual
    is kept; ``extended=True`` returns it in long double.
    """
    ML, BL = M.astype(np.longdouble), B.astype(np.longdouble)
    X = solve(B).astype(np.longdouble)
    R = BL - ML @ X
    best, best_res = X, float(np.abs(R).max())
    for _ in range(iters):
        X = X + solve(R.astype(float))
        R = BL - ML @ X
        res = float(np.abs(R).max())
        if res < best_res:
            best, best_res = X, res
    return best if extended else best.astype(float)


def _solve_right(M: np.ndarray, Yc: np.ndarray, symmetric: bool) -> np.ndarray:
    """Return ``Yc M^-1`` by a Cholesky (symmetric) or LU factorization with refinement."""
    try:
        if symmetric:
            fac = sla.cho_factor(M)
            return _refined(M, Yc.T, lambda B: sla.cho_solve(fac, B)).T
        fac = sla.lu_factor(M, check_finite=True)
        return _refined(M.T, Yc.T, lambda B: sla.lu_solve(fac, B, trans=1)).T
    except (np.linalg.LinAlgError, sla.LinAlgError) as exc:
        raise SingularDataError(str(exc)) from exc


def compress(dm: DataMatrices, z: Instrument, ridge: Optional[float] = None, scaled: bool = True) -> PredictorModel:
    """Multiply the data equation by ``Z'`` and solve for the predictor gains.

    For a square compressed matrix (instrument with as many rows as the
    regressor) the gains are ``Yc (W + eps/N I)^-1``. For the identity
    instrument ``W`` is wide and the minimum-norm solution
    ``Yc W' (W W' + eps/N^2 I)^-1`` is used, which is nominal DeePC with the
    least-norm ``g``. The 1/N scaling cancels and only affects the stored
    ``W`` and ``Yc``.

    ``ridge=0`` raises :class:`SingularDataError` if the system is singular.
    """
    if z.Z.shape[1] != dm.n_cols:
        raise ValueError(f"instrument has {z.Z.shape[1]} columns, data has {dm.n_cols}")
    D = dm.regressor
    scale = 1.0 / dm.n_cols if scaled else 1.0
    # gains come from the unscaled products, so they do not depend on `scaled`
    if z.kind == PO_MOESP and z.Z.shape == D.shape and np.array_equal(z.Z, D):
        Wu = _gram(D)
        Yu = dm.Y_f @ D.T
    else:
        Wu = D @ z.Z.T
        Yu = dm.Y_f @ z.Z.T
    q_reg = D.shape[0]

    if z.q == q_reg:
        eps = default_ridge(z.Z) if ridge is None else float(ridge)
        M = Wu + eps * np.eye(q_reg)
        if eps == 0 and np.linalg.matrix_rank(M) < q_reg:
            raise SingularDataError("compressed data matrix is singular; set ridge > 0")
        gains = _solve_right(M, Yu, symmetric=z.kind == PO_MOESP and eps >= 0)
    else:
        # wide W: minimum-norm g; the ridge acts on the Gram matrix D D'
        eps = default_ridge(D) if ridge is None else float(ridge)
        G = Wu @ Wu.T + eps * np.eye(q_reg)
        if eps == 0 and np.linalg.matrix_rank(G) < q_reg:
            raise SingularDataError("data matrix is rank deficient; set ridge > 0")
        gains = _solve_right(G, Yu @ Wu.T, symmetric=True)
    W, Yc = scale * Wu, scale * Yu

    return PredictorModel(W, Yc, gains, eps, dm.n_cols, dm.p, dm.f, dm.r, dm.l, z.kind, scaled)


def compress_gains_qr(model: PredictorModel) -> np.ndarray:
    """Recompute the gains of a square compressed model through a QR factorization.

    Independent of the LU/Cholesky path in :func:`compress`; used to pin the
    numerical accuracy of the gains.
    """
    M = model.W_shifted
    Q, R = np.linalg.qr(M)
    # Yc M^-1 = Yc R^-1 Q'
    return sla.solve_triangular(R, model.Yc.T, trans="T").T @ Q.T


def spc_fit(dm: DataMatrices, ridge: Optional[float] = None) -> PredictorModel:
    """Least-squares multi-step predictor ``Y_f D' (D D' + eps I)^-1``.

    The Gram matrix is factored by Cholesky.
    """
    D = dm.regressor
    eps = default_ridge(D) if ridge is None else float(ridge)
    G = _gram(D) + eps * np.eye(D.shape[0])
    if eps == 0 and np.linalg.matrix_rank(G) < G.shape[0]:
        raise SingularDataError("[U_p; Y_p; U_f] is rank deficient; set ridge > 0")
    gains = _solve_right(G, dm.Y_f @ D.T, symmetric=True)
    return PredictorModel(None, None, gains, eps, dm.n_cols, dm.p, dm.f, dm.r, dm.l, "spc")


def predict(model: PredictorModel, u_past, y_past, u_fut) -> np.ndarray:
    """Predicted future outputs, stacked time-major (``l * f`` vector)."""
    v = np.concatenate([np.ravel(u_past, order="F"), np.ravel(y_past, order="F"), np.ravel(u_fut, order="F")])
    if v.shape[0] != model.gains.shape[1]:
        raise ValueError(f"expected {model.gains.shape[1]} stacked entries, got {v.shape[0]}")
    return model.gains @ v


def solve_dummy(model: PredictorModel, v) -> np.ndarray:
    """Explicit solution of the compressed characteristic equation ``W g = v``."""
    M = model.W_shifted
    if M.shape[0] != M.shape[1]:
        return np.linalg.lstsq(M, v, rcond=None)[0]
    return np.linalg.solve(M, v)


def assert_deepc_spc_equivalence(dm: DataMatrices, ridge: Optional[float] = None, test_vectors=None, seed: int = 0, n_random: int = 100) -> float:
    """Largest relative gap between the explicit dummy-vector route and SPC.

    Route 1 solves ``(D D' + eps I) g = v`` by LU and predicts
    ``(Y_f D') g``; route 2 fits the SPC gains by Cholesky and applies them.
    ``test_vectors`` are columns ``v``; by default ``n_random`` standard
    normal draws scaled to the data magnitudes.

    ``g`` is typically huge with heavy cancellation in ``Y_f D' g`` (the
    output rows of ``D`` are nearly collinear with the input rows at low
    noise), so route 1 keeps ``g`` and the product in long double.
    """
    D = dm.regressor
    eps = default_ridge(D) if ridge is None else float(ridge)
    model_iv = compress(dm, iv_instrument(dm), ridge=eps, scaled=False)
    model_spc = spc_fit(dm, ridge=eps)
    if test_vectors is None:
        rng = make_rng(seed, 7)
        scales = np.sqrt(np.mean(D ** 2, axis=1))
        test_vectors = scales[:, None] * rng.standard_normal((D.shape[0], n_random))
    V = np.atleast_2d(np.asarray(test_vectors, dtype=float))
    if V.shape[0] != D.shape[0]:
        V = V.T
    M = model_iv.W_shifted
    lu = sla.lu_factor(M)
    G_hat = _refined(M, V, lambda B: sla.lu_solve(lu, B), extended=True)
    Y_iv = (model_iv.Yc.astype(np.longdouble) @ G_hat).astype(float)
    Y_spc = model_spc.gains @ V
    gap = np.linalg.norm(Y_iv - Y_spc, axis=0) / np.maximum(np.linalg.norm(Y_spc, axis=0), 1e-300)
    return float(gap.max())


def deepc_predict(dm: DataMatrices, u_past, y_past, u_fut, rcond: float = 1e-10) -> np.ndarray:
    """Nominal DeePC prediction ``Y_f g`` with the least-norm ``g`` solving
    ``[U_p; Y_p; U_f] g = [u_past; y_past; u_fut]``.

    Exact for noiseless data once the data matrix is persistently exciting.
    """
    v = np.concatenate([np.ravel(u_past, order="F"), np.ravel(y_past, order="F"), np.ravel(u_fut, order="F")])
    g = np.linalg.lstsq(dm.regressor, v, rcond=rcond)[0]
    return dm.Y_f @ g
