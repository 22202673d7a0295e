"""Block-Hankel / block-Toeplitz builders and the data-equation residual.

Throughout the package the combined past window is stacked inputs first,
``[U_past; Y_past]``, and every block row holds one time step with the
channels of that step stacked inside the block.
"""
from __future__ import annotations

from enum import Enum
from typing import Optional

import numpy as np

from .lti_sim import PredictorRealization, SystemRealization, Trajectory, predictor_form


class ToeplitzKind(Enum):
    BD = "BD"  # blocks D, CB, CAB, ...
    KI = "KI"  # blocks I, CK, CAK, ...


def block_hankel(signal, i: int, s: int, n_cols: int) -> np.ndarray:
    """Block-Hankel matrix with ``s`` block rows and ``n_cols`` columns.

    Block (a, b) is the sample at time ``i + a + b``; ``n_cols + s - 1``
    samples starting at ``i`` are used.

    >>> block_hankel([1., 2., 3., 4.], 0, 2, 3)
    array([[1., 2., 3.],
           [2., 3., 4.]])
    """
    x = np.atleast_2d(np.asarray(signal, dtype=float))
    d, T = x.shape
    if i < 0 or s < 1 or n_cols < 1:
        raise ValueError("need i >= 0, s >= 1 and n_cols >= 1")
    if i + s + n_cols - 1 > T:
        raise ValueError(
            f"block_hankel needs samples {i}..{i + s + n_cols - 2}, signal has {T}"
        )
    windows = np.lib.stride_tricks.sliding_window_view(x[:, i:i + s + n_cols - 1], n_cols, axis=1)
    # (d, s, n_cols) -> (s, d, n_cols): channels interleaved inside each block row
    return np.ascontiguousarray(windows.transpose(1, 0, 2).reshape(s * d, n_cols))


def _markov(sys: SystemRealization, M: np.ndarray, f: int) -> list:
    blocks, AjM = [], M
    for _ in range(f - 1):
        blocks.append(sys.C @ AjM)
        AjM = sys.A @ AjM
    return blocks


def block_toeplitz(sys: SystemRealization, f: int, kind: ToeplitzKind = ToeplitzKind.BD) -> np.ndarray:
    """Lower block-triangular Toeplitz matrix of the (B, D) or (K, I) impulse chain."""
    if f < 1:
        raise ValueError("f must be >= 1")
    kind = ToeplitzKind(kind)
    if kind is ToeplitzKind.BD:
        M, diag = sys.B, sys.D
    else:
        M, diag = sys.K, np.eye(sys.l)
    l, w = diag.shape
    H = np.zeros((l * f, w * f))
    blocks = [diag] + _markov(sys, M, f)
    for a in range(f):
        for b in range(a + 1):
            H[a * l:(a + 1) * l, b * w:(b + 1) * w] = blocks[a - b]
    return H


def extended_observability(sys: SystemRealization, f: int) -> np.ndarray:
    """Stack of C, CA, ..., CA^(f-1)."""
    if f < 1:
        raise ValueError("f must be >= 1")
    rows, CAj = [], sys.C
    for _ in range(f):
        rows.append(CAj)
        CAj = CAj @ sys.A
    return np.vstack(rows)


def extended_controllability(pred: PredictorRealization, p: int) -> np.ndarray:
    """``[A~^(p-1) B~, ..., B~ | A~^(p-1) K, ..., K]``.

    All input columns come first, then all output columns, so the result
    multiplies ``[U_past; Y_past]`` directly.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    kb, kk = [], []
    Bj, Kj = pred.B_tilde, pred.K
    for _ in range(p):
        kb.append(Bj)
        kk.append(Kj)
        Bj = pred.A_tilde @ Bj
        Kj = pred.A_tilde @ Kj
    return np.hstack(kb[::-1] + kk[::-1])


def data_equation_residual(
    sys: SystemRealization,
    traj: Trajectory,
    i: int,
    p: int,
    f: int,
    n_cols: int,
    include_noise: bool = True,
    observer_gain: Optional[np.ndarray] = None,
) -> float:
    """Relative Frobenius residual of the subspace data equation.

    Computes ``||Y_f - Gamma K [U_p; Y_p] - H_BD U_f - H_KI E_f|| / ||Y_f||``
    with the true system matrices. ``include_noise=False`` drops the
    innovation term. ``observer_gain`` replaces K in the predictor form and
    is only exact for noiseless data (e.g. a deadbeat gain).
    """
    N = n_cols + p + f - 1
    if i < 0 or i + N > traj.T:
        raise ValueError(f"need {N} samples from index {i}, trajectory has {traj.T}")
    if include_noise and traj.e is None:
        raise ValueError("trajectory carries no innovations")
    if observer_gain is None:
        pred = predictor_form(sys)
    else:
        L = np.asarray(observer_gain, dtype=float).reshape(sys.n, sys.l)
        pred = PredictorRealization(sys.A - L @ sys.C, sys.B - L @ sys.D, L, sys.C, sys.D)

    past = np.vstack([block_hankel(traj.u, i, p, n_cols), block_hankel(traj.y, i, p, n_cols)])
    U_f = block_hankel(traj.u, i + p, f, n_cols)
    Y_f = block_hankel(traj.y, i + p, f, n_cols)
    R = Y_f - extended_observability(sys, f) @ (extended_controllability(pred, p) @ past)
    R -= block_toeplitz(sys, f, ToeplitzKind.BD) @ U_f
    if include_noise:
        R -= block_toeplitz(sys, f, ToeplitzKind.KI) @ block_hankel(traj.e, i + p, f, n_cols)
    return float(np.linalg.norm(R) / np.linalg.norm(Y_f))
