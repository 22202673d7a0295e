import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import excite
from oracles import A_TILDE_COL0, CAB, CB, DECAY_NORM_P20, matpow, simulate_loops
from ivdeepc.lti_sim import (
    NoiseSpec,
    SystemRealization,
    Trajectory,
    benchmark_system,
    deadbeat_gain,
    decay_norm,
    make_rng,
    predictor_form,
    simulate,
    simulate_predictor,
    square_wave,
    white_noise,
)


def random_system(seed, n=3, r=2, l=2):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    A *= 0.9 / max(abs(np.linalg.eigvals(A)))
    C = rng.standard_normal((l, n))
    K = rng.standard_normal((n, l))
    # a Kalman gain always gives a stable predictor; shrink K until A - KC is stable
    while max(abs(np.linalg.eigvals(A - K @ C))) >= 0.95:
        K *= 0.5
    return SystemRealization(A, rng.standard_normal((n, r)), C, rng.standard_normal((l, r)), K)


# --- benchmark values -------------------------------------------------------

def test_benchmark_entries(bench):
    assert bench.A[0, 0] == 4.4
    assert bench.B[1, 0] == 0.01299
    assert bench.K[4, 0] == 0.86336
    assert (bench.n, bench.r, bench.l) == (5, 1, 1)
    assert np.all(bench.D == 0)


def test_benchmark_cab(bench):
    assert (bench.C @ bench.A @ bench.B).item() == pytest.approx(CAB, abs=1e-15)
    assert CAB == pytest.approx(0.0173, abs=1e-4)


def test_benchmark_predictor_stable(bench):
    rho = max(abs(np.linalg.eigvals(predictor_form(bench).A_tilde)))
    assert rho < 1


def test_benchmark_matrices_are_read_only(bench):
    with pytest.raises(ValueError):
        bench.A[0, 0] = 1.0


# --- realization validation ----------------------------------------------------

def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        SystemRealization(np.eye(2), np.ones((3, 1)), np.ones((1, 2)), 0.0, np.ones((2, 1)))


def test_scalar_d_and_vector_b_accepted():
    sys = SystemRealization(np.eye(2), [1.0, 2.0], [[1.0, 0.0]], 0.5, [0.1, 0.2])
    assert sys.B.shape == (2, 1) and sys.K.shape == (2, 1)
    assert sys.D.shape == (1, 1) and sys.D[0, 0] == 0.5


# --- predictor form ----------------------------------------------------------

def test_predictor_form_zero_gain_is_identity(bench):
    sys = SystemRealization(bench.A, bench.B, bench.C, bench.D, np.zeros((5, 1)))
    pred = predictor_form(sys)
    assert np.array_equal(pred.A_tilde, bench.A)
    assert np.array_equal(pred.B_tilde, bench.B)


def test_predictor_form_first_column(bench):
    pred = predictor_form(bench)
    np.testing.assert_allclose(pred.A_tilde[:, 0], A_TILDE_COL0, atol=1e-14)
    assert np.array_equal(pred.B_tilde, bench.B)  # D = 0


@given(st.integers(0, 10_000))
def test_predictor_form_definition(seed):
    sys = random_system(seed)
    pred = predictor_form(sys)
    np.testing.assert_allclose(pred.A_tilde, sys.A - sys.K @ sys.C, atol=1e-15)
    np.testing.assert_allclose(pred.B_tilde, sys.B - sys.K @ sys.D, atol=1e-15)


# --- simulation ----------------------------------------------------------------

def test_zero_input_zero_output(bench):
    traj = simulate(bench, np.zeros((1, 50)))
    assert np.all(traj.y == 0)


def test_impulse_response(bench):
    u = np.zeros((1, 10))
    u[0, 0] = 1.0
    y = simulate(bench, u).y[0]
    assert y[0] == 0.0
    assert y[1] == pytest.approx(CB, abs=1e-16)
    assert y[2] == pytest.approx(CAB, abs=1e-15)


def test_simulate_matches_loop_oracle(bench):
    rng = np.random.default_rng(1)
    u, e = rng.standard_normal((1, 200)), 0.1 * rng.standard_normal((1, 200))
    x0 = rng.standard_normal(5)
    y = simulate(bench, u, e, x0=x0).y
    np.testing.assert_allclose(y, simulate_loops(bench.A, bench.B, bench.C, bench.D, bench.K, u, e, x0), rtol=1e-12, atol=1e-12)


def test_return_states(bench):
    traj, X = simulate(bench, np.ones((1, 5)), return_states=True)
    assert X.shape == (5, 6)
    np.testing.assert_allclose(traj.y[0], (bench.C @ X[:, :5])[0])


@given(st.integers(0, 10_000))
def test_innovation_and_predictor_forms_agree(seed):
    sys = random_system(seed)
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((sys.r, 60))
    e = rng.standard_normal((sys.l, 60))
    traj = simulate(sys, u, e)
    y_pred = simulate_predictor(predictor_form(sys), u, traj.y, e)
    scale = max(np.abs(traj.y).max(), 1.0)
    assert np.abs(y_pred - traj.y).max() <= 1e-10 * scale


def test_benchmark_forms_agree(bench, noisy_traj):
    y_pred = simulate_predictor(predictor_form(bench), noisy_traj.u, noisy_traj.y, noisy_traj.e)
    rel = np.abs(y_pred - noisy_traj.y).max() / np.abs(noisy_traj.y).max()
    assert rel < 1e-10


def test_simulate_deterministic(bench):
    a = excite(bench, 300, var=0.01, seed=5)
    b = excite(bench, 300, var=0.01, seed=5)
    assert np.array_equal(a.y, b.y)


def test_simulate_shape_errors(bench):
    with pytest.raises(ValueError):
        simulate(bench, np.zeros((2, 10)))
    with pytest.raises(ValueError):
        simulate(bench, np.zeros((1, 10)), e=np.zeros((1, 9)))
    with pytest.raises(ValueError):
        simulate(bench, np.zeros((1, 10)), x0=np.zeros(4))


def test_trajectory_length_check():
    with pytest.raises(ValueError):
        Trajectory(np.zeros((1, 5)), np.zeros((1, 4)))
    t = Trajectory(np.arange(6.0), np.arange(6.0))
    assert t.T == 6 and t.window(2, 4).u.tolist() == [[2.0, 3.0]]


# --- noise ---------------------------------------------------------------------

def test_white_noise_zero_variance():
    assert np.all(white_noise(NoiseSpec(0.0, 3), 100) == 0)


def test_white_noise_reproducible():
    a = white_noise(NoiseSpec(1.0, 42), 1000)
    b = white_noise(NoiseSpec(1.0, 42), 1000)
    assert np.array_equal(a, b)


def test_white_noise_variance():
    x = white_noise(NoiseSpec(1.0, 7), 100_000)
    assert abs(x.var() - 1.0) < 0.05
    assert abs(white_noise(NoiseSpec(0.25, 7), 100_000).var() - 0.25) < 0.05 * 0.25


def test_white_noise_distinct_seeds_uncorrelated():
    a = white_noise(NoiseSpec(1.0, 1), 100_000)[0]
    b = white_noise(NoiseSpec(1.0, 2), 100_000)[0]
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.05


def test_streams_are_independent():
    a = make_rng(3, 1).standard_normal(50_000)
    b = make_rng(3, 2).standard_normal(50_000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.05


def test_negative_variance_rejected():
    with pytest.raises(ValueError):
        NoiseSpec(-1.0)


# --- square wave -------------------------------------------------------------------

def test_square_wave_levels():
    w = square_wave(50, 50, 400, 1000)
    assert set(np.unique(w)) == {0.0, 100.0}
    assert w[0] == 100.0 and w[199] == 100.0 and w[200] == 0.0


def test_square_wave_small():
    assert square_wave(1, 0, 4, 8).tolist() == [1, 1, -1, -1, 1, 1, -1, -1]


def test_square_wave_zero_amplitude():
    assert np.all(square_wave(0, 3, 10, 20) == 3)


@pytest.mark.parametrize("period", [0, 1, 2.5])
def test_square_wave_bad_period(period):
    with pytest.raises(ValueError):
        square_wave(1, 0, period, 10)


# --- decay norm ----------------------------------------------------------------------

def test_decay_norm_p0(bench):
    assert decay_norm(bench, 0) == pytest.approx(np.sqrt(5))


def test_decay_norm_frozen_p20(bench):
    assert decay_norm(bench, 20) == pytest.approx(DECAY_NORM_P20, rel=1e-12)


def test_frozen_constants_recomputed(bench):
    At = bench.A - bench.K @ bench.C
    assert np.linalg.norm(matpow(At, 20)) == pytest.approx(DECAY_NORM_P20, rel=1e-12)


def test_decay_norm_monotone_after_transient(bench):
    vals = [decay_norm(bench, p) for p in range(10, 41)]
    assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_deadbeat_gain_nilpotent(bench):
    L = deadbeat_gain(bench)
    sys = SystemRealization(bench.A, bench.B, bench.C, bench.D, L)
    assert decay_norm(sys, 5) < 1e-6 * np.linalg.norm(bench.A) ** 5


def test_deadbeat_gain_single_output_only():
    with pytest.raises(ValueError):
        deadbeat_gain(random_system(0))
