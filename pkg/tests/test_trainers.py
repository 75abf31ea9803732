"""SGD step algebra, expected-update consistency, and trace behavior."""

import csv
import itertools

import numpy as np
import pytest
from helpers import rand_pair

from dropfact import (
    BernoulliMask,
    DropoutConfig,
    FactorPair,
    FixedRate,
    NumericalError,
    ParameterError,
    StepSchedule,
    deterministic_objective,
    draw_mask,
    grad_deterministic,
    masked_objective,
    sgd_dropout_step,
    train_deterministic,
    train_stochastic,
)
from dropfact.core import substream
from dropfact.trainers import EMA_DECAY, INIT_STD, TRACE_HEADER, auto_step0


def small_problem(seed=0, m=6, n=5, d=3):
    rng = np.random.default_rng(seed)
    f = rand_pair(rng, m, n, d, scale=0.3)
    X = rng.normal(size=(m, n))
    return X, f


# ------------------------------------------------------------ step schedule


def test_step_schedule_shape():
    s = StepSchedule(step0=0.4, tau=100.0)
    assert s.step(0) == 0.4
    assert s.step(100) == pytest.approx(0.2, rel=1e-15)
    vals = [s.step(t) for t in range(0, 500, 7)]
    assert all(a > b > 0 for a, b in zip(vals, vals[1:]))


def test_step_schedule_validation():
    with pytest.raises(ParameterError):
        StepSchedule(step0=0.0)
    with pytest.raises(ParameterError):
        StepSchedule(step0=1.0, tau=-1.0)


def test_auto_step0_scaling():
    X = np.full((2, 2), 3.0)
    base = 0.5 / np.linalg.norm(X)
    assert auto_step0(X) == pytest.approx(base, rel=1e-15)
    assert auto_step0(X, 0.3) == pytest.approx(base * 0.09, rel=1e-12)
    assert auto_step0(np.zeros((2, 2))) == 0.5


# ----------------------------------------------------------- sgd step math


def test_sgd_step_hand_expanded_2x2():
    # d=1, full mask: every entry of the update follows scalar arithmetic
    X = np.array([[1.0, 2.0], [3.0, 4.0]])
    u = np.array([0.5, -1.0])
    v = np.array([2.0, 0.3])
    theta, step = 0.4, 0.01
    f = FactorPair(U=u[:, None], V=v[:, None])
    mask = BernoulliMask(bits=np.array([1], dtype=np.int8), retain_prob=theta)
    out = sgd_dropout_step(X, f, mask, theta, step)

    R = np.empty((2, 2))
    for i in range(2):
        for j in range(2):
            R[i, j] = X[i, j] - u[i] * v[j] / theta
    new_u = [u[i] - step * (-2.0 / theta) * sum(R[i, j] * v[j] for j in range(2))
             for i in range(2)]
    new_v = [v[j] - step * (-2.0 / theta) * sum(R[i, j] * u[i] for i in range(2))
             for j in range(2)]
    np.testing.assert_allclose(out.U[:, 0], new_u, rtol=1e-12)
    np.testing.assert_allclose(out.V[:, 0], new_v, rtol=1e-12)


def test_sgd_step_all_zeros_mask_is_identity():
    X, f = small_problem(1)
    mask = BernoulliMask(bits=np.zeros(f.width, dtype=np.int8), retain_prob=0.5)
    out = sgd_dropout_step(X, f, mask, 0.5, 0.3)
    assert np.array_equal(out.U, f.U)
    assert np.array_equal(out.V, f.V)


def test_sgd_step_no_change_at_balanced_point():
    # all-ones mask with U V^T = theta X zeroes the residual exactly
    rng = np.random.default_rng(2)
    f = rand_pair(rng, 4, 4, 2)
    theta = 0.7
    X = f.product() / theta
    mask = BernoulliMask(bits=np.ones(2, dtype=np.int8), retain_prob=theta)
    out = sgd_dropout_step(X, f, mask, theta, 0.1)
    assert np.array_equal(out.U, f.U)
    assert np.array_equal(out.V, f.V)


def test_sgd_step_matches_finite_differences_of_masked_objective():
    X, f = small_problem(3, m=4, n=3, d=3)
    theta, step, h = 0.6, 0.05, 1e-5
    mask = BernoulliMask(bits=np.array([1, 0, 1], dtype=np.int8), retain_prob=theta)
    out = sgd_dropout_step(X, f, mask, theta, step)
    gU = (f.U - out.U) / step
    gV = (f.V - out.V) / step

    fdU = np.zeros_like(f.U)
    for idx in np.ndindex(f.U.shape):
        Up, Um = f.U.copy(), f.U.copy()
        Up[idx] += h
        Um[idx] -= h
        fdU[idx] = (masked_objective(X, FactorPair(U=Up, V=f.V), mask, theta)
                    - masked_objective(X, FactorPair(U=Um, V=f.V), mask, theta)) / (2 * h)
    fdV = np.zeros_like(f.V)
    for idx in np.ndindex(f.V.shape):
        Vp, Vm = f.V.copy(), f.V.copy()
        Vp[idx] += h
        Vm[idx] -= h
        fdV[idx] = (masked_objective(X, FactorPair(U=f.U, V=Vp), mask, theta)
                    - masked_objective(X, FactorPair(U=f.U, V=Vm), mask, theta)) / (2 * h)
    num = np.sqrt(np.sum((fdU - gU) ** 2) + np.sum((fdV - gV) ** 2))
    den = np.sqrt(np.sum(gU ** 2) + np.sum(gV ** 2))
    assert num / den < 1e-5


def test_masked_columns_stay_bitwise_frozen():
    X, f = small_problem(4, d=5)
    rng = substream(9, 2)
    for _ in range(10):
        mask = draw_mask(5, 0.4, rng)
        out = sgd_dropout_step(X, f, mask, 0.4, 0.02)
        for k in range(5):
            if mask.bits[k] == 0:
                assert np.array_equal(out.U[:, k], f.U[:, k])
                assert np.array_equal(out.V[:, k], f.V[:, k])
        f = out


@pytest.mark.parametrize("d", [1, 3, 6])
def test_expected_update_equals_deterministic_step(d):
    rng = np.random.default_rng(5)
    f = rand_pair(rng, 4, 5, d, scale=0.5)
    X = rng.normal(size=(4, 5))
    theta, step = 0.35, 0.01

    EU = np.zeros_like(f.U)
    EV = np.zeros_like(f.V)
    for bits in itertools.product((0, 1), repeat=d):
        prob = theta ** sum(bits) * (1 - theta) ** (d - sum(bits))
        mask = BernoulliMask(bits=np.array(bits, dtype=np.int8), retain_prob=theta)
        out = sgd_dropout_step(X, f, mask, theta, step)
        EU += prob * out.U
        EV += prob * out.V

    lam = (1.0 - theta) / theta
    gU, gV = grad_deterministic(X, f, lam)
    refU = f.U - step * gU
    refV = f.V - step * gV
    scale = max(np.abs(refU).max(), np.abs(refV).max())
    assert np.abs(EU - refU).max() <= 1e-10 * scale
    assert np.abs(EV - refV).max() <= 1e-10 * scale


# ---------------------------------------------------- deterministic gradient


def test_grad_zero_at_exact_unregularized_fit():
    rng = np.random.default_rng(6)
    f = rand_pair(rng, 4, 4, 2)
    gU, gV = grad_deterministic(f.product(), f, 0.0)
    assert np.abs(gU).max() < 1e-12
    assert np.abs(gV).max() < 1e-12


def test_grad_with_zero_u():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(3, 4))
    V = rng.normal(size=(4, 2))
    f = FactorPair(U=np.zeros((3, 2)), V=V)
    gU, gV = grad_deterministic(X, f, 2.0)
    np.testing.assert_allclose(gU, -2.0 * X @ V, rtol=1e-14)
    assert np.abs(gV).max() == 0.0


@pytest.mark.parametrize("lam", [0.0, 0.5, 3.0])
def test_grad_matches_central_differences(lam):
    from dropfact.core import frob_loss, omega

    X, f = small_problem(8, m=4, n=4, d=2)
    h = 1e-5

    def obj(U, V):
        g = FactorPair(U=U, V=V)
        return frob_loss(X, g) + lam * omega(g)

    gU, gV = grad_deterministic(X, f, lam)
    fdU = np.zeros_like(f.U)
    for idx in np.ndindex(f.U.shape):
        Up, Um = f.U.copy(), f.U.copy()
        Up[idx] += h
        Um[idx] -= h
        fdU[idx] = (obj(Up, f.V) - obj(Um, f.V)) / (2 * h)
    fdV = np.zeros_like(f.V)
    for idx in np.ndindex(f.V.shape):
        Vp, Vm = f.V.copy(), f.V.copy()
        Vp[idx] += h
        Vm[idx] -= h
        fdV[idx] = (obj(f.U, Vp) - obj(f.U, Vm)) / (2 * h)
    num = np.sqrt(np.sum((fdU - gU) ** 2) + np.sum((fdV - gV) ** 2))
    den = max(np.sqrt(np.sum(gU ** 2) + np.sum(gV ** 2)), 1e-12)
    assert num / den < 1e-5


def test_grad_rejects_negative_weight():
    X, f = small_problem(9)
    with pytest.raises(ParameterError):
        grad_deterministic(X, f, -0.1)
    with pytest.raises(ParameterError):
        train_deterministic(X, 2, -1.0, DropoutConfig(rate_policy=FixedRate(0.5)))


# ------------------------------------------------------------ training runs


def test_train_stochastic_replays_exactly():
    X, _ = small_problem(10)
    cfg = DropoutConfig(rate_policy=FixedRate(0.5), seed=11, iterations=40)
    a = train_stochastic(X, 3, cfg)
    b = train_stochastic(X, 3, cfg)
    assert a.stochastic_obj == b.stochastic_obj
    assert a.deterministic_obj == b.deterministic_obj
    assert a.ema_obj == b.ema_obj
    assert np.array_equal(a.final.U, b.final.U)


def test_train_stochastic_first_record_matches_documented_streams():
    # init from substream(seed, 1) with std 0.1; masks from substream(seed, 2)
    X, _ = small_problem(12, m=5, n=4)
    seed, d, theta = 21, 3, 0.45
    cfg = DropoutConfig(rate_policy=FixedRate(theta), seed=seed, iterations=3)
    trace = train_stochastic(X, d, cfg)

    rng = substream(seed, 1)
    f0 = FactorPair(U=rng.normal(0.0, INIT_STD, size=(5, d)),
                    V=rng.normal(0.0, INIT_STD, size=(4, d)))
    mask = draw_mask(d, theta, substream(seed, 2))
    assert trace.stochastic_obj[0] == masked_objective(X, f0, mask, theta)
    assert trace.deterministic_obj[0] == deterministic_objective(X, f0, theta)
    assert trace.ema_obj[0] == trace.stochastic_obj[0]


def test_train_traces_record_schedule_and_ema_recurrence():
    X, _ = small_problem(13)
    # step stays well under the stable scale for this unit-norm X; the test
    # only reads the recorded schedule and the smoothing recurrence
    cfg = DropoutConfig(rate_policy=FixedRate(0.5), seed=3, iterations=50,
                        step0=0.02, step_tau=25.0)
    trace = train_stochastic(X, 2, cfg)
    assert len(trace) == 50
    sched = StepSchedule(step0=0.02, tau=25.0)
    assert trace.steps == [sched.step(t) for t in range(50)]
    for t in range(1, 50):
        ref = EMA_DECAY * trace.ema_obj[t - 1] + (1 - EMA_DECAY) * trace.stochastic_obj[t]
        assert trace.ema_obj[t] == pytest.approx(ref, rel=1e-15)


def test_train_stochastic_divergence_guard():
    X, _ = small_problem(14)
    cfg = DropoutConfig(rate_policy=FixedRate(0.3), seed=0, iterations=500, step0=1e6)
    with pytest.raises(NumericalError, match="iteration"):
        train_stochastic(X, 3, cfg)


def test_train_deterministic_reaches_exact_fit_without_penalty():
    # width >= rank and lam=0: plain factorization, loss should hit ~0
    from dropfact import SynthSpec, gen_synthetic

    X, _ = gen_synthetic(SynthSpec(m=10, n=10, true_d=2, factor_std=0.1,
                                   noise_std=0.0, seed=3))
    cfg = DropoutConfig(rate_policy=FixedRate(0.5), seed=3, iterations=10000)
    trace = train_deterministic(X, 3, 0.0, cfg)
    assert trace.deterministic_obj[-1] <= 1e-6


def test_train_deterministic_monotone_at_conservative_step():
    X, _ = small_problem(15, m=8, n=8)
    cfg = DropoutConfig(rate_policy=FixedRate(0.5), seed=1, iterations=1500,
                        step0=0.1 * auto_step0(X))
    trace = train_deterministic(X, 3, 0.7, cfg)
    diffs = np.diff(trace.deterministic_obj)
    assert np.all(diffs <= 1e-10 * max(1.0, trace.deterministic_obj[0]))


def test_train_stochastic_near_one_theta_behaves_like_plain_gd():
    from dropfact import SynthSpec, gen_synthetic

    X, _ = gen_synthetic(SynthSpec(m=10, n=10, true_d=2, factor_std=0.1,
                                   noise_std=0.0, seed=3))
    cfg = DropoutConfig(rate_policy=FixedRate(0.99), seed=2, iterations=3000)
    trace = train_stochastic(X, 3, cfg)
    assert trace.deterministic_obj[-1] < 0.1 * trace.deterministic_obj[0]


def test_train_deterministic_trace_has_no_stochastic_column():
    X, _ = small_problem(16)
    cfg = DropoutConfig(rate_policy=FixedRate(0.5), seed=5, iterations=20)
    trace = train_deterministic(X, 2, 1.0, cfg)
    assert all(s is None for s in trace.stochastic_obj)
    assert trace.ema_obj[0] == trace.deterministic_obj[0]


# -------------------------------------------------------------- trace csv


def test_trace_csv_schema_and_roundtrip(tmp_path):
    X, _ = small_problem(17)
    cfg = DropoutConfig(rate_policy=FixedRate(0.5), seed=7, iterations=5)
    trace = train_stochastic(X, 2, cfg)
    path = tmp_path / "trace.csv"
    trace.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(TRACE_HEADER)
    assert len(lines) == 6
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for t, row in enumerate(rows):
        assert int(row["iter"]) == t
        assert float(row["stochastic_obj"]) == trace.stochastic_obj[t]
        assert float(row["deterministic_obj"]) == trace.deterministic_obj[t]
        assert float(row["ema_obj"]) == trace.ema_obj[t]
        assert float(row["step"]) == trace.steps[t]


def test_trace_csv_empty_field_for_deterministic_runs(tmp_path):
    X, _ = small_problem(18)
    cfg = DropoutConfig(rate_policy=FixedRate(0.5), seed=7, iterations=4)
    trace = train_deterministic(X, 2, 0.5, cfg)
    path = tmp_path / "trace.csv"
    trace.to_csv(path)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert all(row["stochastic_obj"] == "" for row in rows)
