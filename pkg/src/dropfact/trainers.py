"""Stochastic dropout SGD and deterministic gradient descent.

The stochastic trainer draws a fresh Bernoulli mask every iteration and
takes a gradient step of the single-mask objective

    || X - (1/theta) U diag(r) V^T ||_F^2,

so columns whose mask bit is 0 are left untouched that iteration.  Averaged
over all masks, this update equals the gradient step of the deterministic
objective frob_loss + ((1-theta)/theta) omega with the same step size, which
is what makes the two trainers comparable curve-for-curve.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .core import (
    BernoulliMask,
    DimensionError,
    DropoutConfig,
    FactorPair,
    NumericalError,
    ParameterError,
    as_matrix,
    check_theta,
    deterministic_objective,
    draw_mask,
    frob_loss,
    masked_objective,
    omega,
    substream,
)

EMA_DECAY = 0.99
DIVERGENCE_LIMIT = 1e12
INIT_STD = 0.1

TRACE_HEADER = ["iter", "stochastic_obj", "deterministic_obj", "ema_obj", "step"]


@dataclass(frozen=True)
class StepSchedule:
    """Diminishing O(1/t) steps: step(t) = step0 / (1 + t/tau)."""

    step0: float
    tau: float = 1000.0

    def __post_init__(self):
        if not self.step0 > 0:
            raise ParameterError(f"step0 must be positive, got {self.step0}")
        if not self.tau > 0:
            raise ParameterError(f"tau must be positive, got {self.tau}")

    def step(self, t: int) -> float:
        return self.step0 / (1.0 + t / self.tau)


@dataclass
class TrainTrace:
    """Per-iteration objective records plus the final factors.

    stochastic_obj entries are None for deterministic runs; ema_obj smooths
    whichever objective the run produces, with decay EMA_DECAY.
    """

    iters: list = field(default_factory=list)
    stochastic_obj: list = field(default_factory=list)
    deterministic_obj: list = field(default_factory=list)
    ema_obj: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    final: FactorPair | None = None

    def append(self, t, stoch, det, ema, step):
        self.iters.append(t)
        self.stochastic_obj.append(stoch)
        self.deterministic_obj.append(det)
        self.ema_obj.append(ema)
        self.steps.append(step)

    def __len__(self):
        return len(self.iters)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_HEADER)
            for t, s, d, e, st in zip(self.iters, self.stochastic_obj,
                                      self.deterministic_obj, self.ema_obj, self.steps):
                w.writerow([t, "" if s is None else repr(float(s)),
                            repr(float(d)), repr(float(e)), repr(float(st))])


def sgd_dropout_step(X, f: FactorPair, mask: BernoulliMask, theta: float,
                     step: float) -> FactorPair:
    """One SGD step on the single-mask dropout objective.

    Masked-out columns receive an exactly zero update; the residual uses the
    same 1/theta rescaling as the objective, which is what makes the
    expected update match the deterministic gradient step.
    """
    theta = check_theta(theta)
    X = as_matrix(X, "X")
    if X.shape != (f.m, f.n):
        raise DimensionError(f"X is {X.shape}, factors produce {(f.m, f.n)}")
    if len(mask) != f.width:
        raise DimensionError(f"mask length {len(mask)} does not match width {f.width}")
    r = mask.bits.astype(float)
    R = X - (f.U * r) @ f.V.T / theta
    gU = -2.0 / theta * (R @ (f.V * r))
    gV = -2.0 / theta * (R.T @ (f.U * r))
    return FactorPair(U=f.U - step * gU, V=f.V - step * gV)


def grad_deterministic(X, f: FactorPair, lam: float):
    """Gradient of frob_loss + lam * omega with respect to (U, V)."""
    if lam < 0:
        raise ParameterError(f"lam must be nonnegative, got {lam}")
    X = as_matrix(X, "X")
    if X.shape != (f.m, f.n):
        raise DimensionError(f"X is {X.shape}, factors produce {(f.m, f.n)}")
    E = X - f.product()
    cu = np.sum(f.U * f.U, axis=0)
    cv = np.sum(f.V * f.V, axis=0)
    gU = -2.0 * E @ f.V + 2.0 * lam * f.U * cv
    gV = -2.0 * E.T @ f.U + 2.0 * lam * f.V * cu
    return gU, gV


def _init_factors(X, d, config) -> FactorPair:
    rng = substream(config.seed, 1)
    U = rng.normal(0.0, INIT_STD, size=(X.shape[0], d))
    V = rng.normal(0.0, INIT_STD, size=(X.shape[1], d))
    return FactorPair(U=U, V=V)


def auto_step0(X, theta=None) -> float:
    """Default base step 0.5/||X||_F, damped by theta^2 for stochastic runs.

    The single-mask gradient carries a 1/theta^2 curvature amplification, so
    without the damping small theta diverges at the deterministic default.
    """
    nX = np.linalg.norm(X)
    base = 0.5 / nX if nX > 0 else 0.5
    if theta is None:
        return base
    return base * theta * theta


def _guard(value, t):
    if not np.isfinite(value) or value > DIVERGENCE_LIMIT:
        raise NumericalError(f"objective {value!r} exceeded {DIVERGENCE_LIMIT:g} at iteration {t}")


def train_stochastic(X, d: int, config: DropoutConfig) -> TrainTrace:
    """Dropout SGD with a fresh mask each iteration.

    Records, for the pre-update iterate of every iteration: the single-mask
    stochastic objective (same mask as the update), the deterministic
    objective at the run's theta, its EMA, and the step size used.
    """
    X = as_matrix(X, "X")
    d = int(d)
    theta = config.rate_policy.resolve(d)
    step0 = config.step0 if config.step0 is not None else auto_step0(X, theta)
    schedule = StepSchedule(step0=step0, tau=config.step_tau)
    f = _init_factors(X, d, config)
    rng_mask = substream(config.seed, 2)
    trace = TrainTrace()
    ema = None
    for t in range(config.iterations):
        step = schedule.step(t)
        mask = draw_mask(d, theta, rng_mask)
        stoch = masked_objective(X, f, mask, theta)
        det = deterministic_objective(X, f, theta)
        _guard(stoch, t)
        _guard(det, t)
        ema = stoch if ema is None else EMA_DECAY * ema + (1.0 - EMA_DECAY) * stoch
        trace.append(t, stoch, det, ema, step)
        f = sgd_dropout_step(X, f, mask, theta, step)
    trace.final = f
    return trace


def train_deterministic(X, d: int, lam: float, config: DropoutConfig) -> TrainTrace:
    """Gradient descent on frob_loss + lam * omega with the step schedule."""
    X = as_matrix(X, "X")
    d = int(d)
    if lam < 0:
        raise ParameterError(f"lam must be nonnegative, got {lam}")
    step0 = config.step0 if config.step0 is not None else auto_step0(X)
    schedule = StepSchedule(step0=step0, tau=config.step_tau)
    f = _init_factors(X, d, config)
    trace = TrainTrace()
    ema = None
    for t in range(config.iterations):
        step = schedule.step(t)
        obj = frob_loss(X, f) + lam * omega(f)
        _guard(obj, t)
        ema = obj if ema is None else EMA_DECAY * ema + (1.0 - EMA_DECAY) * obj
        trace.append(t, None, obj, ema, step)
        gU, gV = grad_deterministic(X, f, lam)
        f = FactorPair(U=f.U - step * gU, V=f.V - step * gV)
    trace.final = f
    return trace
