"""Core objects for dropout-regularized matrix factorization.

The stochastic objective drops columns of the factor pair (U, V) with an
i.i.d. Bernoulli mask and rescales the surviving reconstruction by 1/theta.
Its exact expectation over masks equals a deterministic objective: the plain
squared Frobenius loss plus the penalty

    omega(U, V) = sum_k ||u_k||^2 * ||v_k||^2

weighted by (1 - theta) / theta.  Everything downstream (trainers, the
adaptive rate, the quasi-norm) builds on the functions here.

Randomness policy: a single PCG64 generator per stream, derived through
``substream``; each Bernoulli bit consumes exactly one generator draw, so
mask sequences are replayable from (seed, tags).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np


class DimensionError(ValueError):
    """Shapes of the supplied arrays are incompatible."""


class ParameterError(ValueError):
    """A scalar parameter is outside its admissible range."""


class CapacityError(ValueError):
    """Requested computation exceeds a documented size guard."""


class ContractError(ValueError):
    """Input violates a documented precondition."""


class NumericalError(RuntimeError):
    """A numerical routine failed to meet its certified tolerance."""


# d <= 20 keeps exact mask enumeration below ~1M terms
ENUMERATION_LIMIT = 20


def as_matrix(X, name: str = "matrix") -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got ndim={X.ndim}")
    if not np.all(np.isfinite(X)):
        raise ContractError(f"{name} contains non-finite entries")
    return X


def substream(seed, *tags) -> np.random.Generator:
    """Independent PCG64 stream for (seed, tags).

    Tag conventions used by this package: 0 data generation, 1 iterate
    initialization, 2 per-iteration masks.  Extra tags key experiment cells.
    """
    return np.random.default_rng(np.random.SeedSequence((int(seed),) + tuple(int(t) for t in tags)))


def substream_seed(seed, *tags) -> int:
    """Derive a 64-bit child seed, for handing one cell its own stream."""
    ss = np.random.SeedSequence((int(seed),) + tuple(int(t) for t in tags))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class FactorPair:
    """A width-d factorization (U, V) with U m-by-d and V n-by-d."""

    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        U = as_matrix(self.U, "U")
        V = as_matrix(self.V, "V")
        if U.shape[1] != V.shape[1]:
            raise DimensionError(f"U has {U.shape[1]} columns, V has {V.shape[1]}")
        if U.shape[1] < 1:
            raise DimensionError("factor width must be at least 1")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "V", V)

    @property
    def m(self) -> int:
        return self.U.shape[0]

    @property
    def n(self) -> int:
        return self.V.shape[0]

    @property
    def width(self) -> int:
        return self.U.shape[1]

    def u_k(self, k: int) -> np.ndarray:
        """k-th column of U, 1-based as in the algebra."""
        if not 1 <= k <= self.width:
            raise DimensionError(f"column index {k} outside 1..{self.width}")
        return self.U[:, k - 1]

    def v_k(self, k: int) -> np.ndarray:
        if not 1 <= k <= self.width:
            raise DimensionError(f"column index {k} outside 1..{self.width}")
        return self.V[:, k - 1]

    def product(self) -> np.ndarray:
        return self.U @ self.V.T


@dataclass(frozen=True)
class BernoulliMask:
    """One realization r in {0,1}^d of column keep/drop decisions."""

    bits: np.ndarray
    retain_prob: float

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 1:
            raise DimensionError("mask bits must be a vector")
        if bits.size and not np.isin(bits, (0, 1)).all():
            raise ContractError("mask bits must be 0 or 1")
        check_theta(self.retain_prob)
        object.__setattr__(self, "bits", bits.astype(np.int8))

    def __len__(self) -> int:
        return self.bits.size


def check_theta(theta, name: str = "theta") -> float:
    theta = float(theta)
    if not 0.0 < theta < 1.0:
        raise ParameterError(f"{name} must lie strictly inside (0,1), got {theta}")
    return theta


def draw_mask(d: int, theta: float, rng: np.random.Generator) -> BernoulliMask:
    """Sample r_1..r_d i.i.d. Bernoulli(theta), one uniform draw per bit."""
    theta = check_theta(theta)
    bits = (rng.random(d) < theta).astype(np.int8)
    return BernoulliMask(bits=bits, retain_prob=theta)


@dataclass(frozen=True)
class FixedRate:
    """Keep probability held constant regardless of factor width."""

    theta: float

    def __post_init__(self):
        check_theta(self.theta)

    def resolve(self, d: int) -> float:
        return float(self.theta)


@dataclass(frozen=True)
class AdaptiveRate:
    """Width-adaptive keep probability theta(d) anchored at theta_bar = theta(1)."""

    theta_bar: float

    def __post_init__(self):
        check_theta(self.theta_bar, "theta_bar")

    def resolve(self, d: int) -> float:
        return theta_adaptive(d, self.theta_bar)


@dataclass(frozen=True)
class DropoutConfig:
    """Run parameters shared by the trainers.

    step0=None asks the trainer for an automatic step size based on the
    data norm (see trainers module for the exact rule).
    """

    rate_policy: FixedRate | AdaptiveRate
    seed: int = 0
    iterations: int = 10000
    step0: float | None = None
    step_tau: float = 1000.0

    def __post_init__(self):
        if not isinstance(self.rate_policy, (FixedRate, AdaptiveRate)):
            raise ParameterError("rate_policy must be FixedRate or AdaptiveRate")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ParameterError("seed must fit in 64 unsigned bits")
        if int(self.iterations) < 1:
            raise ParameterError("iterations must be positive")
        if self.step0 is not None and not self.step0 > 0:
            raise ParameterError("step0 must be positive when given")
        if not self.step_tau > 0:
            raise ParameterError("step_tau must be positive")


def omega(f: FactorPair) -> float:
    """Column-product penalty sum_k ||u_k||^2 ||v_k||^2."""
    cu = np.sum(f.U * f.U, axis=0)
    cv = np.sum(f.V * f.V, axis=0)
    return float(np.sum(cu * cv))


def frob_loss(X, f: FactorPair) -> float:
    """Squared Frobenius reconstruction error ||X - U V^T||_F^2."""
    X = as_matrix(X, "X")
    if X.shape != (f.m, f.n):
        raise DimensionError(f"X is {X.shape}, factors produce {(f.m, f.n)}")
    E = X - f.product()
    return float(np.sum(E * E))


def deterministic_objective(X, f: FactorPair, theta: float) -> float:
    """frob_loss + ((1-theta)/theta) * omega, the exact mask expectation."""
    theta = check_theta(theta)
    return frob_loss(X, f) + (1.0 - theta) / theta * omega(f)


def masked_objective(X, f: FactorPair, mask: BernoulliMask, theta: float) -> float:
    """||X - (1/theta) U diag(r) V^T||_F^2 for one mask realization."""
    theta = check_theta(theta)
    X = as_matrix(X, "X")
    if X.shape != (f.m, f.n):
        raise DimensionError(f"X is {X.shape}, factors produce {(f.m, f.n)}")
    if len(mask) != f.width:
        raise DimensionError(f"mask length {len(mask)} does not match width {f.width}")
    kept = f.U * mask.bits
    R = X - kept @ f.V.T / theta
    return float(np.sum(R * R))


def exact_expected_objective(X, f: FactorPair, theta: float) -> float:
    """Brute-force expectation of the masked objective over all 2^d masks.

    Deliberately independent of deterministic_objective so the two can
    cross-check each other; cost is exponential in the width, guarded at
    ENUMERATION_LIMIT.
    """
    theta = check_theta(theta)
    d = f.width
    if d > ENUMERATION_LIMIT:
        raise CapacityError(f"enumeration over 2^{d} masks exceeds the d <= {ENUMERATION_LIMIT} guard")
    total = 0.0
    for bits in itertools.product((0, 1), repeat=d):
        k = sum(bits)
        prob = theta ** k * (1.0 - theta) ** (d - k)
        mask = BernoulliMask(bits=np.array(bits, dtype=np.int8), retain_prob=theta)
        total += prob * masked_objective(X, f, mask, theta)
    return total


def monte_carlo_objective(X, f: FactorPair, theta: float, samples: int,
                          rng: np.random.Generator):
    """Sample mean and standard error of the masked objective.

    std_error is 0.0 at samples=1 (no variance estimate from one draw).
    """
    if samples < 1:
        raise ParameterError("samples must be at least 1")
    vals = np.empty(samples)
    for i in range(samples):
        mask = draw_mask(f.width, theta, rng)
        vals[i] = masked_objective(X, f, mask, theta)
    mean = float(vals.mean())
    if samples == 1:
        return mean, 0.0
    return mean, float(vals.std(ddof=1) / np.sqrt(samples))


def theta_adaptive(d: int, theta_bar: float) -> float:
    """Keep probability theta(d) = theta_bar / (d - (d-1) theta_bar).

    Decreases with width so that the induced penalty weight grows linearly
    in d; equals theta_bar at d=1 and stays inside (0,1) for every d >= 1.
    """
    theta_bar = check_theta(theta_bar, "theta_bar")
    d = int(d)
    if d < 1:
        raise ParameterError(f"d must be a positive integer, got {d}")
    return theta_bar / (d - (d - 1) * theta_bar)


def lambda_d(d: int, theta_bar: float) -> float:
    """Penalty weight (1 - theta(d)) / theta(d).

    Algebraically this collapses to d (1 - theta_bar) / theta_bar; computed
    through theta_adaptive on purpose so tests of that identity stay a real
    cross-check.
    """
    theta = theta_adaptive(d, theta_bar)
    return (1.0 - theta) / theta
