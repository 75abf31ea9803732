"""Built-in verification suites behind the check command.

Each suite recomputes a theoretical identity along two independent routes
and reports the worst observed discrepancy.  The fault-injection flag
perturbs the penalty evaluation by 1e-3 and exists purely as a negative
control: a healthy build fails loudly under it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import core, quasinorm, solvers, trainers
from .core import FactorPair, substream

FAULT_SHIFT = 1e-3


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    max_error: float
    tolerance: float
    cases: int


def _random_pair(rng, m, n, d, scale=1.0) -> FactorPair:
    return FactorPair(U=scale * rng.normal(size=(m, d)), V=scale * rng.normal(size=(n, d)))


def suite_expectation_identity(omega_fn, seed=0, cases=25) -> SuiteResult:
    """Brute-force mask expectation against the closed deterministic form."""
    rng = substream(seed, 10)
    tol = 1e-10
    worst = 0.0
    for _ in range(cases):
        m, n = rng.integers(2, 7, size=2)
        d = int(rng.integers(1, 9))
        f = _random_pair(rng, m, n, d)
        X = rng.normal(size=(m, n))
        theta = float(rng.uniform(0.1, 0.9))
        exact = core.exact_expected_objective(X, f, theta)
        closed = core.frob_loss(X, f) + (1.0 - theta) / theta * omega_fn(f)
        worst = max(worst, abs(exact - closed) / max(abs(exact), 1e-300))
    return SuiteResult("expectation-identity", worst <= tol, worst, tol, cases)


def suite_gradient_check(seed=0, cases=10) -> SuiteResult:
    """Analytic gradient against central finite differences."""
    rng = substream(seed, 11)
    tol = 1e-5
    h = 1e-5
    worst = 0.0
    lams = [0.0, 0.5, 3.0]
    for i in range(cases):
        m, n = rng.integers(2, 7, size=2)
        d = int(rng.integers(1, 5))
        f = _random_pair(rng, m, n, d)
        X = rng.normal(size=(m, n))
        lam = lams[i % len(lams)]

        def objective(U, V):
            g = FactorPair(U=U, V=V)
            return core.frob_loss(X, g) + lam * core.omega(g)

        gU, gV = trainers.grad_deterministic(X, f, lam)
        fdU = np.zeros_like(f.U)
        for idx in np.ndindex(f.U.shape):
            Up, Um = f.U.copy(), f.U.copy()
            Up[idx] += h
            Um[idx] -= h
            fdU[idx] = (objective(Up, f.V) - objective(Um, f.V)) / (2 * h)
        fdV = np.zeros_like(f.V)
        for idx in np.ndindex(f.V.shape):
            Vp, Vm = f.V.copy(), f.V.copy()
            Vp[idx] += h
            Vm[idx] -= h
            fdV[idx] = (objective(f.U, Vp) - objective(f.U, Vm)) / (2 * h)
        num = np.sqrt(np.sum((fdU - gU) ** 2) + np.sum((fdV - gV) ** 2))
        den = max(np.sqrt(np.sum(gU ** 2) + np.sum(gV ** 2)), 1e-12)
        worst = max(worst, num / den)
    return SuiteResult("gradient-check", worst <= tol, worst, tol, cases)


def suite_prox_stationarity(seed=0, cases=50) -> SuiteResult:
    """Worked shrinkage example plus the two optimality conditions."""
    tol = 1e-10
    worst = 0.0
    a = solvers.l1_squared_prox(np.array([3.0, 2.0, 1.0]), 1.0)
    worst = max(worst, float(np.max(np.abs(a - np.array([4.0 / 3.0, 1.0 / 3.0, 0.0])))))
    rng = substream(seed, 12)
    for _ in range(cases):
        r = int(rng.integers(1, 9))
        x = np.sort(np.abs(rng.normal(size=r)))[::-1] + 1e-3
        lam = float(10.0 ** rng.uniform(-3, 2))
        a = solvers.l1_squared_prox(x, lam)
        s1 = float(np.sum(a))
        on = a > 0
        if on.any():
            worst = max(worst, float(np.max(np.abs(a[on] - (x[on] - lam * s1)))))
        off = ~on
        if off.any() and s1 > 0:
            worst = max(worst, max(0.0, float(np.max(x[off] / (lam * s1))) - 1.0))
    return SuiteResult("prox-stationarity", worst <= tol, worst, tol, cases + 1)


def suite_envelope_sandwich(omega_fn, seed=0, cases=30) -> SuiteResult:
    """Equal-energy construction value against the convex-envelope value."""
    rng = substream(seed, 13)
    tol = 1e-8
    worst = 0.0
    for i in range(cases):
        m, n = rng.integers(2, 8, size=2)
        Y = rng.normal(size=(m, n))
        theta_bar = (0.5, 0.9)[i % 2]
        r = min(m, n)
        d = int(r + rng.integers(0, 3))
        ef = quasinorm.equalized_factorization(Y, d, theta_bar)
        achieved = core.lambda_d(d, theta_bar) * omega_fn(ef.factors)
        envelope = core.lambda_d(1, theta_bar) * solvers.nuclear_norm(Y) ** 2
        worst = max(worst, abs(achieved - envelope) / max(envelope, 1e-300))
    return SuiteResult("envelope-sandwich", worst <= tol, worst, tol, cases)


def suite_doubling_witness(omega_fn, seed=0, cases=20) -> SuiteResult:
    """Width doubling halves the penalty and preserves the product."""
    rng = substream(seed, 14)
    tol = 1e-12
    worst = 0.0
    for _ in range(cases):
        m, n = rng.integers(2, 8, size=2)
        d = int(rng.integers(1, 5))
        f = _random_pair(rng, m, n, d)
        g = quasinorm.doubling_construction(f)
        halved = omega_fn(g)
        expected = omega_fn(f) / 2.0
        worst = max(worst, abs(halved - expected) / max(expected, 1e-300))
        prod_err = np.linalg.norm(g.product() - f.product()) / max(np.linalg.norm(f.product()), 1e-300)
        worst = max(worst, float(prod_err))
    return SuiteResult("doubling-witness", worst <= tol, worst, tol, cases)


def run_all(inject_fault: bool = False, seed: int = 0) -> list[SuiteResult]:
    omega_fn = (lambda f: core.omega(f) + FAULT_SHIFT) if inject_fault else core.omega
    return [
        suite_expectation_identity(omega_fn, seed),
        suite_gradient_check(seed),
        suite_prox_stationarity(seed),
        suite_envelope_sandwich(omega_fn, seed),
        suite_doubling_witness(omega_fn, seed),
    ]
