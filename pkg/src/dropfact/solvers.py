"""Closed-form machinery: SVD contract, l1-squared shrinkage, nuclear-squared solver.

The centerpiece is the vector lemma: the minimizer of

    ||a - x||^2 + lam * ||a||_1^2          (x positive, sorted nonincreasing)

keeps the top d entries, each reduced by the common amount
(lam d / (1 + lam d)) * mean(x_1..x_d), where d is the largest count for
which the reduced entries stay positive.  Applied to singular values it
yields the unique minimizer of ||X - Y||_F^2 + lam ||Y||_*^2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    ContractError,
    DimensionError,
    NumericalError,
    ParameterError,
    as_matrix,
)

# entries failing the strict shrinkage inequality by less than this are excluded
TIE_TOL = 1e-12


@dataclass(frozen=True)
class SvdResult:
    left: np.ndarray
    singulars: np.ndarray
    right: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.left * self.singulars) @ self.right.T


def svd(X) -> SvdResult:
    """Thin SVD with orthonormal columns on both sides, descending spectrum."""
    X = as_matrix(X, "X")
    try:
        L, s, Rt = np.linalg.svd(X, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD failed to converge: {exc}") from exc
    return SvdResult(left=L, singulars=s, right=Rt.T)


def nuclear_norm(X) -> float:
    return float(np.sum(svd(X).singulars))


@dataclass(frozen=True)
class ShrinkagePlan:
    """Active count, common shrinkage mu, and the mean of the active entries."""

    d_active: int
    mu: float
    mean_top: float


def shrinkage_plan(x: np.ndarray, lam: float) -> ShrinkagePlan:
    """Largest d whose reduced entries stay positive, and the resulting mu.

    Scans d = 1, 2, ... keeping the largest d with
    x_d - (lam d / (1 + lam d)) * mean(x_1..x_d) > TIE_TOL; d = 1 is always
    feasible since x_1 shrinks to x_1 / (1 + lam) > 0.
    """
    best_d = 0
    best_mean = 0.0
    csum = np.cumsum(x)
    for d in range(1, len(x) + 1):
        mean_top = csum[d - 1] / d
        thr = lam * d / (1.0 + lam * d) * mean_top
        if x[d - 1] - thr > TIE_TOL:
            best_d = d
            best_mean = mean_top
    mu = lam * best_d / (1.0 + lam * best_d) * best_mean if best_d else 0.0
    return ShrinkagePlan(d_active=best_d, mu=mu, mean_top=best_mean)


def l1_squared_prox(x, lam: float) -> np.ndarray:
    """argmin_a ||a - x||^2 + lam ||a||_1^2 for positive nonincreasing x."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ContractError("x must be a vector")
    if x.size == 0:
        return x.copy()
    if np.any(x <= 0):
        raise ContractError("x must be strictly positive (trim zeros first)")
    if np.any(np.diff(x) > 0):
        raise ContractError("x must be sorted nonincreasing")
    if lam < 0:
        raise ParameterError(f"lam must be nonnegative, got {lam}")
    if lam == 0:
        return x.copy()
    plan = shrinkage_plan(x, lam)
    a = np.zeros_like(x)
    a[:plan.d_active] = x[:plan.d_active] - plan.mu
    return a


def nuclear_squared_solve(X, lam: float) -> np.ndarray:
    """Minimizer of ||X - Y||_F^2 + lam ||Y||_*^2.

    Shrinks the singular values of X with l1_squared_prox and rebuilds with
    the same singular vectors.
    """
    if not lam > 0:
        raise ParameterError(f"lam must be positive, got {lam}")
    res = svd(X)
    s = res.singulars
    pos = s > 0
    shrunk = np.zeros_like(s)
    if pos.any():
        shrunk[pos] = l1_squared_prox(s[pos], lam)
    return (res.left * shrunk) @ res.right.T


def objective_nuclear_squared(X, Y, lam: float) -> float:
    """||X - Y||_F^2 + lam ||Y||_*^2 with the nuclear norm taken from svd(Y)."""
    X = as_matrix(X, "X")
    Y = as_matrix(Y, "Y")
    if X.shape != Y.shape:
        raise DimensionError(f"X is {X.shape}, Y is {Y.shape}")
    E = X - Y
    return float(np.sum(E * E)) + lam * nuclear_norm(Y) ** 2
