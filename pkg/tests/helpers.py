"""Shared constructions for the test suite."""

import numpy as np

from dropfact import FactorPair


def rand_pair(rng, m, n, d, scale=1.0):
    return FactorPair(U=scale * rng.normal(size=(m, d)),
                      V=scale * rng.normal(size=(n, d)))


def rand_orthogonal(rng, n):
    Q, R = np.linalg.qr(rng.normal(size=(n, n)))
    # fix signs so the distribution is Haar and Q is unique given R
    return Q * np.sign(np.diag(R))
