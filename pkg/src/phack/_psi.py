"""Derivatives in p of Psi(cv_s(p), h) = exp(cv_s(p) * h).

With c = cv_s(p) and dc/dp = -1 / (s * phi(c)):

    d^k/dp^k Psi = (-1)^k * h * sum_j A^k_j(c) (c + h)^j * Psi / (s * phi(c))^k

where A^k_j are polynomials in c with nonnegative integer coefficients:

    A^1_0 = 1
    A^{k+1}_j = (k-1) c A^k_j + A^k_{j-1} + dA^k_j/dc + (j+1) A^k_{j+1}
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from numpy.polynomial import polynomial as P


@lru_cache(maxsize=None)
def psi_coefficients(k: int) -> tuple[np.ndarray, ...]:
    """Polynomials A^k_0..A^k_{k-1}, each as ascending integer coefficients in c."""
    if k < 1:
        raise ValueError(f"derivative order must be >= 1, got {k}")
    if k == 1:
        return (np.array([1], dtype=np.int64),)
    prev = psi_coefficients(k - 1)
    kk = k - 1  # recursion index: building A^{kk+1} from A^{kk}
    zero = np.array([0], dtype=np.int64)

    def get(j):
        return prev[j] if 0 <= j < kk else zero

    out = []
    for j in range(kk + 1):
        term = P.polyadd((kk - 1) * P.polymulx(get(j)), get(j - 1))
        term = P.polyadd(term, P.polyder(get(j)) if len(get(j)) > 1 else zero)
        term = P.polyadd(term, (j + 1) * get(j + 1))
        out.append(np.trim_zeros(np.asarray(term, dtype=np.int64), "b") if np.any(term) else zero.copy())
    return tuple(out)


def psi_h_polynomial(k: int, c) -> np.ndarray:
    """Coefficients (ascending in h) of (-1)^k h sum_j A^k_j(c) (c + h)^j.

    Returns an array of shape (k + 1,) + shape(c); for k = 0 the polynomial is 1.
    """
    c = np.asarray(c, dtype=float)
    out = np.zeros((k + 1,) + c.shape)
    if k == 0:
        out[0] = 1.0
        return out
    sign = -1.0 if k % 2 else 1.0
    for j, a in enumerate(psi_coefficients(k)):
        a_c = P.polyval(c, a.astype(float))
        for i in range(j + 1):
            # (c + h)^j contributes C(j, i) c^(j-i) h^i; the leading h shifts i -> i + 1
            out[i + 1] += sign * math.comb(j, i) * a_c * c ** (j - i)
    return out
