"""Probabilists' Hermite polynomials.

``H_0 = 1``, ``H_1 = x`` and ``H_{q+1}(x) = x H_q(x) - q H_{q-1}(x)``; these are
the monic polynomials orthogonal under the standard Gaussian law, with
``E[H_p(N) H_q(N)] = q! * delta_{pq}``.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError

__all__ = ["hermite_eval", "hermite_map"]


def _check_order(q: int) -> int:
    if int(q) != q or q < 0:
        raise DomainError(f"Hermite order must be a nonnegative integer, got {q!r}")
    return int(q)


def _recurrence(q: int, x):
    prev = np.ones_like(x)
    if q == 0:
        return prev
    cur = x
    for k in range(1, q):
        prev, cur = cur, x * cur - k * prev
    return cur


def hermite_eval(q: int, x: float) -> float:
    """Evaluate ``H_q(x)`` with the three-term recurrence."""
    q = _check_order(q)
    return float(_recurrence(q, np.float64(x)))


def hermite_map(q: int, xs) -> np.ndarray:
    """Elementwise ``H_q`` over an array of any shape (float64 result)."""
    q = _check_order(q)
    x = np.asarray(xs, dtype=np.float64)
    return np.asarray(_recurrence(q, x), dtype=np.float64)
