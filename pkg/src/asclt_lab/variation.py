"""Hermite power variations of fBm and their normalizations.

For ``V_n = sum_{k<n} H_q(Y_k)`` the exact second moment is
``E[V_n^2] = q! * S_n`` with the lag-weighted sum

    S_n = sum_{k,l<n} rho(k-l)^q = n + 2 sum_{r=1}^{n-1} (n - r) rho(r)^q.

The normalized statistic is ``G_n = V_n / (sigma_n sqrt(d_n))`` with
``d_n = n`` (or ``n log n`` on the critical line ``H = 1 - 1/(2q)``) and
``sigma_n^2 = q! S_n / d_n``, so that ``E[G_n^2] = 1`` exactly for every n.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.special import zeta

from .errors import DomainError
from .fgn import FgnPath, HurstParams, _binom_general, check_hurst, covariance_sequence
from .hermite import hermite_map

__all__ = [
    "Regime",
    "classify",
    "critical_hurst",
    "VariationSeries",
    "lag_power_sum",
    "lag_power_sums",
    "hermite_variation_prefixes",
    "sigma_n_exact",
    "sigma_sq_table",
    "sigma_limit",
    "normalized_values",
    "normalized_series",
    "z_values",
    "z_series",
    "z_limit_second_moment",
]

BOUNDARY_TOL = 1e-12


class Regime(enum.Enum):
    LINEAR = "linear"
    SUBCRITICAL = "subcritical_clt"
    CRITICAL = "critical_clt"
    HERMITE = "hermite"

    @property
    def is_clt(self) -> bool:
        return self is not Regime.HERMITE


def critical_hurst(q: int) -> Fraction:
    """The boundary ``1 - 1/(2q)`` as an exact rational."""
    return Fraction(2 * q - 1, 2 * q)


def _check_q(q, minimum=1) -> int:
    if int(q) != q or q < minimum:
        raise DomainError(f"Hermite order q must be an integer >= {minimum}, got {q!r}")
    return int(q)


def classify(q: int, H) -> Regime:
    """Regime of ``(q, H)``.

    Rational ``H`` (``Fraction`` or ``int``) is compared with the boundary
    exactly; floats within ``1e-12`` of it count as critical.
    """
    q = _check_q(q)
    check_hurst(H)
    if q == 1:
        return Regime.LINEAR
    b = critical_hurst(q)
    if isinstance(H, (Fraction, int)):
        diff = Fraction(H) - b
        if diff == 0:
            return Regime.CRITICAL
        return Regime.SUBCRITICAL if diff < 0 else Regime.HERMITE
    diff = float(H) - float(b)
    if abs(diff) <= BOUNDARY_TOL:
        return Regime.CRITICAL
    return Regime.SUBCRITICAL if diff < 0 else Regime.HERMITE


@dataclass(frozen=True)
class VariationSeries:
    """Normalized statistics along one path.

    ``values[i]`` is the statistic at horizon ``ns[i]``; ``sigmas[i]`` the
    matching normalizer (``sigma_n`` for CLT regimes, the prefactor
    ``n^{q(1-H)-1}`` for the Z-series).
    """

    params: HurstParams
    regime: Regime
    ns: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    sigmas: np.ndarray = field(repr=False)
    source_seed: int | None = None

    def __len__(self):
        return len(self.values)

    def value_at(self, n: int) -> float:
        i = int(np.searchsorted(self.ns, n))
        if i >= len(self.ns) or self.ns[i] != n:
            raise DomainError(f"horizon {n} is not part of this series")
        return float(self.values[i])


def hermite_variation_prefixes(q: int, path) -> np.ndarray:
    """``V_1, ..., V_N`` as running sums of ``H_q(Y_k)``."""
    q = _check_q(q)
    y = path.y if isinstance(path, FgnPath) else np.asarray(path, dtype=np.float64)
    if y.shape[-1] < 1:
        raise DomainError("path must contain at least one increment")
    return np.cumsum(hermite_map(q, y), axis=-1)


def _rho_power(q: int, H, size: int) -> np.ndarray:
    return covariance_sequence(H).table(size - 1) ** q


def lag_power_sum(q: int, H, n: int) -> float:
    """``S_n = sum_{k,l<n} rho(k-l)^q`` in O(n)."""
    R = _rho_power(q, H, n)
    r = np.arange(1, n)
    return float(n * R[0] + 2.0 * np.dot(n - r, R[1:]))


def lag_power_sums(q: int, H, N: int) -> np.ndarray:
    """``S_1, ..., S_N`` in O(N) via ``S_n = S_{n-1} + 1 + 2 sum_{r<n} rho(r)^q``."""
    R = _rho_power(q, H, N)
    inner = np.concatenate([[0.0], np.cumsum(R[1:N])])
    return np.cumsum(R[0] + 2.0 * inner)


def _denominators(regime: Regime, ns: np.ndarray) -> np.ndarray:
    ns = ns.astype(np.float64)
    if regime is Regime.CRITICAL:
        with np.errstate(divide="ignore"):
            return ns * np.log(ns)
    return ns


def sigma_n_exact(q: int, H, n: int) -> float:
    """Exact finite-n normalizer ``sigma_n`` (so ``E[G_n^2] = 1``).

    ``sigma_n^2 = q! S_n / n``, or ``q! S_n / (n log n)`` on the critical line.
    For ``q = 1`` this gives ``sigma_n = n^{H - 1/2}``.
    """
    q = _check_q(q)
    regime = classify(q, H)
    if int(n) != n or n < 1:
        raise DomainError(f"n must be a positive integer, got {n!r}")
    if regime is Regime.CRITICAL and n < 2:
        raise DomainError("critical-regime normalizer needs n >= 2 (log 1 = 0)")
    d = n * math.log(n) if regime is Regime.CRITICAL else n
    return math.sqrt(math.factorial(q) * lag_power_sum(q, H, int(n)) / d)


def sigma_sq_table(q: int, H, N: int) -> np.ndarray:
    """``sigma_n^2`` for ``n = 1..N`` (``nan`` at ``n = 1`` when critical)."""
    q = _check_q(q)
    regime = classify(q, H)
    S = lag_power_sums(q, H, N)
    d = _denominators(regime, np.arange(1, N + 1))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = math.factorial(q) * S / d
    if regime is Regime.CRITICAL:
        out[0] = np.nan
    return out


def _rho_power_tail(q: int, H: float, R: int, terms: int = 8) -> float:
    # sum_{r>R} rho(r)^q from rho(r) = r^{2H-2} sum_j binom(2H, 2j+2) r^{-2j}
    base = np.array([_binom_general(2 * H, 2 * j + 2) for j in range(terms)])
    poly = np.array([1.0])
    for _ in range(q):
        poly = np.convolve(poly, base)[:terms]
    s = q * (2.0 - 2.0 * H)
    return float(sum(c * zeta(s + 2 * m, R + 1) for m, c in enumerate(poly)))


def sigma_limit(q: int, H) -> float:
    """Limit of ``sigma_n^2`` as ``n -> inf`` for ``H <= 1 - 1/(2q)``.

    Subcritical: ``q! sum_{r in Z} rho(r)^q`` (direct sum over ``|r| <= 2048``
    plus a Hurwitz-zeta tail from the 1/r expansion of rho). Critical:
    ``2 q! (1 - 1/(2q))^q (1 - 1/q)^q``.
    """
    q = _check_q(q, minimum=2)
    regime = classify(q, H)
    if regime is Regime.HERMITE:
        raise DomainError(
            f"no finite limit of sigma_n^2 for H > 1 - 1/(2q) (q={q}, H={float(H)})"
        )
    fq = math.factorial(q)
    if regime is Regime.CRITICAL:
        return 2.0 * fq * (1 - 1 / (2 * q)) ** q * (1 - 1 / q) ** q
    h = float(H)
    cutoff = 2048
    R = _rho_power(q, H, cutoff + 1)
    total = R[0] + 2.0 * (R[1:].sum() + _rho_power_tail(q, h, cutoff))
    return fq * total


def normalized_values(q: int, H, y: np.ndarray):
    """Vectorized ``G_k`` over the last axis of ``y``.

    Returns ``(ns, G)`` where ``ns`` starts at 1 (2 on the critical line).
    Since ``sigma_n^2 d_n = q! S_n``, the statistic is ``V_n / sqrt(q! S_n)``.
    """
    q = _check_q(q)
    regime = classify(q, H)
    if regime is Regime.HERMITE:
        raise DomainError("H > 1 - 1/(2q) has no Gaussian normalization; use z_series")
    y = np.asarray(y, dtype=np.float64)
    N = y.shape[-1]
    V = np.cumsum(hermite_map(q, y), axis=-1)
    scale = 1.0 / np.sqrt(math.factorial(q) * lag_power_sums(q, H, N))
    G = V * scale
    ns = np.arange(1, N + 1)
    if regime is Regime.CRITICAL:
        return ns[1:], G[..., 1:]
    return ns, G


def normalized_series(q: int, H, path: FgnPath) -> VariationSeries:
    """``G_k`` for ``k = 1..N`` (``2..N`` when critical) along one path."""
    if path.resolution != 1:
        raise DomainError("normalized_series needs a unit-spacing path (resolution 1)")
    ns, G = normalized_values(q, H, path.y)
    regime = classify(q, H)
    sig = np.sqrt(sigma_sq_table(q, H, len(path.y)))[ns - 1]
    return VariationSeries(HurstParams(H, q), regime, ns, G, sig, path.seed)


def _dyadic_exponent(n: int) -> int:
    if n < 1 or n & (n - 1):
        raise DomainError(f"n_max must be a power of two, got {n}")
    return n.bit_length() - 1


def z_values(q: int, H, y_fine: np.ndarray):
    """``Z_n`` for every dyadic ``n <= n_max`` from fine increments on ``{k/n_max}``.

    Coarse increments are built by repeated pairwise block sums of the same
    fine path. Returns ``(ns, Z)`` with ``Z[..., j]`` at ``n = 2**j``.
    """
    q = _check_q(q, minimum=2)
    if classify(q, H) is not Regime.HERMITE:
        raise DomainError("z_series is defined for H > 1 - 1/(2q)")
    h = float(H)
    y = np.asarray(y_fine, dtype=np.float64)
    n_max = y.shape[-1]
    J = _dyadic_exponent(n_max)
    lead = y.shape[:-1]
    out = np.empty(lead + (J + 1,))
    coarse = y
    for j in range(J, -1, -1):
        n = 1 << j
        out[..., j] = n ** (q * (1 - h) - 1) * hermite_map(q, n**h * coarse).sum(axis=-1)
        if j:
            coarse = coarse.reshape(lead + (n // 2, 2)).sum(axis=-1)
    return 1 << np.arange(J + 1), out


def z_series(q: int, H, fine_path: FgnPath) -> VariationSeries:
    """Z-series on dyadic horizons from one path sampled at resolution ``n_max``."""
    if fine_path.n != 1:
        raise DomainError("z_series expects a path on [0, 1] (n = 1, resolution = n_max)")
    _dyadic_exponent(fine_path.resolution)
    ns, Z = z_values(q, H, fine_path.y)
    pref = ns.astype(np.float64) ** (q * (1 - float(H)) - 1)
    return VariationSeries(HurstParams(H, q), Regime.HERMITE, ns, Z, pref, fine_path.seed)


def z_limit_second_moment(q: int, H) -> float:
    """``lim E[Z_n^2] = q! H^q (2H-1)^q * 2 / ((a+1)(a+2))`` with ``a = (2H-2) q``."""
    q = _check_q(q, minimum=2)
    if classify(q, H) is not Regime.HERMITE:
        raise DomainError("the Z-series second moment diverges for H <= 1 - 1/(2q)")
    h = float(H)
    a = (2 * h - 2) * q
    return math.factorial(q) * h**q * (2 * h - 1) ** q * 2.0 / ((a + 1) * (a + 2))
