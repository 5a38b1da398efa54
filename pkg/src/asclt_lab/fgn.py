"""Fractional Gaussian noise: covariance, exact synthesis, fBm paths.

The unit-lag increments ``Y_k = B_{k+1} - B_k`` of a fractional Brownian motion
with Hurst index ``H`` form a stationary Gaussian sequence with covariance

    rho(r) = (|r+1|^{2H} + |r-1|^{2H} - 2|r|^{2H}) / 2.

Paths are drawn by circulant embedding of the Toeplitz covariance (exact in
law) using one FFT per path.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

from ._parallel import replicate
from ._rng import check_seed, path_generator
from .errors import CapacityError, DomainError, EmbeddingError

__all__ = [
    "HurstParams",
    "CovarianceSequence",
    "FgnPath",
    "rho",
    "rho_asymptotic",
    "covariance_fbm",
    "circulant_eigenvalues",
    "implied_covariance",
    "sample_fgn",
    "sample_fgn_batch",
    "sample_fgn_cholesky",
    "fbm_from_fgn",
    "EMBED_TOL",
    "MAX_POINTS",
]

#: Negative circulant eigenvalues down to ``-EMBED_TOL * max(eig)`` are clamped.
EMBED_TOL = 1e-9
#: Largest number of increments a single path may carry.
MAX_POINTS = 1 << 24

# Beyond this lag rho is evaluated from its convergent expansion in 1/r, which
# avoids the catastrophic cancellation of the three-power closed form.
_SERIES_LAG = 32
_SERIES_TERMS = 10


def check_hurst(H) -> float:
    h = float(H)
    if not 0.0 < h < 1.0 or math.isnan(h):
        raise DomainError(f"Hurst index must lie in (0, 1), got {H!r}")
    return h


@dataclass(frozen=True)
class HurstParams:
    """Model selector: Hurst index ``H`` and Hermite order ``q``.

    ``H`` may be given as a :class:`fractions.Fraction` so that the regime
    boundary ``H = 1 - 1/(2q)`` can be hit exactly.
    """

    H: float | Fraction
    q: int = 1

    def __post_init__(self):
        check_hurst(self.H)
        if int(self.q) != self.q or self.q < 1:
            raise DomainError(f"Hermite order q must be an integer >= 1, got {self.q!r}")

    @property
    def h(self) -> float:
        return float(self.H)


def _binom_general(a: float, k: int) -> float:
    out = 1.0
    for i in range(k):
        out *= (a - i) / (i + 1)
    return out


@lru_cache(maxsize=256)
def _series_coefficients(H: float) -> tuple:
    # rho(r) = sum_{j>=1} binom(2H, 2j) r^{2H-2j}
    return tuple(_binom_general(2 * H, 2 * j) for j in range(1, _SERIES_TERMS + 1))


def _rho_abs(H: float, r: np.ndarray) -> np.ndarray:
    r = np.abs(r).astype(np.float64)
    out = np.empty_like(r)
    near = r < _SERIES_LAG
    rn = r[near]
    h2 = 2.0 * H
    out[near] = 0.5 * ((rn + 1.0) ** h2 + np.abs(rn - 1.0) ** h2 - 2.0 * rn**h2)
    far = ~near
    if np.any(far):
        rf = r[far]
        inv2 = 1.0 / (rf * rf)
        acc = np.zeros_like(rf)
        for coef in reversed(_series_coefficients(H)):
            acc = acc * inv2 + coef
        out[far] = acc * rf ** (h2 - 2.0)
    return out


def rho(H, r):
    """Covariance ``E[Y_k Y_{k+r}]`` of unit-lag fractional Gaussian noise.

    ``r`` may be an integer or an integer array; the result is even in ``r``.
    """
    h = check_hurst(H)
    arr = np.asarray(r)
    out = _rho_abs(h, np.atleast_1d(arr))
    if arr.ndim == 0:
        return float(out[0])
    return out.reshape(arr.shape)


def rho_asymptotic(H, r):
    """Leading tail term ``H(2H-1)|r|^{2H-2}`` of :func:`rho`."""
    h = check_hurst(H)
    arr = np.asarray(r, dtype=np.float64)
    if np.any(arr == 0):
        raise DomainError("rho_asymptotic is undefined at lag 0")
    out = h * (2 * h - 1) * np.abs(arr) ** (2 * h - 2)
    return float(out) if arr.ndim == 0 else out


def covariance_fbm(H, s, t):
    """``E[B_s B_t] = (s^{2H} + t^{2H} - |t-s|^{2H}) / 2`` for ``s, t >= 0``."""
    h = check_hurst(H)
    s_arr = np.asarray(s, dtype=np.float64)
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(s_arr < 0) or np.any(t_arr < 0):
        raise DomainError("fBm covariance needs nonnegative times")
    out = 0.5 * (s_arr ** (2 * h) + t_arr ** (2 * h) - np.abs(t_arr - s_arr) ** (2 * h))
    return float(out) if out.ndim == 0 else out


class CovarianceSequence:
    """Memoized lag table ``r -> rho(r)`` for a fixed Hurst index.

    The table only ever grows; slices handed out are read-only views.
    """

    def __init__(self, H):
        self.H = H
        self._h = check_hurst(H)
        self._table = np.ones(1)
        self._table.flags.writeable = False
        self._lock = threading.Lock()

    def table(self, max_lag: int) -> np.ndarray:
        """``rho(0), ..., rho(max_lag)`` as a read-only array."""
        if max_lag >= self._table.size:
            with self._lock:
                if max_lag >= self._table.size:
                    size = max(max_lag + 1, 2 * self._table.size)
                    tab = _rho_abs(self._h, np.arange(size))
                    tab.flags.writeable = False
                    self._table = tab
        return self._table[: max_lag + 1]

    def __call__(self, r):
        arr = np.abs(np.asarray(r, dtype=np.int64))
        tab = self.table(int(arr.max()) if arr.size else 0)
        return float(tab[arr]) if arr.ndim == 0 else tab[arr]


_SEQUENCES: dict = {}
_SEQ_LOCK = threading.Lock()


def covariance_sequence(H) -> CovarianceSequence:
    """Shared :class:`CovarianceSequence` for ``H``."""
    key = float(H)
    with _SEQ_LOCK:
        seq = _SEQUENCES.get(key)
        if seq is None:
            seq = _SEQUENCES[key] = CovarianceSequence(H)
    return seq


@dataclass(frozen=True)
class FgnPath:
    """One seeded fGn realization.

    ``y`` holds ``n * resolution`` increments of ``B^H`` on the grid
    ``{k / resolution}``; for ``resolution == 1`` these are the unit-lag
    increments with covariance ``rho``.
    """

    params: HurstParams
    n: int
    y: np.ndarray = field(repr=False)
    seed: int
    index: int = 0
    resolution: int = 1

    def __len__(self):
        return self.y.shape[-1]

    def fbm(self) -> np.ndarray:
        return fbm_from_fgn(self)


def _check_size(n: int, m: int) -> int:
    if int(n) != n or n < 1:
        raise DomainError(f"path length n must be a positive integer, got {n!r}")
    if int(m) != m or m < 1:
        raise DomainError(f"resolution m must be a positive integer, got {m!r}")
    size = int(n) * int(m)
    if size > MAX_POINTS:
        raise CapacityError(f"n*m = {size} increments exceeds the budget of {MAX_POINTS}")
    return size


@lru_cache(maxsize=64)
def _embedding(H: float, size: int) -> np.ndarray:
    g = _rho_abs(H, np.arange(size + 1))
    row = np.concatenate([g, g[-2:0:-1]])
    lam = np.fft.fft(row).real
    top = lam.max()
    low = lam.min()
    if low < -EMBED_TOL * top:
        raise EmbeddingError(
            f"circulant embedding of size {row.size} has eigenvalue {low:.3e} "
            f"(largest {top:.3e})",
            float(low),
        )
    lam = np.clip(lam, 0.0, None)
    scale = np.sqrt(lam / row.size)
    scale.flags.writeable = False
    return scale


def circulant_eigenvalues(H, size: int) -> np.ndarray:
    """Clamped eigenvalues of the ``2*size`` circulant embedding of ``[rho(i-j)]``."""
    h = check_hurst(H)
    scale = _embedding(h, int(size))
    return scale**2 * (2 * int(size))


def implied_covariance(H, n: int, m: int = 1) -> np.ndarray:
    """Covariance matrix of the synthesizer's output, computed without sampling."""
    h = check_hurst(H)
    size = _check_size(n, m)
    scale = _embedding(h, size)
    two = 2 * size
    k = np.arange(two)
    j = np.arange(size)
    A = np.exp(-2j * np.pi * np.outer(j, k) / two) * scale
    cov = (A @ A.conj().T).real
    return cov * float(m) ** (-2 * h)


def _draw(H: float, size: int, m: int, seed: int, start: int, stop: int) -> np.ndarray:
    scale = _embedding(H, size)
    two = 2 * size
    out = np.empty((stop - start, size))
    # one FFT per block of rows keeps memory bounded for long paths
    block = max(1, min(stop - start, (1 << 21) // two))
    for a in range(start, stop, block):
        b = min(a + block, stop)
        z = np.empty((b - a, two), dtype=np.complex128)
        for i in range(a, b):
            g = path_generator(seed, i)
            z[i - a].real = g.standard_normal(two)
            z[i - a].imag = g.standard_normal(two)
        out[a - start : b - start] = np.fft.fft(z * scale, axis=1).real[:, :size]
    if m > 1:
        out *= float(m) ** (-H)
    return out


def sample_fgn(H, n: int, m: int = 1, seed: int = 0, index: int = 0) -> FgnPath:
    """Draw one exact fGn path of ``n * m`` increments.

    With ``m > 1`` the increments live on the grid ``{k/m}``, so their
    covariance is ``m^{-2H} rho``.
    """
    h = check_hurst(H)
    size = _check_size(n, m)
    seed = check_seed(seed)
    y = _draw(h, size, int(m), seed, int(index), int(index) + 1)[0]
    y.flags.writeable = False
    return FgnPath(HurstParams(H), int(n), y, seed, int(index), int(m))


def sample_fgn_batch(H, n: int, reps: int, m: int = 1, seed: int = 0, start: int = 0,
                     threads: int | None = None) -> np.ndarray:
    """Paths ``start .. start+reps-1`` of one experiment as a ``(reps, n*m)`` array.

    Row ``i`` equals ``sample_fgn(H, n, m, seed, index=start + i).y`` exactly.
    """
    h = check_hurst(H)
    size = _check_size(n, m)
    seed = check_seed(seed)
    return replicate(
        lambda a, b: _draw(h, size, int(m), seed, start + a, start + b),
        int(reps),
        threads,
        chunk=max(1, min(256, (1 << 22) // (2 * size))),
    )


def sample_fgn_cholesky(H, n: int, reps: int, seed: int = 0) -> np.ndarray:
    """Reference sampler via Cholesky of ``[rho(i-j)]`` (``n <= 512``)."""
    h = check_hurst(H)
    if n > 512:
        raise CapacityError("the Cholesky reference sampler is limited to n <= 512")
    lags = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    L = np.linalg.cholesky(_rho_abs(h, np.arange(n))[lags])
    rng = np.random.default_rng(seed)
    return rng.standard_normal((reps, n)) @ L.T


def fbm_from_fgn(path) -> np.ndarray:
    """Prefix sums ``B_k = sum_{i<k} Y_i`` for ``k = 1..len(path)``."""
    y = path.y if isinstance(path, FgnPath) else np.asarray(path, dtype=np.float64)
    return np.cumsum(y, axis=-1)
