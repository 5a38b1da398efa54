"""Exact arithmetic on the block kernels of Hermite variations.

The statistic ``G_n`` is the q-th multiple integral of

    f_n = c_n * sum_{k<n} e_k^{(x) q},     <e_i, e_j> = rho(i - j),

where ``e_k`` is the indicator of ``[k, k+1]`` and ``c_n`` makes
``q! ||f_n||^2 = 1``. Because the Gram matrix is Toeplitz, every norm reduces
to lag sums or traces of products of Toeplitz matrices ``T_p = [rho(i-j)^p]``:

    <f_k, f_l>          = c_k c_l sum_{i<k, j<l} rho(i-j)^q
    ||f_n (x)_r f_n||^2 = c_n^4 tr(T_r T_{q-r} T_r T_{q-r}).

Dense tensors (:class:`GeneralKernel`) provide brute-force oracles at small n.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import toeplitz

from .errors import CapacityError, DomainError
from .fgn import CovarianceSequence, check_hurst, covariance_sequence
from .variation import Regime, classify, lag_power_sum, sigma_n_exact

__all__ = [
    "BlockKernel",
    "GeneralKernel",
    "CriterionReport",
    "RateFit",
    "block_kernel",
    "kernel_inner_product",
    "inner_product_table",
    "contraction_norm",
    "contraction_norm_naive",
    "symmetrized_contraction_norm",
    "contraction_duality_check",
    "random_symmetric_kernel",
    "stein_variance_kernel",
    "criterion_partial_sums",
    "stein_rate_exponent",
    "rate_exponent_fit",
]

# Above this size the mixed terms of a symmetrized contraction cost too much.
SYMMETRIZED_MAX_N = 512


@dataclass(frozen=True)
class BlockKernel:
    """``f_n = c * sum_{k<n} e_k^{(x) q}`` with Gram ``rho``."""

    q: int
    H: float
    n: int
    c: float
    gram: CovarianceSequence = field(repr=False, compare=False)
    regime: Regime = Regime.SUBCRITICAL

    def gram_power(self, p: int) -> np.ndarray:
        """First row of the Toeplitz matrix ``[rho(i-j)^p]_{i,j<n}``."""
        return self.gram.table(self.n - 1) ** p

    def norm_sq(self) -> float:
        return self.c**2 * lag_power_sum(self.q, self.H, self.n)


def block_kernel(q: int, H, n: int) -> BlockKernel:
    """Unit-variance block kernel for a CLT regime with ``q >= 2``.

    The coefficient is ``1 / (sigma_n sqrt(d_n))`` with ``d_n = n`` or
    ``n log n``; for ``n = 1`` (subcritical only) this is ``1 / sqrt(q!)``.
    """
    regime = classify(q, H)
    if regime not in (Regime.SUBCRITICAL, Regime.CRITICAL):
        raise DomainError(f"block kernels need q >= 2 and H <= 1 - 1/(2q), got q={q}, H={H}")
    if int(n) != n or n < 1:
        raise DomainError(f"n must be a positive integer, got {n!r}")
    sigma = sigma_n_exact(q, H, n)
    d = n * math.log(n) if regime is Regime.CRITICAL else n
    return BlockKernel(int(q), float(H), int(n), 1.0 / (sigma * math.sqrt(d)),
                       covariance_sequence(H), regime)


def _unit_coefficients(q: int, H: float, N: int) -> np.ndarray:
    from .variation import lag_power_sums

    return 1.0 / np.sqrt(math.factorial(q) * lag_power_sums(q, H, N))


def _cumulative_lag_tables(q: int, H: float, N: int):
    # W[m] = sum_{s=1}^{m} sum_{u<s} R(u) = sum_{u<m} (m-u) R(u)
    R = covariance_sequence(H).table(N) ** q
    T = np.concatenate([[0.0], np.cumsum(R)])
    W = np.concatenate([[0.0], np.cumsum(T[1:])])
    return R, W


def _block_pair_sums(R0: float, W: np.ndarray, k, l):
    """``sum_{i<k, j<l} rho(i-j)^q`` from the cumulative table (any k, l)."""
    k = np.asarray(k)
    l = np.asarray(l)
    lo = np.minimum(k, l)
    hi = np.maximum(k, l)
    return W[lo] + W[hi] - W[hi - lo] - lo * R0


def kernel_inner_product(f: BlockKernel, g: BlockKernel) -> float:
    """``<f, g>`` in O(n_f + n_g) by lag counting."""
    if f.q != g.q:
        raise DomainError(f"kernels of different orders ({f.q} vs {g.q})")
    if f.H != g.H:
        raise DomainError("kernels built on different Hurst indices")
    R, W = _cumulative_lag_tables(f.q, f.H, max(f.n, g.n))
    return float(f.c * g.c * _block_pair_sums(R[0], W, f.n, g.n))


def inner_product_table(q: int, H, ks, ls) -> np.ndarray:
    """Matrix of ``<f_k, f_l>`` for unit-variance block kernels."""
    ks = np.asarray(ks, dtype=np.int64)
    ls = np.asarray(ls, dtype=np.int64)
    N = int(max(ks.max(), ls.max()))
    R, W = _cumulative_lag_tables(q, float(H), N)
    c = _unit_coefficients(q, float(H), N)
    P = _block_pair_sums(R[0], W, ks[:, None], ls[None, :])
    return c[ks - 1][:, None] * c[ls - 1][None, :] * P


def _check_r(q: int, r: int):
    if int(r) != r or not 1 <= r <= q - 1:
        raise DomainError(f"contraction order must satisfy 1 <= r <= q-1 = {q - 1}, got {r}")


def _trace_abab(a_row: np.ndarray, b_row: np.ndarray) -> float:
    A = toeplitz(a_row)
    M = A @ (A if b_row is a_row else toeplitz(b_row))
    return float(np.einsum("ij,ji->", M, M))


@lru_cache(maxsize=4096)
def _contraction_sq(q: int, H: float, n: int, r: int) -> float:
    rho_row = covariance_sequence(H).table(n - 1)
    a = rho_row**r
    b = a if 2 * r == q else rho_row ** (q - r)
    c = _unit_coefficients(q, H, n)[-1]
    return c**4 * _trace_abab(a, b)


def contraction_norm(f: BlockKernel, r: int) -> float:
    """``||f (x)_r f||`` via ``c^4 tr((T_r T_{q-r})^2)``."""
    _check_r(f.q, r)
    unit = _unit_coefficients(f.q, f.H, f.n)[-1]
    return math.sqrt(max(_contraction_sq(f.q, f.H, f.n, int(r)), 0.0)) * (f.c / unit) ** 2


def contraction_norm_naive(f: BlockKernel, r: int) -> float:
    """Quadruple-sum definition of ``||f (x)_r f||`` (``n <= 64``)."""
    _check_r(f.q, r)
    if f.n > 64:
        raise CapacityError("the quadruple-sum oracle is limited to n <= 64")
    idx = np.arange(f.n)
    rho_mat = f.gram(np.subtract.outer(idx, idx))
    A = rho_mat**r
    B = rho_mat ** (f.q - r)
    total = np.einsum("ij,kl,ik,jl->", A, A, B, B)
    return math.sqrt(max(f.c**4 * total, 0.0))


def _k4_sum(A: np.ndarray, P: np.ndarray, Q: np.ndarray) -> float:
    # sum_{ijkl} A_ij A_kl P_ik P_jl Q_jk Q_il, one vertex at a time; the sum
    # is invariant under the reflection x -> n-1-x, so half the vertices do.
    n = A.shape[0]
    total = 0.0
    for i in range((n + 1) // 2):
        X = Q @ (A[i][:, None] * P)
        part = P[i] @ (X * A) @ Q[i]
        total += part if 2 * i + 1 == n else 2.0 * part
    return float(total)


def symmetrized_contraction_norm(f: BlockKernel, r: int) -> float:
    """``||f ~(x)_r f||`` where ``~`` symmetrizes over the ``2(q-r)`` slots.

    The symmetrized norm splits into classes by how many of the ``q-r`` copies
    of one block land in the first half of the other:

        sum_m  binom(a,m)^2 / binom(2a,a) * K_m,    a = q - r,

    with ``K_0 = K_a = c^4 tr((T_r T_a)^2)`` and mixed ``K_m`` computed as a
    weighted four-cycle sum. Limited to ``q <= 4``.
    """
    q = f.q
    _check_r(q, r)
    if q > 4:
        raise CapacityError(
            "symmetrized contractions are limited to q <= 4; "
            "use contraction_norm, which bounds the symmetrized norm from above"
        )
    a = q - r
    outer = _contraction_sq(q, f.H, f.n, int(r)) * (f.c / _unit_coefficients(q, f.H, f.n)[-1]) ** 4
    weights = [math.comb(a, m) ** 2 / math.comb(2 * a, a) for m in range(a + 1)]
    total = (weights[0] + weights[a]) * outer
    if a >= 2:
        if f.n > SYMMETRIZED_MAX_N:
            raise CapacityError(
                f"mixed symmetrization terms are limited to n <= {SYMMETRIZED_MAX_N}"
            )
        row = f.gram.table(f.n - 1)
        A = toeplitz(row**r)
        for m in range(1, a):
            K = _k4_sum(A, toeplitz(row**m), toeplitz(row ** (a - m)))
            total += weights[m] * f.c**4 * K
    return math.sqrt(max(total, 0.0))


@dataclass(frozen=True)
class GeneralKernel:
    """Dense symmetric coefficient tensor of shape ``(n,) * q`` with a Gram matrix."""

    q: int
    n: int
    coeffs: np.ndarray = field(repr=False)
    gram: np.ndarray = field(repr=False)

    @classmethod
    def from_block(cls, f: BlockKernel) -> "GeneralKernel":
        if f.n > 12 or f.q > 3:
            raise CapacityError("dense kernels are limited to n <= 12 and q <= 3")
        coeffs = np.zeros((f.n,) * f.q)
        for k in range(f.n):
            coeffs[(k,) * f.q] = f.c
        idx = np.arange(f.n)
        return cls(f.q, f.n, coeffs, f.gram(np.subtract.outer(idx, idx)))

    def norm_sq(self) -> float:
        return dense_inner(self.coeffs, self.coeffs, self.gram)


def _apply_gram(t: np.ndarray, G: np.ndarray, axes=None) -> np.ndarray:
    axes = range(t.ndim) if axes is None else axes
    for ax in axes:
        t = np.moveaxis(np.tensordot(G, t, axes=([1], [ax])), 0, ax)
    return t


def dense_inner(s: np.ndarray, t: np.ndarray, G: np.ndarray) -> float:
    """``<s, t>`` for coefficient tensors over a non-orthogonal basis."""
    return float(np.sum(s * _apply_gram(t, G)))


def dense_contraction(f: np.ndarray, g: np.ndarray, r: int, G: np.ndarray) -> np.ndarray:
    """Coefficients of ``f (x)_r g``: the last ``r`` slots of each are paired."""
    p, q = f.ndim, g.ndim
    gg = _apply_gram(g, G, axes=range(q - r, q))
    return np.tensordot(f, gg, axes=(list(range(p - r, p)), list(range(q - r, q))))


def dense_symmetrize(t: np.ndarray) -> np.ndarray:
    perms = list(itertools.permutations(range(t.ndim)))
    return sum(np.transpose(t, p) for p in perms) / len(perms)


def random_symmetric_kernel(q: int, n: int, H, rng: np.random.Generator) -> GeneralKernel:
    """Random symmetric dense kernel over the fGn Gram matrix."""
    check_hurst(H)
    coeffs = dense_symmetrize(rng.standard_normal((n,) * q))
    idx = np.arange(n)
    return GeneralKernel(q, n, coeffs, covariance_sequence(H)(np.subtract.outer(idx, idx)))


def contraction_duality_check(f: GeneralKernel, g: GeneralKernel, r: int):
    """Both sides of ``||f (x)_r g||^2 = <f (x)_{q-r} f, g (x)_{q-r} g>``.

    The left side is computed in an orthonormal basis obtained from the
    Cholesky factor of the Gram matrix; the right side works with Gram-weighted
    coefficients directly.
    """
    if f.q != g.q or f.n != g.n:
        raise DomainError("duality check needs kernels of equal order and size")
    q = f.q
    _check_r(q, r)
    L = np.linalg.cholesky(f.gram)
    fo = _apply_gram(f.coeffs, L.T)
    go = _apply_gram(g.coeffs, L.T)
    cut = list(range(q - r, q))
    lhs = float(np.sum(np.tensordot(fo, go, axes=(cut, cut)) ** 2))
    ff = dense_contraction(f.coeffs, f.coeffs, q - r, f.gram)
    gg = dense_contraction(g.coeffs, g.coeffs, q - r, g.gram)
    rhs = dense_inner(ff, gg, f.gram)
    return lhs, rhs


def _stein_weight(q: int, r: int) -> float:
    return (q**2 * math.factorial(r - 1) ** 2 * math.comb(q - 1, r - 1) ** 4
            * math.factorial(2 * q - 2 * r))


def stein_variance_kernel(q: int, H, n: int) -> float:
    """Exact ``E[(1 - ||DG_n||^2 / q)^2]`` from the chaos expansion.

    Equals ``q^2 sum_r (r-1)!^2 binom(q-1, r-1)^4 (2q-2r)! ||f_n ~(x)_r f_n||^2``.
    """
    if q < 2:
        raise DomainError("the Malliavin variance identity needs q >= 2")
    f = block_kernel(q, H, n)
    return float(sum(_stein_weight(q, r) * symmetrized_contraction_norm(f, r) ** 2
                     for r in range(1, q)))


def _subgrid(k0: int, N: int, per_octave: int) -> np.ndarray:
    top = math.log2(N)
    pts = np.rint(2.0 ** (np.arange(0, math.floor(top * per_octave) + 1) / per_octave))
    pts = np.unique(np.concatenate([[k0, N], pts]).astype(np.int64))
    return pts[(pts >= k0) & (pts <= N)]


def _report_grid(N: int) -> np.ndarray:
    pts = [1 << j for j in range(1, N.bit_length()) if (1 << j) <= N]
    if pts[-1] != N:
        pts.append(N)
    return np.array(pts, dtype=np.int64)


@dataclass
class CriterionReport:
    """Partial sums of the two kernel summability conditions.

    ``a1[r]`` holds ``sum_{n=2}^N 1/(n log^2 n) sum_{k<=n} ||f_k (x)_r f_k|| / k``
    and ``a2`` holds ``sum_{n=2}^N 1/(n log^3 n) sum_{k,l<=n} |<f_k, f_l>| / (kl)``
    at each ``grid`` point. ``a1_witness[r]`` is the A1 increment times
    ``n log^2 n``; ``a2_inner`` is the A2 increment times ``n log^3 n`` (the
    double sum itself, which grows like ``log n``) and ``a2_witness`` is that
    divided by ``log n``.
    """

    q: int
    H: float
    regime: Regime
    N: int
    k_start: int
    grid: np.ndarray
    a1: dict
    a2: np.ndarray
    a1_increments: dict
    a2_increments: np.ndarray
    a1_witness: dict
    a2_witness: np.ndarray
    a2_inner: np.ndarray
    subgrid: np.ndarray
    subgrid_ratio: float
    a1_norm_kind: str = "unsymmetrized"
    a1_symmetrized: dict | None = None

    def to_dict(self) -> dict:
        def arr(v):
            return [float(x) for x in v]

        out = {
            "q": self.q,
            "H": self.H,
            "regime": self.regime.value,
            "N": self.N,
            "k_start": self.k_start,
            "grid": [int(x) for x in self.grid],
            "a1": {str(r): arr(v) for r, v in self.a1.items()},
            "a1_norm_kind": self.a1_norm_kind,
            "a2": arr(self.a2),
            "a1_increments": {str(r): arr(v) for r, v in self.a1_increments.items()},
            "a2_increments": arr(self.a2_increments),
            "a1_witness": {str(r): arr(v) for r, v in self.a1_witness.items()},
            "a2_witness": arr(self.a2_witness),
            "a2_inner": arr(self.a2_inner),
            "subgrid": [int(x) for x in self.subgrid],
            "subgrid_ratio": self.subgrid_ratio,
        }
        if self.a1_symmetrized is not None:
            out["a1_symmetrized"] = {str(r): arr(v) for r, v in self.a1_symmetrized.items()}
        return out


def _a1_sums(values: np.ndarray, sub: np.ndarray, k0: int, N: int):
    ks = np.arange(k0, N + 1)
    interp = np.exp(np.interp(np.log(ks), np.log(sub), np.log(values)))
    inner = np.cumsum(interp / ks)
    ns = np.arange(2, N + 1)
    inner_n = inner[np.maximum(ns - k0, 0)] * (ns >= k0)
    logs = np.log(ns)
    inc = inner_n / (ns * logs**2)
    return np.cumsum(inc), inc, inner_n


def _a2_inner(q: int, H: float, k0: int, N: int) -> np.ndarray:
    # D(n) = sum_{k,l in [k0, n]} |<f_k, f_l>| / (kl), built row by row
    R, W = _cumulative_lag_tables(q, H, N)
    c = _unit_coefficients(q, H, N)
    rows = np.zeros(N + 1)
    block = 512
    for start in range(k0, N + 1, block):
        ls = np.arange(start, min(start + block, N + 1))
        ks = np.arange(k0, ls[-1] + 1)
        P = _block_pair_sums(R[0], W, ks[None, :], ls[:, None])
        a = np.abs(c[ks - 1][None, :] * c[ls - 1][:, None] * P) / (ks[None, :] * ls[:, None])
        a = np.where(ks[None, :] <= ls[:, None], a, 0.0)
        diag = a[np.arange(len(ls)), ls - k0]
        rows[ls] = 2.0 * a.sum(axis=1) - diag
    return np.cumsum(rows)


def criterion_partial_sums(q: int, H, N: int, stride: int = 4) -> CriterionReport:
    """Partial sums of (A1) and (A2) up to ``N``.

    Contraction norms are evaluated exactly on a geometric subgrid with
    ``stride`` points per octave (ratio ``2^{1/stride}``) and interpolated
    linearly in log-log space; the (A2) double sum is exact at every n.
    The inner sums start at ``k = 1`` (``k = 2`` on the critical line).
    """
    regime = classify(q, H)
    if regime not in (Regime.SUBCRITICAL, Regime.CRITICAL):
        raise DomainError("the kernel criteria apply to q >= 2 and H <= 1 - 1/(2q)")
    if N < 4:
        raise DomainError("criterion partial sums need N >= 4")
    if stride < 1:
        raise DomainError("stride must be a positive number of subgrid points per octave")
    h = float(H)
    q = int(q)
    N = int(N)
    k0 = 2 if regime is Regime.CRITICAL else 1
    sub = _subgrid(k0, N, stride)
    grid = _report_grid(N)
    at = grid - 2

    a1, a1_inc, a1_wit = {}, {}, {}
    sym = {} if q == 2 else None
    for r in range(1, q):
        rr = min(r, q - r)  # ||f (x)_r f|| = ||f (x)_{q-r} f||
        vals = np.array([math.sqrt(max(_contraction_sq(q, h, int(k), rr), 0.0)) for k in sub])
        s, inc, inner = _a1_sums(vals, sub, k0, N)
        a1[r], a1_inc[r], a1_wit[r] = s[at], inc[at], inner[at]
        if sym is not None:
            # order-1 self-contractions of 2-kernels are already symmetric
            sym[r] = s[at]

    D = _a2_inner(q, h, k0, N)
    ns = np.arange(2, N + 1)
    logs = np.log(ns)
    inc2 = D[ns] / (ns * logs**3)
    s2 = np.cumsum(inc2)
    return CriterionReport(
        q=q, H=h, regime=regime, N=N, k_start=k0, grid=grid,
        a1=a1, a2=s2[at], a1_increments=a1_inc, a2_increments=inc2[at],
        a1_witness=a1_wit, a2_witness=(D[ns] / logs)[at], a2_inner=D[ns][at],
        subgrid=sub, subgrid_ratio=2.0 ** (1.0 / stride), a1_symmetrized=sym,
    )


def stein_rate_exponent(q: int, H) -> float:
    """Exponent of the contraction-norm decay bound for ``(q, H)``.

    Powers of ``n`` in the subcritical regime; on the critical line the bound
    is ``(log n)^{-1/2}`` and the returned exponent refers to ``log n``.
    """
    regime = classify(q, H)
    if regime not in (Regime.SUBCRITICAL, Regime.CRITICAL):
        raise DomainError("rates are stated for q >= 2 and H <= 1 - 1/(2q)")
    h = float(H)
    if regime is Regime.CRITICAL:
        return -0.5
    if h <= 0.5:
        return -0.5
    if h <= (2 * q - 3) / (2 * q - 2):
        return h - 1.0
    return q * h - q + 0.5


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float

    def __iter__(self):
        return iter((self.slope, self.intercept))


def rate_exponent_fit(q: int, H, r: int, ns) -> RateFit:
    """Least-squares slope of ``log ||f_n (x)_r f_n||`` against ``log n``.

    On the critical line the regressor is ``log log n``.
    """
    ns = np.asarray(ns, dtype=np.int64)
    if ns.size < 3:
        raise DomainError("a rate fit needs at least three horizons")
    if ns.min() < 16:
        raise DomainError("rate fits use horizons n >= 16")
    regime = classify(q, H)
    _check_r(q, r)
    norms = np.array([contraction_norm(block_kernel(q, H, int(n)), r) for n in ns])
    x = np.log(ns.astype(np.float64))
    if regime is Regime.CRITICAL:
        x = np.log(x)
    slope, intercept = np.polyfit(x, np.log(norms), 1)
    return RateFit(float(slope), float(intercept))
