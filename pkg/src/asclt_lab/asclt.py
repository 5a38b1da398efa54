"""Log-averaged empirical measures and the Monte Carlo experiments built on them.

For a sequence ``G_1, G_2, ...`` the log-average measure at horizon n is

    mu_n = (1 / nu_n) sum_{k=k0}^{n} (1/k) delta_{G_k},

with ``nu_n = log n`` (default) or the harmonic sum over the same range.
Almost sure convergence of ``mu_n`` to ``N(0, 1)`` is probed through its
Kolmogorov distance, the characteristic-function statistic

    Delta_n(t) = (1 / log n) sum_{k<=n} (1/k) (exp(i t G_k) - exp(-t^2 / 2)),

and a Stein-type bound on smooth distances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from ._parallel import replicate
from ._rng import check_seed
from .errors import DomainError
from .fgn import check_hurst, covariance_fbm, covariance_sequence, sample_fgn, sample_fgn_batch
from .hermite import hermite_map
from .kernels import stein_variance_kernel
from .variation import (
    Regime,
    VariationSeries,
    classify,
    lag_power_sums,
    normalized_series,
    normalized_values,
    z_values,
)

__all__ = [
    "LogAverageMeasure",
    "ILReport",
    "SteinBoundReport",
    "HermiteRegimeReport",
    "NORMALIZERS",
    "log_average_eval",
    "log_average_cdf_distance",
    "log_average_measure",
    "kolmogorov_distance",
    "il_delta_sq_mc",
    "il_delta_sq_exact_gaussian",
    "il_report",
    "malliavin_norm_pathwise",
    "stein_bound_report",
    "STEIN_TEST_FUNCTIONS",
    "hermite_regime_experiment",
    "z_second_moment_mc",
    "DEFAULT_T_GRID",
]

NORMALIZERS = ("log_n", "harmonic")
DEFAULT_T_GRID = (0.25, 0.5, 1.0, 2.0, 4.0)


def _check_normalizer(mode: str) -> str:
    aliases = {"log": "log_n", "log_n": "log_n", "harmonic": "harmonic"}
    if mode not in aliases:
        raise DomainError(f"normalizer must be one of {NORMALIZERS}, got {mode!r}")
    return aliases[mode]


def _nu(n: int, k0: int, mode: str) -> float:
    if mode == "log_n":
        return math.log(n)
    return float(np.sum(1.0 / np.arange(k0, n + 1)))


@dataclass(frozen=True)
class LogAverageMeasure:
    """Atoms ``values[i]`` at horizons ``ks[i]`` carrying mass ``weights[i] / nu``.

    With ``normalizer_mode="harmonic"`` the masses sum to 1.
    """

    values: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    n: int
    normalizer_mode: str = "log_n"
    nu: float = 1.0

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum() / self.nu)

    def evaluate(self, phi) -> float:
        """``int phi d mu_n`` as a finite weighted sum."""
        return float(np.dot(self.weights, np.asarray(phi(self.values), dtype=np.float64)) / self.nu)

    def _sorted(self):
        order = np.argsort(self.values, kind="stable")
        x = self.values[order]
        cum = np.cumsum(self.weights[order]) / self.nu
        # collapse ties onto their last index
        last = np.r_[x[1:] != x[:-1], True]
        right = cum[last]
        left = np.r_[0.0, right[:-1]]
        return x[last], left, right

    def cdf(self, x):
        """Right-continuous weighted empirical CDF."""
        xs, _, right = self._sorted()
        pos = np.searchsorted(xs, np.asarray(x, dtype=np.float64), side="right")
        out = np.where(pos > 0, right[np.maximum(pos - 1, 0)], 0.0)
        return float(out) if np.ndim(x) == 0 else out

    def kolmogorov(self) -> float:
        """``sup_x |F_n(x) - Phi(x)|`` over both one-sided limits at every atom."""
        xs, left, right = self._sorted()
        phi = ndtr(xs)
        gaps = np.maximum(np.abs(right - phi), np.abs(left - phi))
        return float(max(gaps.max(), abs(self.total_mass - 1.0)))


def log_average_measure(ks, values, n: int, normalizer: str = "log_n") -> LogAverageMeasure:
    """Measure built from atoms ``values`` observed at horizons ``ks`` up to ``n``."""
    mode = _check_normalizer(normalizer)
    if n < 2:
        raise DomainError(f"log averages need n >= 2, got {n}")
    ks = np.asarray(ks, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    keep = ks <= n
    if ks.size == 0 or ks[keep].size == 0 or ks.max() < n:
        raise DomainError(f"horizon {n} exceeds the series length")
    k0 = int(ks[0])
    return LogAverageMeasure(values[keep], 1.0 / ks[keep], int(n), mode, _nu(int(n), k0, mode))


def _series_measure(series: VariationSeries, n: int, normalizer: str) -> LogAverageMeasure:
    return log_average_measure(series.ns, series.values, n, normalizer)


def log_average_eval(series: VariationSeries, phi, n: int, normalizer: str = "log_n") -> float:
    """``(1/nu_n) sum_{k=k0}^{n} phi(G_k) / k`` along one series."""
    return _series_measure(series, n, normalizer).evaluate(phi)


def log_average_cdf_distance(series: VariationSeries, n: int, normalizer: str = "log_n") -> float:
    """Kolmogorov distance between the log-average measure at ``n`` and ``N(0, 1)``."""
    return _series_measure(series, n, normalizer).kolmogorov()


def kolmogorov_distance(values, weights) -> float:
    """Kolmogorov distance of the measure ``sum_i weights[i] delta_{values[i]}`` to ``N(0, 1)``."""
    v = np.asarray(values, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w <= 0):
        raise DomainError("atom weights must be positive")
    return LogAverageMeasure(v, w, len(v), "harmonic", 1.0).kolmogorov()


def _check_clt(q, H, what):
    regime = classify(q, H)
    if regime is Regime.HERMITE:
        raise DomainError(f"{what} needs a Gaussian limit, but H > 1 - 1/(2q) for q={q}")
    return regime


def _check_reps(reps, minimum=2):
    if int(reps) != reps or reps < minimum:
        raise DomainError(f"reps must be an integer >= {minimum}, got {reps!r}")
    return int(reps)


def _delta_paths(q, H, horizons, ts, reps, seed, threads, start=0):
    """``Delta_n(t)`` per path, shape ``(reps, len(horizons), len(ts))``."""
    N = int(max(horizons))
    ts = np.asarray(ts, dtype=np.float64)
    horizons = np.asarray(horizons, dtype=np.int64)
    target = np.exp(-0.5 * ts**2)

    def task(a, b):
        y = sample_fgn_batch(H, N, b - a, seed=seed, start=start + a, threads=1)
        ns, G = normalized_values(q, H, y)
        w = 1.0 / ns
        out = np.empty((b - a, len(horizons), len(ts)), dtype=np.complex128)
        for j, t in enumerate(ts):
            terms = (np.exp(1j * t * G) - target[j]) * w
            csum = np.cumsum(terms, axis=-1)
            out[:, :, j] = csum[:, horizons - ns[0]] / np.log(horizons)
        return out

    return replicate(task, reps, threads, chunk=max(1, min(256, (1 << 21) // N)))


def _mean_se(x: np.ndarray, axis=0):
    m = x.mean(axis=axis)
    se = x.std(axis=axis, ddof=1) / math.sqrt(x.shape[axis])
    return m, se


def il_delta_sq_mc(q: int, H, n: int, t: float, reps: int, seed: int = 0, threads=None):
    """Monte Carlo ``(estimate, stderr)`` of ``E|Delta_n(t)|^2``.

    Each replication is one simulated path; ``Delta_n(t)`` uses the whole
    prefix ``G_{k0}, ..., G_n`` of that path with complex arithmetic.
    """
    _check_clt(q, H, "the IL statistic")
    if n < 2:
        raise DomainError(f"n must be >= 2, got {n}")
    reps = _check_reps(reps, 100)
    if n < 3 and classify(q, H) is Regime.CRITICAL:
        raise DomainError("critical-regime IL statistic needs n >= 3")
    d = _delta_paths(q, H, [n], [t], reps, check_seed(seed), threads)[:, 0, 0]
    m, se = _mean_se(np.abs(d) ** 2)
    return float(m), float(se)


def il_delta_sq_exact_gaussian(H, n: int, t: float) -> float:
    """Exact ``E|Delta_n(t)|^2`` for ``q = 1``:

        (1 / log^2 n) sum_{k,l<=n} exp(-t^2) (exp(E[G_k G_l] t^2) - 1) / (kl),

    with ``E[G_k G_l] = E[B_k B_l] / (k l)^H``.
    """
    h = check_hurst(H)
    if n < 2:
        raise DomainError(f"n must be >= 2, got {n}")
    ks = np.arange(1, n + 1, dtype=np.float64)
    t2 = float(t) ** 2
    total = 0.0
    block = 1024
    for a in range(0, n, block):
        k = ks[a : a + block][:, None]
        cov = covariance_fbm(h, k, ks[None, :]) / (k**h * ks[None, :] ** h)
        total += float(np.sum(np.expm1(cov * t2) / (k * ks[None, :])))
    return math.exp(-t2) * total / math.log(n) ** 2


@dataclass
class ILReport:
    """``E|Delta_n(t)|^2`` over dyadic horizons and a t-grid.

    ``estimates[i, j]`` and ``stderrs[i, j]`` refer to ``ns[i]`` and
    ``t_grid[j]``; ``partial_sums[i, j]`` accumulates
    ``E|Delta_n(t)|^2 / (n log n)`` over ``ns[:i+1]``. ``exact`` is filled
    for ``q = 1``.
    """

    q: int
    H: float
    ns: np.ndarray
    t_grid: np.ndarray
    reps: int
    seed: int
    estimates: np.ndarray
    stderrs: np.ndarray
    partial_sums: np.ndarray
    exact: np.ndarray | None = None

    @property
    def sup_partial_sum(self) -> float:
        """Grid maximum over t of the final partial sum."""
        return float(self.partial_sums[-1].max())

    def to_dict(self) -> dict:
        out = {
            "q": self.q,
            "H": self.H,
            "ns": [int(n) for n in self.ns],
            "t_grid": [float(t) for t in self.t_grid],
            "reps": self.reps,
            "seed": self.seed,
            "estimates": self.estimates.tolist(),
            "stderrs": self.stderrs.tolist(),
            "partial_sums": self.partial_sums.tolist(),
            "sup_partial_sum": self.sup_partial_sum,
        }
        if self.exact is not None:
            out["exact"] = self.exact.tolist()
        return out


def il_report(q: int, H, n_max: int, reps: int, seed: int = 0, t_grid=DEFAULT_T_GRID,
              n_min: int = 4, threads=None) -> ILReport:
    """Ibragimov-Lifshits diagnostics on dyadic ``n`` in ``[n_min, n_max]``.

    All horizons of one replication come from the same path, so estimates at
    different n are correlated; their standard errors are each valid.
    """
    _check_clt(q, H, "the IL statistic")
    reps = _check_reps(reps, 100)
    lo = max(2, int(n_min)).bit_length() - 1
    if (1 << lo) < n_min:
        lo += 1
    hi = int(n_max).bit_length() - 1
    ns = np.array([1 << j for j in range(max(lo, 2), hi + 1)], dtype=np.int64)
    if ns.size == 0:
        raise DomainError("empty dyadic horizon grid")
    ts = np.asarray(t_grid, dtype=np.float64)
    d = _delta_paths(q, H, ns, ts, reps, check_seed(seed), threads)
    est, se = _mean_se(np.abs(d) ** 2)
    weights = 1.0 / (ns * np.log(ns))
    partial = np.cumsum(est * weights[:, None], axis=0)
    exact = None
    if q == 1:
        exact = np.array([[il_delta_sq_exact_gaussian(H, int(n), t) for t in ts] for n in ns])
    return ILReport(int(q), float(H), ns, ts, reps, int(seed), est, se, partial, exact)


def _toeplitz_quadratic(u: np.ndarray, row: np.ndarray) -> np.ndarray:
    # u^T T u = sum_r row[|r|] sum_k u_k u_{k+r}, autocorrelations by FFT
    n = u.shape[-1]
    size = 1 << (2 * n - 1).bit_length()
    F = np.fft.rfft(u, size, axis=-1)
    ac = np.fft.irfft(F * F.conj(), size, axis=-1)[..., :n]
    return ac[..., 0] * row[0] + 2.0 * ac[..., 1:] @ row[1:]


def malliavin_norm_pathwise(q: int, H, y) -> np.ndarray | float:
    """``(1/q) ||D G_n||^2`` for the path prefix ``y`` of length n.

    Equals ``q / (q! S_n) * sum_{k,l<n} H_{q-1}(Y_k) H_{q-1}(Y_l) rho(k-l)``
    and has mean 1. Works along the last axis of ``y``.
    """
    if int(q) != q or q < 2:
        raise DomainError("the Malliavin norm of a variation needs q >= 2")
    regime = _check_clt(q, H, "the Malliavin norm")
    y = np.asarray(getattr(y, "y", y), dtype=np.float64)
    n = y.shape[-1]
    if regime is Regime.CRITICAL and n < 2:
        raise DomainError("critical-regime normalization needs n >= 2")
    u = hermite_map(q - 1, y)
    row = covariance_sequence(H).table(n - 1)
    S = lag_power_sums(q, H, n)[-1]
    if n <= 64:
        from scipy.linalg import toeplitz

        quad = np.einsum("...i,ij,...j->...", u, toeplitz(row), u)
    else:
        quad = _toeplitz_quadratic(u, row)
    out = np.maximum(q * quad / (math.factorial(q) * S), 0.0)
    return float(out) if out.ndim == 0 else out


# Lipschitz-1 test functions with E h(N) and the provenance of that value.
STEIN_TEST_FUNCTIONS = {
    "abs": (np.abs, math.sqrt(2.0 / math.pi), "closed_form"),
    "sin": (np.sin, 0.0, "closed_form"),
    "clip": (lambda x: np.clip(x, -1.0, 1.0), 0.0, "closed_form"),
}


@dataclass
class SteinBoundReport:
    """Smooth-distance gaps of ``G_n`` against the Malliavin-Stein bound."""

    q: int
    H: float
    n: int
    reps: int
    seed: int
    lipschitz_gap: dict
    gap_stderr: dict
    reference: dict
    mc_rhs: float
    mc_rhs_stderr: float
    mc_variance: float
    mc_variance_stderr: float
    kernel_variance: float
    kernel_rhs: float

    def bound_holds(self, k: float = 3.0) -> dict:
        """Per test function: ``gap <= mc_rhs + k * combined stderr``."""
        return {
            name: bool(gap <= self.mc_rhs + k * math.hypot(self.gap_stderr[name], self.mc_rhs_stderr))
            for name, gap in self.lipschitz_gap.items()
        }

    def rhs_agree(self, k: float = 3.0) -> bool:
        return abs(self.mc_rhs - self.kernel_rhs) <= k * self.mc_rhs_stderr

    def to_dict(self) -> dict:
        return {
            "q": self.q,
            "H": self.H,
            "n": self.n,
            "reps": self.reps,
            "seed": self.seed,
            "lipschitz_gap": dict(self.lipschitz_gap),
            "gap_stderr": dict(self.gap_stderr),
            "reference": {k: list(v) for k, v in self.reference.items()},
            "mc_rhs": self.mc_rhs,
            "mc_rhs_stderr": self.mc_rhs_stderr,
            "mc_variance": self.mc_variance,
            "mc_variance_stderr": self.mc_variance_stderr,
            "kernel_variance": self.kernel_variance,
            "kernel_rhs": self.kernel_rhs,
            "bound_holds": self.bound_holds(),
        }


def _stein_samples(q, H, n, reps, seed, threads):
    def task(a, b):
        y = sample_fgn_batch(H, n, b - a, seed=seed, start=a, threads=1)
        _, G = normalized_values(q, H, y)
        return np.column_stack([G[:, -1], malliavin_norm_pathwise(q, H, y)])

    return replicate(task, reps, threads, chunk=max(1, min(1024, (1 << 22) // n)))


def stein_bound_report(q: int, H, n: int, reps: int, seed: int = 0, threads=None) -> SteinBoundReport:
    """Monte Carlo check of ``|E h(G_n) - E h(N)| <= sqrt(E[(1 - ||DG_n||^2/q)^2])``.

    The right side is estimated from the same paths (``mc_rhs``, delta-method
    standard error) and computed exactly from the kernel (``kernel_rhs``).
    """
    _check_clt(q, H, "the Stein bound")
    if int(q) != q or q < 2:
        raise DomainError("the Stein bound report needs q >= 2")
    reps = _check_reps(reps, 100)
    seed = check_seed(seed)
    data = _stein_samples(q, H, int(n), reps, seed, threads)
    G, D = data[:, 0], data[:, 1]
    gaps, ses, refs = {}, {}, {}
    for name, (h, ref, tag) in STEIN_TEST_FUNCTIONS.items():
        m, se = _mean_se(h(G))
        gaps[name] = float(abs(m - ref))
        ses[name] = float(se)
        refs[name] = (ref, tag)
    v, v_se = _mean_se((1.0 - D) ** 2)
    rhs = math.sqrt(max(v, 0.0))
    rhs_se = v_se / (2.0 * rhs) if rhs > 0 else float("inf")
    kv = stein_variance_kernel(q, H, int(n))
    return SteinBoundReport(int(q), float(H), int(n), reps, seed, gaps, ses, refs,
                            rhs, float(rhs_se), float(v), float(v_se), kv, math.sqrt(kv))


def _dyadic_log_average(values: np.ndarray, J: int, upto: int) -> np.ndarray:
    # atoms Z_{2^j}, each carrying the harmonic mass of [2^j, 2^{j+1}) cut at 2^upto
    n = 1 << upto
    w = np.empty(upto + 1)
    for j in range(upto + 1):
        k = np.arange(1 << j, min(1 << (j + 1), n + 1))
        w[j] = np.sum(1.0 / k)
    return values[..., : upto + 1] @ w / w.sum()


@dataclass
class HermiteRegimeReport:
    """Per-seed log-averages of ``phi(Z_k)`` and the across-seed dispersion contrast."""

    q: int
    H: float
    n_max: int
    seeds: list
    log_average: np.ndarray
    log_average_early: np.ndarray
    z_terminal: np.ndarray
    converges: np.ndarray
    dispersion: float
    control: tuple
    control_log_average: np.ndarray
    control_dispersion: float
    early_divisor: int = 16

    @property
    def dispersion_ratio(self) -> float:
        return self.dispersion / self.control_dispersion

    def to_dict(self) -> dict:
        return {
            "q": self.q,
            "H": self.H,
            "n_max": self.n_max,
            "seeds": [int(s) for s in self.seeds],
            "log_average": self.log_average.tolist(),
            "log_average_early": self.log_average_early.tolist(),
            "z_terminal": self.z_terminal.tolist(),
            "converges": [bool(c) for c in self.converges],
            "dispersion": self.dispersion,
            "control": list(self.control),
            "control_log_average": self.control_log_average.tolist(),
            "control_dispersion": self.control_dispersion,
            "dispersion_ratio": self.dispersion_ratio,
            "early_divisor": self.early_divisor,
        }


def hermite_regime_experiment(q: int, H, n_max: int, seeds, phi=np.arctan,
                              control=(2, 0.6), normalizer: str = "harmonic",
                              early_divisor: int = 16) -> HermiteRegimeReport:
    """Pathwise log-averages of ``phi(Z_k)`` over dyadic ``k <= n_max``.

    Each seed drives one fine path on ``[0, 1]``; ``Z_k`` for ``k = 2^j`` is
    read off block sums of that path. The log-average at ``2^J`` weights atom
    ``Z_{2^j}`` by the harmonic mass of ``[2^j, 2^{j+1})``. A CLT-regime
    control runs the full log-average of ``phi(G_k)`` on the same seeds.
    """
    if classify(q, H) is not Regime.HERMITE:
        raise DomainError("hermite_regime_experiment needs H > 1 - 1/(2q)")
    if n_max < 2 or n_max & (n_max - 1):
        raise DomainError(f"n_max must be a power of two, got {n_max}")
    if early_divisor < 2 or early_divisor & (early_divisor - 1) or early_divisor > n_max:
        raise DomainError("early_divisor must be a power of two not exceeding n_max")
    mode = _check_normalizer(normalizer)
    seeds = [check_seed(s) for s in seeds]
    J = int(n_max).bit_length() - 1
    J0 = J - (int(early_divisor).bit_length() - 1)
    la, la0, zt = [], [], []
    for s in seeds:
        path = sample_fgn(H, 1, m=n_max, seed=s)
        _, Z = z_values(q, H, path.y)
        v = phi(Z)
        la.append(_dyadic_log_average(v, J, J))
        la0.append(_dyadic_log_average(v, J, J0))
        zt.append(Z[-1])
    la, la0, zt = np.array(la), np.array(la0), np.array(zt)
    target = phi(zt)
    conv = np.abs(la - target) < np.abs(la0 - target)

    cq, cH = control
    ctrl = []
    for s in seeds:
        series = normalized_series(cq, cH, sample_fgn(cH, n_max, seed=s))
        ctrl.append(log_average_eval(series, phi, n_max, mode))
    ctrl = np.array(ctrl)
    disp = float(np.var(la, ddof=1)) if len(seeds) > 1 else 0.0
    cdisp = float(np.var(ctrl, ddof=1)) if len(seeds) > 1 else 0.0
    return HermiteRegimeReport(int(q), float(H), int(n_max), seeds, la, la0, zt, conv, disp,
                               (int(cq), float(cH)), ctrl, cdisp, int(early_divisor))


def z_second_moment_mc(q: int, H, n_max: int, reps: int, seed: int = 0, threads=None):
    """Monte Carlo ``(mean, stderr)`` of ``Z_{n_max}^2`` over ``reps`` fine paths."""
    if classify(q, H) is not Regime.HERMITE:
        raise DomainError("the Z-series is defined for H > 1 - 1/(2q)")
    reps = _check_reps(reps)
    seed = check_seed(seed)

    def task(a, b):
        y = sample_fgn_batch(H, 1, b - a, m=n_max, seed=seed, start=a, threads=1)
        return z_values(q, H, y)[1][:, -1]

    z = replicate(task, reps, threads, chunk=max(1, min(256, (1 << 21) // n_max)))
    m, se = _mean_se(z**2)
    return float(m), float(se)
