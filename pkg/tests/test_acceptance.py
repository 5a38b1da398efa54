"""Acceptance criteria, one test per criterion.

Each test prints a single ``ACCEPTANCE <k> <title>: PASS|FAIL`` line (also
collected into the pytest terminal summary) listing every sub-check with the
measured value. Seeds and thresholds live in ``fixtures/acceptance.json``.
"""

import json
import math
import time
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

from asclt_lab.asclt import (
    hermite_regime_experiment,
    il_report,
    log_average_cdf_distance,
    malliavin_norm_pathwise,
    stein_bound_report,
    z_second_moment_mc,
)
from asclt_lab.cli import ExperimentConfig, run
from asclt_lab.fgn import implied_covariance, rho, sample_fgn, sample_fgn_batch
from asclt_lab.kernels import (
    GeneralKernel,
    block_kernel,
    contraction_duality_check,
    contraction_norm,
    contraction_norm_naive,
    criterion_partial_sums,
    inner_product_table,
    kernel_inner_product,
    random_symmetric_kernel,
    rate_exponent_fit,
    stein_variance_kernel,
    symmetrized_contraction_norm,
)
from asclt_lab.variation import (
    Regime,
    classify,
    normalized_series,
    sigma_limit,
    sigma_n_exact,
    z_limit_second_moment,
)

try:
    from conftest import ACCEPTANCE_LINES
except ImportError:  # run as a script
    ACCEPTANCE_LINES = []

FIX = json.loads((Path(__file__).parent / "fixtures" / "acceptance.json").read_text())


class Checks:
    def __init__(self, number, title):
        self.number, self.title = number, title
        self.items = []
        self.start = time.perf_counter()

    def add(self, name, ok, detail=""):
        self.items.append((name, bool(ok), detail))

    def budget(self, seconds):
        took = time.perf_counter() - self.start
        self.add(f"runtime < {seconds}s", took < seconds, f"{took:.1f}s")

    def finish(self):
        ok = all(i[1] for i in self.items)
        parts = "; ".join(f"{'ok' if g else 'FAILED'} {n} ({d})" if d else f"{'ok' if g else 'FAILED'} {n}"
                          for n, g, d in self.items)
        line = f"ACCEPTANCE {self.number} {self.title}: {'PASS' if ok else 'FAIL'} [{parts}]"
        print(line)
        ACCEPTANCE_LINES.append(line)
        failed = [n for n, g, _ in self.items if not g]
        assert ok, f"criterion {self.number} failed: {failed}"


def test_criterion_01_covariance_exactness():
    c = Checks(1, "covariance exactness")
    cfg = FIX["covariance"]
    idx = np.arange(cfg["n"])
    for H in cfg["H"]:
        err = np.max(np.abs(implied_covariance(H, cfg["n"]) - rho(H, np.subtract.outer(idx, idx))))
        c.add(f"H={H} max entry error <= {cfg['atol']:g}", err <= cfg["atol"], f"{err:.2e}")
    c.budget(cfg["budget_s"])
    c.finish()


def test_criterion_02_normalizer_correctness():
    c = Checks(2, "normalizer correctness")
    cfg = FIX["normalizer"]
    worst = 0.0
    for q in cfg["q"]:
        for H in cfg["H"]:
            crit = classify(q, H) is Regime.CRITICAL
            for n in cfg["n"]:
                if crit and n == 1:
                    continue
                idx = np.arange(n)
                brute = math.factorial(q) * np.sum(rho(H, np.subtract.outer(idx, idx)) ** q)
                brute /= n * math.log(n) if crit else n
                worst = max(worst, abs(sigma_n_exact(q, H, n) ** 2 / brute - 1))
    c.add(f"brute-force double sum, rel <= {cfg['brute_rtol']:g}", worst <= cfg["brute_rtol"], f"{worst:.1e}")
    n = cfg["limit_n"]
    sub = sigma_n_exact(2, 0.6, n) ** 2
    lim = sigma_limit(2, 0.6)
    c.add("(2, 0.6) within 1% of limit", abs(sub / lim - 1) < cfg["subcritical_rtol"],
          f"{sub:.6f} vs {lim:.6f}, {100 * (sub / lim - 1):+.3f}%")
    crit = sigma_n_exact(2, 0.75, n) ** 2
    c.add("(2, 0.75) n log n within 3% of 9/16", abs(crit / (9 / 16) - 1) < cfg["critical_rtol"],
          f"{crit:.4f} vs 0.5625, {100 * (crit / 0.5625 - 1):+.1f}%")
    c.budget(cfg["budget_s"])
    c.finish()


def test_criterion_03_kernel_identities():
    c = Checks(3, "kernel identity suite")
    cfg = FIX["kernel_identities"]
    tol = cfg["tol"]
    gaps = []
    for seed in range(cfg["dense_seeds"]):
        rng = np.random.default_rng(seed)
        q, n = 2 + seed % 2, 3 + seed % 6
        H = 0.1 + 0.8 * rng.random()
        f, g = random_symmetric_kernel(q, n, H, rng), random_symmetric_kernel(q, n, H, rng)
        for r in range(1, q):
            lhs, rhs = contraction_duality_check(f, g, r)
            gaps.append(abs(lhs - rhs) / max(1.0, abs(lhs)))
    c.add(f"duality on {cfg['dense_seeds']} random kernels", max(gaps) < tol, f"max gap {max(gaps):.1e}")

    norm_err, chain, oracle = 0.0, True, 0.0
    for q in (2, 3):
        for H in (0.3, 0.4, 0.5, 0.6, 0.7):
            if classify(q, H) is Regime.HERMITE:
                continue
            for n in (1, 2, 4, 8, 16, 32):
                f = block_kernel(q, H, n)
                norm_err = max(norm_err, abs(math.factorial(q) * f.norm_sq() - 1))
                for r in range(1, q):
                    fast = contraction_norm(f, r)
                    chain &= symmetrized_contraction_norm(f, r) <= fast * (1 + 1e-12)
                    oracle = max(oracle, abs(fast / contraction_norm_naive(f, r) - 1))
                ks = np.arange(1, n + 1)
                table = inner_product_table(q, H, ks, ks)
                for k in (1, n // 2 or 1, n):
                    R = rho(H, np.subtract.outer(np.arange(k), np.arange(n)))
                    brute = np.sum(R**q) * block_kernel(q, H, k).c * f.c
                    oracle = max(oracle, abs(table[k - 1, n - 1] / brute - 1))
                    oracle = max(oracle, abs(kernel_inner_product(block_kernel(q, H, k), f) / brute - 1))
    c.add("q! ||f_n||^2 = 1", norm_err < tol, f"max err {norm_err:.1e}")
    c.add("symmetrized <= unsymmetrized (q <= 3 grid)", chain)
    c.add("fast paths equal naive oracles, n <= 32", oracle < tol, f"max rel {oracle:.1e}")
    c.budget(cfg["budget_s"])
    c.finish()


@lru_cache(maxsize=None)
def stein_runs(threads):
    cfg = FIX["stein"]
    seed = FIX["mc_seed"]
    a = stein_bound_report(2, 0.6, 64, cfg["reps"], seed=seed, threads=threads)
    b = stein_bound_report(2, 0.5, 100, cfg["reps"], seed=seed, threads=threads)
    return a, b


def test_criterion_04_malliavin_stein():
    c = Checks(4, "Malliavin-Stein cross-validation")
    k = FIX["stein"]["k_se"]
    a, b = stein_runs(1)
    diff = abs(a.mc_variance - a.kernel_variance)
    c.add("(2, 0.6, 64) MC variance vs kernel within 3 se", diff <= k * a.mc_variance_stderr,
          f"{a.mc_variance:.5f} vs {a.kernel_variance:.5f}, {diff / a.mc_variance_stderr:.2f} se")
    c.add("(2, 0.5, 100) kernel value = 2/100", abs(b.kernel_variance - 0.02) <= 1e-15,
          f"{b.kernel_variance!r}")
    holds = b.bound_holds(k)
    detail = ", ".join(f"{h} {b.lipschitz_gap[h]:.4f}" for h in holds)
    c.add(f"(2, 0.5, 100) gaps <= rhs {b.mc_rhs:.4f} + 3 se", all(holds.values()), detail)
    c.budget(FIX["stein"]["budget_s"])
    c.finish()


def test_criterion_05_rates():
    c = Checks(5, "rate reproduction")
    cfg = FIX["rates"]
    ns = [2**j for j in cfg["exponents"]]
    lo, hi = cfg["short_memory_slope"]
    s1 = rate_exponent_fit(2, 0.4, 1, ns).slope
    c.add(f"(2, 0.4) slope in [{lo}, {hi}]", lo <= s1 <= hi, f"{s1:.4f}")
    s2 = rate_exponent_fit(2, 0.6, 1, ns).slope
    c.add(f"(2, 0.6) slope <= {cfg['long_memory_slope_max']}", s2 <= cfg["long_memory_slope_max"], f"{s2:.4f}")
    vals = np.array([contraction_norm(block_kernel(2, 0.75, n), 1) * math.sqrt(math.log(n)) for n in ns])
    var = vals.max() / vals.min() - 1
    c.add("(2, 0.75) norm * sqrt(log n) varies < 25%", var < cfg["critical_variation"], f"{100 * var:.1f}%")
    c.budget(cfg["budget_s"])
    c.finish()


def test_criterion_06_criteria_summability():
    c = Checks(6, "criteria summability witness")
    cfg = FIX["criteria"]
    lo, hi = cfg["witness_window"]
    for q, H in cfg["configs"]:
        rep = criterion_partial_sums(q, H, cfg["N"], stride=cfg["stride"])
        grid = list(rep.grid)
        i11, i12 = grid.index(2048), grid.index(4096)
        sel = (rep.grid >= lo) & (rep.grid <= hi)
        for r in rep.a1:
            g = rep.a1[r][i12] / rep.a1[r][i11] - 1
            c.add(f"({q}, {H}) A1 r={r} growth 2^11 -> 2^12 < 1%", g < cfg["growth_tol"], f"{100 * g:.2f}%")
            w = rep.a1_witness[r][sel]
            c.add(f"({q}, {H}) A1 increment * n log^2 n bounded", w.max() / w.min() <= cfg["witness_max_over_min"],
                  f"{w.min():.3f}..{w.max():.3f}")
        g = rep.a2[i12] / rep.a2[i11] - 1
        c.add(f"({q}, {H}) A2 growth 2^11 -> 2^12 < 1%", g < cfg["growth_tol"], f"{100 * g:.2f}%")
        w, v = rep.a2_inner[sel], rep.a2_witness[sel]
        c.add(f"({q}, {H}) A2 increment * n log^3 n bounded", w.max() / w.min() <= cfg["witness_max_over_min"],
              f"{w.min():.3f}..{w.max():.3f}, divided by log n {v.min():.3f}..{v.max():.3f}")
        c.add(f"({q}, {H}) partial sums nondecreasing",
              all(np.all(np.diff(v) >= 0) for v in rep.a1.values()) and np.all(np.diff(rep.a2) >= 0))
    c.budget(cfg["budget_s"])
    c.finish()


@lru_cache(maxsize=None)
def il_q2(threads):
    cfg = FIX["il"]
    q, H = cfg["q2_config"]
    return il_report(q, H, cfg["n_max"], cfg["reps"], seed=FIX["mc_seed"], t_grid=cfg["t_grid"],
                     n_min=cfg["n_min"], threads=threads)


def test_criterion_07_ibragimov_lifshits():
    c = Checks(7, "Ibragimov-Lifshits check")
    cfg = FIX["il"]
    for H in cfg["linear_H"]:
        rep = il_report(1, H, cfg["n_max"], cfg["reps"], seed=FIX["mc_seed"], t_grid=cfg["t_grid"],
                        n_min=cfg["n_min"])
        dev = np.abs(rep.estimates - rep.exact)
        ok = np.all(dev <= cfg["k_se"] * rep.stderrs)
        z = np.max(np.where(rep.stderrs > 0, dev / np.where(rep.stderrs > 0, rep.stderrs, 1), 0))
        c.add(f"q=1 H={H} MC vs exact within 3 se on {dev.size} (n, t)", ok, f"max {z:.2f} se")
    rep = il_q2(1)
    j = list(rep.t_grid).index(cfg["q2_t"])
    lo, hi = cfg["q2_window"]
    sel = (rep.ns >= lo) & (rep.ns <= hi)
    w = rep.estimates[sel, j] * np.log(rep.ns[sel]) ** 2
    ratio = w.max() / w.min()
    c.add(f"(2, 0.6) t={cfg['q2_t']} estimate * log^2 n bounded on 2^6..2^12",
          ratio <= cfg["q2_max_over_min"], f"max/min {ratio:.2f}, {w[0]:.3f} -> {w[-1]:.3f}")
    c.budget(cfg["budget_s"])
    c.finish()


def test_criterion_08_asclt_end_to_end():
    c = Checks(8, "ASCLT end-to-end")
    cfg = FIX["asclt"]
    for q, H in cfg["configs"]:
        wins = 0
        for s in FIX["seeds"]:
            series = normalized_series(q, H, sample_fgn(H, cfg["n_late"], seed=s))
            late = log_average_cdf_distance(series, cfg["n_late"], cfg["normalizer"])
            early = log_average_cdf_distance(series, cfg["n_early"], cfg["normalizer"])
            wins += late < early
        c.add(f"({q}, {H}) d(2^16) < d(2^10) on >= {cfg['min_wins']}/10", wins >= cfg["min_wins"], f"{wins}/10")
    c.budget(cfg["budget_s"])
    c.finish()


@lru_cache(maxsize=None)
def z_moment(threads):
    cfg = FIX["hermite"]
    return z_second_moment_mc(cfg["q"], cfg["H"], cfg["n_max"], cfg["moment_reps"], seed=FIX["mc_seed"],
                              threads=threads)


def test_criterion_09_hermite_contrast():
    c = Checks(9, "Hermite-regime contrast")
    cfg = FIX["hermite"]
    q, H, n_max = cfg["q"], cfg["H"], cfg["n_max"]
    m, se = z_moment(1)
    lim = z_limit_second_moment(q, H)
    c.add("E[Z^2] within 2% of closed form", abs(m / lim - 1) <= cfg["moment_rtol"],
          f"{m:.4f} (se {se:.4f}) vs {lim:.4f}, {100 * (m / lim - 1):+.2f}%")
    rep = hermite_regime_experiment(q, H, n_max, FIX["seeds"], control=tuple(cfg["control"]))
    conv = int(rep.converges.sum())
    c.add(f"per-seed log-average converges on >= {cfg['min_converged']}/10", conv >= cfg["min_converged"],
          f"{conv}/10")
    rep = hermite_regime_experiment(q, H, n_max, list(range(cfg["dispersion_seeds"])),
                                    control=tuple(cfg["control"]))
    c.add(f"dispersion > {cfg['dispersion_factor']:g} x control", rep.dispersion_ratio > cfg["dispersion_factor"],
          f"{rep.dispersion:.4f} vs {rep.control_dispersion:.4f}, ratio {rep.dispersion_ratio:.2f}")
    c.budget(cfg["budget_s"])
    c.finish()


def test_criterion_10_determinism():
    c = Checks(10, "determinism across thread counts")
    one, many = FIX["determinism"]["threads"]
    a1, b1 = stein_runs(one)
    a8, b8 = stein_runs(many)
    c.add(f"stein reports, {one} vs {many} threads", a1.to_dict() == a8.to_dict() and b1.to_dict() == b8.to_dict())
    ra, rb = il_q2(one), il_q2(many)
    c.add("IL report", np.array_equal(ra.estimates, rb.estimates) and np.array_equal(ra.stderrs, rb.stderrs))
    c.add("Z second moment", z_moment(one) == z_moment(many))
    ya = sample_fgn_batch(0.75, 1024, 2000, seed=FIX["mc_seed"], threads=one)
    yb = sample_fgn_batch(0.75, 1024, 2000, seed=FIX["mc_seed"], threads=many)
    c.add("path batches", np.array_equal(ya, yb))
    rec = [run(ExperimentConfig("il", q=1, H=0.7, n=256, reps=500, threads=t, timing=False)) for t in (one, many)]
    c.add("CLI il records", rec[0].results == rec[1].results and rec[0].report == rec[1].report)
    c.finish()


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))
