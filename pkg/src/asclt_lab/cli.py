"""Command-line experiment runner ``asclt-lab``.

Every command turns an :class:`ExperimentConfig` into a :class:`ResultRecord`
holding flat metric rows (written as CSV) and a structured report (written
as JSON together with the rows, the config echo and the code version).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from ._parallel import default_threads
from ._rng import check_seed
from .asclt import (
    DEFAULT_T_GRID,
    hermite_regime_experiment,
    il_report,
    log_average_measure,
    stein_bound_report,
    z_second_moment_mc,
)
from .errors import AscltLabError, DomainError, FixtureSchemaError
from .fgn import sample_fgn
from .kernels import (
    block_kernel,
    contraction_norm,
    criterion_partial_sums,
    rate_exponent_fit,
    stein_rate_exponent,
)
from .variation import (
    Regime,
    classify,
    normalized_values,
    z_limit_second_moment,
    z_values,
)

__all__ = [
    "ExperimentConfig",
    "ResultRecord",
    "CompareReport",
    "COMMANDS",
    "CSV_HEADER",
    "run",
    "write_record",
    "compare_fixture",
    "main",
]

COMMANDS = ("simulate", "criteria", "asclt", "stein", "il", "hermite-regime", "rates")
CSV_HEADER = ("metric", "q", "H", "n", "t", "value", "stderr", "ref_value", "ref_provenance")

EXIT_CODES = {
    "error": 1,
    "domain_error": 3,
    "capacity_error": 4,
    "embedding_failure": 5,
    "schema_mismatch": 6,
    "io_error": 7,
}


@dataclass
class ExperimentConfig:
    """Everything that determines the outputs of one run."""

    command: str
    q: int = 2
    H: float = 0.6
    n: int | None = None
    n_max: int | None = None
    reps: int | None = None
    seed: int = 0
    seeds: list | None = None
    t_grid: list = field(default_factory=lambda: list(DEFAULT_T_GRID))
    normalizer: str = "log_n"
    threads: int | None = None
    stride: int = 4
    out: str | None = None
    format: str = "both"
    timing: bool = True

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise DomainError(f"unknown command {self.command!r}; expected one of {COMMANDS}")
        if self.format not in ("csv", "json", "both"):
            raise DomainError(f"format must be csv, json or both, got {self.format!r}")
        self.normalizer = {"log": "log_n"}.get(self.normalizer, self.normalizer)
        if self.normalizer not in ("log_n", "harmonic"):
            raise DomainError(f"normalizer must be log or harmonic, got {self.normalizer!r}")
        self.seed = check_seed(self.seed)
        if self.seeds is not None:
            self.seeds = [check_seed(s) for s in self.seeds]
        self.t_grid = [float(t) for t in self.t_grid]

    def resolved_seeds(self, default_count: int) -> list:
        """Explicit seed list, or ``reps`` consecutive seeds from ``seed``."""
        if self.seeds is not None:
            return list(self.seeds)
        count = self.reps if self.reps is not None else default_count
        return [self.seed + i for i in range(count)]

    def horizon(self, default: int) -> int:
        for v in (self.n_max, self.n):
            if v is not None:
                return int(v)
        return default

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise DomainError(f"unknown config keys: {sorted(extra)}")
        return cls(**data)


def _row(metric, q, H, n=None, t=None, value=float("nan"), stderr=None,
         ref_value=None, ref_provenance=None) -> dict:
    return {
        "metric": metric,
        "q": int(q),
        "H": float(H),
        "n": None if n is None else int(n),
        "t": None if t is None else float(t),
        "value": float(value),
        "stderr": None if stderr is None else float(stderr),
        "ref_value": None if ref_value is None else float(ref_value),
        "ref_provenance": ref_provenance,
    }


@dataclass
class ResultRecord:
    config: dict
    version: str
    results: list
    report: dict
    timing: dict | None = None

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "version": self.version,
            "results": self.results,
            "report": self.report,
            "timing": self.timing,
        }

    def to_json(self) -> str:
        return json.dumps(_json_safe(self.to_dict()), indent=2, sort_keys=False, allow_nan=False) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in self.results:
            w.writerow([_csv_cell(row[k]) for k in CSV_HEADER])
        return buf.getvalue()

    @classmethod
    def from_dict(cls, data: dict) -> "ResultRecord":
        try:
            return cls(data["config"], data["version"], [_unjson_row(r) for r in data["results"]],
                       data.get("report", {}), data.get("timing"))
        except (KeyError, TypeError) as exc:
            raise FixtureSchemaError(f"not a result record: {exc}") from exc


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _json_safe(obj):
    if isinstance(obj, float):
        if math.isnan(obj):
            return "nan"
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    return obj


def _unjson_row(row: dict) -> dict:
    out = dict(row)
    for k in ("value", "stderr", "ref_value", "t", "H"):
        if isinstance(out.get(k), str):
            out[k] = float(out[k])
    return out


def parse_csv(text: str) -> list:
    """Rows of a CSV result table with the types of the JSON schema."""
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader))
    if header != CSV_HEADER:
        raise FixtureSchemaError(f"unexpected CSV header {header}")
    rows = []
    for cells in reader:
        r = dict(zip(header, cells))
        rows.append({
            "metric": r["metric"],
            "q": int(r["q"]),
            "H": float(r["H"]),
            "n": int(r["n"]) if r["n"] else None,
            "t": float(r["t"]) if r["t"] else None,
            "value": float(r["value"]),
            "stderr": float(r["stderr"]) if r["stderr"] else None,
            "ref_value": float(r["ref_value"]) if r["ref_value"] else None,
            "ref_provenance": r["ref_provenance"] or None,
        })
    return rows


def _simulate(cfg: ExperimentConfig):
    q, H = cfg.q, cfg.H
    n = cfg.horizon(8)
    rows = []
    regime = classify(q, H)
    if regime is Regime.HERMITE:
        path = sample_fgn(H, 1, m=n, seed=cfg.seed)
        ns, Z = z_values(q, H, path.y)
        rows += [_row("Y", q, H, k + 1, value=v) for k, v in enumerate(path.y)]
        rows += [_row("Z", q, H, k, value=v) for k, v in zip(ns, Z)]
        report = {"regime": regime.value, "resolution": n, "Z": Z.tolist()}
    else:
        path = sample_fgn(H, n, seed=cfg.seed)
        ks, G = normalized_values(q, H, path.y)
        rows += [_row("Y", q, H, k + 1, value=v) for k, v in enumerate(path.y)]
        rows += [_row("G", q, H, k, value=v) for k, v in zip(ks, G)]
        report = {"regime": regime.value, "G": G.tolist()}
    report["Y"] = path.y.tolist()
    return rows, report


def _criteria(cfg: ExperimentConfig):
    rep = criterion_partial_sums(cfg.q, cfg.H, cfg.horizon(4096), stride=cfg.stride)
    rows = []
    for i, n in enumerate(rep.grid):
        for r in rep.a1:
            rows.append(_row(f"a1_r{r}", cfg.q, cfg.H, n, value=rep.a1[r][i]))
            rows.append(_row(f"a1_r{r}_witness", cfg.q, cfg.H, n, value=rep.a1_witness[r][i]))
        rows.append(_row("a2", cfg.q, cfg.H, n, value=rep.a2[i]))
        rows.append(_row("a2_witness", cfg.q, cfg.H, n, value=rep.a2_witness[i]))
    return rows, rep.to_dict()


def _asclt(cfg: ExperimentConfig):
    q, H = cfg.q, cfg.H
    N = cfg.horizon(1 << 16)
    seeds = cfg.resolved_seeds(10)
    regime = classify(q, H)
    if regime is Regime.HERMITE:
        raise DomainError("asclt needs a Gaussian limit; use hermite-regime for H > 1 - 1/(2q)")
    horizons = [1 << j for j in range(2, N.bit_length()) if (1 << j) <= N]
    if horizons[-1] != N:
        horizons.append(N)
    dist = np.empty((len(seeds), len(horizons)))
    cosine = np.empty(len(seeds))
    for i, s in enumerate(seeds):
        ks, G = normalized_values(q, H, sample_fgn(H, N, seed=s).y)
        for j, n in enumerate(horizons):
            dist[i, j] = log_average_measure(ks, G, n, cfg.normalizer).kolmogorov()
        cosine[i] = log_average_measure(ks, G, N, cfg.normalizer).evaluate(np.cos)
    rows = []
    for j, n in enumerate(horizons):
        for i, s in enumerate(seeds):
            rows.append(_row(f"kolmogorov_seed{s}", q, H, n, value=dist[i, j]))
        se = dist[:, j].std(ddof=1) / math.sqrt(len(seeds)) if len(seeds) > 1 else None
        rows.append(_row("kolmogorov_mean", q, H, n, value=dist[:, j].mean(), stderr=se))
    ref = math.exp(-0.5)
    for i, s in enumerate(seeds):
        rows.append(_row(f"log_average_cos_seed{s}", q, H, N, value=cosine[i],
                         ref_value=ref, ref_provenance="closed_form"))
    report = {
        "normalizer": cfg.normalizer,
        "seeds": seeds,
        "horizons": horizons,
        "kolmogorov": dist.tolist(),
        "log_average_cos": cosine.tolist(),
        "cos_reference": ref,
    }
    return rows, report


def _stein(cfg: ExperimentConfig):
    n = cfg.horizon(100)
    rep = stein_bound_report(cfg.q, cfg.H, n, cfg.reps or 10000, seed=cfg.seed, threads=cfg.threads)
    rows = []
    for name, gap in rep.lipschitz_gap.items():
        ref, tag = rep.reference[name]
        rows.append(_row(f"lipschitz_gap_{name}", cfg.q, cfg.H, n, value=gap,
                         stderr=rep.gap_stderr[name], ref_value=ref, ref_provenance=tag))
    rows.append(_row("mc_rhs", cfg.q, cfg.H, n, value=rep.mc_rhs, stderr=rep.mc_rhs_stderr,
                     ref_value=rep.kernel_rhs, ref_provenance="kernel_exact"))
    rows.append(_row("mc_variance", cfg.q, cfg.H, n, value=rep.mc_variance,
                     stderr=rep.mc_variance_stderr, ref_value=rep.kernel_variance,
                     ref_provenance="kernel_exact"))
    rows.append(_row("kernel_rhs", cfg.q, cfg.H, n, value=rep.kernel_rhs))
    return rows, rep.to_dict()


def _il(cfg: ExperimentConfig):
    rep = il_report(cfg.q, cfg.H, cfg.horizon(4096), cfg.reps or 1000, seed=cfg.seed,
                    t_grid=cfg.t_grid, threads=cfg.threads)
    rows = []
    for i, n in enumerate(rep.ns):
        for j, t in enumerate(rep.t_grid):
            ref = None if rep.exact is None else rep.exact[i, j]
            rows.append(_row("il_delta_sq", cfg.q, cfg.H, n, t, rep.estimates[i, j], rep.stderrs[i, j],
                             ref, None if ref is None else "exact_gaussian"))
            rows.append(_row("il_partial_sum", cfg.q, cfg.H, n, t, rep.partial_sums[i, j]))
    return rows, rep.to_dict()


def _hermite_regime(cfg: ExperimentConfig):
    n_max = cfg.horizon(4096)
    seeds = cfg.seeds if cfg.seeds is not None else [cfg.seed + i for i in range(50)]
    rep = hermite_regime_experiment(cfg.q, cfg.H, n_max, seeds, normalizer=cfg.normalizer)
    rows = []
    for s, la, z in zip(rep.seeds, rep.log_average, rep.z_terminal):
        rows.append(_row(f"log_average_seed{s}", cfg.q, cfg.H, n_max, value=la,
                         ref_value=math.atan(z), ref_provenance="pathwise_limit"))
    rows.append(_row("dispersion", cfg.q, cfg.H, n_max, value=rep.dispersion))
    rows.append(_row("control_dispersion", *rep.control, n_max, value=rep.control_dispersion))
    rows.append(_row("dispersion_ratio", cfg.q, cfg.H, n_max, value=rep.dispersion_ratio))
    report = rep.to_dict()
    if cfg.reps:
        m, se = z_second_moment_mc(cfg.q, cfg.H, n_max, cfg.reps, seed=cfg.seed, threads=cfg.threads)
        ref = z_limit_second_moment(cfg.q, cfg.H)
        rows.append(_row("z_second_moment", cfg.q, cfg.H, n_max, value=m, stderr=se,
                         ref_value=ref, ref_provenance="closed_form_limit"))
        report["z_second_moment"] = {"mean": m, "stderr": se, "limit": ref, "reps": cfg.reps}
    return rows, report


def _rates(cfg: ExperimentConfig):
    q, H = cfg.q, cfg.H
    top = cfg.horizon(2048)
    ns = [1 << j for j in range(6, top.bit_length()) if (1 << j) <= top]
    bound = stein_rate_exponent(q, H)
    critical = classify(q, H) is Regime.CRITICAL
    rows, fits = [], {}
    for r in range(1, q):
        for n in ns:
            rows.append(_row(f"contraction_norm_r{r}", q, H, n,
                             value=contraction_norm(block_kernel(q, H, n), r)))
        fit = rate_exponent_fit(q, H, r, ns)
        fits[str(r)] = {"slope": fit.slope, "intercept": fit.intercept}
        rows.append(_row(f"slope_r{r}", q, H, value=fit.slope, ref_value=bound,
                         ref_provenance="rate_bound"))
    report = {"ns": ns, "fits": fits, "bound_exponent": bound,
              "regressor": "log log n" if critical else "log n"}
    return rows, report


_RUNNERS = {
    "simulate": _simulate,
    "criteria": _criteria,
    "asclt": _asclt,
    "stein": _stein,
    "il": _il,
    "hermite-regime": _hermite_regime,
    "rates": _rates,
}


def run(config: ExperimentConfig) -> ResultRecord:
    """Execute one experiment and write its outputs if ``config.out`` is set."""
    if config.threads is None:
        config.threads = default_threads()
    start = time.perf_counter()
    rows, report = _RUNNERS[config.command](config)
    wall = time.perf_counter() - start
    record = ResultRecord(config.to_dict(), __version__, rows, report,
                          {"wall_seconds": wall} if config.timing else None)
    if config.out:
        write_record(record, config.out, config.format)
    return record


def _output_paths(out: str, fmt: str) -> dict:
    p = Path(out)
    base = p.with_suffix("") if p.suffix in (".csv", ".json") else p
    if fmt == "both":
        return {"csv": base.with_name(base.name + ".csv"), "json": base.with_name(base.name + ".json")}
    return {fmt: p if p.suffix == f".{fmt}" else base.with_name(base.name + f".{fmt}")}


def write_record(record: ResultRecord, out: str, fmt: str = "both") -> dict:
    paths = _output_paths(out, fmt)
    for kind, path in paths.items():
        text = record.to_csv() if kind == "csv" else record.to_json()
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return paths


@dataclass
class CompareReport:
    passed: bool
    items: list

    def failures(self) -> list:
        return [it for it in self.items if not it["passed"]]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "items": self.items}


def _key(row):
    return (row["metric"], row.get("n"), row.get("t"))


def _load_fixture(path) -> list:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FixtureSchemaError(f"fixture {path} is not valid JSON: {exc}") from exc
    if isinstance(data, dict) and "results" in data and "metrics" not in data:
        # a record dump: every row must be reproduced exactly
        rows = ResultRecord.from_dict(data).results
        return [dict(metric=r["metric"], n=r["n"], t=r["t"], value=r["value"], atol=0.0, rtol=0.0)
                for r in rows]
    if not isinstance(data, dict) or not isinstance(data.get("metrics"), list):
        raise FixtureSchemaError("fixture must hold a 'metrics' list or be a result record")
    out = []
    for i, m in enumerate(data["metrics"]):
        if not isinstance(m, dict) or "metric" not in m or "value" not in m:
            raise FixtureSchemaError(f"fixture metric #{i} needs 'metric' and 'value'")
        if "atol" not in m and "rtol" not in m:
            raise FixtureSchemaError(f"fixture metric {m['metric']!r} has no tolerance")
        out.append(dict(metric=m["metric"], n=m.get("n"), t=m.get("t"),
                        value=float(m["value"]), atol=float(m.get("atol", 0.0)),
                        rtol=float(m.get("rtol", 0.0))))
    return out


def compare_fixture(record: ResultRecord, fixture_path) -> CompareReport:
    """Check every fixture metric against the record at its stored tolerance."""
    rows = {_key(r): r for r in record.results}
    items = []
    for m in _load_fixture(fixture_path):
        key = (m["metric"], m["n"], None if m["t"] is None else float(m["t"]))
        row = rows.get(key)
        item = {"metric": m["metric"], "n": m["n"], "t": m["t"], "expected": m["value"],
                "atol": m["atol"], "rtol": m["rtol"]}
        if row is None:
            item.update(actual=None, passed=False, reason="missing from record")
        else:
            actual = row["value"]
            tol = m["atol"] + m["rtol"] * abs(m["value"])
            same_nan = math.isnan(actual) and math.isnan(m["value"])
            ok = same_nan or abs(actual - m["value"]) <= tol
            item.update(actual=actual, passed=bool(ok),
                        reason="ok" if ok else f"|{actual!r} - {m['value']!r}| > {tol!r}")
        items.append(item)
    return CompareReport(all(it["passed"] for it in items), items)


def _float_list(text: str) -> list:
    return [float(t) for t in text.replace(",", " ").split()]


def _read_seeds(path: str) -> list:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        data = text.replace(",", " ").split()
    if isinstance(data, dict):
        data = data.get("seeds", [])
    return [int(s) for s in data]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asclt-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--q", type=int)
        p.add_argument("--H", type=float)
        p.add_argument("--n", type=int)
        p.add_argument("--n-max", dest="n_max", type=int)
        p.add_argument("--reps", type=int)
        group = p.add_mutually_exclusive_group()
        group.add_argument("--seed", type=int)
        group.add_argument("--seeds", dest="seeds_file")
        p.add_argument("--t-grid", dest="t_grid", type=_float_list)
        p.add_argument("--normalizer", choices=("log", "harmonic"))
        p.add_argument("--threads", type=int)
        p.add_argument("--stride", type=int)
        p.add_argument("--out")
        p.add_argument("--format", choices=("csv", "json", "both"))
        p.add_argument("--config", help="JSON file of config values; flags win on conflict")
        p.add_argument("--no-timing", dest="timing", action="store_const", const=False)
    cmp_ = sub.add_parser("compare", help="compare a JSON result record with a fixture")
    cmp_.add_argument("record")
    cmp_.add_argument("fixture")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    data = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            data.update(json.load(fh))
    data["command"] = args.command
    for name in ("q", "H", "n", "n_max", "reps", "seed", "t_grid", "normalizer",
                 "threads", "stride", "out", "format", "timing"):
        value = getattr(args, name, None)
        if value is not None:
            data[name] = value
    if args.seeds_file:
        data["seeds"] = _read_seeds(args.seeds_file)
    return ExperimentConfig.from_dict(data)


def _fail(code: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": {"code": code, "message": message}}) + "\n")
    return EXIT_CODES.get(code, 1)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "compare":
            with open(args.record, encoding="utf-8") as fh:
                record = ResultRecord.from_dict(json.load(fh))
            rep = compare_fixture(record, args.fixture)
            sys.stdout.write(json.dumps(_json_safe(rep.to_dict()), indent=2) + "\n")
            return 0 if rep.passed else 1
        cfg = config_from_args(args)
        record = run(cfg)
        if not cfg.out:
            sys.stdout.write(record.to_csv() if cfg.format == "csv" else record.to_json())
        return 0
    except AscltLabError as exc:
        return _fail(exc.code, str(exc))
    except OSError as exc:
        return _fail("io_error", str(exc))
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        return _fail("error", str(exc))


if __name__ == "__main__":
    sys.exit(main())
