"""Factorial simulation experiment: thresholds, spread, runtimes and bias.

Each replicate draws its own seed from a counter-based split of the master
seed (``SeedSequence(master, spawn_key=(domain, G, replicate))``), so results
do not depend on thread count or scheduling order.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .covariance import CovMethod, estimate
from .domain import DomainKind, GridDomain, normalize
from .errors import InputError, LkcError
from .excursion import check_connectivity, ec_profile
from .gkf import RhoFamily, threshold, truth_lkcs
from .regression import PipelineOptions, Spacing, design_levels, finish_fit
from .simulation import DEFAULT_ALPHA_COV, GrfSpec, empirical_threshold, fit_convergence, simulate

log = logging.getLogger(__name__)

METHOD = "lkcr"
MAX_G = {DomainKind.SQUARE: 200, DomainKind.CUBE: 100, DomainKind.SPHERE: 100}
EMPIRICAL_STREAM = 2 ** 31 - 1

RESULT_COLUMNS = ["domain", "G", "method", "cov", "replicate", "threshold", "runtime_ms",
                  "ec_ms", "simulate_ms", "seed", "status", "L0", "L1", "L2", "L3",
                  "continuous_threshold", "empirical_threshold"]


@dataclass(frozen=True)
class ExperimentConfig:
    domains: tuple = ("square",)
    grid_sizes: dict = field(default_factory=lambda: {"square": [5, 10, 20, 50]})
    cov_methods: tuple = ("sd",)
    replicates: int = 200
    fields: int = 15
    U: int = 50
    spacing: str = "equal"
    alpha: float = 0.05
    alpha_cov: dict = field(default_factory=dict)
    seed: int = 0
    empirical_B: int = 0
    connectivity: int | None = None
    family: str = "gaussian"
    fix_l0: bool = True
    threads: int = 1

    def __post_init__(self):
        doms = tuple(DomainKind(d).value for d in self.domains)
        object.__setattr__(self, "domains", doms)
        gs = self.grid_sizes
        if not isinstance(gs, dict):
            gs = {d: list(gs) for d in doms}
        gs = {DomainKind(k).value: sorted(int(g) for g in v) for k, v in gs.items()}
        for d in doms:
            if not gs.get(d):
                raise InputError(f"no grid sizes given for domain {d!r}")
            bad = [g for g in gs[d] if g > MAX_G[DomainKind(d)] or g < 2]
            if bad:
                raise InputError(f"grid sizes {bad} out of range for {d} (max {MAX_G[DomainKind(d)]})")
        object.__setattr__(self, "grid_sizes", gs)
        object.__setattr__(self, "cov_methods", tuple(str(CovMethod.parse(m)) for m in self.cov_methods))
        if self.replicates < 1 or self.fields < 1:
            raise InputError("replicates and fields must be positive")
        if self.empirical_B and self.empirical_B < 100:
            raise InputError("empirical_B must be 0 (skip) or at least 100")
        if not 0 < self.alpha <= 0.2:
            raise InputError(f"alpha outside ECH validity (<=0.2): {self.alpha}")
        Spacing(self.spacing)
        RhoFamily.parse(self.family)
        for d in doms:
            if self.connectivity is not None:
                check_connectivity(GridDomain(DomainKind(d), 4), self.connectivity)

    def alpha_cov_for(self, domain: str) -> float:
        return float(self.alpha_cov.get(domain, DEFAULT_ALPHA_COV[DomainKind(domain)]))

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise InputError(f"unknown config keys: {sorted(extra)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise InputError(f"cannot read config {path}: {exc}") from None
        if path.suffix == ".toml":
            try:
                import tomllib
            except ImportError:
                raise InputError("TOML configs need Python 3.11+; use JSON") from None
            data = tomllib.loads(text)
        else:
            try:
                data = json.loads(text)
            except json.JSONDecodeError as exc:
                raise InputError(f"bad JSON config {path}: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)


def replicate_seed(master: int, domain_index: int, G: int, replicate: int) -> int:
    ss = np.random.SeedSequence(master, spawn_key=(domain_index, G, replicate))
    return int(ss.generate_state(1, np.uint64)[0])


def _ms(t0):
    return (time.perf_counter() - t0) * 1000.0


def run_replicate(cfg: ExperimentConfig, domain: str, G: int, rep: int, seed: int) -> list:
    """All covariance methods on one simulated bundle; failures become status rows."""
    base = {"domain": domain, "G": G, "method": METHOD, "replicate": rep, "seed": seed}
    opts = PipelineOptions(spacing=Spacing(cfg.spacing), U=cfg.U, family=RhoFamily.parse(cfg.family),
                           fix_l0=cfg.fix_l0, connectivity=cfg.connectivity, alpha=cfg.alpha)
    dom = GridDomain(DomainKind(domain), G)
    rows = []
    try:
        t0 = time.perf_counter()
        bundle = simulate(GrfSpec(dom, cfg.alpha_cov_for(domain), cfg.fields, seed))
        sim_ms = _ms(t0)
        t0 = time.perf_counter()
        bundle = normalize(bundle)
        conn = check_connectivity(dom, cfg.connectivity)
        design = design_levels(bundle, opts.spacing, opts.U, conn)
        profile = ec_profile(bundle, design.levels, conn)
        ec_ms = _ms(t0)
    except LkcError as exc:
        msg = f"{type(exc).__name__}: {exc}"
        return [{**base, "cov": c, "status": "failed: " + msg} for c in cfg.cov_methods]
    for c in cfg.cov_methods:
        row = {**base, "cov": c, "simulate_ms": sim_ms, "ec_ms": ec_ms}
        t0 = time.perf_counter()
        try:
            sigma = estimate(profile, CovMethod.parse(c))
            res = finish_fit(profile, sigma, dom, design, opts)
        except LkcError as exc:
            row["status"] = f"failed: {type(exc).__name__}: {exc}"
            rows.append(row)
            continue
        row["runtime_ms"] = _ms(t0)
        row["threshold"] = res.threshold
        row["status"] = "ok"
        for i, L in enumerate(res.fit.estimate.values):
            row[f"L{i}"] = L
        rows.append(row)
    return rows


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list
    continuous: dict
    empirical: dict
    summary: list
    bias: list
    failures: list
    wall_seconds: float

    @property
    def replicate_count(self) -> int:
        return self.config.replicates

    def thresholds(self, domain, G, cov) -> np.ndarray:
        return np.array([r["threshold"] for r in self.rows if r["domain"] == domain and r["G"] == G
                         and r["cov"] == cov and r["status"] == "ok"])

    def write(self, out_dir) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "results": out / "results.csv",
            "summary": out / "summary.csv",
            "bias": out / "bias.csv",
            "failures": out / "failures.log",
            "config": out / "config.json",
        }
        paths["results"].write_text(rows_to_csv(self.rows, RESULT_COLUMNS))
        paths["summary"].write_text(rows_to_csv(self.summary, SUMMARY_COLUMNS))
        paths["bias"].write_text(rows_to_csv(self.bias, BIAS_COLUMNS))
        paths["failures"].write_text("".join(f + "\n" for f in self.failures))
        paths["config"].write_text(json.dumps(self.config.to_dict(), indent=2))
        return paths


def rows_to_csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, columns, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r.get(k)) for k in columns})
    return buf.getvalue()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


def run_experiment(config: ExperimentConfig | dict, threads: int | None = None,
                   progress=None) -> ExperimentResult:
    """Run the full factorial design and reduce it to summary and bias tables."""
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.from_dict(config)
    threads = max(1, threads if threads is not None else cfg.threads)
    family = RhoFamily.parse(cfg.family)
    t_start = time.perf_counter()

    tasks = []
    for di, d in enumerate(cfg.domains):
        for G in cfg.grid_sizes[d]:
            for r in range(cfg.replicates):
                tasks.append((d, G, r, replicate_seed(cfg.seed, di, G, r)))

    def work(task):
        return run_replicate(cfg, *task)

    rows = []
    if threads == 1:
        for i, t in enumerate(tasks):
            rows.extend(work(t))
            if progress:
                progress(i + 1, len(tasks))
    else:
        with ThreadPoolExecutor(threads) as pool:
            for i, part in enumerate(pool.map(work, tasks)):
                rows.extend(part)
                if progress:
                    progress(i + 1, len(tasks))
    order = {d: i for i, d in enumerate(cfg.domains)}
    rows.sort(key=lambda r: (order[r["domain"]], r["G"], r["cov"], r["replicate"]))

    continuous = {}
    for d in cfg.domains:
        try:
            continuous[d] = threshold(truth_lkcs(d, cfg.alpha_cov_for(d)), family, cfg.alpha)
        except LkcError as exc:
            log.warning("no continuous threshold for %s: %s", d, exc)
            continuous[d] = math.nan

    empirical = {}
    if cfg.empirical_B:
        for di, d in enumerate(cfg.domains):
            for G in cfg.grid_sizes[d]:
                seed = replicate_seed(cfg.seed, di, G, EMPIRICAL_STREAM)
                spec = GrfSpec(GridDomain(DomainKind(d), G), cfg.alpha_cov_for(d), 1, seed)
                empirical[(d, G)] = empirical_threshold(spec, cfg.alpha, cfg.empirical_B)

    for r in rows:
        r["continuous_threshold"] = continuous[r["domain"]]
        r["empirical_threshold"] = empirical.get((r["domain"], r["G"]), math.nan)

    failures = [f"{r['domain']} G={r['G']} cov={r['cov']} replicate={r['replicate']} "
                f"seed={r['seed']}: {r['status']}" for r in rows if r["status"] != "ok"]
    summary = summarize(rows)
    bias = bias_table(summary)
    return ExperimentResult(cfg, rows, continuous, empirical, summary, bias, failures,
                            time.perf_counter() - t_start)


SUMMARY_COLUMNS = ["domain", "G", "method", "cov", "n_ok", "n_failed", "median_threshold",
                   "sd_threshold", "median_runtime_ms", "median_ec_ms", "median_total_ms",
                   "continuous_threshold", "empirical_threshold"]


def _groups(rows, keys):
    out = {}
    for r in rows:
        out.setdefault(tuple(r[k] for k in keys), []).append(r)
    return out


def _num(v):
    try:
        return float(v)
    except (TypeError, ValueError):
        return math.nan


def summarize(rows) -> list:
    """One row per (domain, G, method, cov), in first-seen order."""
    out = []
    for key, grp in _groups(rows, ("domain", "G", "method", "cov")).items():
        ok = [r for r in grp if r["status"] == "ok"]
        thr = np.array([_num(r["threshold"]) for r in ok])
        rt = np.array([_num(r["runtime_ms"]) for r in ok])
        ec = np.array([_num(r["ec_ms"]) for r in ok])
        out.append({
            "domain": key[0], "G": int(key[1]), "method": key[2], "cov": key[3],
            "n_ok": len(ok), "n_failed": len(grp) - len(ok),
            "median_threshold": float(np.median(thr)) if thr.size else math.nan,
            "sd_threshold": float(np.std(thr, ddof=1)) if thr.size > 1 else math.nan,
            "median_runtime_ms": float(np.median(rt)) if rt.size else math.nan,
            "median_ec_ms": float(np.median(ec)) if ec.size else math.nan,
            "median_total_ms": float(np.median(rt + ec)) if rt.size else math.nan,
            "continuous_threshold": _num(grp[0]["continuous_threshold"]),
            "empirical_threshold": _num(grp[0]["empirical_threshold"]),
        })
    return out


BIAS_COLUMNS = ["domain", "method", "cov", "n_grid_sizes", "u_star", "beta", "varsigma",
                "continuous_threshold", "extrapolation_bias", "max_G", "median_at_max_G",
                "bias_at_max_G", "status"]


def bias_table(summary) -> list:
    """Convergence extrapolation of the medians against the continuous threshold."""
    out = []
    for key, grp in _groups(summary, ("domain", "method", "cov")).items():
        pts = [(s["G"], s["median_threshold"]) for s in grp if not math.isnan(s["median_threshold"])]
        pts.sort()
        cont = grp[0]["continuous_threshold"]
        row = {"domain": key[0], "method": key[1], "cov": key[2], "n_grid_sizes": len(pts),
               "continuous_threshold": cont}
        if pts:
            row["max_G"], row["median_at_max_G"] = pts[-1]
            row["bias_at_max_G"] = pts[-1][1] - cont
        try:
            cf = fit_convergence(pts)
            row.update(u_star=cf.u_star, beta=cf.beta, varsigma=cf.varsigma,
                       extrapolation_bias=cf.u_star - cont, status="ok")
        except LkcError as exc:
            row["status"] = f"{type(exc).__name__}: {exc}"
        out.append(row)
    return out


def read_results(path_or_text) -> list:
    """Read a long-format results CSV (as written by ``ExperimentResult.write``)."""
    if isinstance(path_or_text, (str, os.PathLike)) and not str(path_or_text).lstrip().startswith("domain,"):
        try:
            text = Path(path_or_text).read_text()
        except OSError as exc:
            raise InputError(f"cannot read results {path_or_text}: {exc}") from None
    else:
        text = str(path_or_text)
    reader = csv.DictReader(io.StringIO(text))
    missing = {"domain", "G", "method", "cov", "replicate", "threshold", "runtime_ms"} - set(reader.fieldnames or [])
    if missing:
        raise InputError(f"results CSV lacks columns {sorted(missing)}")
    rows = []
    for r in reader:
        r["G"] = int(r["G"])
        r["replicate"] = int(r["replicate"])
        r.setdefault("status", "ok")
        r["status"] = r["status"] or "ok"
        for k in ("ec_ms", "continuous_threshold", "empirical_threshold"):
            r.setdefault(k, "")
        rows.append(r)
    return rows
