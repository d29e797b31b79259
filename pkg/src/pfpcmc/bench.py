"""Benchmark harness: estimator configs, one-call estimation and seeded grids.

A *cell* is one (case, method, fad, seed, k, d, n_d) combination.  Every cell
builds its scenario from the seed, runs one estimator and yields one
:class:`BenchmarkRecord`.  Cells that fail (solver trouble, limits, even a
crashed backend when cells run isolated) are recorded with their status and
never stop the run.

Methods map to (model, strategy) pairs:

=========  ==============  ==========
method     model           strategy
=========  ==============  ==========
``mc``     ``mc``          ``full``
``m1``     ``mcse``        ``full``
``m2``     ``projection``  ``full``
``full``   ``pfpc``        ``full``
``s1``     ``pfpc``        ``s1``
``s2``     ``pfpc``        ``s2``
=========  ==============  ==========
"""

from __future__ import annotations

import csv
import faulthandler
import io
import itertools
import json
import multiprocessing as mp
import resource
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .bnb import BnbLimits, bnb_solve
from .conic import ConicProgram, SolveSettings, solve
from .measgen import NoiseSpec, Scenario, StratifiedSampler, UniformSampler, make_scenario
from .models import (
    EstimationResult,
    ModelError,
    PowerFlowToleranceSet,
    SlackData,
    apply_sparse_psd,
    build_model_mc,
    build_model_mcse,
    build_model_pfpc,
    build_model_projection,
    extract_state,
    mape,
    reduce_rank_one,
    select_submatrices,
    split_w_rows,
)
from .netmodel import NetworkCase, load_case

__all__ = [
    "METHODS",
    "CSV_FIELDS",
    "EstimatorConfig",
    "ScenarioConfig",
    "BenchmarkConfig",
    "BenchmarkRecord",
    "BenchmarkRun",
    "build_program",
    "estimate",
    "run_cell",
    "run_cell_isolated",
    "write_records",
    "run_benchmark",
    "sweep_hyperparameters",
    "summarize",
    "summary_markdown",
    "read_records",
    "mape",
]

METHODS = {
    "mc": ("mc", "full"),
    "m1": ("mcse", "full"),
    "m2": ("projection", "full"),
    "full": ("pfpc", "full"),
    "s1": ("pfpc", "s1"),
    "s2": ("pfpc", "s2"),
}
MODELS = ("mc", "mcse", "projection", "pfpc")
STRATEGIES = ("full", "s1", "s2")


# ---------------------------------------------------------------------------
# configuration


@dataclass
class EstimatorConfig:
    """Everything that selects and tunes one estimator.

    ``n_d=None`` keeps one principal block per X entry.  ``omega`` is either
    one weight for all tolerance groups or a dict keyed by group name
    (``tau_re``, ``tau_im``, ``gamma``, ``alpha_re``, ``alpha_im``).
    ``reduce`` applies the exact reformulations of :mod:`pfpcmc.models`
    (rank-one clique split, row split of the full block); switch it off to
    solve the programs exactly as built.
    """

    model: str = "pfpc"
    strategy: str = "s1"
    k: int = 1
    lam: float = 10.0
    d: int = 5
    n_d: int | None = None
    plan_seed: int = 0
    delta: float | None = None
    omega: float | dict = 100.0
    loss: str = "ell1"
    fit_scaling: str | float | None = "noise"
    reduce: bool = True
    max_nodes: int = 50
    time_limit: float = 600.0
    gap: float = 1e-3
    eps_proj: float = 1e-4
    termination: str = "residual"
    backend: str = "auto"
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    solver_time_limit: float | None = None

    def __post_init__(self):
        if self.model not in MODELS:
            raise ModelError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.strategy not in STRATEGIES:
            raise ModelError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.strategy == "s2" and self.model != "pfpc":
            raise ModelError("strategy s2 is defined for the pfpc model only")

    @classmethod
    def for_method(cls, method: str, **overrides) -> "EstimatorConfig":
        if method not in METHODS:
            raise ModelError(f"unknown method {method!r}; choose from {sorted(METHODS)}")
        model, strategy = METHODS[method]
        return cls(model=model, strategy=strategy, **overrides)

    @property
    def method(self) -> str:
        for name, pair in METHODS.items():
            if pair == (self.model, self.strategy):
                return name
        return f"{self.model}/{self.strategy}"

    def tolerances(self) -> PowerFlowToleranceSet:
        if isinstance(self.omega, dict):
            w = {f"w_{k}": float(v) for k, v in self.omega.items()}
            return PowerFlowToleranceSet(**w, loss=self.loss)
        return PowerFlowToleranceSet.uniform(float(self.omega), self.loss)

    def settings(self) -> SolveSettings:
        return SolveSettings(
            feas_tol=self.feas_tol,
            gap_tol=self.gap_tol,
            backend=self.backend,
            time_limit=self.solver_time_limit,
        )

    def limits(self) -> BnbLimits:
        return BnbLimits(
            max_nodes=self.max_nodes,
            time_limit=self.time_limit,
            gap=self.gap,
            eps_proj=self.eps_proj,
            termination=self.termination,
        )

    @classmethod
    def from_dict(cls, data: dict) -> "EstimatorConfig":
        data = dict(data)
        if "method" in data:
            model, strategy = METHODS[data.pop("method")]
            data.setdefault("model", model)
            data.setdefault("strategy", strategy)
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        if "weights" in data:
            data["omega"] = data.pop("weights")
        bnb = data.pop("bnb", {}) or {}
        solver = data.pop("solver", {}) or {}
        data.update(bnb)
        data.update({("solver_time_limit" if k == "time_limit" else k): v for k, v in solver.items()})
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ModelError(f"unknown estimator settings: {sorted(unknown)}")
        return cls(**data)


@dataclass
class ScenarioConfig:
    case: str = "case141"
    fad: float = 0.32
    seed: int = 0
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    sampler: str = "stratified"
    slack_metered: bool = True
    loading: float = 1.0

    def build(self, case: NetworkCase | None = None) -> Scenario:
        sampler = {"stratified": StratifiedSampler(), "uniform": UniformSampler()}.get(self.sampler)
        if sampler is None:
            raise ModelError(f"unknown sampler {self.sampler!r}")
        case = case if case is not None else _load(self.case)
        return make_scenario(
            case,
            fad=self.fad,
            seed=self.seed,
            noise=self.noise,
            sampler=sampler,
            slack_metered=self.slack_metered,
            loading=self.loading,
        )

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        data = {k: v for k, v in data.items() if k in {f.name for f in fields(cls)}}
        if isinstance(data.get("noise"), dict):
            data["noise"] = NoiseSpec(**data["noise"])
        return cls(**data)


_CASES: dict = {}


def _load(name: str) -> NetworkCase:
    if name not in _CASES:
        _CASES[name] = load_case(name)
    return _CASES[name]


# ---------------------------------------------------------------------------
# one estimate


def build_program(scenario: Scenario, cfg: EstimatorConfig) -> ConicProgram:
    """The conic program a ``full`` or ``s1`` estimate would solve."""
    if cfg.strategy == "s2":
        raise ModelError("s2 solves a sequence of programs; build the s1 root instead")
    meas, lpf = scenario.meas, scenario.lpf
    slack = SlackData.from_scenario(scenario)
    tol = cfg.tolerances()
    if cfg.model == "mc":
        prog = build_model_mc(meas)
    elif cfg.model == "mcse":
        prog = build_model_mcse(meas, lpf, slack, tol, cfg.delta)
    elif cfg.model == "projection":
        prog = build_model_projection(meas, cfg.k, cfg.lam, cfg.fit_scaling)
    else:
        prog = build_model_pfpc(meas, lpf, slack, cfg.k, cfg.lam, tol, cfg.fit_scaling)
    if cfg.strategy == "s1":
        plan = select_submatrices(scenario.n, scenario.case.adjacency(), cfg.d, cfg.n_d, cfg.plan_seed)
        prog = apply_sparse_psd(prog, plan)
    if cfg.reduce:
        prog = reduce_rank_one(prog)
        prog = split_w_rows(prog)
    return prog


def estimate(scenario: Scenario, cfg: EstimatorConfig, trace=None) -> EstimationResult:
    """Build, solve and evaluate one estimator on ``scenario``.

    ``wall_time`` covers model construction and solving.  For ``s2`` the
    search statistics land in ``extra``.
    """
    t0 = time.perf_counter()
    if cfg.strategy == "s2":
        plan = select_submatrices(scenario.n, scenario.case.adjacency(), cfg.d, cfg.n_d, cfg.plan_seed)
        res, _ = bnb_solve(
            scenario,
            k=cfg.k,
            lam=cfg.lam,
            plan=plan,
            tol=cfg.tolerances(),
            limits=cfg.limits(),
            settings=cfg.settings(),
            fit_scaling=cfg.fit_scaling,
            reduce=cfg.reduce,
            trace=trace,
        )
        res.extra["n_d"] = plan.n_d
    else:
        prog = build_program(scenario, cfg)
        rep = solve(prog, cfg.settings())
        res = extract_state(rep, prog, scenario.meas, scenario.v_true)
        res.extra["program"] = prog.name
        for key in ("n_d", "delta"):
            if prog.meta.get(key) is not None:
                res.extra[key] = prog.meta[key]
        if rep.message:
            res.extra["message"] = rep.message
    res.wall_time = time.perf_counter() - t0
    return res


# ---------------------------------------------------------------------------
# records

CSV_FIELDS = (
    "case",
    "method",
    "fad",
    "seed",
    "k",
    "lambda",
    "d",
    "n_d",
    "delta",
    "mape_vmag",
    "mape_angle",
    "wall_time",
    "status",
    "nodes",
    "objective",
    "gap",
)
TIMING_FIELDS = ("wall_time",)


@dataclass
class BenchmarkRecord:
    """One benchmark cell.  Failed cells keep NaN accuracy and a non-optimal status."""

    case: str
    method: str
    fad: float
    seed: int
    k: int
    lam: float
    d: int | None
    n_d: int | None
    delta: float | None
    mape_vmag: float
    mape_angle: float
    wall_time: float
    status: str
    nodes: int | None = None
    objective: float = float("nan")
    gap: float | None = None

    @property
    def ok(self) -> bool:
        return self.status == "optimal" and np.isfinite(self.mape_vmag)

    def row(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return {k: _fmt(d[k]) for k in CSV_FIELDS}

    @classmethod
    def from_row(cls, row: dict) -> "BenchmarkRecord":
        def num(key, kind=float):
            v = row.get(key, "")
            return None if v in ("", None) else kind(float(v)) if kind is int else kind(v)

        return cls(
            case=row["case"],
            method=row["method"],
            fad=float(row["fad"]),
            seed=int(row["seed"]),
            k=int(row["k"]),
            lam=float(row["lambda"]),
            d=num("d", int),
            n_d=num("n_d", int),
            delta=num("delta"),
            mape_vmag=float(row["mape_vmag"] or "nan"),
            mape_angle=float(row["mape_angle"] or "nan"),
            wall_time=float(row["wall_time"] or "nan"),
            status=row["status"],
            nodes=num("nodes", int),
            objective=float(row.get("objective") or "nan"),
            gap=num("gap"),
        )


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "nan" if not np.isfinite(v) else repr(v)
    return str(v)


def write_records(records, path_or_file) -> None:
    close = False
    fh = path_or_file
    if not hasattr(fh, "write"):
        fh, close = open(path_or_file, "w", newline=""), True
    try:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in records:
            w.writerow(r.row())
    finally:
        if close:
            fh.close()


def read_records(path) -> list:
    with open(path, newline="") as fh:
        return [BenchmarkRecord.from_row(r) for r in csv.DictReader(fh)]


def _record(scn_cfg: ScenarioConfig, cfg: EstimatorConfig, res: EstimationResult) -> BenchmarkRecord:
    uses_plan = cfg.strategy in ("s1", "s2")
    delta = res.extra.get("delta", cfg.delta) if cfg.model == "mcse" else None
    return BenchmarkRecord(
        case=scn_cfg.case,
        method=cfg.method,
        fad=float(scn_cfg.fad),
        seed=int(scn_cfg.seed),
        k=int(cfg.k),
        lam=float(cfg.lam),
        d=cfg.d if uses_plan else None,
        n_d=res.extra.get("n_d", cfg.n_d) if uses_plan else None,
        delta=delta,
        mape_vmag=float(res.mape_vmag) if res.ok else float("nan"),
        mape_angle=float(res.mape_angle) if res.ok else float("nan"),
        wall_time=float(res.wall_time),
        status=res.status,
        nodes=res.extra.get("nodes") if cfg.strategy == "s2" else None,
        objective=float(res.objective) if res.ok else float("nan"),
        gap=res.extra.get("gap") if cfg.strategy == "s2" else None,
    )


def run_cell(scn_cfg: ScenarioConfig, cfg: EstimatorConfig, trace=None) -> BenchmarkRecord:
    """Generate the scenario, estimate, and record (in this process)."""
    scenario = scn_cfg.build()
    t0 = time.perf_counter()
    try:
        res = estimate(scenario, cfg, trace=trace)
    except (ModelError, ValueError, ArithmeticError) as exc:
        res = EstimationResult(status="model-error", wall_time=time.perf_counter() - t0)
        res.extra["message"] = str(exc)
    return _record(scn_cfg, cfg, res)


def _child(conn, scn_cfg, cfg, memory_mb, trace):
    # a native abort is reported by the parent; no interpreter dump needed
    faulthandler.disable()
    if memory_mb:
        lim = int(memory_mb) * 2**20
        resource.setrlimit(resource.RLIMIT_AS, (lim, lim))
    try:
        conn.send(run_cell(scn_cfg, cfg, trace))
    except MemoryError:
        conn.send("out of memory")
    finally:
        conn.close()


def run_cell_isolated(
    scn_cfg: ScenarioConfig,
    cfg: EstimatorConfig,
    timeout: float | None = None,
    memory_mb: int | None = None,
    trace=None,
    start_method: str = "fork",
) -> BenchmarkRecord:
    """:func:`run_cell` in a child process with optional wall-clock and memory caps.

    Native backends abort the whole process when an allocation fails; run in
    a child, that becomes a ``resource-failure`` record.  A cell still running
    at ``timeout`` seconds is killed and recorded as ``time-limit``.
    """
    ctx = mp.get_context(start_method)
    parent, child = ctx.Pipe(duplex=False)
    t0 = time.perf_counter()
    proc = ctx.Process(target=_child, args=(child, scn_cfg, cfg, memory_mb, trace), daemon=True)
    proc.start()
    child.close()
    got = None
    if parent.poll(timeout):
        try:
            got = parent.recv()
        except EOFError:
            got = None
    elapsed = time.perf_counter() - t0
    if proc.is_alive():
        proc.kill()
    proc.join()
    if isinstance(got, BenchmarkRecord):
        return got
    timed_out = got is None and timeout is not None and elapsed >= timeout
    status = "time-limit" if timed_out else "resource-failure"
    res = EstimationResult(status=status, wall_time=elapsed)
    return _record(scn_cfg, cfg, res)


# ---------------------------------------------------------------------------
# grids


def _as_list(v):
    if v is None:
        return [None]
    return list(v) if isinstance(v, (list, tuple, range)) else [v]


@dataclass
class BenchmarkConfig:
    """A scenario grid.  List-valued fields are swept; everything else is shared.

    ``seeds`` may be a count (``10`` means seeds 0..9) or an explicit list.
    ``estimator`` holds shared :class:`EstimatorConfig` settings and
    ``per_method`` optional overrides keyed by method name.
    """

    cases: list = field(default_factory=lambda: ["case141"])
    methods: list = field(default_factory=lambda: ["s1"])
    fads: list = field(default_factory=lambda: [0.32])
    seeds: list = field(default_factory=lambda: list(range(10)))
    ks: list = field(default_factory=lambda: [1])
    ds: list = field(default_factory=lambda: [5])
    n_ds: list = field(default_factory=lambda: [None])
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    sampler: str = "stratified"
    slack_metered: bool = True
    loading: float = 1.0
    estimator: dict = field(default_factory=dict)
    per_method: dict = field(default_factory=dict)
    workers: int = 1
    isolate: bool = True
    cell_timeout: float | None = None
    memory_mb: int | None = None

    def __post_init__(self):
        if isinstance(self.seeds, int):
            self.seeds = list(range(self.seeds))
        for name in ("cases", "methods", "fads", "seeds", "ks", "ds", "n_ds"):
            setattr(self, name, _as_list(getattr(self, name)))
        if isinstance(self.noise, dict):
            self.noise = NoiseSpec(**self.noise)
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ModelError(f"unknown methods {sorted(bad)}")
        if self.workers < 1:
            raise ModelError("workers must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "BenchmarkConfig":
        data = dict(data)
        alias = {"case": "cases", "method": "methods", "fad": "fads", "k": "ks", "d": "ds", "n_d": "n_ds", "nd": "n_ds"}
        for a, b in alias.items():
            if a in data:
                data[b] = data.pop(a)
        names = {f.name for f in fields(cls)}
        est = dict(data.pop("estimator", {}) or {})
        for key in list(data):
            if key not in names:
                est[key] = data.pop(key)
        data["estimator"] = est
        return cls(**data)

    @classmethod
    def load(cls, path) -> "BenchmarkConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def cells(self) -> list:
        out = []
        for case, method, fad, k, d, n_d, seed in itertools.product(
            self.cases, self.methods, self.fads, self.ks, self.ds, self.n_ds, self.seeds
        ):
            scn = ScenarioConfig(case, fad, int(seed), self.noise, self.sampler, self.slack_metered, self.loading)
            opts = dict(self.estimator)
            opts.update(self.per_method.get(method, {}))
            opts.update(k=int(k), d=int(d), n_d=None if n_d is None else int(n_d))
            cfg = EstimatorConfig.from_dict({"method": method, **opts})
            out.append((scn, cfg))
        return out


@dataclass
class BenchmarkRun:
    records: list
    summary: list  # rows of summarize()
    out_dir: Path | None = None


def run_benchmark(config: BenchmarkConfig | dict, out_dir=None, progress=None) -> BenchmarkRun:
    """Run every cell of the grid; write ``cells.csv``, ``summary.csv`` and ``summary.md``.

    Records come back in grid order whatever the worker count.  ``progress``
    is called with each finished record.
    """
    if isinstance(config, dict):
        config = BenchmarkConfig.from_dict(config)
    cells = config.cells()

    def one(cell):
        scn, cfg = cell
        if config.isolate:
            start = "fork" if config.workers == 1 else "spawn"
            rec = run_cell_isolated(scn, cfg, config.cell_timeout, config.memory_mb, start_method=start)
        else:
            rec = run_cell(scn, cfg)
        if progress is not None:
            progress(rec)
        return rec

    if config.workers == 1 or not config.isolate:
        records = [one(c) for c in cells]
    else:
        with ThreadPoolExecutor(config.workers) as pool:
            records = list(pool.map(one, cells))
    summary = summarize(records)
    out = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_records(records, out / "cells.csv")
        _write_summary_csv(summary, out / "summary.csv")
        (out / "summary.md").write_text(summary_markdown(summary))
    return BenchmarkRun(records, summary, out)


def sweep_hyperparameters(config: BenchmarkConfig | dict, out_dir=None, progress=None) -> BenchmarkRun:
    """:func:`run_benchmark` restricted to the s1 strategy over the (d, n_d) grid."""
    if isinstance(config, dict):
        config = BenchmarkConfig.from_dict(config)
    config = replace(config, methods=["s1"])
    return run_benchmark(config, out_dir, progress)


# ---------------------------------------------------------------------------
# summaries

GROUP_KEYS = ("case", "method", "fad", "k", "lam", "d", "n_d")
SUMMARY_FIELDS = (
    "case",
    "method",
    "fad",
    "k",
    "lambda",
    "d",
    "n_d",
    "cells",
    "ok",
    "mape_median",
    "mape_q25",
    "mape_q75",
    "mape_iqr",
    "mape_best",
    "best_seed",
    "time_median",
)


def summarize(records) -> list:
    """Median, IQR and best seed of |v| MAPE per group, over optimal cells only.

    Groups without a single optimal cell report NaN (printed as N/A).
    """
    groups: dict = {}
    for r in records:
        groups.setdefault(tuple(getattr(r, k) for k in GROUP_KEYS), []).append(r)
    rows = []
    for key, recs in groups.items():
        good = [r for r in recs if r.ok]
        row = dict(zip(GROUP_KEYS, key))
        row["lambda"] = row.pop("lam")
        row["cells"], row["ok"] = len(recs), len(good)
        if good:
            m = np.array([r.mape_vmag for r in good])
            q25, q50, q75 = np.percentile(m, [25, 50, 75])
            best = min(good, key=lambda r: (r.mape_vmag, r.seed))
            row.update(
                mape_median=float(q50),
                mape_q25=float(q25),
                mape_q75=float(q75),
                mape_iqr=float(q75 - q25),
                mape_best=best.mape_vmag,
                best_seed=best.seed,
                time_median=float(np.median([r.wall_time for r in good])),
            )
        else:
            row.update({k: float("nan") for k in SUMMARY_FIELDS if k.startswith(("mape", "time"))})
            row["best_seed"] = None
        rows.append(row)
    return rows


def _write_summary_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k)) for k in SUMMARY_FIELDS})


def _cell(v, digits=3) -> str:
    if v is None or (isinstance(v, float) and not np.isfinite(v)):
        return "N/A"
    return f"{v:.{digits}f}"


def _pivot(rows, row_key, col_key, value, digits) -> str:
    rk = sorted({row_key(r) for r in rows}, key=str)
    ck = sorted({col_key(r) for r in rows}, key=str)
    table = {(row_key(r), col_key(r)): r.get(value) for r in rows}
    lines = ["| | " + " | ".join(map(str, ck)) + " |", "|---" * (len(ck) + 1) + "|"]
    for a in rk:
        lines.append(f"| {a} | " + " | ".join(_cell(table.get((a, b)), digits) for b in ck) + " |")
    return "\n".join(lines)


def summary_markdown(rows) -> str:
    """Table-shaped Markdown: accuracy and time by method x case, and by d x n_d."""
    if not rows:
        return "(no cells)\n"
    out = ["# Benchmark summary", ""]

    def method_key(r):
        return f"{r['method']} (k={r['k']}, fad={r['fad']:g})"

    def case_key(r):
        return r["case"]

    out += ["## Median MAPE of |v| (%)", "", _pivot(rows, method_key, case_key, "mape_median", 3), ""]
    out += ["## Median wall time (s)", "", _pivot(rows, method_key, case_key, "time_median", 2), ""]
    plan_rows = [r for r in rows if r["d"] is not None]
    if len({(r["d"], r["n_d"]) for r in plan_rows}) > 1:
        for case in sorted({r["case"] for r in plan_rows}):
            sub = [r for r in plan_rows if r["case"] == case]
            out += [f"## {case}: median MAPE of |v| (%) by d (rows) and n_d (columns)", ""]
            out += [_pivot(sub, lambda r: f"d={r['d']}", lambda r: r["n_d"], "mape_median", 3), ""]
            out += [f"## {case}: median wall time (s) by d and n_d", ""]
            out += [_pivot(sub, lambda r: f"d={r['d']}", lambda r: r["n_d"], "time_median", 2), ""]
    out += ["## Dispersion", "", "| group | cells | ok | median | IQR | best (seed) |", "|---|---|---|---|---|---|"]
    for r in rows:
        label = f"{r['case']} {method_key(r)}" + (f" d={r['d']} n_d={r['n_d']}" if r["d"] is not None else "")
        best = "N/A" if r["best_seed"] is None else f"{_cell(r['mape_best'])} ({r['best_seed']})"
        out.append(
            f"| {label} | {r['cells']} | {r['ok']} | {_cell(r['mape_median'])} | {_cell(r['mape_iqr'])} | {best} |"
        )
    return "\n".join(out) + "\n"


def records_csv(records) -> str:
    buf = io.StringIO()
    write_records(records, buf)
    return buf.getvalue()
