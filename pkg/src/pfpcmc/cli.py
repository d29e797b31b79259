"""Command line entry point ``mcse``.

::

    mcse estimate --case case141 --method s1 --fad 0.32 --seed 3
    mcse estimate --config run.json --out result.json
    mcse benchmark --config grid.json --out results/
    mcse sweep --config grid.json --out sweep/

``estimate`` prints one JSON document (the benchmark record plus the voltage
estimate); with ``--out`` ending in ``.csv`` it writes a one-row CSV in the
benchmark schema instead.  ``benchmark`` and ``sweep`` write ``cells.csv``,
``summary.csv`` and ``summary.md`` into ``--out`` and print the Markdown.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bench import (
    METHODS,
    BenchmarkConfig,
    EstimatorConfig,
    ScenarioConfig,
    _record,
    build_program,
    estimate,
    run_benchmark,
    summary_markdown,
    sweep_hyperparameters,
    write_records,
)
from .measgen import NoiseSpec
from .models import ModelError

log = logging.getLogger("pfpcmc")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mcse", description="Matrix-completion state estimation for distribution feeders")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("estimate", help="run one estimator on one seeded scenario")
    e.add_argument("--config", help="JSON document with scenario and model settings")
    e.add_argument("--case", help="bundled case name or path to a MATPOWER-style file")
    e.add_argument("--method", choices=sorted(METHODS))
    e.add_argument("--fad", type=float, help="fraction of available data in (0, 1]")
    e.add_argument("--seed", type=int)
    e.add_argument("--k", type=int)
    e.add_argument("--lambda", dest="lam", type=float)
    e.add_argument("--d", type=int, help="principal block size")
    e.add_argument("--nd", type=int, help="number of principal blocks (cap or target)")
    e.add_argument("--delta", type=float, help="noise-ball radius for m1")
    e.add_argument("--max-nodes", type=int)
    e.add_argument("--time-limit", type=float, help="branch-and-bound wall-clock limit (s)")
    e.add_argument("--gap", type=float, help="relative gap tolerance for branch-and-bound")
    e.add_argument("--noise-v", type=float, help="relative std of voltage readings (magnitude and phasor)")
    e.add_argument("--noise-s", type=float, help="relative std of power readings")
    e.add_argument("--dump-model", metavar="PATH", help="write the conic program as JSON")
    e.add_argument("--trace", metavar="PATH", help="branch-and-bound JSON-lines trace")
    e.add_argument("--out", help="output file (.json or .csv); stdout when absent")

    for name, text in (("benchmark", "run a scenario grid"), ("sweep", "run the s1 (d, n_d) grid")):
        b = sub.add_parser(name, help=text)
        b.add_argument("--config", required=True, help="JSON grid description")
        b.add_argument("--out", help="output directory")
        b.add_argument("--workers", type=int, help="parallel cells (overrides the config)")
    return p


def _estimate_configs(args) -> tuple:
    doc = json.loads(Path(args.config).read_text()) if args.config else {}
    scn_keys = {"case", "fad", "seed", "noise", "sampler", "slack_metered", "loading"}
    scn = ScenarioConfig.from_dict({k: v for k, v in doc.items() if k in scn_keys})
    est_doc = {k: v for k, v in doc.items() if k not in scn_keys}
    if args.method:
        est_doc.pop("model", None)
        est_doc.pop("strategy", None)
        est_doc["method"] = args.method
    elif not {"method", "model", "strategy"} & set(est_doc):
        est_doc["method"] = "s1"
    flag_map = {
        "k": args.k,
        "lam": args.lam,
        "d": args.d,
        "n_d": args.nd,
        "delta": args.delta,
        "max_nodes": args.max_nodes,
        "time_limit": args.time_limit,
        "gap": args.gap,
    }
    est_doc.update({k: v for k, v in flag_map.items() if v is not None})
    cfg = EstimatorConfig.from_dict(est_doc)
    if args.case:
        scn = replace(scn, case=args.case)
    if args.fad is not None:
        scn = replace(scn, fad=args.fad)
    if args.seed is not None:
        scn = replace(scn, seed=args.seed)
    if args.noise_v is not None or args.noise_s is not None:
        nz = scn.noise
        v = args.noise_v
        scn = replace(
            scn,
            noise=NoiseSpec(
                phasor=nz.phasor if v is None else v,
                magnitude=nz.magnitude if v is None else v,
                power=nz.power if args.noise_s is None else args.noise_s,
            ),
        )
    return scn, cfg


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, float)):
        return float(v) if np.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    return v


def cmd_estimate(args) -> int:
    scn_cfg, cfg = _estimate_configs(args)
    scenario = scn_cfg.build()
    if args.dump_model:
        if cfg.strategy == "s2":
            root = replace(cfg, strategy="s1")
            prog = build_program(scenario, root)
        else:
            prog = build_program(scenario, cfg)
        Path(args.dump_model).write_text(prog.dumps())
        log.info("wrote %s (%s)", args.dump_model, prog.summary())
    res = estimate(scenario, cfg, trace=args.trace)
    rec = _record(scn_cfg, cfg, res)
    if args.out and args.out.endswith(".csv"):
        write_records([rec], args.out)
    else:
        doc = {
            "record": rec.row(),
            "objective_terms": res.terms,
            "vmag": res.vmag,
            "angle_deg": None if res.v is None else np.rad2deg(np.angle(res.v)),
            "extra": {k: v for k, v in res.extra.items() if k != "program"},
            "config": {"scenario": scn_cfg.__dict__ | {"noise": scn_cfg.noise.__dict__}, "estimator": cfg.__dict__},
        }
        text = json.dumps(_jsonable(doc), indent=2)
        if args.out:
            Path(args.out).write_text(text + "\n")
        else:
            print(text)
    return 0 if rec.ok else 2


def cmd_grid(args, sweep: bool) -> int:
    config = BenchmarkConfig.load(args.config)
    if args.workers:
        config = replace(config, workers=args.workers)

    def progress(rec):
        log.info(
            "%s %s seed=%s d=%s n_d=%s -> %s %.4g (%.2fs)",
            rec.case, rec.method, rec.seed, rec.d, rec.n_d, rec.status, rec.mape_vmag, rec.wall_time,
        )

    runner = sweep_hyperparameters if sweep else run_benchmark
    run = runner(config, args.out, progress=progress)
    print(summary_markdown(run.summary), end="")
    if args.out is None:
        write_records(run.records, sys.stderr)
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "estimate":
            return cmd_estimate(args)
        return cmd_grid(args, sweep=args.command == "sweep")
    except (ModelError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"mcse: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
