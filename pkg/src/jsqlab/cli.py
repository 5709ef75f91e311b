"""Command-line orchestration: simulate, cavity, predict, fit.

Experiment configs are JSON documents; flags mirror the document fields and
override them. Every run writes a config echo sufficient to reproduce it
(``--config`` also accepts a previously written sidecar). Exit codes: 0 for
success including statistical non-convergence, 2 for configuration errors,
3 for runtime or IO failures, so studies can tell "wrong input" from "needs
more cycles".

Replications (simulate) and shards (cavity) run in parallel up to
``--workers``; randomness is derived from the base seed by fixed keys, so
the worker count never changes any output.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .cavity import DEFAULT_SHARDS, FixedPointControls, fixed_point
from .errors import ConfigError
from .fitting import MODELS, fit_tail
from .network import NetworkConfig, conservation_audit, merge_estimates, pair_dependence, run_network, run_replication
from .service_dist import KINDS, ServiceDistributionSpec
from .tails import write_tail_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _load_config_doc(path: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must contain a JSON object")
    if "config" in doc and isinstance(doc["config"], dict):
        doc = doc["config"]  # accept a sidecar written by an earlier run
    return doc


def _service_from(doc: dict, args) -> ServiceDistributionSpec:
    if args.service is not None:
        return ServiceDistributionSpec(args.service, args.beta)
    if "service" in doc:
        return ServiceDistributionSpec.from_config(doc["service"])
    raise ConfigError("a service distribution is required (--service or config file)")


def _merge(doc: dict, args, fields: dict) -> dict:
    """Config-file values overridden by any explicitly supplied flags."""
    out = {}
    for name, default in fields.items():
        flag = getattr(args, name, None)
        if flag is not None:
            out[name] = flag
        elif name in doc:
            out[name] = doc[name]
        elif default is not ...:
            out[name] = default
        else:
            raise ConfigError(f"missing required field {name!r}")
    return out


def _write_json(path, payload: dict) -> None:
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n"
    )


def cmd_simulate(args) -> int:
    doc = _load_config_doc(args.config) if args.config else {}
    if doc.get("mode", "network") != "network":
        raise ConfigError(f"simulate expects a mode=network config, got mode={doc.get('mode')!r}")
    service = _service_from(doc, args)
    fields = _merge(
        doc,
        args,
        {
            "N": ...,
            "D": ...,
            "alpha": ...,
            "horizon": ...,
            "warmup_fraction": 0.2,
            "k_max": 64,
            "n_batches": 20,
            "seed": 0,
            "replications": 1,
            "pair_level": None,
        },
    )
    replications = int(fields.pop("replications"))
    pair_level = fields.pop("pair_level")
    if replications < 1:
        raise ConfigError(f"replications must be >= 1, got {replications}")
    config = NetworkConfig(service=service, **fields)

    t0 = time.perf_counter()
    jobs = [(config, i) for i in range(replications)]
    if args.workers > 1 and replications > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            runs = list(pool.map(_replication_job, jobs))
    else:
        runs = [run_replication(config, i) for i in range(replications)]
    for run in runs:
        conservation_audit(run)
    merged = merge_estimates(runs)
    runtime = time.perf_counter() - t0

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    csv_path = out.with_suffix(".csv")
    write_tail_csv(csv_path, merged)
    sidecar = {
        "config": {"mode": "network", **config.to_config(), "replications": replications,
                   "pair_level": pair_level},
        "seed": config.seed,
        "runtime": runtime,
        "batches": config.n_batches,
        "arrivals": sum(r.arrivals for r in runs),
        "departures": sum(r.departures for r in runs),
    }
    _write_json(out.with_suffix(".json"), sidecar)
    written = [str(csv_path), str(out.with_suffix(".json"))]

    if pair_level is not None:
        dep = pair_dependence(config, int(pair_level))
        pair_path = out.with_suffix(".pair.csv")
        pair_path.write_text(
            "k,cov,ci_low,ci_high\n"
            f"{dep.level},{dep.cov!r},{(dep.cov - dep.ci)!r},{(dep.cov + dep.ci)!r}\n",
            encoding="utf-8",
            newline="\n",
        )
        written.append(str(pair_path))
    print(f"simulate: wrote {', '.join(written)}")
    return EXIT_OK


def _replication_job(job):
    config, index = job
    return run_replication(config, index)


def cmd_cavity(args) -> int:
    doc = _load_config_doc(args.config) if args.config else {}
    if doc.get("mode", "cavity") != "cavity":
        raise ConfigError(f"cavity expects a mode=cavity config, got mode={doc.get('mode')!r}")
    service = _service_from(doc, args)
    fields = _merge(
        doc,
        args,
        {
            "D": ...,
            "alpha": ...,
            "k_max": 64,
            "cycles_per_iter": 100_000,
            "tol": 0.05,
            "damping": 1.0,
            "max_iter": 25,
            "seed": 0,
            "noise_rel": 0.2,
            "shards": DEFAULT_SHARDS,
        },
    )
    D = int(fields.pop("D"))
    alpha = float(fields.pop("alpha"))
    controls = FixedPointControls(**fields)

    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            report = fixed_point(service, alpha, D, controls, map_fn=pool.map)
    else:
        report = fixed_point(service, alpha, D, controls)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "config": {"mode": "cavity", "D": D, "alpha": alpha, "service": service.to_config(),
                   **report.to_json_dict()["controls"]},
        **report.to_json_dict(),
    }
    _write_json(out.with_suffix(".json"), payload)
    csv_path = out.with_suffix(".csv")
    if report.estimate is not None:
        write_tail_csv(csv_path, report.estimate)
        print(f"cavity: converged={report.converged} after {report.iterations} iteration(s); "
              f"wrote {csv_path}, {out.with_suffix('.json')}")
    else:
        print(f"cavity: no iterations run (max_iter=0); wrote {out.with_suffix('.json')}")
    return EXIT_OK


def _parse_betas(args, doc: dict) -> list:
    betas = list(args.beta or [])
    if not betas and "betas" in doc:
        betas = [float(b) for b in doc["betas"]]
    if args.beta_grid:
        try:
            lo, hi, step = (float(x) for x in args.beta_grid.split(":"))
        except ValueError as e:
            raise ConfigError(f"--beta-grid expects lo:hi:step, got {args.beta_grid!r}") from e
        if step <= 0 or hi < lo:
            raise ConfigError(f"--beta-grid needs step > 0 and hi >= lo, got {args.beta_grid!r}")
        b = lo
        while b <= hi + 1e-12:
            betas.append(round(b, 12))
            b += step
    if not betas:
        raise ConfigError("predict needs --beta and/or --beta-grid")
    return betas


def cmd_predict(args) -> int:
    from .analytic import classify_regime

    doc = _load_config_doc(args.config) if args.config else {}
    if doc and doc.get("mode", "analytic") != "analytic":
        raise ConfigError(f"predict expects a mode=analytic config, got mode={doc.get('mode')!r}")
    D = args.D if args.D is not None else doc.get("D")
    if D is None:
        raise ConfigError("predict needs --d-choices (or D in the config)")
    c1 = args.c1 if args.c1 is not None else doc.get("c1")
    c2 = args.c2 if args.c2 is not None else doc.get("c2")
    rows = ["D,beta,regime,exponent"]
    for beta in _parse_betas(args, doc):
        rows.append(classify_regime(int(D), beta, c1, c2).row())
    table = "\n".join(rows) + "\n"
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8", newline="\n")
        print(f"predict: wrote {args.out}")
    else:
        sys.stdout.write(table)
    return EXIT_OK


def cmd_fit(args) -> int:
    fit = fit_tail(
        args.csv,
        args.model,
        d_choices=args.D,
        rel_ci_max=args.rel_ci_max,
        k_min=args.k_min,
        k_max=args.k_max,
    )
    payload = json.dumps(fit.to_json_dict(), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(payload, encoding="utf-8", newline="\n")
        print(f"fit: wrote {args.out}")
    else:
        sys.stdout.write(payload)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jsqlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON experiment config (or a sidecar from an earlier run)")
        p.add_argument("--service", choices=KINDS, help="service distribution kind")
        p.add_argument("--beta", type=float, help="tail exponent for lomax/pareto")
        p.add_argument("--seed", type=int, help="base seed (default 0)")
        p.add_argument("--workers", type=int, default=1, help="parallel workers (default 1)")
        p.add_argument("--out", required=True, help="output path stem")

    p = sub.add_parser("simulate", help="run the N-queue network simulator")
    add_common(p)
    p.add_argument("--n-queues", dest="N", type=int)
    p.add_argument("--d-choices", dest="D", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--horizon", type=float)
    p.add_argument("--warmup", dest="warmup_fraction", type=float)
    p.add_argument("--k-max", dest="k_max", type=int)
    p.add_argument("--batches", dest="n_batches", type=int)
    p.add_argument("--replications", type=int)
    p.add_argument("--pair-level", dest="pair_level", type=int,
                   help="also estimate the two-queue indicator covariance at this level")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("cavity", help="run the cavity fixed-point iteration")
    add_common(p)
    p.add_argument("--d-choices", dest="D", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--k-max", dest="k_max", type=int)
    p.add_argument("--cycles", dest="cycles_per_iter", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--damping", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--noise-rel", dest="noise_rel", type=float)
    p.add_argument("--shards", type=int)
    p.set_defaults(func=cmd_cavity)

    p = sub.add_parser("predict", help="regime classification and exponents")
    p.add_argument("--config", help="JSON config with mode=analytic, D, betas")
    p.add_argument("--d-choices", dest="D", type=int)
    p.add_argument("--beta", type=float, action="append")
    p.add_argument("--beta-grid", help="lo:hi:step inclusive grid")
    p.add_argument("--c1", type=float, help="lower tail constant (boundary regime echo)")
    p.add_argument("--c2", type=float, help="upper tail constant (boundary regime echo)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("fit", help="fit a tail model to a results CSV")
    p.add_argument("csv")
    p.add_argument("--model", choices=MODELS, required=True)
    p.add_argument("--d-choices", dest="D", type=int, default=2)
    p.add_argument("--rel-ci-max", dest="rel_ci_max", type=float, default=0.3)
    p.add_argument("--k-min", dest="k_min", type=int)
    p.add_argument("--k-max", dest="k_max", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, RuntimeError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
