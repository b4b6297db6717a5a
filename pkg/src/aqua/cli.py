"""Command line entry points.

Exit codes: 0 on success, 1 when a run fails at runtime, 2 when a
configuration is malformed or the command is invoked incorrectly.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from .config import ConfigError, RunSpec, build_bundle, load_run_spec, resolve_output_dir
from .loop import run, write_curves_csv, write_filtration_csv, write_result_json
from .oracle import write_bundle

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _load_spec(path, seed) -> RunSpec:
    return load_run_spec(path, seed_override=seed)


def _execute(spec: RunSpec, out_dir: Path) -> dict:
    bundle = build_bundle(spec)
    result = run(spec.loop, bundle.dataset, bundle)
    write_result_json(result, out_dir / "result.json")
    write_curves_csv(result, out_dir / "curves.csv")
    write_filtration_csv(result, out_dir / "filtration.csv")
    return result.to_dict()


def cmd_run(args) -> int:
    spec = _load_spec(args.config, args.seed)
    if spec.loop.oracle_kind == "remote_human":
        raise ConfigError("remote_human runs need the HTTP service; use `aqua serve`")
    out_dir = resolve_output_dir(spec)
    summary = _execute(spec, out_dir)
    final_em = summary["final"].get("em1")
    series = summary["primary_series"]
    print(f"run {spec.label}: {len(summary['logs'])} epochs, "
          f"final {series} EM {final_em}, auc {summary['auc']:.3f}")
    print(f"wrote {out_dir / 'result.json'}")
    return EXIT_OK


def cmd_gen(args) -> int:
    spec = _load_spec(args.config, args.seed)
    if spec.generator is None:
        raise ConfigError(f"{args.config}: gen needs a 'generator' section")
    bundle = build_bundle(spec)
    out_dir = resolve_output_dir(spec)
    paths = write_bundle(bundle, out_dir)
    print(f"gen {spec.label}: {len(bundle.dataset.records)} instances, "
          f"{len(bundle.corpus)} terms")
    for name in ("corpus", "refinement", "dataset"):
        print(f"wrote {paths[name]}")
    return EXIT_OK


def _comparison_rows(specs, results):
    thresholds = specs[0].loop.score_thresholds
    keys = [str(int(t)) if float(t) == int(t) else str(t) for t in thresholds]
    baseline_costs = None
    for spec, result in zip(specs, results):
        if spec.loop.strategy == "random":
            baseline_costs = result["cost_to_threshold"]
            break

    header = ["label", "strategy", "oracle", "auc", "final_em"]
    header += [f"cost_{key}" for key in keys]
    header += [f"reduction_{key}" for key in keys]
    rows = [header]
    for spec, result in zip(specs, results):
        costs = result["cost_to_threshold"]
        row = [spec.label, spec.loop.strategy, spec.loop.oracle_kind,
               f"{result['auc']:.6f}", _fmt(result["final"].get("em1"))]
        row += [_fmt(costs.get(key)) for key in keys]
        for key in keys:
            row.append(_fmt(_reduction(costs.get(key),
                                       None if baseline_costs is None
                                       else baseline_costs.get(key))))
        rows.append(row)
    return rows


def _fmt(value):
    if value is None:
        return "N/A"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def _reduction(cost, baseline):
    """Fraction of the baseline's annotation cost saved; N/A when undefined."""
    if cost is None or baseline is None:
        return None
    if baseline == 0:
        return 0.0 if cost == 0 else None
    return 1.0 - cost / baseline


def cmd_compare(args) -> int:
    if len(args.configs) < 2:
        raise ConfigError("compare needs at least two config files")
    specs = [_load_spec(path, args.seed) for path in args.configs]
    reference = specs[0].comparable_view()
    for spec in specs[1:]:
        if spec.comparable_view() != reference:
            raise ConfigError(
                f"{spec.path} and {specs[0].path} differ beyond strategy/oracle; "
                "comparisons must share every other setting")
    for spec in specs:
        if spec.loop.oracle_kind == "remote_human":
            raise ConfigError("remote_human runs need the HTTP service; use `aqua serve`")

    out_dir = resolve_output_dir(specs[0])
    results = []
    for spec in specs:
        sub_dir = out_dir / spec.label
        sub_dir.mkdir(parents=True, exist_ok=True)
        results.append(_execute(spec, sub_dir))
        print(f"ran {spec.label} ({spec.loop.strategy}/{spec.loop.oracle_kind})")

    table_path = out_dir / "comparison.csv"
    with open(table_path, "w", encoding="utf-8", newline="") as handle:
        csv.writer(handle).writerows(_comparison_rows(specs, results))
    print(f"wrote {table_path}")
    return EXIT_OK


def cmd_serve(args) -> int:
    spec = _load_spec(args.config, args.seed)
    from .service import serve_forever

    return serve_forever(spec, host=args.host, port=args.port)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aqua",
        description="Active learning with question answer term uncertainty.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_seed(p):
        p.add_argument("--seed", type=int, default=None,
                       help="override the master, generator, and noise seeds")

    p_run = sub.add_parser("run", help="execute one experiment")
    p_run.add_argument("config")
    add_seed(p_run)
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="run several configs and tabulate")
    p_cmp.add_argument("configs", nargs="+")
    add_seed(p_cmp)
    p_cmp.set_defaults(func=cmd_compare)

    p_gen = sub.add_parser("gen", help="write a synthetic corpus and dataset")
    p_gen.add_argument("config")
    add_seed(p_gen)
    p_gen.set_defaults(func=cmd_gen)

    p_srv = sub.add_parser("serve", help="run with the reannotation HTTP service")
    p_srv.add_argument("config")
    p_srv.add_argument("--host", default="127.0.0.1")
    p_srv.add_argument("--port", type=int, default=8000)
    add_seed(p_srv)
    p_srv.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001  - CLI boundary, report and fail
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
