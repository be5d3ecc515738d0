"""Command-line entry point: ``run``, ``compare`` and ``validate-config``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .engine import run_many
from .metrics import ExportError, compare_table, export, summarize_all
from .model import ConfigError, NetworkConfig, Policy, Scenario, config_to_dict, load_config

OUT_ENV = "DAGQOS_OUT"
DEFAULT_OUT = "dagqos-out"

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

POLICY_NAMES = [p.value for p in Policy]
SCENARIO_NAMES = [s.value for s in Scenario]


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV) or DEFAULT_OUT)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML configuration file")
    p.add_argument("--scenario", choices=SCENARIO_NAMES,
                   help="load scenario; overrides simulation.load_fraction")
    p.add_argument("--seed", type=int, help="first seed (default: simulation.rng_seed)")
    p.add_argument("--runs", type=int, help="Monte Carlo runs (default: simulation.mc_runs)")
    p.add_argument("--duration", type=float, help="simulated seconds per run")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dagqos", description="DAG ledger node-selection simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="log each run")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one policy and export results")
    _add_common(p)
    p.add_argument("--policy", choices=POLICY_NAMES, help="node selection policy")
    p.add_argument("--out", type=Path, help=f"output directory (default: ${OUT_ENV} or ./{DEFAULT_OUT})")

    p = sub.add_parser("compare", help="run all policies on one scenario and print a summary table")
    _add_common(p)
    p.add_argument("--out", type=Path, help="also export every run to this directory")
    p.add_argument("--json", action="store_true", help="print summaries as JSON instead of a table")

    p = sub.add_parser("validate-config", help="parse a config file and echo it, or list its errors")
    p.add_argument("config", type=Path)
    return parser


def _config(args: argparse.Namespace, policy: str | None = None) -> NetworkConfig:
    cfg = load_config(args.config) if args.config else NetworkConfig()
    changes = {}
    if policy is not None:
        changes["policy"] = Policy.parse(policy)
    if args.scenario:
        changes["load_fraction"] = Scenario.parse(args.scenario).load_fraction
    if args.seed is not None:
        changes["rng_seed"] = args.seed
    if args.runs is not None:
        changes["mc_runs"] = args.runs
    if args.duration is not None:
        changes["duration"] = args.duration
    return cfg.with_(**changes) if changes else cfg


def _seeds(cfg: NetworkConfig) -> range:
    return range(cfg.rng_seed, cfg.rng_seed + cfg.mc_runs)


def _cmd_run(args) -> int:
    cfg = _config(args, args.policy)
    results = run_many(cfg, _seeds(cfg))
    out = args.out or default_out_dir()
    export(results, out)
    print(compare_table(summarize_all(results)))
    print(f"wrote {len(results)} run(s) to {out}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    base = _config(args)
    results = []
    for pol in Policy:
        cfg = base.with_(policy=pol)
        results.extend(run_many(cfg, _seeds(cfg)))
    summaries = summarize_all(results)
    order = {p.value: k for k, p in enumerate(Policy)}
    summaries.sort(key=lambda s: order[s.policy])
    if args.json:
        print(json.dumps([s.to_dict() for s in summaries], indent=2))
    else:
        print(compare_table(summaries))
    if args.out:
        export(results, args.out)
    return EXIT_OK


def _cmd_validate(args) -> int:
    cfg = load_config(args.config)
    print(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    handler = {"run": _cmd_run, "compare": _cmd_compare, "validate-config": _cmd_validate}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"dagqos: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ExportError as exc:
        print(f"dagqos: {exc.strerror}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
