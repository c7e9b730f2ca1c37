"""Command-line entry point: run, compare, sweep and validate scenarios."""

from __future__ import annotations

import argparse
import csv
import itertools
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .engine import simulate, write_metrics_csv
from .model import (PROTOCOLS, ScenarioConfig, ScenarioError, flatten, load_scenario,
                    serialize_scenario, toml_value, tomllib)

log = logging.getLogger("awqmp")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class CliIOError(Exception):
    pass


def _load(path, seed=None) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliIOError(f"cannot read scenario {path}: {exc}") from None
    config = load_scenario(text)
    if seed is not None:
        config = replace(config, rng_seed=seed)
    return config


def _write(metrics, path):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(metrics, path)
    except OSError as exc:
        raise CliIOError(f"cannot write {path}: {exc}") from None


def _run_one(config):
    return simulate(config)


def _map(configs, jobs):
    if jobs > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_one, configs))
    return [_run_one(c) for c in configs]


def _write_summary(rows, path):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: ("NA" if v is None else v) for k, v in row.items()})
    except OSError as exc:
        raise CliIOError(f"cannot write {path}: {exc}") from None


def cmd_validate(args):
    config = _load(args.scenario, args.seed)
    print(f"ok: {config.node_count} nodes, protocol={config.protocol}, seed={config.rng_seed}")
    return EXIT_OK


def cmd_run(args):
    config = _load(args.scenario, args.seed)
    metrics = simulate(config)
    _write(metrics, args.out)
    log.info("wrote %s (%d rounds)", args.out, len(metrics.records))
    return EXIT_OK


def cmd_compare(args):
    base = _load(args.scenario, args.seed)
    protocols = [p.strip().lower() for p in args.protocols.split(",") if p.strip()]
    bad = [p for p in protocols if p not in PROTOCOLS]
    if not protocols or bad:
        print(f"error: unknown protocol(s) {', '.join(bad) or '(none)'}", file=sys.stderr)
        return EXIT_INVALID
    seeds = [base.rng_seed + k for k in range(args.seeds)]
    configs = [replace(base, protocol=p, rng_seed=s) for s in seeds for p in protocols]
    results = _map(configs, args.jobs)
    out = Path(args.out_dir)
    rows = []
    for config, metrics in zip(configs, results):
        _write(metrics, out / f"{config.protocol}_seed{config.rng_seed}.csv")
        rows.append(metrics.summary())
    _write_summary(rows, out / "summary.csv")
    for row in rows:
        print(f"{row['protocol']:>7} seed={row['rng_seed']} first_death={row['first_death_round']} "
              f"half_death={row['half_death_round']} frames={row['total_frames']}")
    return EXIT_OK


def _parse_set(spec: str):
    key, sep, values = spec.partition("=")
    if not sep or not values:
        raise ScenarioError(f"--set expects key=v1,v2,..., got {spec!r}")
    parsed = []
    for raw in values.split(","):
        try:
            parsed.append(tomllib.loads(f"v = {raw}")["v"])
        except tomllib.TOMLDecodeError:
            parsed.append(raw)  # bare word, e.g. a protocol name
    return key.strip(), parsed


def cmd_sweep(args):
    base = _load(args.scenario, args.seed)
    axes = [_parse_set(s) for s in args.set]
    known = flatten(base)
    for key, _ in axes:
        if key not in known:
            raise ScenarioError(f"unknown key {key!r}", [f"{key}: unknown key"])
    configs, labels = [], []
    for combo in itertools.product(*(vals for _, vals in axes)):
        extra = "\n".join(f"{k} = {toml_value(v)}" for (k, _), v in zip(axes, combo))
        configs.append(load_scenario(_merge(base, extra)))
        labels.append("__".join(f"{k}={v}" for (k, _), v in zip(axes, combo)))
    results = _map(configs, args.jobs)
    out = Path(args.out_dir)
    rows = []
    for label, metrics in zip(labels, results):
        _write(metrics, out / f"{label}.csv")
        rows.append({"entry": label, **metrics.summary()})
    _write_summary(rows, out / "summary.csv")
    for row in rows:
        print(f"{row['entry']}: first_death={row['first_death_round']} frames={row['total_frames']}")
    return EXIT_OK


def _merge(base: ScenarioConfig, extra: str) -> str:
    """Base scenario document with ``extra`` lines replacing matching keys."""
    override_keys = {line.split("=", 1)[0].strip() for line in extra.splitlines()}
    kept = [line for line in serialize_scenario(base).splitlines()
            if line.split("=", 1)[0].strip() not in override_keys]
    return "\n".join(kept) + "\n" + extra + "\n"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="awqmp", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", required=True, help="scenario TOML file")
        p.add_argument("--seed", type=int, default=None, help="override rng_seed (u64)")

    p = sub.add_parser("run", help="simulate one scenario and write its metrics CSV")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="same topology under several protocols and seeds")
    common(p)
    p.add_argument("--protocols", default="echerp,leach")
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="grid over one or more scenario keys")
    common(p)
    p.add_argument("--set", action="append", required=True, metavar="KEY=V1,V2,...")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="check a scenario file")
    common(p)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except CliIOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
