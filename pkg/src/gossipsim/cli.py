"""Command-line entry point: ``gossipsim run|sweep|compare``.

Exit codes: 0 every message reached every node, 1 bad configuration or
arguments, 2 the run finished with a coverage shortfall.
"""

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from .config import ConfigError, apply_overrides, config_from_dict, config_to_dict, load_config
from .metrics import SUMMARY_COLUMNS, emit, summary_row, write_csv
from .protocol import Variant
from .scenario import SWEEPABLE_KEYS, run

EXIT_OK, EXIT_CONFIG, EXIT_SHORTFALL = 0, 1, 2
DELTA_METRICS = ("latency_ms", "bandwidth_bytes", "avg_duplicates", "iwant_requests", "iwant_reply_share")


class UsageError(Exception):
    pass


def _seed_override(args):
    if args.seed is not None:
        return [f"seed={args.seed}"]
    env = os.environ.get("GOSSIPSIM_SEED")
    if env:
        try:
            seed = int(env)
        except ValueError:
            raise UsageError(f"GOSSIPSIM_SEED: expected an unsigned integer, got {env!r}") from None
        return [f"seed={seed}"]
    return []


def _base_dict(args):
    data = {}
    if args.config:
        cfg = load_config(args.config)
        data = config_to_dict(cfg)
    return apply_overrides(data, list(args.set or []) + _seed_override(args))


def parse_values(spec, axis):
    """``a,b,c`` or inclusive ``start:stop:step``; numbers stay numbers."""
    spec = spec.strip()
    if axis != "variant" and spec.count(":") == 2:
        try:
            start, stop, step = (float(x) for x in spec.split(":"))
        except ValueError:
            raise UsageError(f"--values: bad range {spec!r}") from None
        if step <= 0 or stop < start:
            raise UsageError(f"--values: range {spec!r} needs step > 0 and stop >= start")
        out = []
        i = 0
        while start + i * step <= stop + 1e-9 * max(1.0, abs(stop)):
            v = start + i * step
            out.append(int(v) if v.is_integer() else v)
            i += 1
        return out
    out = []
    for item in spec.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            v = json.loads(item)
        except json.JSONDecodeError:
            v = item
        out.append(v)
    if not out:
        raise UsageError("--values: no values given")
    return out


def _variants(text):
    names = [v.strip() for v in text.split(",") if v.strip()]
    allowed = [v.value for v in Variant]
    bad = [v for v in names if v not in allowed]
    if bad:
        raise UsageError(f"unknown variant(s) {bad}; expected {allowed}")
    return names


def _execute(cfg):
    m = run(cfg)
    return summary_row(m), m.fully_covered


def _run_all(configs, parallel):
    if parallel and parallel > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(_execute, configs))
    return [_execute(c) for c in configs]


def _write_table(rows, columns, out_dir, name, fmt):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{name}.{fmt}")
    if fmt == "csv":
        write_csv(path, rows, columns)
    else:
        with open(path, "w") as fh:
            json.dump(rows, fh, indent=2)
            fh.write("\n")
    return path


def cmd_run(args):
    cfg = config_from_dict(_base_dict(args))
    m = run(cfg)
    paths = emit(m, args.format, args.out)
    row = summary_row(m)
    print(" ".join(f"{k}={row[k]}" for k in SUMMARY_COLUMNS))
    for p in paths:
        print(f"wrote {p}")
    short = m.shortfall()
    if short:
        print(f"coverage shortfall: {len(short)} message(s) incomplete", file=sys.stderr)
        for mid, missing in sorted(short.items()):
            print(f"  {mid}: {missing} node(s) never received it", file=sys.stderr)
        return EXIT_SHORTFALL
    return EXIT_OK


def cmd_sweep(args):
    if args.axis not in SWEEPABLE_KEYS:
        raise UsageError(f"--axis: {args.axis!r} is not sweepable; choose from {list(SWEEPABLE_KEYS)}")
    base = _base_dict(args)
    values = parse_values(args.values, args.axis)
    variants = [None] if args.axis == "variant" else _variants(args.variants) if args.variants else [None]
    jobs = []
    for value in values:
        for variant in variants:
            data = apply_overrides(base, [f"{args.axis}={json.dumps(value)}"])
            if variant is not None:
                data["variant"] = variant
            jobs.append((value, config_from_dict(data)))
    results = _run_all([c for _, c in jobs], args.parallel)
    rows = []
    covered = True
    for (value, _), (row, ok) in zip(jobs, results):
        rows.append({args.axis: value, **row})
        covered &= ok
    order = {v.value: i for i, v in enumerate(Variant)}
    rows.sort(key=lambda r: (str(r[args.axis]) if args.axis == "variant" else r[args.axis], order[r["variant"]]))
    cols = [args.axis] + [c for c in SUMMARY_COLUMNS if c != args.axis]
    path = _write_table(rows, cols, args.out, "sweep", args.format)
    print(f"wrote {path} ({len(rows)} rows)")
    return EXIT_OK if covered else EXIT_SHORTFALL


def percent_delta(value, base):
    if value is None or base is None:
        return None
    if base == 0:
        return 0.0 if value == 0 else None
    return round(100.0 * (value - base) / base, 4)


def compare_rows(rows):
    """Attach ``<metric>_delta_pct`` columns relative to the first row."""
    base = rows[0]
    out = []
    for row in rows:
        extra = {f"{k}_delta_pct": percent_delta(row[k], base[k]) for k in DELTA_METRICS}
        out.append({**row, **extra})
    return out


def cmd_compare(args):
    variants = _variants(args.variants)
    if len(variants) < 2:
        raise UsageError("--variants: need at least two variants")
    base = _base_dict(args)
    configs = [config_from_dict({**base, "variant": v}) for v in variants]
    results = _run_all(configs, args.parallel)
    rows = compare_rows([r for r, _ in results])
    cols = list(SUMMARY_COLUMNS) + [f"{k}_delta_pct" for k in DELTA_METRICS]
    path = _write_table(rows, cols, args.out, "compare", args.format)
    for row in rows:
        deltas = " ".join(f"{k}={row[f'{k}_delta_pct']}%" for k in DELTA_METRICS)
        print(f"{row['variant']:8s} {deltas}")
    print(f"wrote {path}")
    return EXIT_OK if all(ok for _, ok in results) else EXIT_SHORTFALL


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage, which would read as a coverage shortfall
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="gossipsim", description="GossipSub large-message simulator")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON scenario file (defaults apply when omitted)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key, repeatable")
    common.add_argument("--seed", type=int, help="RNG seed; falls back to $GOSSIPSIM_SEED, then the config")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run one scenario")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", parents=[common], help="run one scenario per axis value")
    p.add_argument("--axis", required=True, help=f"one of {', '.join(SWEEPABLE_KEYS)}")
    p.add_argument("--values", required=True, help="comma list or inclusive start:stop:step")
    p.add_argument("--variants", help="comma list of variants to run per value")
    p.add_argument("--parallel", type=int, default=1, metavar="N")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", parents=[common], help="run several variants on one topology")
    p.add_argument("--variants", required=True, help="comma list; the first is the baseline")
    p.add_argument("--parallel", type=int, default=1, metavar="N")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help or a usage error
        return exc.code
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print("invalid configuration:", file=sys.stderr)
        for err in exc.errors:
            print(f"  {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (UsageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
