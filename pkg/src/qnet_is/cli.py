"""Command line entry point: ``qnet-is {estimate,exact,verify,table}``.

Exit codes: 0 success, 1 bad config or usage, 2 runtime failure (oracle
infeasible where an exact value is required, or the step cap was hit).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .experiment import (TABLE_IDS, ConfigError, apply_overrides, exact_rows, load_config,
                         run_experiment, table_config, verification_document, write_results)
from .oracle import OracleCache, OracleError
from .sampler import StepCapExceeded

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _delta(text: str):
    if text == "auto":
        return "auto"
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'auto', got {text!r}") from None


def _add_common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", required=config_required, help="JSON experiment file")
    p.add_argument("--seed", type=int)
    p.add_argument("--reps", type=int, dest="replications")
    p.add_argument("--eps", type=float)
    p.add_argument("--delta", type=_delta, help="number or 'auto' (-eps log eps)")
    p.add_argument("--schedule", action="store_true", default=None,
                   help="use eps_n = n^-1/2 and the matching delta")
    p.add_argument("--workers", type=int, help="numba threads")
    p.add_argument("--out", help="output path prefix (.csv and .json are appended)")
    p.add_argument("--cache", help="JSON sidecar for exact values")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qnet-is", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add_common(sub.add_parser("estimate", help="run importance-sampling experiments"))
    _add_common(sub.add_parser("exact", help="exact probabilities by first-step analysis"))
    v = sub.add_parser("verify", help="check subsolution and saddle-point properties")
    _add_common(v)
    v.add_argument("--samples", type=int, default=1000)
    t = sub.add_parser("table", help="reproduce a shipped table configuration")
    t.add_argument("table_id", choices=TABLE_IDS)
    _add_common(t, config_required=False)
    return parser


def _configs(args):
    configs = table_config(args.table_id) if args.command == "table" else load_config(args.config)
    return apply_overrides(configs, seed=args.seed, replications=args.replications, eps=args.eps,
                           delta=args.delta, schedule=args.schedule)


def _print_rows(rows, keys, out=sys.stdout):
    for r in rows:
        out.write("  ".join(f"{k}={_short(r.get(k))}" for k in keys) + "\n")


def _short(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    return "-" if v is None else str(v)


def _estimate(args) -> int:
    configs = _configs(args)
    cache = OracleCache(args.cache) if args.cache else None
    t0 = time.perf_counter()
    rows = []
    for cfg in configs:
        rows.extend(run_experiment(cfg, workers=args.workers, exact_cache=cache))
    out = args.out or (f"results/table{args.table_id}" if args.command == "table" else None)
    _print_rows(rows, ("label", "n", "kernel", "estimate", "std_err", "exact_value",
                       "empirical_decay_rate", "analytic_gamma"))
    if out:
        csv_path, json_path = write_results(out, configs, rows,
                                            {"wall_time": time.perf_counter() - t0})
        print(f"wrote {csv_path} and {json_path}")
    return EXIT_OK


def _exact(args) -> int:
    configs = _configs(args)
    rows = [r for cfg in configs for r in exact_rows(cfg)]
    _print_rows(rows, ("label", "n", "exact_value", "exact_decay_rate", "analytic_gamma",
                       "states", "sweeps"))
    if args.out:
        path = Path(args.out).with_suffix(".json")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps({"configs": [c.to_dict() for c in configs], "rows": rows},
                                   indent=2))
        print(f"wrote {path}")
    return EXIT_OK


def _verify(args) -> int:
    configs = _configs(args)
    docs = [verification_document(c, samples=args.samples) for c in configs]
    text = json.dumps({"ok": all(d["ok"] for d in docs), "checks": docs}, indent=2)
    if args.out:
        path = Path(args.out).with_suffix(".json")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        print(f"wrote {path}")
    for d in docs:
        v = d["verification"]
        print(f"{d['label'] or d['subsolution']['problem']}: ok={d['ok']} "
              f"min_H_pieces={v['min_piece_hamiltonian']:.3e} "
              f"max_exit_value={v['max_exit_value']:.3e} W(0)={v['value_at_origin']:.4f}")
    if not args.out:
        print(text)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = {"estimate": _estimate, "table": _estimate, "exact": _exact,
               "verify": _verify}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OracleError, StepCapExceeded) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
