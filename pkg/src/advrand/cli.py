"""Command line interface: ``advrand {run,compare,bound,render-preview}``."""

from __future__ import annotations

import argparse
import sys

from . import harness
from .errors import AdvRandError, ConfigError


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="advrand", description="Adversarial domain randomization experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one configured experiment")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="flat key = value config file")
    src.add_argument("--preset", choices=sorted(harness.PRESETS), help="built-in preset")
    run.add_argument("--seed", type=int, help="override the master seed")
    run.add_argument("--out", help="override the output directory")
    run.add_argument("--iterations", type=int, help="override T")

    cmp_ = sub.add_parser("compare", help="aggregate run directories per method and iteration")
    cmp_.add_argument("runs", nargs="+", help="run directories")
    cmp_.add_argument("--out", required=True, help="output CSV")
    cmp_.add_argument("--metric", default="target_acc")

    bnd = sub.add_parser("bound", help="evaluate the multi-source bound or a sweep")
    bnd.add_argument("--config", required=True)
    bnd.add_argument("--out", help="output CSV (default: stdout)")

    prev = sub.add_parser("render-preview", help="write sample images and labels")
    src = prev.add_mutually_exclusive_group(required=True)
    src.add_argument("--config")
    src.add_argument("--preset", choices=sorted(harness.PRESETS))
    prev.add_argument("--seed", type=int)
    prev.add_argument("--out", required=True)
    prev.add_argument("--count", type=int, default=8)
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = harness.load_config(args.config or args.preset, seed=args.seed, out=args.out, iterations=args.iterations)
            metrics = harness.run_experiment(cfg)
            last = metrics.records[-1] if metrics.records else None
            if last is not None:
                print(f"{cfg.method} {cfg.task} seed={cfg.seed} iter={last['iter']} target_acc={last['target_acc']:.4f}")
            print(f"wrote {cfg.out}")
        elif args.command == "compare":
            rows = harness.compare(args.runs, args.out, args.metric)
            print(f"wrote {args.out} ({len(rows)} iterations)")
        elif args.command == "bound":
            rows = harness.bound(args.config, args.out if args.out else sys.stdout)
            if args.out:
                print(f"wrote {args.out} ({len(rows)} rows)")
        else:
            cfg = harness.load_config(args.config or args.preset, seed=args.seed)
            names = harness.render_preview(cfg, args.count, args.out)
            print(f"wrote {len(names)} files to {args.out}")
    except harness.RunFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (AdvRandError, ValueError, ZeroDivisionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
