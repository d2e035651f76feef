"""Train and evaluate quality-diversity and skill-discovery methods on point environments."""
from __future__ import annotations

import argparse
import logging
import sys

from . import harness
from .config import ConfigError, load_config


def _common(p: argparse.ArgumentParser, out_help: str) -> None:
    p.add_argument("--config", help="INI file; omitted keys take the shipped defaults")
    p.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
    p.add_argument("--out", help=out_help)
    p.add_argument("--workers", type=int, help="evaluation threads; never changes results")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config key (repeatable)")


def _load(args, out_is_run_dir: bool = True):
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise ConfigError([f"--set expects SECTION.KEY=VALUE, got {item!r}"])
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["run.seed"] = str(args.seed)
    if args.workers is not None:
        overrides["run.workers"] = str(args.workers)
    if getattr(args, "out", None) and out_is_run_dir:
        overrides["run.out"] = args.out
    return load_config(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qdskills", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log every iteration")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train one method on one environment")
    _common(p, "run directory (overrides run.out)")
    p.add_argument("--resume", action="store_true", help="continue from the last checkpoint in --out")

    p = sub.add_parser("export", help="write a plot-ready file from run directories")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--format", required=True, choices=harness.EXPORT_FORMATS)
    p.add_argument("--out", required=True, help="output file")

    p = sub.add_parser("adapt", help="few-shot adaptation of a finished run's skills")
    p.add_argument("run_dir")
    _common(p, "report directory (default: RUN_DIR)")

    p = sub.add_parser("hier", help="train a PPO meta-controller over frozen skills")
    _common(p, "output directory")
    p.add_argument("--skills", help="run directory whose skills to compose (default: hand-built run/jump)")

    p = sub.add_parser("sweep", help="hyperparameter-sensitivity grid over one or more methods")
    _common(p, "output directory")
    p.add_argument("--methods", nargs="+", help="methods to sweep (default: run.method)")

    p = sub.add_parser("smerl-target", help="estimate the SMERL target return with plain SAC")
    _common(p, "output directory for smerl_target.ini")
    p.add_argument("--seeds", type=int, default=5)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s")
    try:
        if args.command == "run":
            print(harness.run(_load(args), resume=args.resume))
        elif args.command == "export":
            print(harness.export(args.run_dirs, args.format, args.out))
        elif args.command == "adapt":
            cfg = _load(args, out_is_run_dir=False)
            out = args.out or args.run_dir
            rep = harness.adapt(cfg, args.run_dir, out)
            for r in rep.rows:
                print(f"{r.value}\tbest={r.best_skill}\tmedian={r.median:.4f}\tgain={r.fitness_gain:+.4f}")
        elif args.command == "hier":
            cfg = _load(args, out_is_run_dir=False)
            res = harness.hier(cfg, args.out or "runs/hier", args.skills)
            print(f"meta fitness {res.meta_fitness:.4f}; best single skill {res.best_single:.4f}")
        elif args.command == "sweep":
            base = _load(args, out_is_run_dir=False)
            cfgs = [base] if not args.methods else [load_config(overrides={"run.method": m}, environ={}, base=base)
                                                    for m in args.methods]
            result = harness.sweep(cfgs, args.out or "runs/sweep")
            for name, s in result.items():
                print(f"{name}\tmedian={s['median']:.4f}\tiqr={s['iqr']:.4f}")
        elif args.command == "smerl-target":
            cfg = _load(args, out_is_run_dir=False)
            target = harness.smerl_target(cfg, args.out or "runs/smerl", args.seeds)
            print(f"target_return = {target!r}")
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    except (harness.MissingArtifact, FileExistsError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
