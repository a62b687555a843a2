"""Command line entry point: ``leadq run|sweep|resume``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import config as configmod
from .errors import ConfigurationError, LeadqError
from .harness import SWEEP_POLICIES, resume, run_experiment, run_sweep

log = logging.getLogger("leadq")


def _load_config(spec):
    if spec is None:
        return configmod.ExperimentConfig()
    path = Path(spec)
    if not path.exists() and not spec.endswith(".cfg"):
        path = configmod.builtin_config_path(spec)
    return configmod.load(path)


def _overrides(extra):
    """``--section.key value`` / ``--key=value`` pairs left over by argparse."""
    flat = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise ConfigurationError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigurationError(f"{tok} needs a value")
            value = extra[i + 1]
            i += 2
        key = key.replace("-", "_")
        if key == "aggregation":
            key = "fl.aggregation"
        flat[key] = configmod._parse_value(value)
    return flat


def _build_config(args, extra):
    cfg = _load_config(args.config)
    flat = _overrides(extra)
    if getattr(args, "policy", None):
        flat["policy"] = args.policy
    if args.seed:
        flat["seeds"] = list(args.seed)
    if args.out:
        flat["out"] = args.out
    if args.rounds is not None:
        flat["rounds"] = args.rounds
    return configmod.from_flat(flat, cfg)


def build_parser():
    p = argparse.ArgumentParser(prog="leadq", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="config file or built-in name (published, coreset_gap, policy_compare)")
        sp.add_argument("--seed", type=int, action="append", help="seed (repeatable); overrides config")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--rounds", type=int, help="number of querying rounds R")
        sp.add_argument("--stop-after", type=int, help="checkpoint and stop after this round")

    run = sub.add_parser("run", help="run one policy over the configured seeds")
    common(run)
    run.add_argument("--policy", help="random, uncertainty, coreset-local, coreset-global or leadq")

    sweep = sub.add_parser("sweep", help="run every policy on identical data and seeds")
    common(sweep)
    sweep.add_argument("--policies", nargs="+", default=list(SWEEP_POLICIES))

    res = sub.add_parser("resume", help="continue a run from its checkpoints")
    res.add_argument("run_dir")
    res.add_argument("--rounds", type=int, help="extend or set the total number of rounds")
    res.add_argument("--stop-after", type=int)
    return p


def main(argv=None):
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "resume":
            if extra:
                raise ConfigurationError(f"unexpected arguments {extra}")
            resume(args.run_dir, rounds=args.rounds, stop_after=args.stop_after)
            out = args.run_dir
        else:
            cfg = _build_config(args, extra)
            if args.command == "run":
                run_experiment(cfg, stop_after=args.stop_after)
            else:
                policies = [p.replace("-", "_") for p in args.policies]
                run_sweep(cfg, policies, stop_after=args.stop_after)
            out = cfg.out
    except LeadqError as exc:
        print(f"leadq: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
