"""Command line entry point ``shellcascade``.

Subcommands::

    shellcascade run --config run.yaml [--seed N] [--threads K] [--output-dir DIR]
    shellcascade resume --checkpoint DIR/checkpoint.json --additional-t T [--config run.yaml]
    shellcascade analyze DIR [--window N_MINUS N_PLUS] [--p 2 3 ...]
    shellcascade sweep --config run.yaml --nu 0.02 0.01 0.005
    shellcascade verify

Exit codes: 0 success, 1 usage or configuration error, 2 numerical blow-up,
3 degenerate analysis (no samples, empty window, too few fit points).
The seed is taken from ``--seed``, else ``$SHELLCASCADE_SEED``, else the
config file.
"""

from __future__ import annotations

import argparse
import sys

from .analysis import InertialWindow
from .config import ConfigError, load_config
from .noise import seed_from_env
from .runner import EXIT_USAGE, CheckpointError, analyze, resume, run, sweep
from .verify import main_verify


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="shellcascade", description="Stochastic shell-model simulation and scaling analysis.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the noise seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads for ensemble paths")
        p.add_argument("--output-dir", default=None, help="override output.dir")
        p.add_argument("--quiet", action="store_true")

    common(sub.add_parser("run", help="simulate, accumulate and analyze"))

    p = sub.add_parser("resume", help="continue a run from its checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--additional-t", type=float, required=True, help="extra simulated time")
    p.add_argument("--config", default=None, help="must match the checkpointed physics")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--output-dir", default=None)
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("analyze", help="re-analyze stored estimates without simulating")
    p.add_argument("run_dir")
    p.add_argument("--window", type=int, nargs=2, metavar=("N_MINUS", "N_PLUS"), default=None)
    p.add_argument("--p", type=float, nargs="+", default=None, help="structure function orders")
    p.add_argument("--output-dir", default=None)

    p = sub.add_parser("sweep", help="one run per viscosity")
    common(p)
    p.add_argument("--nu", type=float, nargs="+", required=True)

    p = sub.add_parser("verify", help="operator identity suite (no simulation)")
    p.add_argument("--vectors", type=int, default=1000)
    return parser


def _load(args):
    cfg = load_config(args.config)
    seed = seed_from_env(cfg.noise.seed)
    if args.seed is not None:
        seed = args.seed
    return cfg.with_seed(seed)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            return main_verify(args.vectors)
        if args.command == "run":
            return run(_load(args), args.output_dir, args.threads, quiet=args.quiet).exit_code
        if args.command == "sweep":
            code, _ = sweep(_load(args), args.nu, args.output_dir, args.threads, quiet=args.quiet)
            return code
        if args.command == "resume":
            cfg = load_config(args.config) if args.config else None
            if cfg is not None:
                cfg = cfg.with_seed(seed_from_env(cfg.noise.seed))
            return resume(args.checkpoint, args.additional_t, cfg, args.output_dir, args.threads,
                          quiet=args.quiet).exit_code
        if args.command == "analyze":
            window = InertialWindow(*args.window) if args.window else None
            out = analyze(args.run_dir, window, args.p, args.output_dir)
            if out.message:
                print(out.message, file=sys.stderr)
            return out.exit_code
    except (ConfigError, CheckpointError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
