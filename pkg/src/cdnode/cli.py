"""Command-line entry point: ``cdnode <subcommand> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import checks, pipeline
from .config import ConfigError, RunConfig
from .data import DataError
from .ode import SolverError
from .training import TrainingError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration file (section.key = value lines)")
    common.add_argument("--seed", type=int, help="overrides the 'seed' and 'synth.seed' keys")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one configuration key")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = _Parser(prog="cdnode", description="Constrained dynamical neural ODE for ambiguity-aware emotion prediction.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic multi-rater dataset")
    s.add_argument("out_dir")

    s = sub.add_parser("fit-labels", parents=[common], help="fit per-frame Beta labels from ratings")
    s.add_argument("manifest")

    s = sub.add_parser("train", parents=[common], help="train a model; writes checkpoint.bin and metrics.jsonl")
    s.add_argument("manifest")
    s.add_argument("out_dir")
    s.add_argument("--mode", choices=list(pipeline.SYSTEM_NAMES), help="overrides constraint.mode")

    s = sub.add_parser("predict", parents=[common], help="predict (mu, sigma) sequences")
    s.add_argument("checkpoint")
    s.add_argument("manifest")
    s.add_argument("out_dir")
    s.add_argument("--partition", default="dev")

    s = sub.add_parser("evaluate", parents=[common], help="score predictions; writes report.json and deciles.csv")
    s.add_argument("predictions")
    s.add_argument("manifest")
    s.add_argument("out_dir")
    s.add_argument("--partition", default="dev")
    s.add_argument("--against", choices=["label", "truth"], default="label", help="reference sequences")

    sub.add_parser("gradcheck", parents=[common], help="run the finite-difference gradient suites")

    s = sub.add_parser("ablate", parents=[common], help="train and score every constraint mode")
    s.add_argument("manifest")
    s.add_argument("out_dir")
    return p


def _config(args) -> RunConfig:
    overrides = list(args.set)
    if args.seed is not None:
        # one flag seeds training and the synthetic generator alike
        overrides += [f"seed = {args.seed}", f"synth.seed = {args.seed}"]
    for o in args.set:
        if "=" not in o:
            raise UsageError(f"cdnode: --set expects KEY=VALUE, got {o!r}")
    return RunConfig.load(args.config, overrides)


def _dispatch(args) -> int:
    cfg = _config(args)
    cmd = args.command
    if cmd == "synth":
        print(pipeline.run_synth(args.out_dir, cfg))
    elif cmd == "fit-labels":
        pipeline.run_fit_labels(args.manifest, cfg)
    elif cmd == "train":
        res = pipeline.run_train(args.manifest, args.out_dir, cfg, mode=args.mode)
        last = res.history[-1]
        print(f"best epoch {res.best_epoch}; final ccc_mu {last['ccc_mu']:.4f} ccc_sigma {last['ccc_sigma']:.4f}")
    elif cmd == "predict":
        paths = pipeline.run_predict(args.checkpoint, args.manifest, args.out_dir, cfg, args.partition)
        print(f"wrote {len(paths)} prediction files")
    elif cmd == "evaluate":
        rep = pipeline.run_evaluate(args.predictions, args.manifest, args.out_dir, cfg, args.partition, args.against)
        print(f"ccc_mu {rep.ccc_mu:.4f} ccc_sigma {rep.ccc_sigma:.4f} frames {rep.frame_count}")
    elif cmd == "gradcheck":
        errs = checks.run_all()
        for k, v in errs.items():
            print(f"{k:14s} max_rel_err {v:.3e}")
        if max(errs.values()) >= GRADCHECK_TOL:
            print(f"cdnode.checks: gradient mismatch above {GRADCHECK_TOL:g}", file=sys.stderr)
            return EXIT_NUMERIC
    elif cmd == "ablate":
        path, rows = pipeline.run_ablate(args.manifest, args.out_dir, cfg)
        for r in rows:
            print(f"{r[0]:14s} ccc_mu {r[2]:.4f} ccc_sigma {r[3]:.4f} out_of_range_utts {r[-2]}")
        print(path)
    return EXIT_OK


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(name)s: %(message)s", stream=sys.stderr)
        return _dispatch(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"cdnode.config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"cdnode.data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"cdnode.data: {exc.filename}: file not found", file=sys.stderr)
        return EXIT_DATA
    except SolverError as exc:
        print(f"cdnode.ode: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except TrainingError as exc:
        print(f"cdnode.training: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE


def main():
    sys.exit(run())
