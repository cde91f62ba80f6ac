"""``edrl-mea`` command line: prepare, corrupt, train, evaluate, report.

Exit codes: 0 success, 1 user error (bad config, missing input, stage run
out of order), 2 internal error.
"""
from __future__ import annotations

import argparse
import json
import sys
import traceback

from .errors import StageOrder, ValidationError
from .pipeline import PipelineConfig, cmd_corrupt, cmd_evaluate, cmd_prepare, cmd_report, cmd_train

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; that is a user error here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USER, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="edrl-mea", description=__doc__.splitlines()[0])
    parser.add_argument("--traceback", action="store_true",
                        help="print the full traceback on internal errors")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(p, required=True):
        p.add_argument("--config", required=required, help="pipeline config (JSON)")
        p.add_argument("--seed", type=int, help="override the config seed")
        return p

    with_config(sub.add_parser("prepare", help="split, undersample, write partition manifests"))
    for name, text in (("train", "EDRL -> MEA -> forest grid search"),
                       ("evaluate", "score baseline and EDRL-MEA on every test set")):
        p = with_config(sub.add_parser(name, help=text))
        p.add_argument("--paper-grid", "--full-grid", dest="full_grid", action="store_true",
                       help="search n_estimators 500..5000 step 10, depth 2..40 step 2")
    rep = with_config(sub.add_parser("report", help="render text tables from report CSVs"),
                      required=False)
    rep.add_argument("csv", nargs="*", help="report CSV(s); default: the run's reports")
    rep.add_argument("--averaging", default="MACRO")
    cor = with_config(sub.add_parser("corrupt", help="mix clean WAVs with noise at set SNRs"),
                      required=False)
    cor.add_argument("--clean-dir")
    cor.add_argument("--noise-dir")
    cor.add_argument("--output-dir")
    cor.add_argument("--snr", type=float, action="append",
                     help="SNR level in dB (repeatable); default 0 5 10 15 20")
    return parser


def _run(args) -> None:
    cfg = PipelineConfig.load(args.config, seed=args.seed) if args.config else None
    if cfg is not None and getattr(args, "full_grid", False):
        cfg.forest = {**cfg.forest, "full_grid": True}
    if args.command == "prepare":
        print(json.dumps(cmd_prepare(cfg), indent=2))
    elif args.command == "train":
        print(json.dumps(cmd_train(cfg), indent=2, default=str))
    elif args.command == "evaluate":
        for report in cmd_evaluate(cfg).values():
            print(report.render())
    elif args.command == "report":
        if cfg is None and not args.csv:
            raise StageOrder("give --config or at least one report CSV")
        print(cmd_report(cfg, args.csv, averaging=args.averaging))
    elif args.command == "corrupt":
        rows = cmd_corrupt(cfg, args.clean_dir, args.noise_dir, args.output_dir, args.snr,
                           args.seed)
        clipped = sum(r["clipped_samples"] for r in rows)
        print(f"wrote {len(rows)} mixtures ({clipped} clipped samples)")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _run(args)
    except (ValidationError, StageOrder, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        if args.traceback:
            traceback.print_exc()
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
