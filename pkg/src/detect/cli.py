"""``detect`` command line: simulate -> preprocess -> train -> evaluate -> report.

Exit codes: 0 success, 1 usage/configuration, 2 data validation,
3 numerical failure (divergence, undefined threshold).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .config import dump_run_config, load_run_config
from .datapipe import load_recordings, load_windows, read_nrs_table, save_windows
from .errors import (
    CalibrationError,
    ConfigError,
    DetectError,
    DivergenceError,
    NumericalDomainError,
)
from .evaluate import accuracy_table_csv, read_accuracy_table, write_report
from .model import load_bundle, save_bundle
from .pipeline import evaluate_cohort, report_from_rows, train_on_pre, windows_from_recordings
from .simgen import default_cohort_spec, generate_cohort, load_cohort_spec
from .train import train_kfold

log = logging.getLogger("detect")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p):
    p.add_argument("--seed", type=int, help="random seed (default 42)")
    p.add_argument("--config", help="flat key = value run configuration file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one configuration key (repeatable)")
    p.add_argument("--out", required=True, help="output path")


def build_parser():
    parser = _Parser(prog="detect", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write a synthetic cohort of recording CSVs")
    p.add_argument("--spec", help="JSON cohort spec (default: the 8-patient pilot cohort)")
    _common(p)

    p = sub.add_parser("preprocess", help="trim and segment recordings into a window cache")
    p.add_argument("--data", required=True, help="recording CSV or directory")
    _common(p)

    p = sub.add_parser("train", help="train on pooled pre-treatment windows")
    p.add_argument("--data", required=True, help="recording directory or window cache")
    _common(p)

    p = sub.add_parser("evaluate", help="per-patient accuracies, TES and cohort report")
    p.add_argument("--bundle", required=True)
    p.add_argument("--data", required=True, help="recording directory or window cache")
    p.add_argument("--nrs", help="NRS table (default: <data>/nrs.csv)")
    _common(p)

    p = sub.add_parser("report", help="cohort report from an accuracy table")
    p.add_argument("--accuracies", required=True,
                   help="CSV with patient_id,acc_pre,acc_post,nrs_pre,nrs_post")
    _common(p)
    return parser


def _run_config(args):
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return load_run_config(args.config, overrides)


def _windows(path, config):
    path = Path(path)
    if path.is_file() and not path.suffix == ".csv":
        return load_windows(path)
    return windows_from_recordings(load_recordings(path), config)


def cmd_simulate(args):
    if args.spec:
        spec = load_cohort_spec(args.spec)
    else:
        spec = default_cohort_spec(args.seed if args.seed is not None else 42)
    manifest = generate_cohort(spec, args.out)
    print(f"wrote {len(manifest) - 1} recordings and nrs.csv to {args.out}")
    return EXIT_OK


def cmd_preprocess(args):
    config = _run_config(args)
    ws = _windows(args.data, config)
    save_windows(ws, args.out)
    print(f"wrote {len(ws)} windows to {args.out}")
    return EXIT_OK


def cmd_train(args):
    config = _run_config(args)
    ws = _windows(args.data, config)

    def emit(record):
        print(record.log_line(config.epochs), flush=True)

    if config.folds:
        pre = ws.where(lambda s: s[1] == "pre")
        results = train_kfold(pre, config, emit)
        accs = [hist[-1].val_acc for _, hist in results]
        for i, (bundle, hist) in enumerate(results):
            bundle.metadata = {"fold": i, "final_val_acc": hist[-1].val_acc, "seed": config.seed}
            save_bundle(bundle, f"{args.out}.fold{i}")
        print(f"KFOLD mean_val_acc={sum(accs) / len(accs):.2f} folds={len(accs)}")
        return EXIT_OK

    bundle, history = train_on_pre(ws, config, emit)
    save_bundle(bundle, args.out)
    print(f"FINAL val_acc={history[-1].val_acc:.2f} epochs={len(history)}")
    Path(str(args.out) + ".config").write_text(dump_run_config(config), encoding="utf-8")
    return EXIT_OK


def cmd_evaluate(args):
    config = _run_config(args)
    bundle = load_bundle(args.bundle)
    ws = _windows(args.data, config)
    nrs_path = args.nrs or Path(args.data) / "nrs.csv"
    report, rows, missing = evaluate_cohort(bundle, ws, read_nrs_table(nrs_path),
                                            config.nrs_predicate)
    out = write_report(report, args.out)
    (out / "accuracies.csv").write_text(accuracy_table_csv(rows), encoding="utf-8")
    for pid in missing:
        print(f"warning: patient {pid} missing from {nrs_path}; excluded", file=sys.stderr)
    print(f"threshold={report.tes_threshold:.2f} consistency={report.consistency_rate:.2f}%")
    return EXIT_OK


def cmd_report(args):
    config = _run_config(args)
    report = report_from_rows(read_accuracy_table(args.accuracies), config.nrs_predicate)
    write_report(report, args.out)
    print(f"threshold={report.tes_threshold:.2f} consistency={report.consistency_rate:.2f}%")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"detect: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, NumericalDomainError, CalibrationError) as exc:
        print(f"detect: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DetectError, OSError) as exc:
        print(f"detect: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
