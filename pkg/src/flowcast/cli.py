"""Command-line interface.

Exit codes: 0 success, 2 data/schema error, 3 training divergence,
4 argument error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from flowcast import datapipe
from flowcast.errors import DataError, TrainingDivergence
from flowcast.harness import (
    MODEL_KINDS,
    ExperimentConfig,
    FittedModel,
    best_lookback,
    compare_all,
    fit_model,
    format_sweep,
    lookback_sweep,
    prepare_fold,
)
from flowcast.metrics import relative_error
from flowcast.training import TrainConfig

EXIT_DATA, EXIT_DIVERGED, EXIT_ARGS = 2, 3, 4

log = logging.getLogger("flowcast")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ARGS, f"{self.prog}: error: {message}\n")


def parse_grid(text: str) -> list[int]:
    """``1..14`` (inclusive range) or ``1,3,7``."""
    text = text.strip()
    try:
        if ".." in text:
            lo, hi = (int(v) for v in text.split("..", 1))
            if hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}; use A..B or a comma list") from None


def _training_args(p):
    g = p.add_argument_group("neural training")
    g.add_argument("--max-epochs", type=int, default=200)
    g.add_argument("--patience", type=int, default=20)
    g.add_argument("--batch-size", type=int, default=90)
    g.add_argument("--channels", type=int, default=100, help="CNN kernels per height")
    g.add_argument("--hidden", type=int, default=150, help="LSTM units per direction")
    g.add_argument("--chronological", action="store_true",
                   help="time-ordered 7:1:2 split instead of a random one")


def _config(args, lookback: int) -> ExperimentConfig:
    cfg = ExperimentConfig(
        lookback=lookback,
        chronological=args.chronological,
        train=TrainConfig(batch_size=args.batch_size, max_epochs=args.max_epochs, patience=args.patience),
    )
    cfg.cnn = replace(cfg.cnn, channels_per_height=args.channels)
    cfg.lstm = replace(cfg.lstm, hidden_size=args.hidden)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flowcast", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic daily series")
    p.add_argument("--days", type=int, required=True)
    p.add_argument("--features", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.add_argument("--schema-out", help="schema file (default: OUT with .schema suffix)")

    p = sub.add_parser("train", help="fit one model on the first split of SEED")
    p.add_argument("--model", choices=MODEL_KINDS, required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--lookback", type=int, default=7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--history", help="write per-epoch loss history here (neural models)")
    _training_args(p)

    p = sub.add_parser("evaluate", help="score a saved model on the test part of SEED's split")
    p.add_argument("--model-file", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--chronological", action="store_true")

    p = sub.add_parser("compare", help="all five models over repeated random splits")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--lookback", type=int, default=7)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _training_args(p)

    p = sub.add_parser("sweep", help="test error as a function of the lookback")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--grid", type=parse_grid, default=list(range(1, 15)))
    p.add_argument("--model", choices=MODEL_KINDS, default="lstm")
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _training_args(p)
    return parser


def _load(args):
    schema = datapipe.load_schema(args.schema)
    return datapipe.load_csv(args.data, schema)


def _split(n_windows: int, seed: int, chronological: bool):
    return datapipe.repeated_splits(n_windows, 1, seed, chronological)[0]


def cmd_generate(args) -> int:
    if args.days < 30 or args.features < 1:
        raise ValueError("--days must be >= 30 and --features >= 1")
    records = datapipe.synth_generate(args.days, args.features, args.seed, noise=args.noise)
    schema = datapipe.synth_schema(args.features)
    datapipe.write_csv(records, args.out, schema)
    schema_path = Path(args.schema_out) if args.schema_out else Path(args.out).with_suffix(".schema")
    schema_path.write_text(datapipe.format_schema(schema))
    print(f"wrote {len(records)} days to {args.out} (schema {schema_path})")
    return 0


def cmd_train(args) -> int:
    records = _load(args)
    cfg = _config(args, args.lookback)
    features, flow = datapipe.records_to_arrays(records)
    windows = datapipe.windows_from_arrays(features, flow, args.lookback)
    split = _split(len(windows), args.seed, args.chronological)
    fold = prepare_fold((features, flow), args.lookback, split, windows)
    fitted = fit_model(args.model, fold, cfg, args.seed)
    fitted.save(args.out)
    if args.history and fitted.history:
        from flowcast.training import write_history
        write_history(fitted.history, args.history)
    Xte, yte = fold.part("test", normalized=False)
    err = relative_error(fitted.predict(Xte), yte)
    print(f"{args.model}: test relative error {100 * err:.4f}% (split {split.digest()}); saved {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    fitted = FittedModel.load(args.model_file)
    records = _load(args)
    features, flow = datapipe.records_to_arrays(records)
    windows = datapipe.windows_from_arrays(features, flow, fitted.lookback)
    split = _split(len(windows), args.seed, args.chronological)
    Xte, yte = windows.subset(split.test)
    err = relative_error(fitted.predict(Xte), yte)
    print(f"{fitted.kind}: test relative error {100 * err:.4f}% on {len(yte)} windows (split {split.digest()})")
    return 0


def cmd_compare(args) -> int:
    records = _load(args)
    report = compare_all(records, args.repeats, args.seed, _config(args, args.lookback))
    table = report.to_table()
    Path(args.out).write_text(table)
    Path(str(args.out) + ".kv").write_text(report.to_kv())
    print(table, end="")
    return 0


def cmd_sweep(args) -> int:
    records = _load(args)
    series = lookback_sweep(records, args.grid, args.model, args.seed,
                            _config(args, args.grid[0]), k=args.repeats)
    Path(args.out).write_text(format_sweep(series))
    print(format_sweep(series), end="")
    best = best_lookback(series)
    note = "" if 7 not in args.grid else (" (L=7 is the minimum)" if best == 7 else " (L=7 is not the minimum)")
    print(f"lowest error at lookback {best}{note}")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergence as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        print(f"argument error: {exc}", file=sys.stderr)
        return EXIT_ARGS


if __name__ == "__main__":
    sys.exit(main())
