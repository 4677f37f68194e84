"""Command-line entry point.

Subcommands: ``synth``, ``prepare``, ``train``, ``front``, ``hv``, ``recall``.
Exit codes: 1 usage, 2 data, 3 training, 4 evaluation.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from pathlib import Path

from . import data as data_mod
from .checkpoint import load_checkpoint, save_checkpoint
from .evaluation import (
    REFERENCE_POINTS,
    Front,
    ReferencePoint,
    hypervolume_2d,
    metrics_json,
    nadir_point,
    nadir_reference,
    recall_at_k,
    sweep_front,
    worst_point,
)
from .exceptions import (
    BoundaryOutOfRange,
    CorruptCheckpoint,
    EmptyFront,
    EmptyInput,
    EmptyTestSet,
    InvalidConfig,
    InvalidGrid,
    InvalidSpec,
    MalformedRecord,
    NonFiniteLoss,
    VersionMismatch,
)
from .model import ModelConfig, init_params
from .sampling import PreferenceVector, preference_grid
from .training import TrainConfig, train

logger = logging.getLogger("paretorec")

EXIT_USAGE, EXIT_DATA, EXIT_TRAIN, EXIT_EVAL = 1, 2, 3, 4
WEEK = 7 * 86400


class CommandError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt_table(rows: dict) -> str:
    width = max(len(k) for k in rows)
    return "\n".join(f"{k:<{width}}  {v:>12,}" for k, v in rows.items())


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _read_dataset(path, code=EXIT_DATA):
    try:
        return data_mod.load_dataset(path)
    except FileNotFoundError as exc:
        raise CommandError(code, f"dataset not found: {path}") from exc
    except (ValueError, KeyError) as exc:
        raise CommandError(code, f"cannot read dataset {path}: {exc}") from exc


def _read_checkpoint(path, code):
    try:
        return load_checkpoint(path)
    except FileNotFoundError as exc:
        raise CommandError(code, f"checkpoint not found: {path}") from exc
    except (CorruptCheckpoint, VersionMismatch) as exc:
        raise CommandError(code, f"cannot read checkpoint {path}: {exc}") from exc


def _reference(args):
    if args.ref is not None:
        return ReferencePoint(*args.ref)
    if getattr(args, "dataset_ref", None):
        return REFERENCE_POINTS[args.dataset_ref]
    return None


# ---------------------------------------------------------------- commands


def cmd_synth(args):
    spec = data_mod.SyntheticSpec(
        n_sessions=args.sessions, n_items=args.items, conflict=args.conflict, seed=args.seed
    )
    try:
        events = data_mod.synthetic_events(spec)
    except InvalidSpec as exc:
        raise CommandError(EXIT_DATA, str(exc)) from exc
    if args.format == "csv":
        text = data_mod.events_to_csv(events)
    else:
        text = "".join(
            json.dumps({"session_id": e.session_id, "item_id": e.item_id, "timestamp": e.timestamp, "action": e.action})
            + "\n"
            for e in events
        )
    out = Path(args.out) / f"events.{args.format}"
    _write_text(out, text)
    print(f"wrote {len(events)} events to {out}")


def cmd_prepare(args):
    path = Path(args.input)
    if not path.is_file():
        raise CommandError(EXIT_DATA, f"input not found: {path}")
    try:
        with open(path, "rb") as fh:
            events = data_mod.parse_events(fh, args.format)
        sessions, diag = data_mod.build_labeled_sessions(events)
        ds = data_mod.filter_dataset(data_mod.index_sessions(sessions), args.min_support, args.min_clicks)
        if not ds.sessions:
            raise CommandError(EXIT_DATA, "no sessions survive filtering")
        boundary = args.boundary
        if boundary is None:
            boundary = max(s.start for s in ds.sessions) - WEEK + 1
        train_ds, test_ds = data_mod.temporal_split(ds, boundary, args.min_clicks)
    except (MalformedRecord, EmptyInput, BoundaryOutOfRange) as exc:
        raise CommandError(EXIT_DATA, str(exc)) from exc

    out = Path(args.out)
    summary = {
        "boundary": boundary,
        "dangling_orders": diag["dangling_orders"],
        "train": train_ds.stats(),
        "test": test_ds.stats(),
    }
    _write_text(out / "train.json", data_mod.dataset_to_json(train_ds))
    _write_text(out / "test.json", data_mod.dataset_to_json(test_ds))
    _write_text(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for split in ("train", "test"):
        print(f"[{split}]")
        print(_fmt_table({k.replace("_", " "): v for k, v in summary[split].items()}))
    print(f"boundary {boundary}; dropped {diag['dangling_orders']} order(s) of unclicked items")


def _train_one(args, train_ds, lam, out: Path):
    model_cfg = ModelConfig(
        vocab_size=train_ds.n_items,
        d_model=args.d_model,
        n_layers=args.layers,
        n_heads=args.heads,
        max_len=args.max_len,
        seed=args.seed,
    )
    cfg = TrainConfig(
        batch_size=args.batch,
        learning_rate=args.lr,
        epochs=args.epochs,
        lam=lam,
        beta=tuple(args.beta),
        negatives=args.negatives,
        seed=args.seed,
        g=args.g,
    )
    params = init_params(model_cfg)
    out.mkdir(parents=True, exist_ok=True)

    def report(s):
        print(f"epoch {s.epoch}: total={s.mean_total:.6f} l_c={s.mean_l_c:.6f} l_o={s.mean_l_o:.6f} steps={s.steps}")

    with open(out / "train_log.jsonl", "w", encoding="utf-8", newline="\n") as log:
        opt, _ = train(train_ds, params, cfg, log_file=log, callback=report)
    save_checkpoint(params, opt, cfg, out / "checkpoint.bin")
    return params


def cmd_train(args):
    train_ds = _read_dataset(args.train)
    out = Path(args.out)
    try:
        if not args.lambda_sweep:
            _train_one(args, train_ds, args.lam, out)
            print(f"checkpoint written to {out / 'checkpoint.bin'}")
            return
        lambdas = [float(v) for v in args.lambda_sweep.split(",") if v.strip()]
        runs = {lam: _train_one(args, train_ds, lam, out / f"lambda_{lam:g}") for lam in lambdas}
    except NonFiniteLoss as exc:
        raise CommandError(EXIT_TRAIN, f"training aborted at step {exc.step}: {exc}") from exc
    except (InvalidConfig, ValueError) as exc:
        raise CommandError(EXIT_USAGE, str(exc)) from exc

    if args.test is None:
        print("no --test dataset given; skipping the hypervolume summary")
        return
    test_ds = _read_dataset(args.test, EXIT_EVAL)
    try:
        grid = preference_grid(args.grid, args.clamp)
        fronts = {lam: sweep_front(p, test_ds, grid, args.negatives, args.seed) for lam, p in runs.items()}
        ref = _reference(args) or worst_point([pt for f in fronts.values() for pt in f.coordinates()])
        rows = ["lambda,hv,spread"]
        for lam, f in fronts.items():
            _write_text(out / f"lambda_{lam:g}" / "front.csv", f.to_csv())
            rows.append(f"{lam:g},{hypervolume_2d(f.coordinates(), ref):.17g},{f.spread():.17g}")
    except (EmptyTestSet, EmptyFront, InvalidGrid) as exc:
        raise CommandError(EXIT_EVAL, str(exc)) from exc
    _write_text(out / "hv_summary.csv", "\n".join(rows) + "\n")
    print(f"reference point {ref.as_list()}")
    print("\n".join(rows))


def cmd_front(args):
    params, _, _ = _read_checkpoint(args.checkpoint, EXIT_EVAL)
    test_ds = _read_dataset(args.test, EXIT_EVAL)
    try:
        grid = preference_grid(args.grid, args.clamp)
        front = sweep_front(params, test_ds, grid, args.negatives, args.seed)
        ref = _reference(args) or nadir_reference(front.coordinates())
        recall = recall_at_k(params, test_ds, PreferenceVector(1.0, 0.0), args.k)
        metrics = metrics_json(front, ref, recall, args.k)
    except (EmptyTestSet, EmptyFront, InvalidGrid, ValueError, IndexError) as exc:
        raise CommandError(EXIT_EVAL, str(exc)) from exc
    out = Path(args.out)
    _write_text(out / "front.csv", front.to_csv())
    _write_text(out / "metrics.json", metrics)
    print(metrics, end="")


def cmd_hv(args):
    try:
        front = Front.from_csv(Path(args.front).read_text(encoding="utf-8"))
        ref = _reference(args) or nadir_reference(front.coordinates())
        payload = {
            "hv": hypervolume_2d(front.coordinates(), ref),
            "reference": ref.as_list(),
            "nadir": list(nadir_point(front.coordinates())),
        }
    except FileNotFoundError as exc:
        raise CommandError(EXIT_EVAL, f"front file not found: {args.front}") from exc
    except (ValueError, EmptyFront) as exc:
        raise CommandError(EXIT_EVAL, str(exc)) from exc
    print(json.dumps(payload, indent=2, sort_keys=True))


def cmd_recall(args):
    params, _, _ = _read_checkpoint(args.checkpoint, EXIT_EVAL)
    test_ds = _read_dataset(args.test, EXIT_EVAL)
    try:
        pi = PreferenceVector.from_pi_o(args.pi_o)
        value = recall_at_k(params, test_ds, pi, args.k)
    except (EmptyTestSet, ValueError, IndexError) as exc:
        raise CommandError(EXIT_EVAL, str(exc)) from exc
    print(json.dumps({f"recall_at_{args.k}": value, "pi": list(pi.as_tuple())}, sort_keys=True))


# ------------------------------------------------------------------ parser


def _add_eval_flags(p, with_grid=True):
    if with_grid:
        p.add_argument("--grid", type=int, default=26, help="number of preference grid points")
        p.add_argument("--clamp", type=float, default=1e-3, help="distance of the grid endpoints from 0 and 1")
    p.add_argument("--ref", type=float, nargs=2, metavar=("X", "Y"), default=None,
                   help="hypervolume reference point (click loss, order loss); nadir of the front if omitted")
    p.add_argument("--dataset-ref", choices=sorted(REFERENCE_POINTS), default=None,
                   help="use a published benchmark reference point instead of --ref")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="paretorec", description=__doc__, formatter_class=fmt)
    parser.add_argument("--config", default=None, help="JSON file of flag defaults; explicit flags win")
    parser.add_argument("--threads", type=int, default=None, help="cap on BLAS/OpenMP worker threads")
    parser.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic click/order conflict event log", formatter_class=fmt)
    p.add_argument("--sessions", type=int, default=10000, help="number of sessions")
    p.add_argument("--items", type=int, default=200, help="number of items")
    p.add_argument("--conflict", type=float, default=1.0, help="click/order conflict strength in [0, 1]")
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv", help="event file format")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--out", default="out", help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="build filtered train/test datasets from an event log", formatter_class=fmt)
    p.add_argument("--input", required=True, help="event log path")
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv", help="event log format")
    p.add_argument("--boundary", type=int, default=None,
                   help="split timestamp; sessions starting before it train (default: last week tests)")
    p.add_argument("--min-support", type=int, default=5, help="minimum clicks per item")
    p.add_argument("--min-clicks", type=int, default=2, help="minimum clicks per session")
    p.add_argument("--out", default="out", help="output directory")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a preference-conditioned model", formatter_class=fmt)
    p.add_argument("--train", default="out/train.json", help="prepared training dataset")
    p.add_argument("--test", default=None, help="test dataset, used by --lambda-sweep for the HV summary")
    p.add_argument("--epochs", type=int, default=20, help="training epochs")
    p.add_argument("--batch", type=int, default=256, help="sessions per optimizer step")
    p.add_argument("--lr", type=float, default=1e-4, help="Adam learning rate")
    p.add_argument("--lambda", dest="lam", type=float, default=0.5, help="non-uniformity penalty weight")
    p.add_argument("--lambda-sweep", default=None, help="comma-separated lambdas trained one after another")
    p.add_argument("--beta", type=float, nargs=2, metavar=("A", "B"), default=[0.5, 0.5],
                   help="Dirichlet concentration of training preferences")
    p.add_argument("--g", choices=("identity", "softmax"), default="softmax", help="map applied before the penalty")
    p.add_argument("--negatives", type=int, default=128, help="sampled negatives per batch")
    p.add_argument("--d-model", type=int, default=64, help="embedding width")
    p.add_argument("--layers", type=int, default=3, help="transformer layers")
    p.add_argument("--heads", type=int, default=2, help="attention heads")
    p.add_argument("--max-len", type=int, default=50, help="longest prefix fed to the model")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--out", default="out/model", help="output directory")
    _add_eval_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("front", help="sweep preferences and write front CSV plus metrics JSON", formatter_class=fmt)
    p.add_argument("--checkpoint", default="out/model/checkpoint.bin", help="trained checkpoint")
    p.add_argument("--test", default="out/test.json", help="test dataset")
    p.add_argument("--negatives", type=int, default=128, help="sampled negatives for the click loss")
    p.add_argument("--k", type=int, default=20, help="cutoff for Recall@k at pi=[1,0]")
    p.add_argument("--seed", type=int, default=0, help="seed of the evaluation negatives")
    p.add_argument("--out", default="out/front", help="output directory")
    _add_eval_flags(p)
    p.set_defaults(func=cmd_front)

    p = sub.add_parser("hv", help="hypervolume of a front CSV", formatter_class=fmt)
    p.add_argument("--front", required=True, help="front CSV with header pi_o,l_c,l_o")
    _add_eval_flags(p, with_grid=False)
    p.set_defaults(func=cmd_hv)

    p = sub.add_parser("recall", help="Recall@k of a checkpoint", formatter_class=fmt)
    p.add_argument("--checkpoint", default="out/model/checkpoint.bin", help="trained checkpoint")
    p.add_argument("--test", default="out/test.json", help="test dataset")
    p.add_argument("--k", type=int, default=20, help="ranking cutoff")
    p.add_argument("--pi-o", type=float, default=0.0, help="order weight of the preference")
    p.set_defaults(func=cmd_recall)
    return parser


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    try:
        with open(args.config, encoding="utf-8") as fh:
            config = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        parser.exit(EXIT_USAGE, f"paretorec: cannot read config {args.config}: {exc}\n")
    if not isinstance(config, dict):
        parser.exit(EXIT_USAGE, "paretorec: config must be a JSON object\n")
    # config values become defaults of the chosen subcommand, then flags re-parse on top
    sub_action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    sub_action.choices[args.command].set_defaults(**{k.replace("-", "_"): v for k, v in config.items()})
    return parser.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    limits = contextlib.nullcontext()
    if args.threads is not None:
        from threadpoolctl import threadpool_limits

        limits = threadpool_limits(args.threads)
    try:
        with limits:
            args.func(args)
    except CommandError as exc:
        print(f"paretorec: error: {exc}", file=sys.stderr)
        return exc.code
    return 0


if __name__ == "__main__":
    sys.exit(main())
