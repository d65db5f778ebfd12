"""Command-line entry point: ``ran {train,eval,compare,gradcheck,run-suite}``.

Exit codes: 0 success, 1 gradient check failure, 2 usage error, 3 data or
input file error, 4 numerical abort during training, 5 checkpoint does not
match the configuration or data it is used with.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from . import checkpoint as ck
from . import data as du
from . import encoder as enc
from . import gradcheck as gc
from . import model as rm
from . import resnet
from . import stats
from . import train as tr
from ._io import atomic_write_text
from .errors import CheckpointVersionError, ConfigMismatchError, ContractError, NumericalError, ParseError

EXIT_OK, EXIT_GRADCHECK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_MISMATCH = 0, 1, 2, 3, 4, 5

METRICS_COLUMNS = ("epoch", "train_loss", "test_accuracy")
RESULTS_COLUMNS = ("dataset", "config", "accuracy")

log = logging.getLogger("ran")


class _DataFailure(Exception):
    pass


class _UsageFailure(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration resolution


def _fusion_flag(value: str) -> str:
    return "gated_highway" if value in ("highway", "gated_highway") else value


def resolve_configs(args, num_classes: int) -> tuple[rm.RanConfig, tr.TrainConfig]:
    """Defaults, then the ``--config`` JSON file, then explicit flags."""
    file_cfg = _read_json(args.config) if getattr(args, "config", None) else {}
    ran = file_cfg.get("ran", {})
    encoder = dict(ran.get("encoder", {}))
    branch = dict(ran.get("branch", {}))
    fusion = ran.get("fusion", "concat")
    train = dict(file_cfg.get("train", {}))

    if args.depth is not None:
        encoder["T"] = args.depth
    if args.d is not None:
        encoder["d"] = args.d
    if args.heads is not None:
        encoder["k"] = args.heads
    if args.feature_maps is not None:
        branch["feature_maps"] = args.feature_maps
        kw = branch.get("kernel_widths")
        if kw is not None and len(kw) != len(args.feature_maps):
            branch["kernel_widths"] = None
    if args.kernel_widths is not None:
        branch["kernel_widths"] = args.kernel_widths
    if args.norm is not None:
        branch["norm"] = args.norm
    if args.fusion is not None:
        fusion = _fusion_flag(args.fusion)
    for flag, key in (
        ("seed", "seed"),
        ("epochs", "epochs"),
        ("batch_size", "batch_size"),
        ("lr", "learning_rate"),
    ):
        if getattr(args, flag) is not None:
            train[key] = getattr(args, flag)

    for key in ("feature_maps", "kernel_widths"):
        if branch.get(key) is not None:
            branch[key] = tuple(branch[key])
    try:
        ran_cfg = rm.RanConfig(
            encoder=enc.EncoderConfig(**encoder),
            branch=resnet.BranchConfig(**branch),
            num_classes=max(2, num_classes),
            fusion=_fusion_flag(fusion),
        )
        train_cfg = tr.TrainConfig(**train)
    except (TypeError, ContractError) as exc:
        raise _UsageFailure(str(exc)) from None
    return ran_cfg, train_cfg


def config_label(cfg: rm.RanConfig) -> str:
    fm = "-".join(str(c) for c in cfg.branch.feature_maps)
    return f"T{cfg.encoder.T}-fm{fm}-{cfg.fusion}"


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise _DataFailure(f"cannot read config {path}: {exc}") from None


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def format_metrics_csv(history) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_COLUMNS)
    for m in history:
        w.writerow([m.epoch, repr(m.train_loss), repr(m.test_accuracy)])
    return buf.getvalue()


def append_result(path, dataset: str, config: str, accuracy: float) -> None:
    path = Path(path)
    old = path.read_text() if path.exists() else ",".join(RESULTS_COLUMNS) + "\n"
    if old and not old.endswith("\n"):
        old += "\n"
    atomic_write_text(path, old + f"{dataset},{config},{accuracy:.6f}\n")


# ---------------------------------------------------------------------------
# commands


def train_one(train_file, test_file, name, out_dir, args) -> dict:
    """Train on one dataset and write checkpoints, manifest and metrics into ``out_dir``."""
    dataset = du.build_split(train_file, test_file, name=name)
    ran_cfg, train_cfg = resolve_configs(args, dataset.num_classes)
    started = _now()
    result = tr.fit(dataset, ran_cfg, train_cfg)
    finished = _now()

    out_dir = Path(out_dir)
    echo = {
        "dataset": dataset.name,
        "label_map": dataset.label_map,
        "ran_config": ran_cfg.to_dict(),
        "length": dataset.length,
    }
    manifest = {
        "format": "ran-manifest/1",
        "package_version": __version__,
        "dataset": {
            "name": dataset.name,
            "train_file": str(train_file),
            "test_file": str(test_file),
            "train_sha256": _sha256(train_file),
            "test_sha256": _sha256(test_file),
            "length": dataset.length,
            "num_classes": dataset.num_classes,
            "label_map": dataset.label_map,
        },
        "ran_config": ran_cfg.to_dict(),
        "train_config": train_cfg.to_dict(),
        "seed": train_cfg.seed,
        "rng": "numpy PCG64",
        "started_at": started,
        "finished_at": finished,
        "metrics": [
            {"epoch": m.epoch, "train_loss": m.train_loss, "test_accuracy": m.test_accuracy} for m in result.history
        ],
        "best_epoch": result.best_epoch,
        "best_accuracy": result.best_accuracy,
        "final_accuracy": result.final_accuracy,
        "selection": "best epoch chosen on test accuracy (optimistic selection)",
        "checkpoints": {"best": "best.ckpt", "final": "final.ckpt"},
    }
    ck.save_checkpoint(result.best_params, out_dir / "best.ckpt", {**echo, "epoch": result.best_epoch, "kind": "best"})
    ck.save_checkpoint(
        result.final_params, out_dir / "final.ckpt", {**echo, "epoch": result.history[-1].epoch, "kind": "final"}
    )
    atomic_write_text(out_dir / "metrics.csv", format_metrics_csv(result.history))
    atomic_write_text(out_dir / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    return manifest


def cmd_train(args) -> int:
    name = args.name or Path(args.train_file).name.split("_")[0]
    out = args.out or os.path.join("runs", name)
    manifest = train_one(args.train_file, args.test_file, name, out, args)
    print(
        f"{name}: best test accuracy {manifest['best_accuracy']:.6f} at epoch {manifest['best_epoch']} "
        f"(optimistic selection); final {manifest['final_accuracy']:.6f}"
    )
    print(f"wrote {out}")
    return EXIT_OK


def _check_params_match(cfg: rm.RanConfig, params) -> None:
    expected = {k: p.shape for k, p in rm.init_params(cfg, 0).items()}
    got = {k: p.shape for k, p in params.items()}
    if expected.keys() != got.keys():
        missing = sorted(expected.keys() - got.keys())
        extra = sorted(got.keys() - expected.keys())
        raise ConfigMismatchError(f"parameter names differ from config (missing {missing[:3]}, unexpected {extra[:3]})")
    for k, shape in expected.items():
        if got[k] != shape:
            raise ConfigMismatchError(f"{k}: checkpoint shape {got[k]} but config needs {shape}")


def cmd_eval(args) -> int:
    try:
        ckpt = ck.read_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise _DataFailure(f"checkpoint not found: {args.checkpoint}") from None
    if "ran_config" not in ckpt.config:
        raise ConfigMismatchError("checkpoint carries no model configuration")
    try:
        cfg = rm.RanConfig.from_dict(ckpt.config["ran_config"])
    except (TypeError, ContractError) as exc:
        raise ConfigMismatchError(f"invalid configuration in checkpoint: {exc}") from None
    if args.config:
        ran_override = _read_json(args.config).get("ran")
        if ran_override is not None:
            try:
                want = rm.RanConfig.from_dict({**ran_override, "num_classes": cfg.num_classes})
            except (TypeError, ContractError) as exc:
                raise ConfigMismatchError(f"invalid --config: {exc}") from None
            if want != cfg:
                raise ConfigMismatchError(f"--config describes {config_label(want)}, checkpoint is {config_label(cfg)}")
    _check_params_match(cfg, ckpt.params)
    label_map = ckpt.config.get("label_map")
    if not label_map:
        raise ConfigMismatchError("checkpoint carries no label map")
    series = du.parse_ucr_file(args.test_file)
    try:
        test = du.apply_label_map(series, label_map)
    except ContractError as exc:
        raise ConfigMismatchError(str(exc)) from None
    acc = tr.evaluate_accuracy(ckpt.params, test, cfg)
    print(f"{acc:.6f}")
    if args.results:
        name = args.name or ckpt.config.get("dataset") or Path(args.test_file).name.split("_")[0]
        append_result(args.results, name, config_label(cfg), acc)
    return EXIT_OK


def cmd_compare(args) -> int:
    table = stats.read_results_csv(args.results)
    for item in args.best_of or ():
        name, _, cols = item.partition("=")
        models = [c.strip() for c in cols.split(",") if c.strip()]
        if not name or not models:
            raise _UsageFailure(f"--best-of expects NAME=col1,col2,..., got {item!r}")
        try:
            table = table.with_best_of(name, models)
        except KeyError as exc:
            raise _DataFailure(str(exc)) from None
    if args.require:
        try:
            table = table.rows_where_present(args.require)
        except KeyError as exc:
            raise _DataFailure(str(exc)) from None
    matrix = stats.pairwise_matrix(table)
    text = stats.format_matrix_csv(table.models, matrix)
    # default baseline: the first model column, where prior state-of-the-art results conventionally sit
    baselines = args.baseline or table.models[:1]
    missing = [b for b in baselines if b not in table.models]
    if missing:
        raise _DataFailure(f"unknown baseline column(s): {', '.join(missing)}")
    base_label = "+".join(baselines)
    summary_lines = ["model,baseline,wins,ties,losses"]
    for model in table.models:
        if model in baselines:
            continue
        s = stats.summarize(table, model, baselines)
        summary_lines.append(f"{model},{base_label},{s.sota_wins},{s.sota_ties},{s.losses}")
    summary = "\n".join(summary_lines) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
        sys.stdout.write(summary)
    else:
        sys.stdout.write(text)
        sys.stderr.write(summary)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = gc.run_suite(seed=args.seed)
    failed = []
    for name, err in results.items():
        ok = err < gc.THRESHOLD
        print(f"{'ok  ' if ok else 'FAIL'} {name:32s} max rel err {err:.3e}")
        if not ok:
            failed.append(name)
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}")
        return EXIT_GRADCHECK
    print(f"all {len(results)} checks below {gc.THRESHOLD:g}")
    return EXIT_OK


def _suite_worker(job):
    name, train_file, test_file, out_dir, args = job
    logging.basicConfig(level=logging.WARNING)
    manifest = train_one(train_file, test_file, name, out_dir, args)
    return name, manifest["best_accuracy"], config_label(rm.RanConfig.from_dict(manifest["ran_config"]))


def cmd_run_suite(args) -> int:
    jobs = []
    for name in args.datasets:
        try:
            train_file, test_file = du.find_split_files(args.data_dir, name)
        except FileNotFoundError as exc:
            raise _DataFailure(str(exc)) from None
        jobs.append((name, train_file, test_file, Path(args.out) / name, args))
    workers = max(1, min(len(jobs), int(os.environ.get("RAN_THREADS", "1"))))
    if workers == 1:
        done = [_suite_worker(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(_suite_worker, jobs))
    results_path = Path(args.out) / "results.csv"
    for name, acc, label in done:
        append_result(results_path, name, label, acc)
        print(f"{name},{label},{acc:.6f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _int_list(text: str) -> tuple[int, ...]:
    try:
        values = resnet.feature_maps_from_string(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError(f"expected positive integers, got {text!r}")
    return values


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be positive: {v}")
    return v


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model and training (override --config)")
    g.add_argument("--config", help="JSON file with 'ran' and/or 'train' sections")
    g.add_argument("--seed", type=int)
    g.add_argument("--epochs", type=_positive_int)
    g.add_argument("--batch-size", type=_positive_int)
    g.add_argument("--lr", type=float, help="Adam learning rate")
    g.add_argument("--depth", type=_positive_int, help="weight-tied encoder steps T (1 or 4 in the published table)")
    g.add_argument("--d", type=_positive_int, help="encoder width")
    g.add_argument("--heads", type=_positive_int, help="attention heads k")
    g.add_argument("--feature-maps", type=_int_list, help="e.g. 128,128,64,64 or 64,64,128,128")
    g.add_argument("--kernel-widths", type=_int_list, help="one width per residual block")
    g.add_argument("--fusion", choices=("concat", "highway"))
    g.add_argument("--norm", choices=resnet.NORMS, help="normalization inside residual blocks (default instance)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ran", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch metrics to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on one UCR train/test pair")
    p.add_argument("--train-file", required=True)
    p.add_argument("--test-file", required=True)
    p.add_argument("--name", help="dataset name (default: from the train file name)")
    p.add_argument("--out", help="output directory (default: runs/<name>)")
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a test file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test-file", required=True)
    p.add_argument("--config", help="optional JSON config that must agree with the checkpoint")
    p.add_argument("--results", help="results CSV to append (dataset,config,accuracy)")
    p.add_argument("--name", help="dataset name for the results row")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="pairwise Wilcoxon signed-rank matrix over a results table")
    p.add_argument("--results", required=True, help="CSV: dataset column then one column per model")
    p.add_argument("--out", help="write the p-value matrix here instead of stdout")
    p.add_argument("--best-of", action="append", metavar="NAME=COL,COL,...", help="add a per-dataset max column")
    p.add_argument("--require", metavar="MODEL", help="keep only datasets where MODEL has a result")
    p.add_argument("--baseline", action="append", help="baseline column(s) for the win/tie summary (default: first column)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gradcheck", help="finite-difference check of every backward rule")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("run-suite", help="train several datasets (parallelism capped by RAN_THREADS)")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--datasets", required=True, type=lambda s: [x for x in s.split(",") if x])
    p.add_argument("--out", default="runs")
    _add_model_flags(p)
    p.set_defaults(func=cmd_run_suite)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except _UsageFailure as exc:
        parser.print_usage(sys.stderr)
        print(f"ran: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigMismatchError, CheckpointVersionError) as exc:
        print(f"ran: checkpoint mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except NumericalError as exc:
        print(f"ran: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (_DataFailure, ParseError, ContractError, FileNotFoundError, OSError) as exc:
        print(f"ran: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
