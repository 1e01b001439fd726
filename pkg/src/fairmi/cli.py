"""Command line entry points: synth, train, eval, metrics.

Machine-readable output goes only to the files named by flags; diagnostics
go to stderr. Exit codes: 0 success, 2 usage errors, 1 runtime failures.
The metrics subcommand works on plain label CSVs and never touches model
code, so external partitions can be scored without a trained model.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import asdict


def _read_json(path, what):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as e:
        raise RuntimeError(f"cannot read {what} file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ValueError(f"{what} file {path} is not valid JSON: {e}") from e


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _cmd_synth(args):
    from .data import SyntheticSpec, generate_synthetic, save_csv

    raw = _read_json(args.spec, "synthetic spec")
    known = set(SyntheticSpec.__dataclass_fields__)
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ValueError(f"unknown synthetic spec keys: {', '.join(unknown)}")
    dataset = generate_synthetic(SyntheticSpec(**raw))
    save_csv(dataset, args.out)
    logging.info("wrote %d rows to %s", dataset.n, args.out)
    return 0


def _load_dataset(args):
    from .data import load_csv

    return load_csv(
        args.data,
        group_column=args.groups_col,
        label_column=args.truth_col,
        standardize_features=not args.no_standardize,
    )


def _cmd_train(args):
    import os

    from . import __version__
    from .model import save_checkpoint
    from .trainer import TrainConfig, TrainerHooks, fit, write_log_csv

    config = TrainConfig.from_dict(_read_json(args.config, "config"))
    dataset = _load_dataset(args)
    os.makedirs(args.out_dir, exist_ok=True)

    periodic = []
    hooks = None
    if args.checkpoint_every > 0:
        def snapshot(epoch, params, _every=args.checkpoint_every):
            if (epoch + 1) % _every == 0:
                path = os.path.join(args.out_dir, f"checkpoint_epoch{epoch:04d}.bin")
                save_checkpoint(params, path)
                periodic.append(path)

        hooks = TrainerHooks(on_params=snapshot)
    params, logs = fit(config, dataset, hooks)

    ckpt_path = os.path.join(args.out_dir, "checkpoint.bin")
    log_path = os.path.join(args.out_dir, "training_log.csv")
    manifest_path = os.path.join(args.out_dir, "manifest.json")
    save_checkpoint(params, ckpt_path)
    write_log_csv(logs, log_path)
    manifest = {
        "tool_version": __version__,
        "seed": config.seed,
        "config": asdict(config),
        "dataset": {"path": args.data, "sha256": _sha256(args.data), "n": dataset.n,
                    "dim": dataset.dim, "groups": dataset.n_groups},
        "artifacts": {"checkpoint": ckpt_path, "training_log": log_path,
                      "periodic_checkpoints": periodic},
    }
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    logging.info("training done: %s", manifest_path)
    return 0


def _cmd_eval(args):
    from .metrics import write_report
    from .model import load_checkpoint
    from .trainer import TrainConfig, evaluate

    config = TrainConfig.from_dict(_read_json(args.config, "config"))
    dataset = _load_dataset(args)
    params = load_checkpoint(args.checkpoint)
    report = evaluate(params, dataset, config)
    write_report(report, args.report)
    logging.info("wrote report to %s", args.report)
    return 0


def _read_label_columns(path, columns):
    """Pull label-ish columns out of a CSV; values become dense ids by first appearance."""
    import numpy as np

    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = rows[0]
    if len(set(header)) != len(header):
        raise ValueError(f"{path}: duplicate column names in header")
    out = []
    for col in columns:
        if col is None:
            out.append(None)
            continue
        if col not in header:
            raise ValueError(f"{path}: no column named {col!r}")
        i = header.index(col)
        ids, values = {}, []
        for r, row in enumerate(rows[1:], start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}: row {r} has {len(row)} cells, header has {len(header)}")
            v = row[i]
            if v.strip() == "":
                raise ValueError(f"{path}: row {r} is missing its {col!r} value")
            if v not in ids:
                ids[v] = len(ids)
            values.append(ids[v])
        out.append(np.asarray(values, dtype=np.int64))
    return out


def _cmd_metrics(args):
    from .metrics import full_report, write_report

    pred, groups, truth = _read_label_columns(
        args.pred, [args.pred_col, args.groups_col, args.truth_col]
    )
    report = full_report(pred, groups, truth, beta=args.beta)
    write_report(report, args.report)
    logging.info("wrote report to %s", args.report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairmi",
        description="Fairness-aware deep clustering: train, evaluate, and score partitions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset CSV")
    p.add_argument("--spec", required=True, help="JSON file of synthetic spec fields")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=_cmd_synth)

    for name, help_text in (("train", "train a model"), ("eval", "evaluate a checkpoint")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--data", required=True, help="dataset CSV")
        p.add_argument("--config", required=True, help="JSON training config")
        p.add_argument("--groups-col", default="group", help="group column name")
        p.add_argument("--truth-col", default=None, help="optional ground-truth column name")
        p.add_argument("--no-standardize", action="store_true", help="skip per-column standardization")
        if name == "train":
            p.add_argument("--out-dir", required=True, help="directory for checkpoint, log, manifest")
            p.add_argument("--checkpoint-every", type=int, default=0, metavar="N",
                           help="also write a checkpoint every N epochs (0 disables)")
            p.set_defaults(func=_cmd_train)
        else:
            p.add_argument("--checkpoint", required=True, help="model checkpoint path")
            p.add_argument("--report", required=True, help="output report JSON path")
            p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("metrics", help="score an externally produced partition")
    p.add_argument("--pred", required=True, help="CSV holding the predicted labels")
    p.add_argument("--pred-col", default="pred", help="predicted label column name")
    p.add_argument("--groups-col", required=True, help="group column name")
    p.add_argument("--truth-col", default=None, help="optional ground-truth column name")
    p.add_argument("--beta", type=float, default=1.0, help="quality/fairness trade-off weight")
    p.add_argument("--report", required=True, help="output report JSON path")
    p.set_defaults(func=_cmd_metrics)
    return parser


def run(argv) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse handles usage errors itself
        return int(e.code or 0)
    try:
        return args.func(args)
    except Exception as e:  # noqa: BLE001 - boundary: report and set the exit code
        print(f"error: {e}", file=sys.stderr)
        return 1


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
