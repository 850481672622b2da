"""Command-line entry point for batch experimentation.

Usage:
    entloss train     --config cfg.json --out runs/ce
    entloss eval      --config cfg.json --checkpoint runs/ce/checkpoints/epoch_0004
    entloss sweep     --config cfg.json --out runs/sweep-min
    entloss gradcheck [--out DIR] [--seed N]
    entloss report    RUN_DIR [RUN_DIR ...]

Common flags: --config PATH, --out DIR, --seed N, --set key.path=value
(repeatable; values parse as JSON, bare words as strings).

Every run directory contains: effective_config.json (re-parses to the same
config), metrics.csv, checkpoints/, summary.txt. Nothing is written outside
the chosen output directory.

Exit codes:
    0  success
    2  config error (bad document, unknown key, invalid value, usage)
    3  data error (missing/corrupt dataset files)
    4  training divergence
    5  gradcheck tolerance violation
    6  report: missing artifacts
"""

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import data as data_mod
from . import gradcheck, net, sweep, train
from .errors import (
    CheckpointError,
    DataIntegrityError,
    DivergenceError,
    IdxParseError,
    InvalidConfigError,
    InvalidInputError,
)
from .seeding import SEED_SPLIT, SEED_SUBSET, derive

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4
EXIT_TOLERANCE = 5
EXIT_ARTIFACTS = 6

LOSS_DISPLAY = {"ce": "cross-entropy", "mix": "mix-ent", "min": "min-ent"}


def _load_run_config(args) -> config_mod.RunConfig:
    doc = config_mod.load_file(args.config) if args.config else {}
    for assignment in args.set or []:
        config_mod.apply_override(doc, assignment)
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.out is not None:
        doc["out_dir"] = args.out
    return config_mod.from_dict(doc)


def _require_out(cfg: config_mod.RunConfig) -> Path:
    if not cfg.out_dir:
        raise InvalidConfigError("an output directory is required (--out or out_dir)")
    return Path(cfg.out_dir)


def _load_pair(images, labels, transpose, tag, what):
    if not images or not labels:
        raise InvalidConfigError(f"data.{what}_images and data.{what}_labels are required")
    for path in (images, labels):
        if not Path(path).exists():
            raise FileNotFoundError(f"dataset file not found: {path}")
    return data_mod.load_emnist_letters(images, labels, transpose=transpose, split_tag=tag)


def _load_train_eval(cfg: config_mod.RunConfig):
    """(train split, held-out split) per the data config.

    A positive val_fraction holds out part of the training set; otherwise
    the test set is the held-out split.
    """
    d = cfg.data
    full = _load_pair(d.train_images, d.train_labels, d.transpose,
                      data_mod.Split.TRAIN, "train")
    if d.subset_n is not None:
        full = data_mod.subsample(full, d.subset_n, derive(cfg.seed, SEED_SUBSET))
    if d.val_fraction > 0.0:
        return data_mod.split(full, d.val_fraction, derive(cfg.seed, SEED_SPLIT))
    test = _load_pair(d.test_images, d.test_labels, d.transpose,
                      data_mod.Split.TEST, "test")
    return full, test


def _backbone_name(net_cfg: net.NetConfig) -> str:
    dims = "-".join(str(d) for d in net_cfg.layer_dims)
    return f"mlp[{dims}]"


def _write_summary(out_dir: Path, net_cfg, loss_kind, records, extra=None):
    best = max(records, key=lambda r: r.accuracy)
    final = records[-1]
    lines = [
        f"backbone={_backbone_name(net_cfg)}",
        f"loss_kind={loss_kind.value}",
        f"final_epoch_accuracy={final.accuracy!r}",
        f"best_epoch_accuracy={best.accuracy!r}",
        f"best_epoch={best.epoch}",
        f"final_epoch={final.epoch}",
        f"final_mean_entropy={final.mean_entropy!r}",
    ]
    lines += extra or []
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n")
    return final, best


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    out_dir = _require_out(cfg)
    train_ds, eval_ds = _load_train_eval(cfg)  # before any output is created
    out_dir.mkdir(parents=True, exist_ok=True)
    config_mod.echo(cfg, out_dir)

    records = train.train_run(
        cfg.net, cfg.train, train_ds, eval_ds,
        metrics_path=out_dir / "metrics.csv",
        checkpoint_dir=out_dir / "checkpoints",
    )
    final, best = _write_summary(out_dir, cfg.net, cfg.train.loss_kind, records)
    print(f"loss_kind={cfg.train.loss_kind.value} "
          f"final_epoch_accuracy={final.accuracy:.3f} "
          f"best_epoch_accuracy={best.accuracy:.3f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    if not args.checkpoint:
        raise InvalidConfigError("eval needs --checkpoint DIR")
    d = cfg.data
    dataset = _load_pair(d.test_images, d.test_labels, d.transpose,
                         data_mod.Split.TEST, "test")
    bundle = train.checkpoint_load(args.checkpoint)
    accuracy, entropy = train.evaluate(bundle.net_state, dataset)
    print(f"accuracy={accuracy:.3f} mean_entropy={entropy:.6f} "
          f"epoch={bundle.epoch} backbone={_backbone_name(bundle.net_state.config)}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_run_config(args)
    out_dir = _require_out(cfg)
    train_ds, eval_ds = _load_train_eval(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    config_mod.echo(cfg, out_dir)

    sc = cfg.sweep
    base_cfg = cfg.train
    backend = sweep.TrainingBackend(cfg.net, base_cfg, train_ds, eval_ds,
                                    max_epochs=sc.max_resource_epochs)
    result = sweep.run_asha(
        sc.space, sc.num_trials, sc.max_resource_epochs, sc.reduction_factor,
        sc.min_resource_epochs, cfg.seed, backend,
        deterministic=sc.deterministic, workers=sc.workers,
        persist_dir=out_dir / "sweep",
    )
    best = sweep.best_trial(result)

    # Extended run: full training data, judged on the test set when one is
    # configured, otherwise on the sweep's validation split.
    d = cfg.data
    if d.test_images and d.test_labels:
        refine_train = _concat(train_ds, eval_ds)
        refine_eval = _load_pair(d.test_images, d.test_labels, d.transpose,
                                 data_mod.Split.TEST, "test")
    else:
        refine_train, refine_eval = train_ds, eval_ds
    refine_dir = out_dir / "refine"
    refine_dir.mkdir(parents=True, exist_ok=True)
    records = sweep.refine_best(
        best, cfg.net, base_cfg, refine_train, refine_eval, sc.refine_epochs,
        metrics_path=refine_dir / "metrics.csv",
        checkpoint_dir=refine_dir / "checkpoints",
    )
    net_cfg = sweep.trial_net_config(best, cfg.net)
    extra = [f"best_trial_id={best.trial_id}",
             f"best_trial_config={json.dumps(asdict(best))}"]
    _write_summary(refine_dir, net_cfg, base_cfg.loss_kind, records, extra=extra)
    final, best_rec = _write_summary(out_dir, net_cfg, base_cfg.loss_kind, records,
                                     extra=extra)
    print(f"best_trial={best.trial_id} loss_kind={base_cfg.loss_kind.value} "
          f"final_epoch_accuracy={final.accuracy:.3f} "
          f"best_epoch_accuracy={best_rec.accuracy:.3f}")
    return EXIT_OK


def _concat(a: data_mod.Dataset, b: data_mod.Dataset) -> data_mod.Dataset:
    return data_mod.Dataset(
        images=np.concatenate([a.images, b.images]),
        labels=np.concatenate([a.labels, b.labels]),
        num_classes=a.num_classes,
        split_tag=data_mod.Split.TRAIN,
    )


def cmd_gradcheck(args) -> int:
    perturb = 1e-3 if args.inject_bug else 0.0
    seed = args.seed if args.seed is not None else 0
    reports = gradcheck.default_suites(seed=seed, perturb=perturb)
    failing = [r for r in reports if not r.passed]
    for r in reports:
        print(r.line())
    if failing:
        payload = json.dumps([r.worst for r in failing], indent=2)
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            (out / "gradcheck_failures.json").write_text(payload + "\n")
            print(f"failing instances written to {out / 'gradcheck_failures.json'}")
        else:
            print(payload)
        return EXIT_TOLERANCE
    return EXIT_OK


def _read_summary(path: Path) -> dict:
    out = {}
    for line in path.read_text().splitlines():
        key, _, value = line.partition("=")
        out[key] = value
    return out


def cmd_report(args) -> int:
    if not args.run_dirs:
        print("report: no run directories given", file=sys.stderr)
        return EXIT_ARTIFACTS
    rows = []
    missing = []
    for run_dir in args.run_dirs:
        base = Path(run_dir)
        candidates = [base, base / "refine"]
        found = None
        for cand in candidates:
            if (cand / "summary.txt").exists() and (cand / "metrics.csv").exists():
                found = cand
                break
        if found is None:
            wanted = " or ".join(str(c / 'summary.txt') for c in candidates)
            missing.append(f"{run_dir}: missing {wanted} (+ metrics.csv)")
            continue
        summary = _read_summary(found / "summary.txt")
        records = train.read_metrics(found / "metrics.csv")
        best = max(records, key=lambda r: r.accuracy)
        rows.append((
            summary.get("backbone", "?"),
            LOSS_DISPLAY.get(summary.get("loss_kind", "?"), summary.get("loss_kind", "?")),
            records[-1].accuracy,
            best.accuracy,
        ))
    if missing:
        for line in missing:
            print(f"report: {line}", file=sys.stderr)
        return EXIT_ARTIFACTS

    headers = ("backbone", "loss function", "final-epoch accuracy", "best-epoch accuracy")
    cells = [headers] + [
        (b, l, f"{fin:.3f}", f"{bst:.3f}") for b, l, fin, bst in rows
    ]
    widths = [max(len(row[i]) for row in cells) for i in range(4)]
    for row in cells:
        print("  ".join(col.ljust(w) for col, w in zip(row, widths)).rstrip())
    return EXIT_OK


def _add_common(parser):
    parser.add_argument("--config", help="path to the JSON config document")
    parser.add_argument("--out", help="output directory (overrides out_dir)")
    parser.add_argument("--seed", type=int, help="top-level seed override")
    parser.add_argument("--set", action="append", metavar="KEY.PATH=VALUE",
                        help="override one config field (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="entloss", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one model, write metrics + checkpoint")
    _add_common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on the test set")
    _add_common(p_eval)
    p_eval.add_argument("--checkpoint", help="checkpoint directory to load")
    p_eval.set_defaults(func=cmd_eval)

    p_sweep = sub.add_parser("sweep", help="hyperparameter sweep, then extended training")
    _add_common(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_grad = sub.add_parser("gradcheck", help="finite-difference and identity suites")
    _add_common(p_grad)
    p_grad.add_argument("--inject-bug", action="store_true",
                        help=argparse.SUPPRESS)  # sensitivity check of the suites
    p_grad.set_defaults(func=cmd_gradcheck)

    p_report = sub.add_parser("report", help="tabulate runs: loss vs accuracy columns")
    p_report.add_argument("run_dirs", nargs="*", help="run directories to aggregate")
    p_report.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except InvalidConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, IdxParseError, DataIntegrityError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (CheckpointError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
