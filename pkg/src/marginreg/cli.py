"""Command-line entry point.

Subcommands: synth, train, eval, bounds, gamma, gradcheck, ablate.
Exit codes: 0 success, 1 usage error, 2 data or file-format error,
3 numeric failure.  Output files are written to a temp name and renamed
into place, so a failing run never leaves a partial file behind.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from ._io import atomic_write_text
from .bounds import build_bound_report
from .datagen import Dataset, SynthSpec, generate, read_dataset, write_dataset
from .gradcheck import DEFAULT_TOL, run_suite
from .margins import compute_gamma, gamma_from_stats
from .metrics import evaluate_model
from .model import load_checkpoint, save_checkpoint
from .trainer import ablation_csv_text, ablation_suite, parse_config, train


class NumericFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage problems; the contract here says 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _read_text(path: str) -> str:
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def _parse_synth_spec(text: str) -> SynthSpec:
    from dataclasses import fields

    types = {f.name: f.type for f in fields(SynthSpec)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"spec line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(f"spec line {lineno}: unknown key {key!r}")
        values[key] = int(val) if types[key] == "int" else float(val)
    return SynthSpec(**values)


def _load_pair(data: str, test_data: str | None):
    """Resolve --data/--test-data into (train, test) datasets."""
    if os.path.isdir(data):
        train_path = os.path.join(data, "train.mr2d")
        test_path = os.path.join(data, "test.mr2d")
    else:
        train_path = data
        if test_data is None:
            raise ValueError(
                "--data is a file; pass --test-data or point --data at a "
                "directory holding train.mr2d and test.mr2d"
            )
    if test_data is not None:
        test_path = test_data
    return (
        read_dataset(train_path, split="train"),
        read_dataset(test_path, split="test"),
    )


def _load_eval_set(data: str) -> Dataset:
    if os.path.isdir(data):
        return read_dataset(os.path.join(data, "test.mr2d"), split="test")
    return read_dataset(data, split="test")


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        atomic_write_text(out, text)


def _csv(rows, header) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join("" if c is None else str(c) for c in row))
    return "\n".join(lines) + "\n"


# -- subcommand bodies ------------------------------------------------------


def _cmd_synth(args) -> int:
    spec = _parse_synth_spec(_read_text(args.spec))
    if args.seed is not None:
        from dataclasses import replace

        spec = replace(spec, seed=args.seed)
    train_set, test_set = generate(spec)
    os.makedirs(args.out, exist_ok=True)
    paths = []
    for ds in (train_set, test_set):
        path = os.path.join(args.out, f"{ds.split}.mr2d")
        write_dataset(path, ds)
        paths.append((path, ds.n, ds.d_in, ds.num_classes))
    sys.stdout.write(_csv(paths, ["path", "n", "d_in", "num_classes"]))
    return 0


def _cmd_train(args) -> int:
    config = parse_config(_read_text(args.config))
    if args.seed is not None:
        from dataclasses import replace

        config = replace(config, seed=args.seed)
    train_set, test_set = _load_pair(args.data, args.test_data)
    result = train(config, train_set, test_set)
    if not all(np.all(np.isfinite(p)) for p in result.model.params.values()):
        raise NumericFailure("training produced non-finite parameters")
    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, "checkpoint.mr2c")
    save_checkpoint(ckpt, result.model, result.stats)
    atomic_write_text(os.path.join(args.out, "log.csv"), result.log.to_csv_text())
    final = result.log.epochs[-1]["test_acc"] if result.log.epochs else float("nan")
    sys.stdout.write(
        _csv(
            [(config.objective, config.epochs, repr(final))],
            ["objective", "epochs", "final_test_acc"],
        )
    )
    return 0


def _cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    data = _load_eval_set(args.data)
    report = evaluate_model(model, data)
    _emit(_csv(report.rows(), ["field", "class_id", "value"]), args.out_report)
    classes_csv = _csv(
        report.per_class_rows(),
        ["class_id", "accuracy", "mu_norm", "s_norm", "subset"],
    )
    if args.out_classes is not None:
        atomic_write_text(args.out_classes, classes_csv)
    return 0


def _cmd_bounds(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    data = _load_eval_set(args.data)
    report = build_bound_report(
        model,
        data,
        delta=args.delta,
        p=args.p,
        c_bar=args.cbar,
        num_draws=args.draws,
        seed=args.seed if args.seed is not None else 0,
        threads=args.threads,
    )
    _emit(_csv(report.rows(), ["field", "class_id", "value"]), args.out)
    return 0


def _cmd_gamma(args) -> int:
    if (args.alpha is None) == (args.checkpoint is None):
        raise ValueError("pass exactly one of --alpha or --checkpoint")
    if args.alpha is not None:
        try:
            alpha = np.array([float(tok) for tok in args.alpha.split(",")])
        except ValueError as exc:
            raise ValueError(f"bad --alpha list {args.alpha!r}") from exc
        gamma = compute_gamma(alpha, args.cbar)
    else:
        _, stats = load_checkpoint(args.checkpoint)
        alpha = stats.r_sq if args.use_lp else stats.alpha()
        gamma = gamma_from_stats(stats, args.cbar, use_lp=args.use_lp)
    rows = [
        (i, repr(float(a)), f"{g:.4f}") for i, (a, g) in enumerate(zip(alpha, gamma))
    ]
    _emit(_csv(rows, ["class_id", "alpha", "gamma"]), args.out)
    return 0


def _cmd_gradcheck(args) -> int:
    rows = run_suite(instances=args.instances, seed=args.seed or 0)
    out = _csv(
        [(n, i, repr(e)) for n, i, e in rows], ["loss_name", "instance_id", "rel_error"]
    )
    _emit(out, args.out)
    worst = max(e for _, _, e in rows)
    if worst >= args.tolerance:
        raise NumericFailure(
            f"gradient check failed: worst relative error {worst:g} "
            f">= tolerance {args.tolerance:g}"
        )
    return 0


def _cmd_ablate(args) -> int:
    config = parse_config(_read_text(args.config))
    train_set, test_set = _load_pair(args.data, args.test_data)
    seeds = [int(s) for s in args.seeds.split(",")]
    table = ablation_suite(
        config, train_set, test_set, seeds, threads=args.threads
    )
    _emit(ablation_csv_text(table), args.out)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="marginreg")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic train/test pair")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--test-data")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out-report")
    p.add_argument("--out-classes")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bounds", help="evaluate every bound term")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--cbar", type=float, default=2.0)
    p.add_argument("--draws", type=int, default=4096)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_bounds)

    p = sub.add_parser("gamma", help="margin vector from weights or a checkpoint")
    p.add_argument("--alpha")
    p.add_argument("--checkpoint")
    p.add_argument("--cbar", type=float, default=2.0)
    p.add_argument("--use-lp", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_gamma)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--instances", type=int, default=200)
    p.add_argument("--seed", type=int)
    p.add_argument("--tolerance", type=float, default=DEFAULT_TOL)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("ablate", help="train and evaluate every objective arm")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--test-data")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_ablate)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    try:
        return args.func(args)
    except NumericFailure as exc:
        sys.stderr.write(f"marginreg: numeric failure: {exc}\n")
        return 3
    except (ValueError, OSError) as exc:
        sys.stderr.write(f"marginreg: error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
