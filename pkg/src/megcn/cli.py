"""``megcn`` command line: synth, train, eval, gradcheck, inspect.

Exit codes: 0 success, 1 verification failure, 2 numeric abort, 64 usage or
input error.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from .config import VARIANTS, ConfigError, RunConfig, apply_overrides, load_config
from .data import SkeletonFormatError, load_dataset, load_sequence, preprocess, write_synthetic_dataset
from .gradcheck import DEFAULT_STEP, DEFAULT_TOLERANCE, run_suite
from .model import activation_scores, build_variant, load_checkpoint
from .autodiff import ShapeError
from .train import NonFiniteLossError, confusion_matrix, stack_samples, stratified_split, train

EXIT_OK, EXIT_VERIFY, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2, 64

log = logging.getLogger("megcn")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def format_csv(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows([[v if isinstance(v, str) else repr(v) if isinstance(v, float) else str(v) for v in r]
                 for r in rows])
    return buf.getvalue()


def parse_csv(text: str) -> tuple[list[str], list[list[str]]]:
    rows = list(csv.reader(io.StringIO(text)))
    return rows[0], rows[1:]


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    manifest = write_synthetic_dataset(args.out, args.per_class, args.frames, args.joints, args.seed, args.classes)
    print(f"wrote {len(manifest.records)} sequences ({args.classes} classes) to {args.out}")
    return EXIT_OK


def _run_config(args, manifest) -> RunConfig:
    run = load_config(args.config) if args.config else RunConfig()
    derived = [f"num_classes={len(manifest.class_names)}", f"in_channels={manifest.channels}",
               f"preset={manifest.preset}"]
    if args.seed is not None:
        derived += [f"seed={args.seed}", f"init_seed={args.seed}"]
    return apply_overrides(run, derived + list(args.set or []))


def cmd_train(args) -> int:
    manifest, samples = load_dataset(args.data)
    run = _run_config(args, manifest)
    model = build_variant(args.variant, run.model)
    run = RunConfig(model.config, run.train)
    x, y = stack_samples(samples, run.train)
    if args.val:
        _, val_samples = load_dataset(args.val)
        vx, vy = stack_samples(val_samples, run.train)
    else:
        tr, va = stratified_split(y, run.train.val_fraction, run.train.seed)
        x, y, vx, vy = x[tr], y[tr], x[va], y[va]
    log.info("training %s on %d sequences, validating on %d", args.variant, len(x), len(vx))
    rows = train(model, x, y, vx, vy, run.train, out_dir=args.out, run=run)
    last = rows[-1]
    print(f"epoch {last['epoch']} train_loss {last['train_loss']:.4f} train_acc {last['train_acc']:.4f} "
          f"val_acc {last['val_acc']:.4f}")
    print(f"outputs in {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, run = load_checkpoint(args.checkpoint)
    manifest, samples = load_dataset(args.data)
    k = model.config.num_classes
    if len(manifest.class_names) > k:
        raise UsageError(f"dataset has {len(manifest.class_names)} classes, checkpoint predicts {k}")
    x, y = stack_samples(samples, run.train)
    cm = confusion_matrix(model, x, y, k)
    acc = float(np.trace(cm) / cm.sum())
    print(f"accuracy {acc!r} ({int(np.trace(cm))}/{int(cm.sum())})")
    if args.confusion:
        names = list(manifest.class_names) + [f"class{i}" for i in range(len(manifest.class_names), k)]
        rows = [[names[i], *cm[i].tolist()] for i in range(k)]
        Path(args.confusion).write_text(format_csv(["truth", *names], rows))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_suite(args.scale, seed=args.seed, h=args.step)
    width = max(len(r.name) for r in results)
    for r in results:
        flag = "ok" if r.max_rel_error <= args.tolerance else "FAIL"
        print(f"{r.name:<{width}}  {r.max_rel_error:.3e}  {flag}")
    worst = max(results, key=lambda r: r.max_rel_error)
    if worst.max_rel_error > args.tolerance:
        print(f"gradcheck failed: worst offender {worst.name} ({worst.max_rel_error:.3e} > {args.tolerance:g})")
        return EXIT_VERIFY
    print(f"gradcheck passed: {len(results)} groups, max relative error {worst.max_rel_error:.3e}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    model, run = load_checkpoint(args.checkpoint)
    seq = preprocess(load_sequence(args.sample), run.train.frames, run.train.center, run.train.ref_joint)
    scores = activation_scores(model, seq.data)
    n = seq.joints
    rows = [[e, stage, *scores[stage][e].tolist()] for e in range(2) for stage in ("pre", "post")]
    text = format_csv(["entity", "stage", *[f"j{i}" for i in range(n)]], rows)
    if args.scores:
        Path(args.scores).write_text(text)
    else:
        sys.stdout.write(text)
    shift = np.abs(scores["post"] - scores["pre"]).max()
    print(f"max pre/post activation shift {shift:.3e}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="megcn", description="Mutual-excitation graph convolution for two-entity skeletons.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic two-entity dataset")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--classes", type=int, default=4)
    s.add_argument("--per-class", type=int, required=True)
    s.add_argument("--frames", type=int, default=32)
    s.add_argument("--joints", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_synth)

    t = sub.add_parser("train", help="train a model variant")
    t.add_argument("--config", type=Path)
    t.add_argument("--data", required=True, type=Path)
    t.add_argument("--val", type=Path, help="validation dataset (default: stratified split of --data)")
    t.add_argument("--variant", choices=VARIANTS, default="me_gcn")
    t.add_argument("--out", required=True, type=Path)
    t.add_argument("--seed", type=int)
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True, type=Path)
    e.add_argument("--data", required=True, type=Path)
    e.add_argument("--confusion", type=Path)
    e.set_defaults(fn=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    g.add_argument("--scale", choices=["tiny"], default="tiny")
    g.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)
    g.add_argument("--step", type=float, default=DEFAULT_STEP)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=cmd_gradcheck)

    i = sub.add_parser("inspect", help="per-joint activation scores before and after fusion")
    i.add_argument("--checkpoint", required=True, type=Path)
    i.add_argument("--sample", required=True, type=Path)
    i.add_argument("--scores", type=Path)
    i.set_defaults(fn=cmd_inspect)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.fn(args)
    except NonFiniteLossError as exc:
        print(f"megcn: numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ConfigError, SkeletonFormatError, ShapeError, FileNotFoundError, ValueError) as exc:
        print(f"megcn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
