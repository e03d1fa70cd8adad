"""Command-line front end over the library modules.

Subcommands map one-to-one onto module operations; everything an experiment
needs travels through three file kinds: the dataset container (.c2fd), the
key=value run config, and checkpoints. Validation scenes are never stored in
containers, they are synthesized from the config at a reserved index offset,
so a container's dense real records are always training data.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import struct
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .coarsify import coarsify_record, labeled_fraction
from .container import load_dataset, save_dataset, verify_dataset
from .datagen import generate_pool
from .model import load_checkpoint, save_checkpoint
from .pipeline import (
    _SAMPLE,
    _VAL_START,
    ExperimentData,
    _rng,
    budget_sweep,
    evaluate,
    loss_csv,
    prepare_data,
    report_csv,
    self_train,
    sweep_csv,
)
from .pseudolabel import pseudolabel_record
from .records import IGNORE, SceneDataset
from .runconfig import config_echo, experiment_config, load_config, parse_config
from .sampler import SamplerState, estimate_distribution, select_next, uniform_select


class _Parser(argparse.ArgumentParser):
    """argparse, but usage errors exit 1 instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _load(args):
    values = load_config(args.config) if args.config else parse_config("")
    return values, experiment_config(values)


def _write_echo(values, out_dir: Path):
    (out_dir / "config.txt").write_text(config_echo(values), encoding="utf-8")


def _val_split(cfg):
    return list(generate_pool(cfg.scene, cfg.n_val, "real", start=_VAL_START))


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    values, cfg = _load(args)
    data = prepare_data(cfg)
    ds = SceneDataset(cfg.num_classes, data.synthetic + data.coarse + data.fine)
    save_dataset(args.out, ds)
    counts = np.zeros(cfg.num_classes, dtype=np.int64)
    ignored = 0
    for rec in ds:
        labeled = rec.label[rec.label != IGNORE]
        counts += np.bincount(labeled, minlength=cfg.num_classes)
        ignored += int(np.sum(rec.label == IGNORE))
    total = counts.sum() + ignored
    print(f"wrote {args.out}: {len(ds)} records, {cfg.num_classes} classes")
    for c in range(cfg.num_classes):
        print(f"  class {c}: {counts[c]} px ({counts[c] / total:.4f})")
    print(f"  ignore: {ignored} px ({ignored / total:.4f})")
    return 0


def cmd_verify(args) -> int:
    problems = verify_dataset(args.data)
    for p in problems:
        print(p)
    print(f"{len(problems)} violations")
    return 0 if not problems else 2


def cmd_selftrain(args) -> int:
    values, cfg = _load(args)
    ds = load_dataset(args.data)
    if ds.num_classes != cfg.num_classes:
        raise ValueError(
            f"container has {ds.num_classes} classes, config says {cfg.num_classes}"
        )
    synthetic = ds.by_domain("synthetic")
    coarse = ds.by_domain("real-coarse")
    fine = ds.by_domain("real-fine")
    cfg = replace(cfg, n_coarse=len(coarse), n_fine=len(fine),
                  n_synthetic=len(synthetic))
    data = ExperimentData(ds.num_classes, synthetic, coarse, fine, _val_split(cfg))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_echo(values, out)
    results = self_train(cfg, data)
    for res in results:
        save_checkpoint(out / f"iteration_{res.iteration}.ckpt", res.model)
        save_dataset(out / f"labels_{res.iteration}.c2fd",
                     SceneDataset(ds.num_classes, res.coarse))
        print(f"iteration {res.iteration}: miou {res.report.miou:.4f} "
              f"labeled {res.labeled_fraction:.4f}")
    (out / "report.csv").write_text(report_csv([r.report for r in results]),
                                    encoding="utf-8")
    (out / "loss.csv").write_text(loss_csv([r.loss_log for r in results]),
                                  encoding="utf-8")
    return 0


def cmd_coarsify(args) -> int:
    _, cfg = _load(args)
    ds = load_dataset(args.data)
    out_records, fractions = [], []
    i = 0
    for rec in ds:
        if rec.domain == "real-fine":
            rec = coarsify_record(rec, cfg.coarse_policy, seed=i)
            fractions.append(labeled_fraction(rec.label))
            i += 1
        out_records.append(rec)
    if not fractions:
        raise ValueError("container has no dense real records to coarsify")
    save_dataset(args.out, SceneDataset(ds.num_classes, out_records))
    print(f"coarsified {len(fractions)} records, "
          f"mean labeled fraction {float(np.mean(fractions)):.4f}")
    return 0


def cmd_pseudolabel(args) -> int:
    _, cfg = _load(args)
    ds = load_dataset(args.data)
    model = load_checkpoint(args.ckpt)
    if model.arch.num_classes != ds.num_classes:
        raise ValueError(
            f"checkpoint has {model.arch.num_classes} classes, "
            f"container has {ds.num_classes}"
        )
    out_records, fractions = [], []
    for rec in ds:
        if rec.domain == "real-coarse":
            res = pseudolabel_record(model, rec, cfg.tta)
            rec = rec.with_labels(res.label, res.provenance)
            fractions.append(res.accepted_fraction)
        out_records.append(rec)
    if not fractions:
        raise ValueError("container has no coarse records to pseudo-label")
    save_dataset(args.out, SceneDataset(ds.num_classes, out_records))
    print(f"pseudo-labeled {len(fractions)} records, "
          f"mean labeled fraction {float(np.mean(fractions)):.4f}")
    return 0


def cmd_sample(args) -> int:
    _, cfg = _load(args)
    ds = load_dataset(args.data)
    pool = SceneDataset(ds.num_classes,
                        [r for r in ds if r.domain != "synthetic"])
    if not len(pool):
        raise ValueError("container has no real records to sample from")
    chosen = []
    if args.chosen:
        chosen = Path(args.chosen).read_text(encoding="utf-8").split()
        unknown = sorted(set(chosen) - set(pool.ids()))
        if unknown:
            raise ValueError(f"chosen ids not in the pool: {', '.join(unknown)}")
    model = load_checkpoint(args.ckpt) if args.ckpt else None
    if cfg.sampling == "model-based":
        if model is None:
            raise ValueError("model-based sampling needs --ckpt")
        P = estimate_distribution(model, pool)
    else:
        P = np.ones((len(pool), ds.num_classes))
    state = SamplerState(ids=tuple(pool.ids()), P=P, chosen=chosen)
    if cfg.sampling == "model-based":
        picked = select_next(state, args.k)
    else:
        picked = uniform_select(state, args.k, _rng(cfg.seed, _SAMPLE))
    text = "\n".join(picked) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"selected {len(picked)} ids -> {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_evaluate(args) -> int:
    _, cfg = _load(args)
    model = load_checkpoint(args.ckpt)
    if args.data:
        ds = load_dataset(args.data)
        val = ds.by_domain("real-fine")
        if not val:
            raise ValueError("container has no dense real records to score")
    else:
        val = _val_split(cfg)
    report = evaluate(model, val, cfg.eval_scales)
    for c, v in enumerate(report.iou):
        print(f"class {c}: iou {v:.4f}" if np.isfinite(v) else f"class {c}: iou nan")
    print(f"miou {report.miou:.4f}")
    if args.out:
        Path(args.out).write_text(report_csv([report]), encoding="utf-8")
    return 0


def cmd_sweep(args) -> int:
    values, cfg = _load(args)
    points = [int(p) for p in args.points.split(",")]
    results = budget_sweep(cfg, points)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_echo(values, out)
    (out / "sweep.csv").write_text(sweep_csv(results), encoding="utf-8")
    for pt in results:
        print(f"{pt.method}: {pt.n_images} images, {pt.budget_hours:.1f} h, "
              f"miou {pt.miou:.4f}")
    return 0


# ---------------------------------------------------------------------------
# wiring


def _build_parser() -> _Parser:
    parser = _Parser(prog="c2f", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_, *, config=True, data=False, ckpt=False,
            out=False, out_dir=False):
        p = sub.add_parser(name, help=help_)
        if config:
            p.add_argument("--config", help="run config file (defaults if omitted)")
        if data:
            p.add_argument("--data", required=data == "required",
                           help="dataset container (.c2fd)")
        if ckpt:
            p.add_argument("--ckpt", required=ckpt == "required",
                           help="model checkpoint")
        if out:
            p.add_argument("--out", required=out == "required",
                           help="output path")
        if out_dir:
            p.add_argument("--out", required=True, help="output directory")
        p.set_defaults(func=func)
        return p

    add("generate", cmd_generate, "synthesize pools into a container",
        out="required")
    add("verify", cmd_verify, "check container invariants", config=False,
        data="required")
    add("selftrain", cmd_selftrain, "run the full self-training loop",
        data="required", out_dir=True)
    add("coarsify", cmd_coarsify, "degrade dense real records to coarse",
        data="required", out="required")
    add("pseudolabel", cmd_pseudolabel, "one pseudo-labeling pass over coarse records",
        data="required", ckpt="required", out="required")
    p = add("sample", cmd_sample, "pick the next ids to annotate",
            data="required", ckpt=True, out=True)
    p.add_argument("-k", type=int, required=True, help="how many ids to pick")
    p.add_argument("--chosen", help="file of already-chosen ids to extend")
    add("evaluate", cmd_evaluate, "score a checkpoint", data=True,
        ckpt="required", out=True)
    p = add("sweep", cmd_sweep, "budget sweep vs the fine-only baseline",
            out_dir=True)
    p.add_argument("--points", required=True,
                   help="comma-separated coarse image counts")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return int(exit_.code or 0)
    try:
        return args.func(args)
    except FloatingPointError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3
    except (ValueError, OSError, struct.error) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
