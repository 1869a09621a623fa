"""Command-line entry point: generate, train, eval, gradcheck, ablate.

Exit codes: 0 success, 1 failed check (gradcheck) or unexpected error,
2 configuration error, 3 I/O error, 4 training error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from .. import scenegen as sg
from ..data import Dataset, write_dataset
from . import plotting
from .ablation import format_table, run_ablation
from .config import ConfigError, RunConfig, load_config
from .gradcheck import run_gradcheck
from .training import CHECKPOINT, TrainingError, evaluate, load_checkpoint, train, write_report

log = logging.getLogger("ocvqa")


def _verify_answers(ds: Dataset) -> int:
    bad = 0
    for it in ds.items:
        if sg.execute(it.program, ds.scene(it.scene_id)) != ds.answers[it.answer]:
            bad += 1
    return bad


def cmd_generate(cfg: RunConfig, args) -> int:
    paths = write_dataset(cfg.data, cfg.generate_spec())
    ds = Dataset(cfg.data)
    bad = _verify_answers(ds)
    sizes = {name: len(ds.split(name)) for name in ds.splits}
    print(f"wrote {len(ds.items)} QA records over {len(ds.scene_records)} scenes to {cfg.data}")
    print("split sizes: " + ", ".join(f"{k}={v}" for k, v in sizes.items()))
    print(f"answers re-verified by interpreter: {len(ds.items) - bad}/{len(ds.items)}")
    for p in paths.values():
        log.debug("wrote %s", p)
    return 0 if bad == 0 else 1


def cmd_train(cfg: RunConfig, args) -> int:
    ds = Dataset(cfg.data)
    out = Path(cfg.out)
    start = time.perf_counter()
    model, curve = train(cfg, ds, out_dir=out, resume=args.resume)
    items = ds.split("train")[:cfg.train_items or None]
    report = evaluate(model, ds, items, cfg, "train")
    report.loss_curve = curve
    report.wall_clock = time.perf_counter() - start
    write_report(report, out, "train_report")
    plotting.loss_curve(curve, out / "train_loss.png")
    plotting.category_accuracy(report, out / "train_accuracy.png")
    print(report.table())
    print(f"checkpoint: {out / CHECKPOINT}")
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    ds = Dataset(cfg.data)
    ckpt = Path(args.checkpoint or Path(cfg.out) / CHECKPOINT)
    model, run_cfg, _, _ = load_checkpoint(ckpt, ds)
    items = ds.split(cfg.split)[:cfg.eval_items or None]
    report = evaluate(model, ds, items, run_cfg, cfg.split)
    out = Path(cfg.out)
    write_report(report, out, f"eval_{cfg.split}")
    plotting.category_accuracy(report, out / f"eval_{cfg.split}.png")
    print(report.table())
    return 0


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    start = time.perf_counter()
    report = run_gradcheck(cfg)
    elapsed = time.perf_counter() - start
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "gradcheck.jsonl", "w") as fh:
        for name, err in report.per_param.items():
            fh.write(json.dumps({"param": name, "max_rel_error": err}) + "\n")
    print(report.summary())
    print(f"elapsed: {elapsed:.1f}s")
    return 0 if report.passed else 1


def cmd_ablate(cfg: RunConfig, args) -> int:
    if not (Path(cfg.data) / "qa.jsonl").exists():
        write_dataset(cfg.data, cfg.generate_spec())
    ds = Dataset(cfg.data)
    variants = None
    if args.variant is not None:
        variants = [v for spec in args.variant for v in spec.split(",") if v]
    rows = run_ablation(cfg, ds, variants)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ablation.jsonl", "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    table = format_table(rows)
    (out / "ablation.txt").write_text(table + "\n")
    plotting.ablation_bars(rows, out / "ablation.png")
    print(table)
    return 0


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck, "ablate": cmd_ablate}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ocvqa", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory for reports, figures, checkpoints")
        p.add_argument("--data", help="dataset directory")
        p.add_argument("--split", help="dataset split to evaluate")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key (repeatable)")
        if name == "train":
            p.add_argument("--resume", help="checkpoint to continue from")
        if name == "eval":
            p.add_argument("--checkpoint", help="defaults to <out>/checkpoint.ckpt")
        if name == "ablate":
            p.add_argument("--variant", action="append",
                           help="variant name(s), comma separated; repeatable")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = {}
        for pair in args.set:
            if "=" not in pair:
                raise ConfigError(f"--set expects KEY=VALUE, got {pair!r}")
            key, value = pair.split("=", 1)
            overrides[key.strip()] = value
        for key in ("seed", "out", "data", "split"):
            if getattr(args, key) is not None:
                overrides[key] = str(getattr(args, key))
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (OSError, FileNotFoundError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
