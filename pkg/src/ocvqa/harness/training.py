"""Minibatch training, evaluation and checkpointing."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import diffcore as dc
from .. import scenegen as sg
from ..data import Dataset, QARecord
from ..model import Model
from .config import ConfigError, RunConfig, from_meta

log = logging.getLogger(__name__)

CHECKPOINT = "checkpoint.ckpt"


class TrainingError(RuntimeError):
    pass


@dataclass
class MetricsReport:
    split: str
    overall: float
    correct: int
    total: int
    per_category: dict[str, float]
    counts: dict[str, list[int]]
    loss_curve: list[float] = field(default_factory=list)
    wall_clock: float = 0.0

    def records(self) -> list[dict]:
        rows = [{"split": self.split, "category": "overall", "accuracy": self.overall,
                 "correct": self.correct, "total": self.total}]
        for cat in sg.CATEGORIES:
            c, n = self.counts.get(cat, [0, 0])
            rows.append({"split": self.split, "category": cat,
                         "accuracy": self.per_category.get(cat), "correct": c, "total": n})
        for epoch, value in enumerate(self.loss_curve):
            rows.append({"split": self.split, "epoch": epoch, "loss": value})
        return rows

    def table(self) -> str:
        lines = [f"split: {self.split}", f"{'category':<22}{'correct':>9}{'total':>7}{'accuracy':>10}"]
        for cat in sg.CATEGORIES:
            c, n = self.counts.get(cat, [0, 0])
            acc = f"{c / n:.4f}" if n else "-"
            lines.append(f"{cat:<22}{c:>9}{n:>7}{acc:>10}")
        lines.append(f"{'overall':<22}{self.correct:>9}{self.total:>7}{self.overall:>10.4f}")
        if self.loss_curve:
            lines.append(f"final epoch loss: {self.loss_curve[-1]:.6f} over {len(self.loss_curve)} epochs")
        lines.append(f"wall clock: {self.wall_clock:.2f}s")
        return "\n".join(lines)


def check_compatible(cfg: RunConfig, ds: Dataset) -> None:
    if cfg.d_a != ds.d_a or cfg.d_c != ds.d_c:
        raise ConfigError(f"model expects d_a={cfg.d_a}, d_c={cfg.d_c}; dataset has d_a={ds.d_a}, d_c={ds.d_c}")
    if cfg.K * cfg.t < ds.T:
        raise ConfigError(f"K*t = {cfg.K * cfg.t} cannot hold the dataset's {ds.T} frames")


def build_model(cfg: RunConfig, ds: Dataset, reasoner=None) -> Model:
    check_compatible(cfg, ds)
    return Model(cfg.model_config(len(ds.vocab), len(ds.answers)), seed=cfg.sub_seed("init"),
                 reasoner=reasoner)


def save_checkpoint(path, model: Model, cfg: RunConfig, epoch: int, loss_curve) -> None:
    arrays = model.store.state_arrays()
    arrays["train/loss_curve"] = np.asarray(loss_curve, dtype=float)
    meta = {"epoch": str(epoch)}
    meta.update({f"config.{line.split('=', 1)[0]}": line.split("=", 1)[1] for line in cfg.to_lines()})
    dc.checkpoint.save(path, arrays, meta)


def load_checkpoint(path, ds: Dataset, reasoner=None) -> tuple[Model, RunConfig, int, list[float]]:
    arrays, meta = dc.checkpoint.load(path)
    cfg = from_meta(meta)
    model = build_model(cfg, ds, reasoner)
    try:
        model.store.load_state_arrays(arrays)
    except (KeyError, dc.DimensionError) as exc:
        raise ConfigError(f"checkpoint {path} does not fit dataset/model: {exc}") from None
    return model, cfg, int(meta.get("epoch", 0)), list(arrays.get("train/loss_curve", np.zeros(0)))


def _chunks(items, size):
    for i in range(0, len(items), size):
        yield i // size, items[i:i + size]


def train(cfg: RunConfig, ds: Dataset, out_dir=None, resume=None, reasoner=None,
          items: list[QARecord] | None = None, on_epoch=None) -> tuple[Model, list[float]]:
    """Train with Adam; one checkpoint per epoch when ``out_dir`` is given.

    The item order of epoch e depends only on (seed, e), so resuming from a
    checkpoint replays the uninterrupted run exactly.  ``on_epoch(epoch, model,
    curve)`` runs after every epoch; a true return value stops training early.
    """
    if items is None:
        items = ds.split("train")
        if cfg.train_items:
            items = items[:cfg.train_items]
    if not items:
        raise TrainingError("training split is empty")
    start, curve = 0, []
    if resume is not None:
        model, _, start, curve = load_checkpoint(resume, ds, reasoner)
    else:
        model = build_model(cfg, ds, reasoner)
    tp = cfg.track_params()
    shuffle_seed = cfg.sub_seed("shuffle")
    for epoch in range(start, cfg.epochs):
        order = np.random.default_rng([shuffle_seed, epoch]).permutation(len(items))
        shuffled = [items[i] for i in order]
        total = 0.0
        for b, chunk in _chunks(shuffled, cfg.batch_size):
            batch = ds.batch(chunk, cfg.K, cfg.t, cfg.N, tp)
            value = model.loss(batch)
            if not np.isfinite(value.data):
                raise TrainingError(
                    f"non-finite loss {float(value.data)} at epoch {epoch} batch {b} "
                    f"(item ids {[it.id for it in chunk][:8]}...)")
            grads = dc.backward(value, model.store)
            dc.adam_step(model.store, grads, cfg.lr, (cfg.beta1, cfg.beta2), cfg.eps)
            total += float(value.data) * len(chunk)
        curve.append(total / len(items))
        log.info("epoch %d loss %.6f", epoch, curve[-1])
        if out_dir is not None:
            save_checkpoint(Path(out_dir) / CHECKPOINT, model, cfg, epoch + 1, curve)
        if on_epoch is not None and on_epoch(epoch, model, curve):
            break
    return model, curve


def evaluate(model: Model, ds: Dataset, items: list[QARecord], cfg: RunConfig, split: str = "test",
             batch_size: int | None = None) -> MetricsReport:
    """Accuracy overall and per category; items are visited in id order."""
    start = time.perf_counter()
    items = sorted(items, key=lambda it: it.id)
    counts = {cat: [0, 0] for cat in sg.CATEGORIES}
    tp = cfg.track_params()
    for _, chunk in _chunks(items, batch_size or cfg.batch_size):
        batch = ds.batch(chunk, cfg.K, cfg.t, cfg.N, tp)
        pred = model.predict(batch)
        for it, p in zip(chunk, pred):
            counts[it.category][0] += int(p == it.answer)
            counts[it.category][1] += 1
    correct = sum(c for c, _ in counts.values())
    total = sum(n for _, n in counts.values())
    per_cat = {cat: c / n for cat, (c, n) in counts.items() if n}
    return MetricsReport(split, correct / total if total else 0.0, correct, total, per_cat, counts,
                         wall_clock=time.perf_counter() - start)


def write_report(report: MetricsReport, out_dir, stem: str) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"records": out / f"{stem}.jsonl", "summary": out / f"{stem}.txt"}
    with open(paths["records"], "w") as fh:
        for row in report.records():
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    paths["summary"].write_text(report.table() + "\n")
    return paths


def report_dict(report: MetricsReport) -> dict:
    return asdict(report)
