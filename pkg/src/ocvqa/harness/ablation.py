"""Ablation sweep: train each variant on shared data over several init seeds."""
from __future__ import annotations

import logging

import numpy as np

from ..data import Dataset
from .config import ConfigError, RunConfig
from .training import evaluate, train

log = logging.getLogger(__name__)

VARIANTS = {
    "default": {},
    "no_gating": {"no_gating": True},
    "no_temporal_attention": {"no_temporal_attention": True},
    "no_bilstm": {"no_bilstm": True},
    "no_context": {"no_context": True},
}


def variant_overrides(name: str) -> dict:
    if name in VARIANTS:
        return VARIANTS[name]
    if name.startswith("gcn") and name[3:].isdigit():
        return {"L": int(name[3:])}
    raise ConfigError(f"unknown ablation variant {name!r}")


def parse_list(text: str) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


def run_ablation(cfg: RunConfig, ds: Dataset, variants: list[str] | None = None,
                 seeds: list[int] | None = None) -> list[dict]:
    """Test accuracy per variant, averaged over init seeds; default always first.

    Data and the train/test items are shared; each seed changes only the
    initialization and shuffling sub-seeds.
    """
    variants = parse_list(cfg.variants) if variants is None else list(variants)
    names = ["default"] + [v for v in variants if v != "default"]
    for name in names:
        variant_overrides(name)
    seeds = [int(s) for s in parse_list(cfg.ablate_seeds)] if seeds is None else list(seeds)
    train_items = ds.split("train")[:cfg.train_items or None]
    test_items = ds.split(cfg.split)[:cfg.eval_items or None]
    rows = []
    for name in names:
        accs = []
        for seed in seeds:
            run_cfg = cfg.replace(seed=seed, P=cfg.ablate_P, **variant_overrides(name))
            model, _ = train(run_cfg, ds, items=train_items)
            accs.append(evaluate(model, ds, test_items, run_cfg, cfg.split).overall)
            log.info("variant %s seed %d accuracy %.4f", name, seed, accs[-1])
        rows.append({"variant": name, "mean_accuracy": float(np.mean(accs)),
                     "accuracies": accs, "seeds": seeds})
    return rows


def format_table(rows: list[dict]) -> str:
    lines = [f"{'variant':<24}{'mean acc':>10}  per-seed"]
    for r in rows:
        per = " ".join(f"{a:.4f}" for a in r["accuracies"])
        lines.append(f"{r['variant']:<24}{r['mean_accuracy']:>10.4f}  {per}")
    return "\n".join(lines)
