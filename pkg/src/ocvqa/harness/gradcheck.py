"""End-to-end gradient verification at a tiny configuration."""
from __future__ import annotations

import numpy as np

from .. import diffcore as dc
from .. import scenegen as sg
from ..data import GenerateSpec, collate, generate_dataset, frames_from_record, decode_array, prepare_scene
from ..model import Model
from ..qencoder import Vocabulary
from .config import ConfigError, RunConfig

MAX_VOCAB = 20
MAX_ANSWERS = 6
TINY_LIMITS = {"d": 8, "d_h": 4, "d_w": 8, "d_a": 8, "d_c": 8, "N": 3, "K": 2}


def check_tiny(cfg: RunConfig) -> None:
    for key, limit in TINY_LIMITS.items():
        if getattr(cfg, key) > limit:
            raise ConfigError(f"gradcheck needs a tiny config: {key}={getattr(cfg, key)} exceeds {limit}")


def tiny_problem(cfg: RunConfig, num_items: int = 2):
    """A small batch with a compact vocabulary and answer set, plus a model."""
    check_tiny(cfg)
    spec: GenerateSpec = cfg.generate_spec()
    scenes, qa = generate_dataset(spec)
    chosen, tokens = [], set()
    for sid, item in qa:
        merged = tokens | set(item.tokens)
        if len(merged) <= MAX_VOCAB - 1:
            chosen.append((sid, item))
            tokens = merged
        if len(chosen) == num_items:
            break
    if not chosen:
        raise ConfigError("no question fits the tiny vocabulary")
    vocab = Vocabulary(["<pad>"] + sorted(tokens))
    labels = []
    for _, item in chosen:
        if item.answer_label not in labels:
            labels.append(item.answer_label)
    for filler in sg.ANSWERS:
        if len(labels) >= MAX_ANSWERS:
            break
        if filler not in labels:
            labels.append(filler)
    records = {s["scene_id"]: s for s in scenes}
    inputs = []
    for sid, _ in chosen:
        rec = records[sid]
        inputs.append(prepare_scene(frames_from_record(rec), decode_array(rec["context"]),
                                    rec["scene"]["W"], rec["scene"]["H"], cfg.K, cfg.t, cfg.N,
                                    cfg.d_a, cfg.track_params()))
    batch = collate(inputs, [vocab.ids(item.tokens) for _, item in chosen],
                    [labels.index(item.answer_label) for _, item in chosen])
    model = Model(cfg.model_config(len(vocab), len(labels)), seed=cfg.sub_seed("init"))
    return model, batch


def run_gradcheck(cfg: RunConfig) -> dc.GradcheckReport:
    model, batch = tiny_problem(cfg)
    return dc.gradcheck(lambda: model.loss(batch), model.store, step=cfg.gradcheck_step,
                        tolerance=cfg.gradcheck_tol,
                        reference_dtype=getattr(np, cfg.gradcheck_reference))
