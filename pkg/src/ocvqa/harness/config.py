"""Run configuration: flat ``key=value`` files overridden by CLI flags.

Precedence, lowest to highest: dataclass defaults, ``--config`` file,
``--set key=value`` flags, dedicated flags (``--seed``, ``--out``, ...).
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .. import scenegen as sg
from ..data import GenerateSpec
from ..model import ModelConfig
from ..ocrl import Ablations
from ..tubelets import TrackParams


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    data: str = "runs/data"
    out: str = "runs/out"
    split: str = "test"
    # dataset generation
    num_scenes: int = 100
    qa_per_category: int = 2
    categories: str = ",".join(sg.CATEGORIES)
    T: int = 16
    W: int = 128
    H: int = 128
    min_objects: int = 2
    max_objects: int = 5
    speed_min: float = 3.0
    speed_max: float = 6.0
    p_move: float = 0.7
    p_rotate: float = 0.5
    p_distinct: float = 1.0
    p_miss: float = 0.1
    jitter: float = 1.0
    feature_sigma: float = 0.05
    # tracking
    iou_weight: float = 0.6
    app_weight: float = 0.4
    match_threshold: float = 0.7
    max_age: int = 5
    # model
    d_w: int = 16
    d: int = 32
    d_h: int = 16
    d_a: int = 24
    d_c: int = 16
    K: int = 4
    t: int = 4
    N: int = 6
    L: int = 2
    P: int = 4
    no_gating: bool = False
    no_temporal_attention: bool = False
    no_bilstm: bool = False
    no_context: bool = False
    # optimisation
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 30
    train_items: int = 0  # 0 keeps the whole split
    eval_items: int = 0
    # ablation sweep
    variants: str = "default,no_gating,no_temporal_attention,gcn0,gcn1,gcn4,gcn8,no_bilstm,no_context"
    ablate_seeds: str = "0,1,2"
    ablate_P: int = 2
    # gradient check
    gradcheck_step: float = 1e-5
    gradcheck_tol: float = 1e-4
    gradcheck_reference: str = "longdouble"  # float64 or longdouble difference quotients

    def validate(self) -> "RunConfig":
        for name in ("T", "W", "H", "d_w", "d", "d_h", "d_a", "d_c", "K", "t", "N", "P",
                     "batch_size", "epochs", "num_scenes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.L < 0:
            raise ConfigError("L must be nonnegative")
        if self.lr < 0:
            raise ConfigError("lr must be nonnegative")
        if self.K * self.t < self.T:
            raise ConfigError(f"K*t = {self.K * self.t} frames cannot hold T = {self.T}")
        if self.gradcheck_reference not in ("float64", "longdouble"):
            raise ConfigError(f"gradcheck_reference must be float64 or longdouble, got {self.gradcheck_reference!r}")
        unknown = set(self.category_list) - set(sg.CATEGORIES)
        if unknown:
            raise ConfigError(f"unknown categories {sorted(unknown)}")
        return self

    @property
    def category_list(self) -> tuple[str, ...]:
        return tuple(c for c in self.categories.split(",") if c)

    def sub_seed(self, tag: str) -> int:
        code = sum(ord(ch) * 31 ** i for i, ch in enumerate(tag)) % (2 ** 31)
        return int(np.random.SeedSequence([self.seed, code]).generate_state(1)[0])

    def generate_spec(self) -> GenerateSpec:
        return GenerateSpec(
            seed=self.sub_seed("data"), num_scenes=self.num_scenes, qa_per_category=self.qa_per_category,
            categories=self.category_list,
            scene=sg.SceneConfig((self.min_objects, self.max_objects), self.T, self.W, self.H,
                                 (self.speed_min, self.speed_max), self.p_move, self.p_rotate,
                                 self.p_distinct),
            noise=sg.DetectionNoise(self.p_miss, self.jitter, self.feature_sigma),
            d_a=self.d_a, d_c=self.d_c)

    def track_params(self) -> TrackParams:
        return TrackParams(self.iou_weight, self.app_weight, self.match_threshold, self.max_age)

    def ablations(self) -> Ablations:
        return Ablations(self.no_gating, self.no_temporal_attention, self.no_bilstm, self.no_context)

    def model_config(self, vocab_size: int, num_answers: int) -> ModelConfig:
        return ModelConfig(vocab_size, num_answers, self.d_w, self.d, self.d_h, self.d_a, self.d_c,
                           self.K, self.t, self.N, self.L, self.P, self.ablations())

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_lines(self) -> list[str]:
        return [f"{f.name}={getattr(self, f.name)}" for f in fields(self)]


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(name: str, raw: str):
    if name not in _FIELDS:
        raise ConfigError(f"unknown config key {name!r}")
    kind = _FIELDS[name].type
    try:
        if kind == "bool":
            low = raw.strip().lower()
            if low not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(raw)
            return low in ("1", "true", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return raw.strip()


def parse_pairs(lines) -> dict:
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = _coerce(key.strip(), value)
    return out


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    values = {}
    if path is not None:
        values.update(parse_pairs(Path(path).read_text().splitlines()))
    for key, value in (overrides or {}).items():
        values[key] = _coerce(key, value) if isinstance(value, str) else value
    return RunConfig(**values).validate()


def from_meta(meta: dict) -> RunConfig:
    """Rebuild a RunConfig from the ``config.*`` entries of checkpoint metadata."""
    pairs = {k[len("config."):]: v for k, v in meta.items() if k.startswith("config.")}
    return load_config(overrides=pairs)


TINY = dict(T=8, K=2, t=4, N=3, d=8, d_h=4, d_w=8, d_a=8, d_c=8, L=2, P=2, min_objects=2,
            max_objects=3, num_scenes=4, qa_per_category=1, p_miss=0.2)
