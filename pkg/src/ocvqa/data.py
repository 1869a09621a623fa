"""Dataset files, preprocessing of scenes into model inputs, and batching.

A dataset directory holds

* ``qa.jsonl``      one record per question: id, scene reference, split,
                    category, tokens, answer index/label and the program;
* ``scenes.jsonl``  one record per video: ground-truth scene, detection
                    arrays and per-frame context features (base64 float64);
* ``vocab.txt``     ``token <word>`` and ``answer <label>`` lines;
* ``splits.json``   scene ids per split;
* ``meta.json``     the generation settings.
"""
from __future__ import annotations

import base64
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import scenegen as sg
from .model import Batch
from .ocrl import VideoInputs
from .qencoder import Vocabulary
from .tubelets import TrackParams, partition, select_tubelets, track

SPLIT_FRACTIONS = (("train", 0.7), ("val", 0.1), ("test", 0.2))


@dataclass
class GenerateSpec:
    seed: int = 0
    num_scenes: int = 100
    qa_per_category: int = 2
    categories: tuple[str, ...] = sg.CATEGORIES
    scene: sg.SceneConfig = field(default_factory=sg.SceneConfig)
    noise: sg.DetectionNoise = field(default_factory=sg.DetectionNoise)
    d_a: int = 24
    d_c: int = 16


def encode_array(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(arr.shape), "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def decode_array(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(obj["shape"])


def assign_splits(scene_ids: list[int], seed: int) -> dict[str, list[int]]:
    rng = np.random.default_rng([seed, 3])
    order = [scene_ids[i] for i in rng.permutation(len(scene_ids))]
    n = len(order)
    n_train = int(round(SPLIT_FRACTIONS[0][1] * n))
    n_val = int(round(SPLIT_FRACTIONS[1][1] * n))
    return {"train": sorted(order[:n_train]), "val": sorted(order[n_train:n_train + n_val]),
            "test": sorted(order[n_train + n_val:])}


def _scene_record(scene_id: int, scene: sg.SceneSpec, frames, context) -> dict:
    dets = [d for frame in frames for d in frame]
    d_a = dets[0].feature.shape[0] if dets else 0
    return {
        "scene_id": scene_id,
        "scene": scene.to_dict(),
        "detections": {
            "frame": [d.frame for d in dets],
            "confidence": [d.confidence for d in dets],
            "true_id": [d.true_id for d in dets],
            "box": encode_array(np.array([d.box for d in dets]).reshape(len(dets), 4)),
            "feature": encode_array(np.array([d.feature for d in dets]).reshape(len(dets), d_a)),
        },
        "context": encode_array(context),
    }


def frames_from_record(rec: dict) -> list[list[sg.Detection]]:
    T = rec["scene"]["T"]
    det = rec["detections"]
    boxes, feats = decode_array(det["box"]), decode_array(det["feature"])
    frames: list[list[sg.Detection]] = [[] for _ in range(T)]
    for i, f in enumerate(det["frame"]):
        frames[f].append(sg.Detection(f, boxes[i], feats[i], det["confidence"][i], det["true_id"][i]))
    return frames


def write_vocab(path: Path, tokens, answers) -> None:
    lines = [f"token {t}" for t in tokens] + [f"answer {a}" for a in answers]
    path.write_text("\n".join(lines) + "\n")


def read_vocab(path: Path) -> tuple[list[str], list[str]]:
    tokens, answers = [], []
    for line in Path(path).read_text().splitlines():
        if not line:
            continue
        kind, _, value = line.partition(" ")
        (tokens if kind == "token" else answers).append(value)
    return tokens, answers


def _meta(spec: GenerateSpec) -> dict:
    d = asdict(spec)
    d["categories"] = list(spec.categories)
    return d


def generate_dataset(spec: GenerateSpec):
    """Scenes, detections and QA items for ``spec``; pure in the seed."""
    scenes, qa = [], []
    for sid in range(spec.num_scenes):
        scene = sg.generate_scene(int(np.random.SeedSequence([spec.seed, sid]).generate_state(1)[0]), spec.scene)
        frames, context = sg.render_detections(scene, spec.noise, seed=spec.seed, d_a=spec.d_a, d_c=spec.d_c)
        scenes.append(_scene_record(sid, scene, frames, context))
        for item in sg.generate_qa(scene, spec.seed, spec.qa_per_category, spec.categories):
            qa.append((sid, item))
    return scenes, qa


def write_dataset(out_dir, spec: GenerateSpec) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scenes, qa = generate_dataset(spec)
    splits = assign_splits([s["scene_id"] for s in scenes], spec.seed)
    split_of = {sid: name for name, ids in splits.items() for sid in ids}
    paths = {name: out / fname for name, fname in (
        ("qa", "qa.jsonl"), ("scenes", "scenes.jsonl"), ("vocab", "vocab.txt"),
        ("splits", "splits.json"), ("meta", "meta.json"))}
    with open(paths["scenes"], "w") as fh:
        for rec in scenes:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    with open(paths["qa"], "w") as fh:
        for i, (sid, item) in enumerate(qa):
            fh.write(json.dumps({
                "id": i, "scene_id": sid, "split": split_of[sid], "category": item.category,
                "tokens": item.tokens, "answer": item.answer, "answer_label": item.answer_label,
                "program": item.program,
            }, sort_keys=True) + "\n")
    write_vocab(paths["vocab"], sg.VOCAB, sg.ANSWERS)
    paths["splits"].write_text(json.dumps(splits, sort_keys=True, indent=1) + "\n")
    paths["meta"].write_text(json.dumps(_meta(spec), sort_keys=True, indent=1) + "\n")
    return paths


# -- preprocessing ----------------------------------------------------------


@dataclass
class SceneInputs:
    v_a: np.ndarray  # (N, K, t, d_a)
    v_p: np.ndarray  # (N, K, t, 7)
    mask: np.ndarray  # (N, K, t)
    context: np.ndarray  # (K, t, d_c)
    frame_mask: np.ndarray  # (K, t)
    valid: np.ndarray  # (N,)
    tubelet_ids: list[int]


def prepare_scene(frames, context: np.ndarray, W: float, H: float, K: int, t: int, N: int,
                  d_a: int, track_params: TrackParams = TrackParams()) -> SceneInputs:
    T = len(frames)
    if K * t < T:
        raise ValueError(f"K*t = {K * t} cannot hold {T} frames")
    chosen = select_tubelets(track(frames, W, H, track_params), N, T)
    clips = [partition(tb, K, t, d_a) for tb in chosen]
    ctx = np.zeros((K * t, context.shape[1]))
    ctx[:T] = context
    fmask = np.zeros(K * t)
    fmask[:T] = 1.0
    return SceneInputs(
        v_a=np.stack([c.v_a for c in clips]),
        v_p=np.stack([c.v_p for c in clips]),
        mask=np.stack([c.mask for c in clips]),
        context=ctx.reshape(K, t, -1),
        frame_mask=fmask.reshape(K, t),
        valid=np.array([tb.valid for tb in chosen]),
        tubelet_ids=[tb.id for tb in chosen],
    )


def collate(scenes: list[SceneInputs], token_ids: list[np.ndarray], labels) -> Batch:
    S = max(len(ids) for ids in token_ids)
    ids = np.zeros((len(token_ids), S), dtype=np.int64)
    mask = np.zeros((len(token_ids), S), dtype=bool)
    for i, row in enumerate(token_ids):
        ids[i, :len(row)] = row
        mask[i, :len(row)] = True
    video = VideoInputs(
        v_a=np.stack([s.v_a for s in scenes]), v_p=np.stack([s.v_p for s in scenes]),
        mask=np.stack([s.mask for s in scenes]), context=np.stack([s.context for s in scenes]),
        frame_mask=np.stack([s.frame_mask for s in scenes]), valid=np.stack([s.valid for s in scenes]),
    )
    return Batch(ids, mask, video, np.asarray(labels, dtype=np.int64))


@dataclass
class QARecord:
    id: int
    scene_id: int
    split: str
    category: str
    tokens: list[str]
    answer: int
    program: dict


class Dataset:
    """A loaded dataset directory with lazily preprocessed scenes."""

    def __init__(self, path):
        self.path = Path(path)
        if not (self.path / "qa.jsonl").exists():
            raise FileNotFoundError(f"no dataset at {self.path}")
        tokens, answers = read_vocab(self.path / "vocab.txt")
        self.vocab = Vocabulary(tokens)
        self.answers = answers
        self.meta = json.loads((self.path / "meta.json").read_text())
        self.splits = json.loads((self.path / "splits.json").read_text())
        self.items = [QARecord(**{k: r[k] for k in QARecord.__dataclass_fields__})
                      for r in map(json.loads, (self.path / "qa.jsonl").read_text().splitlines())]
        self.scene_records = {r["scene_id"]: r for r in
                              map(json.loads, (self.path / "scenes.jsonl").read_text().splitlines())}
        self._prepared: dict[tuple, SceneInputs] = {}

    @property
    def d_a(self) -> int:
        return int(self.meta["d_a"])

    @property
    def d_c(self) -> int:
        return int(self.meta["d_c"])

    @property
    def T(self) -> int:
        return int(self.meta["scene"]["T"])

    def split(self, name: str) -> list[QARecord]:
        if name not in self.splits:
            raise KeyError(f"unknown split {name!r}; have {sorted(self.splits)}")
        return [it for it in self.items if it.split == name]

    def scene(self, scene_id: int) -> sg.SceneSpec:
        return sg.SceneSpec.from_dict(self.scene_records[scene_id]["scene"])

    def scene_inputs(self, scene_id: int, K: int, t: int, N: int,
                     track_params: TrackParams = TrackParams()) -> SceneInputs:
        key = (scene_id, K, t, N, track_params)
        if key not in self._prepared:
            rec = self.scene_records[scene_id]
            self._prepared[key] = prepare_scene(
                frames_from_record(rec), decode_array(rec["context"]), rec["scene"]["W"],
                rec["scene"]["H"], K, t, N, self.d_a, track_params)
        return self._prepared[key]

    def batch(self, items: list[QARecord], K: int, t: int, N: int,
              track_params: TrackParams = TrackParams()) -> Batch:
        scenes = [self.scene_inputs(it.scene_id, K, t, N, track_params) for it in items]
        return collate(scenes, [self.vocab.ids(it.tokens) for it in items], [it.answer for it in items])
