"""Synthetic videos of moving shapes, emulated detections and templated QA.

Scenes are pure functions of ``(seed, SceneConfig)``.  Each object may start
and stop moving and start and stop rotating (rotation shows up as an
oscillating box width).  Detections replace a real detector: the appearance
feature is a fixed linear embedding of the object's attributes plus noise.
Questions are drawn from five categories and each carries a small program
whose execution on the ground-truth scene gives the answer.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

SHAPES = ("cube", "sphere", "cylinder")
COLORS = ("red", "green", "blue", "yellow", "purple", "cyan", "gray", "brown")
SIZES = ("small", "big")
ACTIONS = ("start_moving", "stop_moving", "start_rotating", "stop_rotating")
CATEGORIES = ("exist", "count", "attribute-query", "integer-comparison", "attribute-comparison")
MAX_COUNT = 6
EXTENT = {"small": 16.0, "big": 28.0}
ROTATION_SWELL = 0.35

ANSWERS = (("yes", "no") + tuple(str(i) for i in range(MAX_COUNT + 1))
           + COLORS + SHAPES + SIZES)

_PLURAL = {"cube": "cubes", "sphere": "spheres", "cylinder": "cylinders", "object": "objects"}
VOCAB = (
    ("<pad>", "?", "a", "after", "are", "as", "before", "color", "did", "fewer", "first",
     "how", "is", "last", "many", "more", "moving", "object", "objects", "rotating", "same",
     "shape", "size", "start", "started", "starts", "than", "that", "the", "there", "to", "what")
    + COLORS + SIZES + SHAPES + ("cubes", "spheres", "cylinders")
)
_ONEHOT_DIM = len(SHAPES) + len(COLORS) + len(SIZES)
_RAW_CONTEXT_DIM = _ONEHOT_DIM + 3
_EMBED_SEED = 20_211_031


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    num_objects: tuple[int, int] = (2, 5)
    T: int = 16
    W: int = 128
    H: int = 128
    speed: tuple[float, float] = (3.0, 6.0)
    p_move: float = 0.7
    p_rotate: float = 0.5
    p_distinct: float = 1.0


@dataclass(frozen=True)
class Event:
    action: str
    frame: int


@dataclass
class SceneObject:
    id: int
    shape: str
    color: str
    size: str
    centers: np.ndarray  # (T, 2)
    extents: np.ndarray  # (T, 2) full width/height
    events: list[Event] = field(default_factory=list)

    @property
    def attrs(self) -> tuple[str, str, str]:
        return self.shape, self.color, self.size

    def boxes(self) -> np.ndarray:
        half = self.extents / 2.0
        return np.concatenate([self.centers - half, self.centers + half], axis=1)

    def event_frame(self, action: str) -> int | None:
        for ev in self.events:
            if ev.action == action:
                return ev.frame
        return None


@dataclass
class SceneSpec:
    seed: int
    T: int
    W: int
    H: int
    objects: list[SceneObject]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed, "T": self.T, "W": self.W, "H": self.H,
            "objects": [
                {"id": o.id, "shape": o.shape, "color": o.color, "size": o.size,
                 "centers": o.centers.tolist(), "extents": o.extents.tolist(),
                 "events": [[e.action, e.frame] for e in o.events]}
                for o in self.objects
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        objs = [
            SceneObject(o["id"], o["shape"], o["color"], o["size"],
                        np.asarray(o["centers"], dtype=float), np.asarray(o["extents"], dtype=float),
                        [Event(a, int(f)) for a, f in o["events"]])
            for o in d["objects"]
        ]
        return cls(d["seed"], d["T"], d["W"], d["H"], objs)


@dataclass
class Detection:
    frame: int
    box: np.ndarray
    feature: np.ndarray
    confidence: float
    true_id: int = -1


@dataclass(frozen=True)
class DetectionNoise:
    p_miss: float = 0.0
    jitter: float = 0.0
    feature_sigma: float = 0.0


@dataclass
class QAItem:
    tokens: list[str]
    category: str
    answer: int
    program: dict

    @property
    def answer_label(self) -> str:
        return ANSWERS[self.answer]


# -- scenes -----------------------------------------------------------------


def _check_config(cfg: SceneConfig) -> None:
    lo, hi = cfg.num_objects
    if lo < 0 or hi < lo:
        raise SceneError(f"empty object-count range {cfg.num_objects}")
    if cfg.T < 1 or cfg.W <= 0 or cfg.H <= 0:
        raise SceneError(f"bad frame geometry T={cfg.T} W={cfg.W} H={cfg.H}")
    reach = EXTENT["big"] * (1.0 + ROTATION_SWELL)
    if reach >= min(cfg.W, cfg.H):
        raise SceneError(f"objects of extent {reach:.1f}px cannot fit a {cfg.W}x{cfg.H} frame")
    if hi * EXTENT["big"] ** 2 > cfg.W * cfg.H:
        raise SceneError(f"{hi} objects cannot fit a {cfg.W}x{cfg.H} frame")
    if hi > MAX_COUNT:
        raise SceneError(f"at most {MAX_COUNT} objects per scene, asked for {hi}")


def _interval(rng, T: int, p: float):
    """Random [start, stop) activity window with start >= 1, or None."""
    if T < 4 or rng.random() >= p:
        return None
    start = int(rng.integers(1, T - 2))
    stop = int(rng.integers(start + 2, T + 1))
    return start, stop


def generate_scene(seed: int, config: SceneConfig = SceneConfig()) -> SceneSpec:
    _check_config(config)
    rng = np.random.default_rng([seed, 0])
    T, W, H = config.T, config.W, config.H
    n = int(rng.integers(config.num_objects[0], config.num_objects[1] + 1))
    enforce_distinct = rng.random() < config.p_distinct
    used: set[tuple] = set()
    objects = []
    for oid in range(n):
        while True:
            attrs = (SHAPES[rng.integers(len(SHAPES))], COLORS[rng.integers(len(COLORS))],
                     SIZES[rng.integers(len(SIZES))])
            if not enforce_distinct or attrs not in used:
                break
        used.add(attrs)
        shape, color, size = attrs
        ext = EXTENT[size]
        margin = ext * (1.0 + ROTATION_SWELL) / 2.0
        pos = np.array([rng.uniform(margin, W - margin), rng.uniform(margin, H - margin)])
        move = _interval(rng, T, config.p_move)
        rotate = _interval(rng, T, config.p_rotate)
        angle = rng.uniform(0.0, 2.0 * np.pi)
        speed = rng.uniform(*config.speed)
        vel = speed * np.array([np.cos(angle), np.sin(angle)])
        centers = np.zeros((T, 2))
        extents = np.full((T, 2), ext)
        for f in range(T):
            centers[f] = pos
            if rotate and rotate[0] <= f < rotate[1]:
                extents[f, 0] = ext * (1.0 + ROTATION_SWELL * abs(np.sin(np.pi * (f - rotate[0] + 1) / 4.0)))
            if move and move[0] <= f < move[1]:
                pos = pos + vel
                for ax, lim in ((0, W), (1, H)):
                    if pos[ax] < margin:
                        pos[ax] = 2 * margin - pos[ax]
                        vel[ax] = -vel[ax]
                    elif pos[ax] > lim - margin:
                        pos[ax] = 2 * (lim - margin) - pos[ax]
                        vel[ax] = -vel[ax]
        events = []
        for window, (on, off) in ((move, ("start_moving", "stop_moving")),
                                  (rotate, ("start_rotating", "stop_rotating"))):
            if window:
                events.append(Event(on, window[0]))
                if window[1] < T:
                    events.append(Event(off, window[1]))
        objects.append(SceneObject(oid, shape, color, size, centers, extents, events))
    return SceneSpec(seed, T, W, H, objects)


# -- detections -------------------------------------------------------------


def attribute_onehot(shape: str, color: str, size: str) -> np.ndarray:
    v = np.zeros(_ONEHOT_DIM)
    v[SHAPES.index(shape)] = 1.0
    v[len(SHAPES) + COLORS.index(color)] = 1.0
    v[len(SHAPES) + len(COLORS) + SIZES.index(size)] = 1.0
    return v


def _mixing(rows: int, cols: int, tag: int) -> np.ndarray:
    rng = np.random.default_rng([_EMBED_SEED, tag, rows, cols])
    return rng.standard_normal((rows, cols)) / np.sqrt(3.0)


def attribute_embedding(shape: str, color: str, size: str, d_a: int = 24) -> np.ndarray:
    return attribute_onehot(shape, color, size) @ _mixing(_ONEHOT_DIM, d_a, 1)


def context_features(scene: SceneSpec, d_c: int = 16) -> np.ndarray:
    """Per-frame whole-scene descriptor, (T, d_c), from ground truth."""
    raw = np.zeros((scene.T, _RAW_CONTEXT_DIM))
    if scene.objects:
        onehots = np.mean([attribute_onehot(*o.attrs) for o in scene.objects], axis=0)
        centers = np.stack([o.centers for o in scene.objects])  # (n, T, 2)
        raw[:, :_ONEHOT_DIM] = onehots
        raw[:, _ONEHOT_DIM] = len(scene.objects) / 10.0
        raw[:, _ONEHOT_DIM + 1] = centers[:, :, 0].mean(axis=0) / scene.W
        raw[:, _ONEHOT_DIM + 2] = centers[:, :, 1].mean(axis=0) / scene.H
    return raw @ _mixing(_RAW_CONTEXT_DIM, d_c, 2)


def render_detections(scene: SceneSpec, noise: DetectionNoise = DetectionNoise(), seed: int = 0,
                      d_a: int = 24, d_c: int = 16) -> tuple[list[list[Detection]], np.ndarray]:
    """Emulate a detector: per-frame detection lists and context features."""
    if not 0.0 <= noise.p_miss < 1.0:
        raise ValueError(f"p_miss must lie in [0, 1), got {noise.p_miss}")
    if noise.jitter < 0 or noise.feature_sigma < 0:
        raise ValueError("noise scales must be nonnegative")
    rng = np.random.default_rng([scene.seed, seed, 1])
    embeds = [attribute_embedding(*o.attrs, d_a=d_a) for o in scene.objects]
    boxes = [o.boxes() for o in scene.objects]
    frames: list[list[Detection]] = []
    for f in range(scene.T):
        dets = []
        for o, emb, bx in zip(scene.objects, embeds, boxes):
            # draw every variate even for dropped detections so streams stay aligned
            drop = rng.random() < noise.p_miss
            shift = rng.standard_normal(4) * noise.jitter
            fnoise = rng.standard_normal(d_a) * noise.feature_sigma
            if drop:
                continue
            box = bx[f] + shift
            box = np.clip(box, 0.0, [scene.W, scene.H, scene.W, scene.H])
            box = np.array([min(box[0], box[2]), min(box[1], box[3]),
                            max(box[0], box[2]), max(box[1], box[3])])
            scale = o.extents[f].mean()
            conf = float(np.exp(-np.sum(shift ** 2) / (2.0 * scale ** 2)))
            dets.append(Detection(f, box, emb + fnoise, conf, o.id))
        order = rng.permutation(len(dets))
        frames.append([dets[i] for i in order])
    ctx = context_features(scene, d_c)
    if noise.feature_sigma > 0:
        ctx = ctx + rng.standard_normal(ctx.shape) * noise.feature_sigma
    return frames, ctx


# -- question programs ------------------------------------------------------

ATTR_KEYS = ("size", "color", "shape")


def matches(obj: SceneObject, filt: dict) -> bool:
    return all(filt.get(k) is None or getattr(obj, k) == filt[k] for k in ATTR_KEYS)


def select(scene: SceneSpec, filt: dict) -> list[SceneObject]:
    return [o for o in scene.objects if matches(o, filt)]


def _unique(scene: SceneSpec, filt: dict) -> SceneObject | None:
    found = select(scene, filt)
    return found[0] if len(found) == 1 else None


def _yes_no(flag: bool) -> str:
    return "yes" if flag else "no"


def execute(program: dict, scene: SceneSpec) -> str | None:
    """Evaluate a question program on ground truth; None when ill-posed."""
    kind = program["template"]
    if kind == "exist_attr":
        return _yes_no(bool(select(scene, program["filter"])))
    if kind == "exist_event":
        return _yes_no(any(o.event_frame(program["action"]) is not None
                           for o in select(scene, program["filter"])))
    if kind == "count_attr":
        n = len(select(scene, program["filter"]))
        return str(n) if n <= MAX_COUNT else None
    if kind == "count_event":
        return str(sum(o.event_frame(program["action"]) is not None
                       for o in select(scene, program["filter"])))
    if kind == "query_attr":
        obj = _unique(scene, program["filter"])
        return None if obj is None else getattr(obj, program["attribute"])
    if kind == "query_order":
        timed = [(o.event_frame(program["action"]), o) for o in scene.objects]
        timed = [(f, o) for f, o in timed if f is not None]
        if not timed:
            return None
        target = min(f for f, _ in timed) if program["which"] == "first" else max(f for f, _ in timed)
        hits = [o for f, o in timed if f == target]
        return getattr(hits[0], program["attribute"]) if len(hits) == 1 else None
    if kind == "compare_count":
        a = len(select(scene, program["left"]))
        b = len(select(scene, program["right"]))
        op = program["relation"]
        return _yes_no(a > b if op == "more" else a < b if op == "fewer" else a == b)
    if kind == "compare_attr":
        a, b = _unique(scene, program["left"]), _unique(scene, program["right"])
        if a is None or b is None or a.id == b.id:
            return None
        attr = program["attribute"]
        return _yes_no(getattr(a, attr) == getattr(b, attr))
    if kind == "compare_time":
        a, b = _unique(scene, program["left"]), _unique(scene, program["right"])
        if a is None or b is None or a.id == b.id:
            return None
        fa, fb = a.event_frame(program["left_action"]), b.event_frame(program["right_action"])
        if fa is None or fb is None or fa == fb:
            return None
        return _yes_no(fa < fb if program["relation"] == "before" else fa > fb)
    raise ValueError(f"unknown template {kind!r}")


def _phrase(filt: dict, plural: bool = False) -> list[str]:
    words = [filt[k] for k in ("size", "color") if filt.get(k)]
    noun = filt.get("shape") or "object"
    return words + [_PLURAL[noun] if plural else noun]


_VERB = {"start_moving": "moving", "start_rotating": "rotating"}


def render_question(program: dict) -> list[str]:
    kind = program["template"]
    if kind == "exist_attr":
        return ["is", "there", "a", *_phrase(program["filter"]), "?"]
    if kind == "exist_event":
        return ["is", "there", "a", *_phrase(program["filter"]), "that", "starts",
                _VERB[program["action"]], "?"]
    if kind == "count_attr":
        return ["how", "many", *_phrase(program["filter"], True), "are", "there", "?"]
    if kind == "count_event":
        return ["how", "many", *_phrase(program["filter"], True), "start", _VERB[program["action"]], "?"]
    if kind == "query_attr":
        return ["what", program["attribute"], "is", "the", *_phrase(program["filter"]), "?"]
    if kind == "query_order":
        return ["what", program["attribute"], "is", "the", program["which"], "object", "to", "start",
                _VERB[program["action"]], "?"]
    if kind == "compare_count":
        left = _phrase(program["left"], True)
        right = _phrase(program["right"], True)
        if program["relation"] == "same":
            return ["are", "there", "as", "many", *left, "as", *right, "?"]
        return ["are", "there", program["relation"], *left, "than", *right, "?"]
    if kind == "compare_attr":
        return ["is", "the", *_phrase(program["left"]), "the", "same", program["attribute"], "as",
                "the", *_phrase(program["right"]), "?"]
    if kind == "compare_time":
        return ["did", "the", *_phrase(program["left"]), "start", _VERB[program["left_action"]],
                program["relation"], "the", *_phrase(program["right"]), "started",
                _VERB[program["right_action"]], "?"]
    raise ValueError(f"unknown template {kind!r}")


TEMPLATES = {
    "exist": ("exist_attr", "exist_event"),
    "count": ("count_attr", "count_event"),
    "attribute-query": ("query_attr", "query_order"),
    "integer-comparison": ("compare_count",),
    "attribute-comparison": ("compare_attr", "compare_time"),
}


def _random_filter(rng, min_keys: int = 1) -> dict:
    keys = [k for k in ATTR_KEYS if rng.random() < 0.5]
    while len(keys) < min_keys:
        k = ATTR_KEYS[rng.integers(3)]
        if k not in keys:
            keys.append(k)
    values = {"size": SIZES, "color": COLORS, "shape": SHAPES}
    return {k: (values[k][rng.integers(len(values[k]))] if k in keys else None) for k in ATTR_KEYS}


def _identifying_filter(rng, scene: SceneSpec, obj: SceneObject, skip: str | None = None) -> dict | None:
    """Smallest random attribute subset that picks out ``obj`` uniquely."""
    keys = [k for k in ATTR_KEYS if k != skip]
    for r in range(1, len(keys) + 1):
        subsets = list(itertools.combinations(keys, r))
        for i in rng.permutation(len(subsets)):
            filt = {k: (getattr(obj, k) if k in subsets[i] else None) for k in ATTR_KEYS}
            if len(select(scene, filt)) == 1:
                return filt
    return None


def _draw_program(rng, scene: SceneSpec, template: str, want_yes: bool | None) -> dict | None:
    objs = scene.objects
    actions = ("start_moving", "start_rotating")
    if template == "exist_attr":
        if want_yes and objs:
            o = objs[rng.integers(len(objs))]
            keys = [k for k in ATTR_KEYS if rng.random() < 0.6] or [ATTR_KEYS[rng.integers(3)]]
            return {"template": template, "filter": {k: (getattr(o, k) if k in keys else None) for k in ATTR_KEYS}}
        return {"template": template, "filter": _random_filter(rng, min_keys=2)}
    if template == "exist_event":
        return {"template": template, "filter": _random_filter(rng),
                "action": actions[rng.integers(2)]}
    if template == "count_attr":
        return {"template": template, "filter": _random_filter(rng)}
    if template == "count_event":
        filt = _random_filter(rng)
        if rng.random() < 0.5:
            filt = {k: None for k in ATTR_KEYS}
        return {"template": template, "filter": filt, "action": actions[rng.integers(2)]}
    if not objs:
        return None
    if template == "query_attr":
        attr = ATTR_KEYS[rng.integers(3)]
        o = objs[rng.integers(len(objs))]
        filt = _identifying_filter(rng, scene, o, skip=attr)
        return None if filt is None else {"template": template, "filter": filt, "attribute": attr}
    if template == "query_order":
        return {"template": template, "attribute": ("color", "shape")[rng.integers(2)],
                "which": ("first", "last")[rng.integers(2)], "action": actions[rng.integers(2)]}
    if template == "compare_count":
        return {"template": template, "left": _random_filter(rng), "right": _random_filter(rng),
                "relation": ("more", "fewer", "same")[rng.integers(3)]}
    if len(objs) < 2:
        return None
    i, j = rng.choice(len(objs), size=2, replace=False)
    left = _identifying_filter(rng, scene, objs[i])
    right = _identifying_filter(rng, scene, objs[j])
    if left is None or right is None:
        return None
    if template == "compare_attr":
        attr = ATTR_KEYS[rng.integers(3)]
        return {"template": template, "left": left, "right": right, "attribute": attr}
    return {"template": template, "left": left, "right": right,
            "left_action": actions[rng.integers(2)], "right_action": actions[rng.integers(2)],
            "relation": ("before", "after")[rng.integers(2)]}


def generate_qa(scene: SceneSpec, seed: int, k: int, categories=CATEGORIES,
                max_tries: int = 60) -> list[QAItem]:
    """Up to ``k`` well-posed questions per category; unsatisfiable draws are skipped.

    Yes/no answers are balanced per category by alternating the target answer
    and discarding draws that disagree with it.
    """
    rng = np.random.default_rng([scene.seed, seed, 2])
    items: list[QAItem] = []
    seen: set[tuple] = set()
    for category in categories:
        templates = TEMPLATES[category]
        made = 0
        tries = 0
        want_yes = bool(rng.random() < 0.5)
        while made < k and tries < max_tries * k:
            tries += 1
            template = templates[rng.integers(len(templates))]
            program = _draw_program(rng, scene, template, want_yes)
            if program is None:
                continue
            answer = execute(program, scene)
            if answer is None:
                continue
            if answer in ("yes", "no") and (answer == "yes") != want_yes:
                continue
            tokens = render_question(program)
            if tuple(tokens) in seen:
                continue
            seen.add(tuple(tokens))
            items.append(QAItem(tokens, category, ANSWERS.index(answer), program))
            made += 1
            if answer in ("yes", "no"):
                want_yes = not want_yes
    return items
