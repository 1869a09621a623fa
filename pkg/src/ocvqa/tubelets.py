"""Linking detections into tubelets, "where" features and temporal partitioning."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .scenegen import Detection


@dataclass
class Slot:
    box: np.ndarray
    feature: np.ndarray
    v_p: np.ndarray
    confidence: float
    true_id: int = -1


@dataclass
class Tubelet:
    id: int
    slots: list[Slot | None]

    @property
    def T(self) -> int:
        return len(self.slots)

    @property
    def coverage(self) -> int:
        return sum(s is not None for s in self.slots)

    @property
    def mean_confidence(self) -> float:
        confs = [s.confidence for s in self.slots if s is not None]
        return float(np.mean(confs)) if confs else 0.0

    @property
    def valid(self) -> bool:
        return self.coverage > 0


@dataclass
class ClipSet:
    """Raw per-frame inputs split into ``K`` parts of ``t`` slots.

    ``v_a``/``v_p`` hold zeros wherever ``mask`` is 0.
    """
    v_a: np.ndarray  # (K, t, d_a)
    v_p: np.ndarray  # (K, t, 7)
    mask: np.ndarray  # (K, t) in {0, 1}

    @property
    def present(self) -> np.ndarray:
        return self.mask.any(axis=1)


@dataclass(frozen=True)
class TrackParams:
    iou_weight: float = 0.6
    app_weight: float = 0.4
    match_threshold: float = 0.7
    max_age: int = 5


def spatial_feature(box, W: float, H: float) -> np.ndarray:
    x0, y0, x1, y1 = (float(v) for v in box)
    if W <= 0 or H <= 0:
        raise ValueError(f"frame size must be positive, got {W}x{H}")
    if x0 > x1 or y0 > y1:
        raise ValueError(f"inverted box {list(box)}")
    dx, dy = x1 - x0, y1 - y0
    return np.array([x0 / W, y0 / H, x1 / W, y1 / H, dx / W, dy / H, dx * dy / (W * H)])


def iou(a, b) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def cosine(u, v) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def association_cost(track_box, track_feat, det: Detection, params: TrackParams) -> float:
    return (params.iou_weight * (1.0 - iou(track_box, det.box))
            + params.app_weight * (1.0 - cosine(track_feat, det.feature)))


@dataclass
class _Track:
    id: int
    box: np.ndarray
    feature: np.ndarray
    last_seen: int
    assigned: dict[int, Detection] = field(default_factory=dict)


def _greedy_match(cost: np.ndarray, threshold: float) -> list[tuple[int, int]]:
    pairs = []
    if cost.size == 0:
        return pairs
    order = np.argsort(cost, axis=None, kind="stable")
    used_r, used_c = set(), set()
    for flat in order:
        r, c = divmod(int(flat), cost.shape[1])
        if cost[r, c] >= threshold:
            break
        if r in used_r or c in used_c:
            continue
        used_r.add(r)
        used_c.add(c)
        pairs.append((r, c))
    return pairs


def link(frames: list[list[Detection]], params: TrackParams, matcher) -> list[_Track]:
    """Frame-by-frame association loop shared by the tracker and its oracle."""
    tracks: list[_Track] = []
    for f, dets in enumerate(frames):
        live = [tr for tr in tracks if f - tr.last_seen <= params.max_age]
        cost = np.array([[association_cost(tr.box, tr.feature, d, params) for d in dets]
                         for tr in live]).reshape(len(live), len(dets))
        matched = set()
        for r, c in matcher(cost, params.match_threshold):
            tr, d = live[r], dets[c]
            tr.assigned[f] = d
            tr.box, tr.feature, tr.last_seen = d.box, d.feature, f
            matched.add(c)
        for c, d in enumerate(dets):
            if c not in matched:
                tracks.append(_Track(len(tracks), d.box, d.feature, f, {f: d}))
    return tracks


def _to_tubelets(tracks: list[_Track], T: int, W: float, H: float) -> list[Tubelet]:
    out = []
    for tr in tracks:
        slots: list[Slot | None] = [None] * T
        for f, d in tr.assigned.items():
            slots[f] = Slot(d.box, d.feature, spatial_feature(d.box, W, H), d.confidence, d.true_id)
        out.append(Tubelet(tr.id, slots))
    return out


def track(frames: list[list[Detection]], W: float, H: float,
          params: TrackParams = TrackParams()) -> list[Tubelet]:
    """Greedy best-first IoU + appearance association into full-length tubelets.

    A track that goes unmatched for more than ``max_age`` frames stops
    accepting detections.
    """
    if not frames:
        return []
    return _to_tubelets(link(frames, params, _greedy_match), len(frames), W, H)


def partition(tubelet: Tubelet, K: int, t: int, d_a: int | None = None) -> ClipSet:
    T = tubelet.T
    if K * t < T:
        raise ValueError(f"K*t = {K * t} frames cannot hold a {T}-frame tubelet")
    if d_a is None:
        filled = [s for s in tubelet.slots if s is not None]
        if not filled:
            raise ValueError("feature width unknown for an all-null tubelet; pass d_a")
        d_a = len(filled[0].feature)
    v_a = np.zeros((K * t, d_a))
    v_p = np.zeros((K * t, 7))
    mask = np.zeros(K * t)
    for f, s in enumerate(tubelet.slots):
        if s is not None:
            v_a[f], v_p[f], mask[f] = s.feature, s.v_p, 1.0
    return ClipSet(v_a.reshape(K, t, d_a), v_p.reshape(K, t, 7), mask.reshape(K, t))


def null_tubelet(T: int, tid: int = -1) -> Tubelet:
    return Tubelet(tid, [None] * T)


def rank_key(tb: Tubelet):
    return (-tb.coverage, -tb.mean_confidence, tb.id)


def select_tubelets(tubelets: list[Tubelet], N: int, T: int | None = None) -> list[Tubelet]:
    """Keep the ``N`` best-covered tubelets, padding with all-null ones."""
    if N < 1:
        raise ValueError("N must be at least 1")
    kept = sorted(tubelets, key=rank_key)[:N]
    if T is None:
        T = kept[0].T if kept else 0
    return kept + [null_tubelet(T) for _ in range(N - len(kept))]


def load_detection_file(path) -> list[list[Detection]]:
    """Read standalone per-frame detections, one JSON record per line.

    Record fields: ``frame``, ``box`` (4 numbers), ``feature`` (list),
    ``confidence`` and optionally ``true_id``.
    """
    records = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
    T = 1 + max((r["frame"] for r in records), default=-1)
    frames: list[list[Detection]] = [[] for _ in range(T)]
    for r in records:
        frames[r["frame"]].append(Detection(int(r["frame"]), np.asarray(r["box"], dtype=float),
                                            np.asarray(r["feature"], dtype=float),
                                            float(r["confidence"]), int(r.get("true_id", -1))))
    return frames
