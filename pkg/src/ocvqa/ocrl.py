"""Object-centric video representation.

Per object and frame, appearance is gated by position; frames of each clip are
pooled under question-conditioned attention; the pooled parts of all objects
in a clip form a graph whose adjacency is the outer product of a
question-conditioned object attention vector; a residual GCN with a broadcast
context term refines the nodes; a BiLSTM whose initial hidden states are
projections of the question links each object's parts into a résumé.

Shapes: B batch, N objects, K clips, t frames per clip.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import ParamStore, Tensor


@dataclass(frozen=True)
class Ablations:
    no_gating: bool = False
    no_temporal_attention: bool = False
    no_bilstm: bool = False
    no_context: bool = False


@dataclass
class VideoInputs:
    v_a: np.ndarray  # (B, N, K, t, d_a)
    v_p: np.ndarray  # (B, N, K, t, 7)
    mask: np.ndarray  # (B, N, K, t)
    context: np.ndarray  # (B, K, t, d_c)
    frame_mask: np.ndarray  # (B, K, t), 0 on padding frames
    valid: np.ndarray  # (B, N) bool, False for padded tubelets

    def clip_context(self) -> np.ndarray:
        """Mean context feature over the real frames of each clip, (B, K, d_c)."""
        w = self.frame_mask[..., None]
        total = dc.seq_reduce(self.context * w, axis=2)
        count = np.maximum(w.sum(axis=2), 1.0)
        return total / count

    def permute_objects(self, perm) -> "VideoInputs":
        perm = np.asarray(perm)
        return VideoInputs(self.v_a[:, perm], self.v_p[:, perm], self.mask[:, perm],
                           self.context, self.frame_mask, self.valid[:, perm])


@dataclass
class VideoRepresentation:
    resumes: Tensor  # (B, N, 2 d_h)
    valid: np.ndarray  # (B, N)
    temporal_attention: np.ndarray  # (B, N, K, t)
    object_attention: np.ndarray  # (B, K, N)
    adjacency: np.ndarray  # (B, K, N, N)
    clip_present: np.ndarray  # (B, N, K)


def init_ocrl(store: ParamStore, rng, d_a: int, d_c: int, d: int, d_h: int, L: int, d_q: int,
              ablations: Ablations = Ablations()) -> None:
    if ablations.no_gating:
        store.weight("ocrl.concat.w", rng, d_a + 7, (d_a + 7, d))
        store.bias("ocrl.concat.b", (d,))
    else:
        store.weight("ocrl.gate.w_a", rng, d_a, (d_a, d))
        store.bias("ocrl.gate.b_a", (d,))
        store.weight("ocrl.gate.w_p", rng, 7, (7, d))
        store.bias("ocrl.gate.b_p", (d,))
    if not ablations.no_temporal_attention:
        store.weight("ocrl.temporal.w_q", rng, d_q, (d_q, d))
        store.bias("ocrl.temporal.b_q", (d,))
        # no key bias: it adds the same logit to every frame and cancels in the softmax
        store.weight("ocrl.temporal.w_v", rng, d, (d, d))
        store.weight("ocrl.temporal.w_s", rng, d, (d, 1))
    store.weight("ocrl.graph.w_a", rng, 2 * d, (2 * d, 1))
    if L > 0 and not ablations.no_context:
        store.weight("ocrl.gcn.w_vc", rng, d_c, (d_c, d))
    for layer in range(L):
        store.weight(f"ocrl.gcn{layer}.w1", rng, d, (d, d))
        store.weight(f"ocrl.gcn{layer}.w2", rng, d, (d, d))
        store.bias(f"ocrl.gcn{layer}.b", (d,))
    if ablations.no_bilstm:
        if d != 2 * d_h:
            store.weight("ocrl.pool.w", rng, d, (d, 2 * d_h))
    else:
        for direction in ("fwd", "bwd"):
            store.weight(f"ocrl.link.{direction}.w_x", rng, d, (d, 4 * d_h))
            store.weight(f"ocrl.link.{direction}.w_h", rng, d_h, (d_h, 4 * d_h))
            store.bias(f"ocrl.link.{direction}.b", (4 * d_h,))
            store.weight(f"ocrl.link.{direction}.w_q", rng, d_q, (d_q, d_h))
            store.bias(f"ocrl.link.{direction}.b_q", (d_h,))


def position_gated_encoding(v_a, v_p, store: ParamStore, no_gating: bool = False) -> Tensor:
    """tanh(v_a W_a + b_a) * sigmoid(v_p W_p + b_p); with ``no_gating`` a
    linear map of the concatenation [v_a, v_p] instead."""
    v_a, v_p = dc.as_tensor(v_a), dc.as_tensor(v_p)
    if no_gating:
        return dc.concat([v_a, v_p], axis=-1) @ store["ocrl.concat.w"] + store["ocrl.concat.b"]
    appearance = dc.tanh(v_a @ store["ocrl.gate.w_a"] + store["ocrl.gate.b_a"])
    gate = dc.sigmoid(v_p @ store["ocrl.gate.w_p"] + store["ocrl.gate.b_p"])
    return appearance * gate


def temporal_part_summary(v_ap: Tensor, mask: np.ndarray, q: Tensor, store: ParamStore,
                          no_attention: bool = False) -> tuple[Tensor, np.ndarray]:
    """Pool the t frames of every clip into one vector per (object, clip).

    ``v_ap``: (B, N, K, t, d), ``mask``: (B, N, K, t), ``q``: (B, d_q).
    Returns ``c`` of shape (B, N, K, d) and the attention weights.  A clip
    with every slot masked yields a zero vector.
    """
    mask = np.asarray(mask)
    live = mask > 0
    v_ap = v_ap * mask[..., None]
    if no_attention:
        count = np.maximum(mask.sum(axis=-1, keepdims=True), 1.0)
        weights = Tensor(mask / count)
    else:
        B = q.shape[0]
        d = v_ap.shape[-1]
        query = dc.reshape(q @ store["ocrl.temporal.w_q"] + store["ocrl.temporal.b_q"], (B, 1, 1, 1, d))
        keys = v_ap @ store["ocrl.temporal.w_v"]
        logits = dc.reshape((query * keys) @ store["ocrl.temporal.w_s"], mask.shape)
        weights = dc.softmax(logits, axis=-1, mask=live)
    c = dc.seqsum(dc.reshape(weights, mask.shape + (1,)) * v_ap, axis=-2)
    return c, weights.data


def build_adjacency(c: Tensor, present: np.ndarray, q: Tensor, store: ParamStore) -> tuple[Tensor, Tensor]:
    """Object attention a_k over the N parts of each clip and A_k = a_k a_k^T.

    ``c``: (B, K, N, d), ``present``: (B, K, N).  Returns a: (B, K, N) and
    A: (B, K, N, N).  Absent parts get zero attention.
    """
    B, K, N, d = c.shape
    feats = dc.concat([c, c * dc.reshape(q, (B, 1, 1, d))], axis=-1)
    logits = dc.reshape(feats @ store["ocrl.graph.w_a"], (B, K, N))
    a = dc.softmax(logits, axis=-1, mask=present)
    A = dc.reshape(a, (B, K, N, 1)) * dc.reshape(a, (B, K, 1, N))
    return a, A


def gcn_refine(H0: Tensor, A: Tensor, clip_context, store: ParamStore, L: int,
               no_context: bool = False, active: np.ndarray | None = None) -> Tensor:
    """L residual GCN layers, H <- elu(H + elu(A H W1 + v_c W_vc + b) W2).

    ``H0``: (B, K, N, d); ``clip_context``: (B, K, d_c).  Clips whose
    ``active`` flag (B, K) is False pass H0 through unchanged.
    """
    if L == 0:
        return H0
    B, K, N, d = H0.shape
    ctx = None
    if not no_context:
        ctx = dc.reshape(dc.as_tensor(clip_context) @ store["ocrl.gcn.w_vc"], (B, K, 1, d))
    H = H0
    for layer in range(L):
        pre = (A @ H) @ store[f"ocrl.gcn{layer}.w1"] + store[f"ocrl.gcn{layer}.b"]
        if ctx is not None:
            pre = pre + ctx
        F = dc.elu(pre) @ store[f"ocrl.gcn{layer}.w2"]
        H = dc.elu(H + F)
    if active is not None and not np.all(active):
        H = dc.where(np.asarray(active, dtype=bool)[:, :, None, None], H, H0)
    return H


def temporal_link(parts: Tensor, present: np.ndarray, q: Tensor, store: ParamStore,
                  no_bilstm: bool = False) -> Tensor:
    """Link the K contextualized parts of every object into a résumé.

    ``parts``: (B, N, K, d), ``present``: (B, N, K).  Absent parts enter as
    zero vectors.  Returns r = [h_bwd after the first part, h_fwd after the
    last part] with shape (B, N, 2 d_h).
    """
    B, N, K, d = parts.shape
    parts = parts * np.asarray(present, dtype=float)[..., None]
    if no_bilstm:
        count = np.maximum(np.asarray(present, dtype=float).sum(axis=-1, keepdims=True), 1.0)
        pooled = dc.seqsum(parts, axis=2) * (1.0 / count)
        if "ocrl.pool.w" in store:
            pooled = pooled @ store["ocrl.pool.w"]
        return pooled
    ends = {}
    for direction, order in (("fwd", range(K)), ("bwd", range(K - 1, -1, -1))):
        w_x, w_h, b = (store[f"ocrl.link.{direction}.{n}"] for n in ("w_x", "w_h", "b"))
        d_h = w_h.shape[0]
        h = dc.reshape(q @ store[f"ocrl.link.{direction}.w_q"] + store[f"ocrl.link.{direction}.b_q"],
                       (B, 1, d_h))
        c = Tensor(np.zeros((B, N, d_h)))
        for k in order:
            h, c = dc.lstm_cell(parts[:, :, k], h, c, w_x, w_h, b)
        ends[direction] = h
    return dc.concat([ends["bwd"], ends["fwd"]], axis=-1)


def represent_video(video: VideoInputs, q: Tensor, store: ParamStore, L: int,
                    ablations: Ablations = Ablations()) -> VideoRepresentation:
    """Full object-centric pipeline from raw tubelet inputs to résumés."""
    mask = np.asarray(video.mask, dtype=float)
    v_ap = position_gated_encoding(video.v_a, video.v_p, store, ablations.no_gating)
    c, alpha = temporal_part_summary(v_ap, mask, q, store, ablations.no_temporal_attention)
    present = mask.any(axis=-1)  # (B, N, K)
    present_kn = np.swapaxes(present, 1, 2)  # (B, K, N)
    H0 = dc.transpose(c, (0, 2, 1, 3))
    a, A = build_adjacency(H0, present_kn, q, store)
    H = gcn_refine(H0, A, video.clip_context(), store, L, ablations.no_context,
                   active=present_kn.any(axis=-1))
    parts = dc.transpose(H, (0, 2, 1, 3))
    r = temporal_link(parts, present, q, store, ablations.no_bilstm)
    return VideoRepresentation(r, np.asarray(video.valid, dtype=bool), alpha, a.data, A.data, present)
