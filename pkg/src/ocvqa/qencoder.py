"""Question encoding: word embeddings, a bidirectional LSTM and word attention."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import ParamStore, Tensor


@dataclass
class QuestionEncoding:
    words: Tensor  # (B, S, d) contextual word vectors e_s
    q_global: Tensor  # (B, d)
    q: Tensor  # (B, d) attended summary
    word_mask: np.ndarray  # (B, S) bool
    attention: np.ndarray  # (B, S)

    @property
    def length(self) -> np.ndarray:
        return self.word_mask.sum(axis=1)


class Vocabulary:
    def __init__(self, tokens):
        self.tokens = list(tokens)
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate vocabulary entries")

    def __len__(self) -> int:
        return len(self.tokens)

    def ids(self, tokens) -> np.ndarray:
        out = []
        for tok in tokens:
            if tok not in self.index:
                raise KeyError(f"out-of-vocabulary token {tok!r}")
            out.append(self.index[tok])
        return np.asarray(out, dtype=np.int64)


def init_qencoder(store: ParamStore, rng: np.random.Generator, vocab_size: int, d_w: int, d: int) -> None:
    if d % 2:
        raise ValueError(f"question width d={d} must be even (two directions of d/2)")
    half = d // 2
    store.weight("qenc.embed", rng, d_w, (vocab_size, d_w))
    for direction in ("fwd", "bwd"):
        store.weight(f"qenc.{direction}.w_x", rng, d_w, (d_w, 4 * half))
        store.weight(f"qenc.{direction}.w_h", rng, half, (half, 4 * half))
        store.bias(f"qenc.{direction}.b", (4 * half,))
    store.weight("qenc.w_q", rng, d, (d, 1))


def embed_tokens(ids, store: ParamStore) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    table = store["qenc.embed"]
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise KeyError(f"token id out of range for vocabulary of {table.shape[0]}")
    return dc.embedding(table, ids)


def _run(x: Tensor, mask: np.ndarray, store: ParamStore, direction: str, order) -> list[Tensor]:
    B, S, _ = x.shape
    half = store[f"qenc.{direction}.w_h"].shape[0]
    h = Tensor(np.zeros((B, half)))
    c = Tensor(np.zeros((B, half)))
    states: list[Tensor | None] = [None] * S
    w_x, w_h, b = (store[f"qenc.{direction}.{n}"] for n in ("w_x", "w_h", "b"))
    for s in order:
        h_new, c_new = dc.lstm_cell(x[:, s], h, c, w_x, w_h, b)
        live = mask[:, s:s + 1]
        h = dc.where(live, h_new, h)
        c = dc.where(live, c_new, c)
        states[s] = h
    return states


def encode_question(ids, store: ParamStore, mask=None) -> QuestionEncoding:
    """Encode token ids of shape (S,) or (B, S); ``mask`` marks real tokens.

    Padding must sit at the end of each row.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None, :]
        mask = None if mask is None else np.asarray(mask)[None, :]
    B, S = ids.shape
    mask = np.ones((B, S), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if S == 0 or np.any(mask.sum(axis=1) == 0):
        raise ValueError("cannot encode an empty question")
    x = embed_tokens(ids, store)
    fwd = _run(x, mask, store, "fwd", range(S))
    bwd = _run(x, mask, store, "bwd", range(S - 1, -1, -1))
    words = dc.stack([dc.concat([bwd[s], fwd[s]], axis=-1) for s in range(S)], axis=1)
    q_global = dc.concat([bwd[0], fwd[S - 1]], axis=-1)
    logits = dc.reshape(dc.matmul(words * dc.reshape(q_global, (B, 1, -1)), store["qenc.w_q"]), (B, S))
    alpha = dc.softmax(logits, axis=-1, mask=mask)
    q = dc.seqsum(dc.reshape(alpha, (B, S, 1)) * words, axis=1)
    return QuestionEncoding(words, q_global, q, mask, alpha.data)
