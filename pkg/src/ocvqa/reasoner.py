"""Reasoning over the résumé set, answer decoding and the training loss.

Any object with ``init_params`` and ``__call__(inputs, store, steps)`` returning
a (B, d) memory can stand in for the reference reasoner below.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import diffcore as dc
from .diffcore import ParamStore, Tensor


@dataclass
class ReasonerInput:
    resumes: Tensor  # (B, N, r)
    valid: np.ndarray  # (B, N) bool
    q_global: Tensor  # (B, d)
    words: Tensor  # (B, S, d)
    word_mask: np.ndarray  # (B, S) bool

    def without(self, keep) -> "ReasonerInput":
        """Restrict to the résumé columns in ``keep`` (shared by the whole batch)."""
        keep = np.asarray(keep)
        return ReasonerInput(self.resumes[:, keep], self.valid[:, keep], self.q_global,
                             self.words, self.word_mask)


class Reasoner(Protocol):
    def init_params(self, store: ParamStore, rng, d: int, r_dim: int) -> None: ...

    def __call__(self, inputs: ReasonerInput, store: ParamStore, steps: int) -> Tensor: ...


class ControlReadMemory:
    """Minimal control / read / memory iteration.

    Each step forms a control vector from the question, the previous control
    and a word read-out attended by that control; reads the résumés attended
    by the new control (invalid résumés excluded); and writes memory as a
    linear map of [previous memory, read].
    """

    def init_params(self, store: ParamStore, rng, d: int, r_dim: int) -> None:
        store.weight("reason.w_m0", rng, d, (d, d))
        store.bias("reason.b_m0", (d,))
        store.weight("reason.w_c", rng, 3 * d, (3 * d, d))
        store.bias("reason.b_c", (d,))
        store.weight("reason.w_k", rng, d, (d, r_dim))
        store.weight("reason.w_m", rng, d + r_dim, (d + r_dim, d))
        store.bias("reason.b_m", (d,))

    def __call__(self, inputs: ReasonerInput, store: ParamStore, steps: int,
                 trace: list | None = None) -> Tensor:
        if steps < 1:
            raise ValueError("need at least one reasoning step")
        B, N, r_dim = inputs.resumes.shape
        S = inputs.words.shape[1]
        valid = np.asarray(inputs.valid, dtype=bool)
        memory = inputs.q_global @ store["reason.w_m0"] + store["reason.b_m0"]
        control = inputs.q_global
        for _ in range(steps):
            word_logits = dc.tsum(inputs.words * dc.reshape(control, (B, 1, -1)), axis=-1)
            beta = dc.softmax(word_logits, axis=-1, mask=inputs.word_mask)
            word_read = dc.seqsum(dc.reshape(beta, (B, S, 1)) * inputs.words, axis=1)
            control = (dc.concat([inputs.q_global, control, word_read], axis=-1) @ store["reason.w_c"]
                       + store["reason.b_c"])
            probe = dc.reshape(control @ store["reason.w_k"], (B, 1, r_dim))
            obj_logits = dc.tsum(inputs.resumes * probe, axis=-1)
            rho = dc.softmax(obj_logits, axis=-1, mask=valid)
            read = dc.seqsum(dc.reshape(rho, (B, N, 1)) * inputs.resumes, axis=1)
            memory = dc.concat([memory, read], axis=-1) @ store["reason.w_m"] + store["reason.b_m"]
            if trace is not None:
                trace.append({"word_attention": beta.data, "object_attention": rho.data,
                              "read": read.data})
        return memory


def init_decoder(store: ParamStore, rng, d_mem: int, d_q: int, hidden: int, num_answers: int) -> None:
    if num_answers < 2:
        raise ValueError("need at least two answer labels")
    store.weight("decode.w1", rng, d_mem + d_q, (d_mem + d_q, hidden))
    store.bias("decode.b1", (hidden,))
    store.weight("decode.w2", rng, hidden, (hidden, num_answers))
    store.bias("decode.b2", (num_answers,))


def decode_answer(memory: Tensor, q: Tensor, store: ParamStore) -> Tensor:
    hidden = dc.elu(dc.concat([memory, q], axis=-1) @ store["decode.w1"] + store["decode.b1"])
    return dc.softmax(hidden @ store["decode.w2"] + store["decode.b2"], axis=-1)


def predict(probs) -> np.ndarray:
    """Arg-max label; ``np.argmax`` already breaks ties toward the lowest index."""
    data = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    return np.argmax(data, axis=-1)


def loss(probs: Tensor, labels) -> Tensor:
    return dc.cross_entropy(probs, labels, floor=1e-12)
