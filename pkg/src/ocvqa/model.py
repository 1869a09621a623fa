"""End-to-end question answering model assembled from the pipeline stages."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import ParamStore
from .ocrl import Ablations, VideoInputs, init_ocrl, represent_video
from .qencoder import encode_question, init_qencoder
from .reasoner import ControlReadMemory, ReasonerInput, decode_answer, init_decoder, loss, predict


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    num_answers: int
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
    ablations: Ablations = field(default_factory=Ablations)

    def __post_init__(self):
        for name in ("vocab_size", "d_w", "d", "d_h", "d_a", "d_c", "K", "t", "N", "P"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.L < 0:
            raise ValueError("L must be nonnegative")
        if self.num_answers < 2:
            raise ValueError("need at least two answer labels")


@dataclass
class Batch:
    ids: np.ndarray  # (B, S)
    word_mask: np.ndarray  # (B, S)
    video: VideoInputs
    labels: np.ndarray  # (B,)

    def __len__(self) -> int:
        return len(self.labels)


class Model:
    def __init__(self, config: ModelConfig, seed: int = 0, reasoner=None):
        self.config = config
        self.reasoner = reasoner or ControlReadMemory()
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        c = config
        init_qencoder(self.store, rng, c.vocab_size, c.d_w, c.d)
        init_ocrl(self.store, rng, c.d_a, c.d_c, c.d, c.d_h, c.L, c.d, c.ablations)
        self.reasoner.init_params(self.store, rng, c.d, 2 * c.d_h)
        init_decoder(self.store, rng, c.d, c.d, c.d, c.num_answers)

    def forward(self, batch: Batch, trace: dict | None = None):
        c = self.config
        question = encode_question(batch.ids, self.store, batch.word_mask)
        video = represent_video(batch.video, question.q, self.store, c.L, c.ablations)
        inputs = ReasonerInput(video.resumes, video.valid, question.q_global, question.words,
                               question.word_mask)
        steps: list | None = [] if trace is not None else None
        if steps is not None:
            memory = self.reasoner(inputs, self.store, c.P, trace=steps)
        else:
            memory = self.reasoner(inputs, self.store, c.P)
        probs = decode_answer(memory, question.q, self.store)
        if trace is not None:
            trace.update(question=question, video=video, reasoning=steps, memory=memory)
        return probs

    def loss(self, batch: Batch):
        return loss(self.forward(batch), batch.labels)

    def predict(self, batch: Batch) -> np.ndarray:
        with dc.no_grad():
            return predict(self.forward(batch))
