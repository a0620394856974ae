"""Model assembly: configuration, the full parameter bundle, and pair scoring.

All three heads live on one parameter bundle so a single checkpoint can be
re-scored under any variant and the gradient checker can sweep every group.
Question-side and answer-side computation are split so evaluation can cache
the expensive answer encodings across a candidate pool.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import attention as attn
from . import encoder as enc
from .numerics import Tensor, mul_const, parameter
from .text import NUM_RESERVED, tf_vector_dense

VARIANTS = ("global_local", "local", "tf_lstm_concat")


@dataclass
class ModelConfig:
    vocab_size: int
    embed_size: int = 100
    hidden_size: int = 141
    tf_proj: int = 50
    attn_proj: int = 140
    norm_alpha: float = 0.5
    norm_beta: float = 1.0
    max_len: int = 200
    tf_counts: bool = False
    variant: str = "global_local"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown model variant {self.variant!r}")
        for field in ("vocab_size", "embed_size", "hidden_size", "tf_proj", "attn_proj", "max_len"):
            if getattr(self, field) < 1:
                raise ValueError(f"{field} must be >= 1")
        if self.vocab_size <= NUM_RESERVED:
            raise ValueError("vocab_size must exceed the reserved ids")

    @property
    def enc_dim(self) -> int:
        return 2 * self.hidden_size

    @property
    def tf_dim(self) -> int:
        return self.vocab_size - NUM_RESERVED

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class QuestionContext:
    """Everything question-side that scoring needs, computed once per question."""

    def __init__(self, f_q: Tensor, q_tf: np.ndarray, q_rep: Tensor):
        self.f_q = f_q
        self.q_tf = q_tf
        self.q_rep = q_rep


class AnswerContext:
    """Question-independent answer-side work, cacheable across a pool."""

    def __init__(self, a_enc: Tensor, a_tf: np.ndarray, a_rep: Tensor | None = None):
        self.a_enc = a_enc
        self.a_tf = a_tf
        self.a_rep = a_rep


class Model:
    def __init__(self, config: ModelConfig, embedding, lstm_fwd, lstm_bwd, attn_params, baseline, w_ff):
        self.config = config
        self.embedding = embedding
        self.lstm_fwd = lstm_fwd
        self.lstm_bwd = lstm_bwd
        self.attn = attn_params
        self.baseline = baseline
        self.w_ff = w_ff

    @classmethod
    def create(cls, config: ModelConfig, rng: np.random.Generator) -> "Model":
        bound = 1.0 / np.sqrt(config.tf_dim)
        return cls(
            config=config,
            embedding=enc.EmbeddingTable.create(config.vocab_size, config.embed_size, rng),
            lstm_fwd=enc.LstmCell.create(config.embed_size, config.hidden_size, rng, "lstm_fwd"),
            lstm_bwd=enc.LstmCell.create(config.embed_size, config.hidden_size, rng, "lstm_bwd"),
            attn_params=attn.GlobalLocalParams.create(
                config.tf_dim,
                config.enc_dim,
                rng,
                tf_proj=config.tf_proj,
                attn_proj=config.attn_proj,
                alpha=config.norm_alpha,
                beta=config.norm_beta,
            ),
            baseline=attn.BaselineAttnParams.create(config.enc_dim, rng),
            w_ff=parameter(
                rng.uniform(-bound, bound, size=(config.tf_dim, config.tf_proj)),
                name="concat.w_ff",
            ),
        )

    def parameters(self) -> list[Tensor]:
        out = [self.embedding.table]
        out.extend(self.lstm_fwd.tensors())
        out.extend(self.lstm_bwd.tensors())
        out.extend(self.attn.tensors())
        out.extend(self.baseline.tensors())
        out.append(self.w_ff)
        return out

    def parameter_groups(self) -> dict[str, list[Tensor]]:
        return {
            "embedding": [self.embedding.table],
            "lstm_fwd": self.lstm_fwd.tensors(),
            "lstm_bwd": self.lstm_bwd.tensors(),
            "attention": self.attn.tensors(),
            "baseline": self.baseline.tensors(),
            "concat": [self.w_ff],
        }

    def tf_of(self, ids: list[int]) -> np.ndarray:
        return tf_vector_dense(ids, self.config.tf_dim, counts=self.config.tf_counts)

    def encode_sequence(self, ids: list[int], dropout=None) -> Tensor:
        ids = enc.truncate(ids, self.config.max_len)
        out = enc.bilstm(self.lstm_fwd, self.lstm_bwd, enc.embed(self.embedding, ids))
        if dropout is not None:
            keep, rng = dropout
            if keep < 1.0:
                mask = (rng.random(out.value.shape) < keep) / keep
                out = mul_const(out, mask)
        return out

    def question_context(self, q_ids: list[int], dropout=None) -> QuestionContext:
        f_q = enc.mean_pool(self.encode_sequence(q_ids, dropout))
        q_tf = self.tf_of(q_ids)
        if self.config.variant == "global_local":
            q_rep = attn.final_question_rep(q_tf, f_q, self.attn)
        elif self.config.variant == "local":
            q_rep = f_q
        else:
            q_rep = attn.tf_lstm_concat_rep(q_tf, f_q, self.w_ff)
        return QuestionContext(f_q=f_q, q_tf=q_tf, q_rep=q_rep)

    def answer_context(self, a_ids: list[int], dropout=None) -> AnswerContext:
        a_enc = self.encode_sequence(a_ids, dropout)
        a_tf = self.tf_of(a_ids)
        a_rep = None
        if self.config.variant == "tf_lstm_concat":
            a_rep = attn.tf_lstm_concat_rep(a_tf, enc.mean_pool(a_enc), self.w_ff)
        return AnswerContext(a_enc=a_enc, a_tf=a_tf, a_rep=a_rep)

    def score_from(self, qctx: QuestionContext, actx: AnswerContext):
        """Score one cached (question, answer) pair; returns (score, trace).

        The trace is None for the attention-free variant.
        """
        if self.config.variant == "global_local":
            trace = attn.global_local_attention(actx.a_enc, actx.a_tf, qctx.f_q, self.attn)
            a_hat = attn.attended_answer(actx.a_enc, trace)
            a_rep = attn.final_answer_rep(actx.a_tf, a_hat, self.attn)
            return attn.score(qctx.q_rep, a_rep), trace
        if self.config.variant == "local":
            trace = attn.local_attention(actx.a_enc, qctx.f_q, self.baseline)
            a_hat = attn.attended_answer(actx.a_enc, trace)
            return attn.score(qctx.f_q, a_hat), trace
        return attn.score(qctx.q_rep, actx.a_rep), None

    def score_pair(self, q_ids: list[int], a_ids: list[int], dropout=None):
        qctx = self.question_context(q_ids, dropout)
        return self.score_from(qctx, self.answer_context(a_ids, dropout))
