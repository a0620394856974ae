"""Attention heads and final representations for answer scoring.

Three heads share the encoder output:

* global-local attention: answer timesteps are weighted by how well their
  projection matches the question, where each timestep is viewed jointly
  with a whole-answer term-frequency summary;
* baseline local attention: additive timestep scoring against the question
  vector only;
* a concatenation head with no attention at all, kept as the ablation
  reference.
"""

from __future__ import annotations

import logging

import numpy as np

from . import numerics as nm
from .numerics import NORM_EPS, Tensor, constant, parameter

log = logging.getLogger(__name__)

TF_PROJ_DIM = 50
ATTN_PROJ_DIM = 140
NORM_ALPHA = 0.5
NORM_BETA = 1.0


class AttentionTrace:
    """Per-timestep attention weights plus the raw pre-softmax coefficients."""

    def __init__(self, weights: Tensor, raw: Tensor):
        self.weights = weights
        self.raw = raw

    def __len__(self):
        return self.weights.value.shape[0]


class GlobalLocalParams:
    """Learned projections for the global-local head.

    ``w1`` maps the answer's term-frequency vector to a compact global
    summary; ``w2`` maps each timestep output; ``w3`` projects the joined
    global-local view and ``w4`` the question vector into a common space
    where they are compared. ``alpha`` and ``beta`` are the target norms of
    the two parts in every joined vector.
    """

    def __init__(self, w1, w2, w3, w4, alpha=NORM_ALPHA, beta=NORM_BETA):
        if w3.value.shape[1] != w4.value.shape[1]:
            raise ValueError(
                f"projection outputs differ: {w3.value.shape} vs {w4.value.shape}"
            )
        if not (alpha > 0 and beta > 0):
            raise ValueError("norm weights must be positive")
        self.w1 = w1
        self.w2 = w2
        self.w3 = w3
        self.w4 = w4
        self.alpha = alpha
        self.beta = beta

    @classmethod
    def create(
        cls,
        tf_dim: int,
        enc_dim: int,
        rng: np.random.Generator,
        tf_proj: int = TF_PROJ_DIM,
        attn_proj: int = ATTN_PROJ_DIM,
        alpha: float = NORM_ALPHA,
        beta: float = NORM_BETA,
    ) -> "GlobalLocalParams":
        def init(rows, cols, name):
            bound = 1.0 / np.sqrt(rows)
            return parameter(rng.uniform(-bound, bound, size=(rows, cols)), name=name)

        return cls(
            w1=init(tf_dim, tf_proj, "attn.w1"),
            w2=init(enc_dim, attn_proj, "attn.w2"),
            w3=init(tf_proj + attn_proj, attn_proj, "attn.w3"),
            w4=init(enc_dim, attn_proj, "attn.w4"),
            alpha=alpha,
            beta=beta,
        )

    def tensors(self):
        return [self.w1, self.w2, self.w3, self.w4]


class BaselineAttnParams:
    """Projections for the additive baseline attention."""

    def __init__(self, w_ad, w_qd, w_ms):
        if w_ad.value.shape != w_qd.value.shape:
            raise ValueError(
                f"projection shapes differ: {w_ad.value.shape} vs {w_qd.value.shape}"
            )
        self.w_ad = w_ad
        self.w_qd = w_qd
        self.w_ms = w_ms

    @classmethod
    def create(cls, enc_dim: int, rng: np.random.Generator) -> "BaselineAttnParams":
        bound = 1.0 / np.sqrt(enc_dim)
        return cls(
            w_ad=parameter(rng.uniform(-bound, bound, size=(enc_dim, enc_dim)), name="baseline.w_ad"),
            w_qd=parameter(rng.uniform(-bound, bound, size=(enc_dim, enc_dim)), name="baseline.w_qd"),
            w_ms=parameter(rng.uniform(-bound, bound, size=enc_dim), name="baseline.w_ms"),
        )

    def tensors(self):
        return [self.w_ad, self.w_qd, self.w_ms]


def join(x_tf, x_rnn, alpha: float, beta: float) -> Tensor:
    """Concatenate two vectors after rescaling them to norms alpha and beta.

    An all-zero part cannot be rescaled; it is concatenated as-is and a
    diagnostic is logged.
    """
    x_tf = nm.as_tensor(x_tf)
    x_rnn = nm.as_tensor(x_rnn)
    if np.linalg.norm(x_tf.value) <= NORM_EPS:
        log.warning("join: zero-norm first part passed through unscaled")
    if np.linalg.norm(x_rnn.value) <= NORM_EPS:
        log.warning("join: zero-norm second part passed through unscaled")
    return nm.concat([nm.norm_scale(x_tf, alpha), nm.norm_scale(x_rnn, beta)])


def global_local_attention(a_enc: Tensor, a_tf: np.ndarray, f_q: Tensor, p: GlobalLocalParams) -> AttentionTrace:
    """Weight answer timesteps by joint global-local similarity to the question.

    The whole-answer term-frequency vector is projected once through ``w1``
    and tanh; each timestep is projected through ``w2``; the two are joined
    at the configured norms and compared (after ``w3``/``w4`` projection)
    with the question vector by cosine. Softmax of the raw coefficients
    gives the weights.
    """
    n = a_enc.value.shape[0]
    if n < 1:
        raise ValueError("global_local_attention: empty answer encoding")
    b_tf = nm.tanh(nm.matmul(constant(a_tf), p.w1))
    if np.linalg.norm(b_tf.value) <= NORM_EPS:
        log.warning("attention: zero-norm global summary passed through unscaled")
    b_loc = nm.matmul(a_enc, p.w2)
    if np.any(np.linalg.norm(b_loc.value, axis=1) <= NORM_EPS):
        log.warning("attention: zero-norm timestep projection passed through unscaled")
    joined = nm.concat(
        [nm.tile_rows(nm.norm_scale(b_tf, p.alpha), n), nm.norm_scale_rows(b_loc, p.beta)],
        axis=1,
    )
    proj = nm.matmul(joined, p.w3)
    q_proj = nm.matmul(f_q, p.w4)

    q_norm = float(np.linalg.norm(q_proj.value))
    if q_norm <= NORM_EPS:
        log.warning("attention: degenerate question projection, raw coefficients set to 0")
        raw = constant(np.zeros(n))
    else:
        row_norms = nm.rownorms(proj)
        dead = row_norms.value <= NORM_EPS
        if dead.any():
            log.warning(
                "attention: %d degenerate timestep projections, raw coefficients set to 0",
                int(dead.sum()),
            )
            # A unit denominator keeps those entries at exactly 0/1 = 0.
            row_norms = nm.add(row_norms, constant(dead.astype(np.float64)))
        denom = nm.mul(row_norms, nm.l2norm(q_proj))
        raw = nm.div(nm.matmul(proj, q_proj), denom)
    return AttentionTrace(weights=nm.softmax(raw), raw=raw)


def local_attention(a_enc: Tensor, f_q: Tensor, p: BaselineAttnParams) -> AttentionTrace:
    """Additive attention: tanh of projected timestep plus projected question,
    scored against a learned vector."""
    n = a_enc.value.shape[0]
    if n < 1:
        raise ValueError("local_attention: empty answer encoding")
    m = nm.add(nm.matmul(a_enc, p.w_ad), nm.tile_rows(nm.matmul(f_q, p.w_qd), n))
    raw = nm.matmul(nm.tanh(m), p.w_ms)
    return AttentionTrace(weights=nm.softmax(raw), raw=raw)


def attended_answer(a_enc: Tensor, trace: AttentionTrace) -> Tensor:
    """Convex combination of the answer's timestep outputs."""
    n = a_enc.value.shape[0]
    if len(trace) != n:
        raise ValueError(
            f"attended_answer: incompatible shapes ({len(trace)},) and {a_enc.value.shape}"
        )
    return nm.matmul(trace.weights, a_enc)


def final_question_rep(q_tf: np.ndarray, f_q: Tensor, p: GlobalLocalParams) -> Tensor:
    return join(constant(q_tf), f_q, p.alpha, p.beta)


def final_answer_rep(a_tf: np.ndarray, attended: Tensor, p: GlobalLocalParams) -> Tensor:
    return join(constant(a_tf), attended, p.alpha, p.beta)


def score(q_rep: Tensor, a_rep: Tensor) -> Tensor:
    return nm.cosine_sim(q_rep, a_rep)


def tf_lstm_concat_rep(x_tf: np.ndarray, pooled: Tensor, w_ff: Tensor) -> Tensor:
    """Ablation head: projected term-frequency summary glued to the pooled
    encoding, with no attention and no norm adjustment."""
    return nm.concat([nm.tanh(nm.matmul(constant(x_tf), w_ff)), pooled])
