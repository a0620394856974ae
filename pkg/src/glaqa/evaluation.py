"""Candidate pools, ranking, retrieval metrics, and attention explanations."""

from __future__ import annotations

import html as html_mod
from dataclasses import dataclass

import numpy as np

from .data import DataError, Dataset
from .model import Model
from .text import Vocabulary, encode, tokenize


@dataclass
class CandidatePool:
    question_id: int
    candidate_ids: list[int]
    correct_ids: set[int]

    def __post_init__(self):
        if len(set(self.candidate_ids)) != len(self.candidate_ids):
            raise DataError(f"pool for question {self.question_id}: duplicate candidates")
        missing = set(self.correct_ids) - set(self.candidate_ids)
        if missing:
            raise DataError(
                f"pool for question {self.question_id}: correct ids {sorted(missing)} not in pool"
            )


@dataclass
class RankedPool:
    entries: list[tuple[int, float]]
    best_correct_rank: int


class Scorer:
    """Scores candidates against questions, caching per-answer encodings.

    The answer-side LSTM work is question-independent, so a pool evaluation
    encodes each answer once. The cache is tied to the parameter values at
    build time; create a fresh Scorer after a training step.
    """

    def __init__(self, model: Model, answer_tokens: dict[int, list[int]]):
        self.model = model
        self._answer_tokens = answer_tokens
        self._cache = {}

    @classmethod
    def for_dataset(cls, model: Model, vocab: Vocabulary, dataset: Dataset) -> "Scorer":
        return cls(model, {aid: encode(text, vocab) for aid, text in dataset.answers.items()})

    def answer_context(self, answer_id: int):
        ctx = self._cache.get(answer_id)
        if ctx is None:
            if answer_id not in self._answer_tokens:
                raise DataError(f"answer id {answer_id} missing from answer store")
            ctx = self.model.answer_context(self._answer_tokens[answer_id])
            self._cache[answer_id] = ctx
        return ctx


def rank_pool(scorer: Scorer, q_ids: list[int], pool: CandidatePool) -> RankedPool:
    """Score every candidate and sort best-first; ties break on ascending id."""
    qctx = scorer.model.question_context(q_ids)
    entries = []
    for cid in pool.candidate_ids:
        s, _ = scorer.model.score_from(qctx, scorer.answer_context(cid))
        entries.append((cid, float(s.value)))
    entries.sort(key=lambda e: (-e[1], e[0]))
    best = min(
        i + 1 for i, (cid, _) in enumerate(entries) if cid in pool.correct_ids
    )
    return RankedPool(entries=entries, best_correct_rank=best)


def precision_at_1(results: list[RankedPool]) -> float:
    if not results:
        raise ValueError("precision_at_1: no ranked pools")
    return sum(1 for r in results if r.best_correct_rank == 1) / len(results)


def mrr(results: list[RankedPool]) -> float:
    if not results:
        raise ValueError("mrr: no ranked pools")
    return sum(1.0 / r.best_correct_rank for r in results) / len(results)


def build_pools(dataset: Dataset, split: str, k: int, rng: np.random.Generator) -> list[CandidatePool]:
    """One pool per question in the split: its correct answers plus uniform
    distractors from the rest of the store, k candidates total."""
    store_ids = sorted(dataset.answers)
    if len(store_ids) < k:
        raise DataError(f"answer store has {len(store_ids)} answers, need k={k}")
    pools = []
    for q in dataset.split(split):
        correct = sorted(set(q.answer_ids))
        if len(correct) > k:
            raise DataError(
                f"question {q.id} has {len(correct)} correct answers, more than k={k}"
            )
        non_correct = [a for a in store_ids if a not in set(correct)]
        picked = rng.choice(non_correct, size=k - len(correct), replace=False)
        pools.append(CandidatePool(
            question_id=q.id,
            candidate_ids=correct + [int(a) for a in picked],
            correct_ids=set(correct),
        ))
    return pools


def evaluate_pools(scorer: Scorer, question_tokens: dict[int, list[int]], pools: list[CandidatePool]):
    """Rank every pool; returns (P@1, MRR, ranked pools)."""
    results = [rank_pool(scorer, question_tokens[p.question_id], p) for p in pools]
    return precision_at_1(results), mrr(results), results


def format_report(p_at_1: float, mrr_value: float, n_pools: int) -> str:
    # P@1 counts a pool as a success when any correct answer is at rank 1;
    # MRR uses the best-ranked correct answer.
    return (
        "# success = any correct answer at rank 1; MRR uses best correct rank\n"
        f"p_at_1={p_at_1:.6f}\n"
        f"mrr={mrr_value:.6f}\n"
        f"n_pools={n_pools}\n"
    )


def explain(model: Model, vocab: Vocabulary, question_text: str, answer_text: str):
    """Attention weight per answer token, aligned to the tokenized answer.

    Only attention variants produce weights; the concatenation ablation has
    none to show.
    """
    q_ids = encode(question_text, vocab)
    a_tokens = tokenize(answer_text)[: model.config.max_len]
    a_ids = [vocab.id_of(w) for w in a_tokens]
    if not q_ids or not a_ids:
        raise DataError("explain: question and answer must both be non-empty")
    _, trace = model.score_pair(q_ids, a_ids)
    if trace is None:
        raise DataError(f"model variant {model.config.variant!r} has no attention weights")
    weights = trace.weights.value
    if len(weights) != len(a_tokens):
        raise RuntimeError(
            f"internal: {len(weights)} weights for {len(a_tokens)} tokens"
        )
    return list(zip(a_tokens, (float(w) for w in weights)))


def explanation_html(pairs) -> str:
    """One span per token; background intensity scales with relative weight."""
    top = max(w for _, w in pairs)
    spans = []
    for token, w in pairs:
        intensity = w / top if top > 0 else 0.0
        spans.append(
            f'<span style="background: rgba(255, 140, 0, {intensity:.3f})" '
            f'title="{w:.4f}">{html_mod.escape(token)}</span>'
        )
    body = " ".join(spans)
    return (
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">"
        "<title>attention weights</title></head>\n"
        f"<body><p>{body}</p></body></html>\n"
    )


def explanation_tsv(pairs) -> str:
    return "".join(f"{token}\t{w:.10f}\n" for token, w in pairs)
