"""Dataset container, line-delimited JSON storage, and the synthetic corpus
generator used for desk-scale experiments."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .seeding import substream

SPLITS = ("train", "valid", "test")


class DataError(Exception):
    """Malformed dataset, config, or store content. Maps to CLI exit code 2."""


@dataclass
class Question:
    id: int
    text: str
    answer_ids: list[int]
    split: str


@dataclass
class Dataset:
    answers: dict[int, str] = field(default_factory=dict)
    questions: list[Question] = field(default_factory=list)

    def split(self, name: str) -> list[Question]:
        return [q for q in self.questions if q.split == name]

    def validate(self, source: str = "dataset"):
        seen = set()
        for q in self.questions:
            if q.id in seen:
                raise DataError(f"{source}: duplicate question id {q.id}")
            seen.add(q.id)
            if q.split not in SPLITS:
                raise DataError(f"{source}: question {q.id} has unknown split {q.split!r}")
            if not q.answer_ids:
                raise DataError(f"{source}: question {q.id} has no answer ids")
            for a in q.answer_ids:
                if a not in self.answers:
                    raise DataError(f"{source}: question {q.id} references missing answer {a}")


def _field(record: dict, name: str, kind, path: str, line_no: int):
    if name not in record:
        raise DataError(f"{path}:{line_no}: missing field {name!r}")
    value = record[name]
    if kind is int and isinstance(value, bool) or not isinstance(value, kind):
        raise DataError(f"{path}:{line_no}: field {name!r} has wrong type")
    return value


def load_dataset(path) -> Dataset:
    ds = Dataset()
    path = str(path)
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{line_no}: invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise DataError(f"{path}:{line_no}: record is not an object")
            kind = _field(record, "kind", str, path, line_no)
            if kind == "answer":
                aid = _field(record, "id", int, path, line_no)
                if aid in ds.answers:
                    raise DataError(f"{path}:{line_no}: duplicate answer id {aid}")
                ds.answers[aid] = _field(record, "text", str, path, line_no)
            elif kind == "question":
                answer_ids = _field(record, "answer_ids", list, path, line_no)
                if not all(isinstance(a, int) and not isinstance(a, bool) for a in answer_ids):
                    raise DataError(f"{path}:{line_no}: field 'answer_ids' has wrong type")
                ds.questions.append(Question(
                    id=_field(record, "id", int, path, line_no),
                    text=_field(record, "text", str, path, line_no),
                    answer_ids=list(answer_ids),
                    split=_field(record, "split", str, path, line_no),
                ))
            else:
                raise DataError(f"{path}:{line_no}: unknown record kind {kind!r}")
    ds.validate(source=path)
    return ds


def save_dataset(ds: Dataset, path):
    """Write records sorted by kind and id so equal datasets serialize
    byte-identically."""
    with open(path, "w", encoding="utf-8") as fh:
        for aid in sorted(ds.answers):
            fh.write(json.dumps({"kind": "answer", "id": aid, "text": ds.answers[aid]}) + "\n")
        for q in sorted(ds.questions, key=lambda q: q.id):
            fh.write(json.dumps({
                "kind": "question",
                "id": q.id,
                "text": q.text,
                "answer_ids": q.answer_ids,
                "split": q.split,
            }) + "\n")


@dataclass
class SyntheticSpec:
    """Knobs for the keyword-topic corpus.

    Each topic owns one keyword, a few related words, and a single canonical
    answer. All answers share one filler backbone; a topic's answer overwrites
    a few random slots with its keyword and related words. Distractors for a
    question therefore differ from the correct answer only at topic slots,
    which rewards models that read out those positions rather than the whole
    sequence. Questions are a keyword plus filler; every non-matching answer
    is keyword-free by construction, so ranking is learnable from lexical
    evidence alone.
    """

    vocab_size: int = 200
    n_train: int = 500
    n_valid: int = 100
    n_test: int = 100
    answer_len: int = 40
    pool_k: int = 10
    seed: int = 1
    n_topics: int = 20
    related_per_topic: int = 2
    question_len_min: int = 8
    question_len_max: int = 14

    def validate(self):
        if self.vocab_size < 10:
            raise DataError("synthetic spec: vocab size must be at least 10")
        reserved = self.n_topics * (1 + self.related_per_topic)
        if reserved >= self.vocab_size:
            raise DataError(
                f"synthetic spec: {self.n_topics} topics need {reserved} words, "
                f"leaving no filler in a vocabulary of {self.vocab_size}"
            )
        if self.pool_k > self.n_topics:
            raise DataError(
                f"synthetic spec: pool size {self.pool_k} exceeds the "
                f"{self.n_topics}-answer store"
            )
        if self.answer_len < 1 + self.related_per_topic:
            raise DataError("synthetic spec: answers cannot fit keyword plus related words")
        if not 1 <= self.question_len_min <= self.question_len_max:
            raise DataError("synthetic spec: bad question length range")


def gen_synthetic(spec: SyntheticSpec) -> Dataset:
    """Build the topic-keyword corpus; fully determined by the spec."""
    spec.validate()
    rng = substream(spec.seed, "synthetic")
    keywords = [f"kw{t:03d}" for t in range(spec.n_topics)]
    related = [
        [f"rw{t:03d}{j}" for j in range(spec.related_per_topic)]
        for t in range(spec.n_topics)
    ]
    n_filler = spec.vocab_size - spec.n_topics * (1 + spec.related_per_topic)
    filler = [f"fw{i:03d}" for i in range(n_filler)]

    ds = Dataset()
    backbone = [filler[i] for i in rng.integers(0, n_filler, size=spec.answer_len)]
    for t in range(spec.n_topics):
        tokens = list(backbone)
        slots = rng.choice(spec.answer_len, size=1 + spec.related_per_topic, replace=False)
        for slot, word in zip(slots, [keywords[t]] + list(related[t])):
            tokens[slot] = word
        ds.answers[t] = " ".join(tokens)

    qid = 0
    for split_name, count in (("train", spec.n_train), ("valid", spec.n_valid), ("test", spec.n_test)):
        topics = [i % spec.n_topics for i in range(count)]
        rng.shuffle(topics)
        for t in topics:
            length = int(rng.integers(spec.question_len_min, spec.question_len_max + 1))
            tokens = [keywords[t]] + [
                filler[i] for i in rng.integers(0, n_filler, size=length - 1)
            ]
            rng.shuffle(tokens)
            ds.questions.append(Question(id=qid, text=" ".join(tokens), answer_ids=[t], split=split_name))
            qid += 1
    return ds
