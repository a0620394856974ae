"""Bidirectional LSTM encoder over trainable word embeddings.

The per-sequence LSTM pass is a single fused tape operation: the forward
loop saves gate activations and cell states, and the backward function
replays the recurrence analytically. Composing per-gate primitives on the
tape would record thousands of nodes per sequence; the fused op records
one.
"""

from __future__ import annotations

import numpy as np

from .numerics import Tensor, _rec, _tracing, concat, gather_rows, mean, parameter, rowmax
from .text import PAD_ID

GATE_NAMES = ("i", "f", "g", "o")


class EmbeddingTable:
    """Lookup matrix, one row per vocabulary id. The padding row stays zero."""

    def __init__(self, table: Tensor):
        self.table = table

    @property
    def vocab_size(self) -> int:
        return self.table.value.shape[0]

    @property
    def embed_size(self) -> int:
        return self.table.value.shape[1]

    @classmethod
    def create(cls, vocab_size: int, embed_size: int, rng: np.random.Generator) -> "EmbeddingTable":
        vals = rng.uniform(-0.1, 0.1, size=(vocab_size, embed_size))
        vals[PAD_ID] = 0.0
        return cls(parameter(vals, name="embedding"))


class LstmCell:
    """One direction's LSTM parameters: four gates, each with x-weights,
    h-weights, and a bias."""

    def __init__(self, tensors: dict[str, Tensor]):
        for gate in GATE_NAMES:
            for key in (f"w_x{gate}", f"w_h{gate}", f"b_{gate}"):
                setattr(self, key, tensors[key])

    @property
    def input_size(self) -> int:
        return self.w_xi.value.shape[0]

    @property
    def hidden_size(self) -> int:
        return self.w_xi.value.shape[1]

    @classmethod
    def create(cls, input_size: int, hidden_size: int, rng: np.random.Generator, prefix: str) -> "LstmCell":
        bound = 1.0 / np.sqrt(hidden_size)
        tensors = {}
        for gate in GATE_NAMES:
            tensors[f"w_x{gate}"] = parameter(
                rng.uniform(-bound, bound, size=(input_size, hidden_size)),
                name=f"{prefix}.w_x{gate}",
            )
            tensors[f"w_h{gate}"] = parameter(
                rng.uniform(-bound, bound, size=(hidden_size, hidden_size)),
                name=f"{prefix}.w_h{gate}",
            )
            # Zero biases keep early cell state short-lived, so each timestep
            # output is dominated by nearby tokens rather than the whole prefix.
            tensors[f"b_{gate}"] = parameter(np.zeros(hidden_size), name=f"{prefix}.b_{gate}")
        return cls(tensors)

    def tensors(self) -> list[Tensor]:
        out = []
        for gate in GATE_NAMES:
            out.extend([getattr(self, f"w_x{gate}"), getattr(self, f"w_h{gate}"), getattr(self, f"b_{gate}")])
        return out


def embed(table: EmbeddingTable, ids: list[int]) -> Tensor:
    if len(ids) == 0:
        raise ValueError("cannot encode empty sequence")
    return gather_rows(table.table, ids)


def lstm_pass(cell: LstmCell, emb: Tensor, reverse: bool = False) -> Tensor:
    """Run one LSTM direction over an embedded sequence; outputs row per step.

    With ``reverse`` the sequence is processed back to front but outputs are
    returned in input order, so row i holds the state after consuming
    tokens m..i.
    """
    X = emb.value
    if X.ndim != 2 or X.shape[1] != cell.input_size:
        raise ValueError(
            f"lstm_pass: incompatible shapes {X.shape} and {cell.w_xi.value.shape}"
        )
    T = X.shape[0]
    h = cell.hidden_size
    Wx = np.concatenate([getattr(cell, f"w_x{g}").value for g in GATE_NAMES], axis=1)
    Wh = np.concatenate([getattr(cell, f"w_h{g}").value for g in GATE_NAMES], axis=1)
    b = np.concatenate([getattr(cell, f"b_{g}").value for g in GATE_NAMES])

    Xp = X[::-1] if reverse else X
    pre_x = Xp @ Wx + b
    I = np.empty((T, h)); F = np.empty((T, h)); G = np.empty((T, h)); O = np.empty((T, h))
    C = np.empty((T, h)); H = np.empty((T, h))
    h_prev = np.zeros(h)
    c_prev = np.zeros(h)
    for t in range(T):
        a = pre_x[t] + h_prev @ Wh
        I[t] = _sig(a[:h])
        F[t] = _sig(a[h:2 * h])
        G[t] = np.tanh(a[2 * h:3 * h])
        O[t] = _sig(a[3 * h:])
        C[t] = F[t] * c_prev + I[t] * G[t]
        H[t] = O[t] * np.tanh(C[t])
        h_prev, c_prev = H[t], C[t]

    out = Tensor(H[::-1] if reverse else H)
    inputs = (emb, *cell.tensors())
    if _tracing(*inputs):
        def backfn(grad_out):
            dH = grad_out[::-1] if reverse else grad_out
            dA = np.empty((T, 4 * h))
            dh_next = np.zeros(h)
            dc_next = np.zeros(h)
            for t in range(T - 1, -1, -1):
                dh = dH[t] + dh_next
                tc = np.tanh(C[t])
                dc = dc_next + dh * O[t] * (1.0 - tc * tc)
                c_before = C[t - 1] if t > 0 else np.zeros(h)
                dA[t, :h] = dc * G[t] * I[t] * (1.0 - I[t])
                dA[t, h:2 * h] = dc * c_before * F[t] * (1.0 - F[t])
                dA[t, 2 * h:3 * h] = dc * I[t] * (1.0 - G[t] * G[t])
                dA[t, 3 * h:] = dh * tc * O[t] * (1.0 - O[t])
                dh_next = Wh @ dA[t]
                dc_next = dc * F[t]
            Hprev = np.vstack([np.zeros((1, h)), H[:-1]]) if T > 1 else np.zeros((1, h))
            dWx = Xp.T @ dA
            dWh = Hprev.T @ dA
            db = dA.sum(axis=0)
            dXp = dA @ Wx.T
            grads = [dXp[::-1] if reverse else dXp]
            for k in range(4):
                grads.append(dWx[:, k * h:(k + 1) * h])
                grads.append(dWh[:, k * h:(k + 1) * h])
                grads.append(db[k * h:(k + 1) * h])
            return tuple(
                g if inp.requires_grad else None for g, inp in zip(grads, inputs)
            )
        _rec(out, inputs, backfn)
    return out


def _sig(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def bilstm(fwd: LstmCell, bwd: LstmCell, emb: Tensor) -> Tensor:
    """Per-step outputs of both directions, concatenated columnwise (m x 2h)."""
    return concat([lstm_pass(fwd, emb), lstm_pass(bwd, emb, reverse=True)], axis=1)


def mean_pool(enc: Tensor) -> Tensor:
    return mean(enc, axis=0)


def max_pool(enc: Tensor) -> Tensor:
    return rowmax(enc)


def truncate(ids: list[int], max_len: int) -> list[int]:
    return ids[:max_len]


def load_embeddings(path, vocab, table: EmbeddingTable) -> int:
    """Overwrite table rows from a `word v1 ... ve` text file.

    Words absent from the vocabulary are skipped; vocabulary words absent
    from the file keep their random init. Returns the number of rows set.
    """
    e = table.embed_size
    loaded = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            word, values = parts[0], parts[1:]
            if word not in vocab:
                continue
            if len(values) != e:
                raise ValueError(
                    f"embedding file row for {word!r} has {len(values)} values, expected {e}"
                )
            table.table.value[vocab.id_of(word)] = [float(x) for x in values]
            loaded += 1
    return loaded
