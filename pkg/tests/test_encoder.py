import math

import numpy as np
import pytest

import glaqa.numerics as nm
from glaqa.encoder import (
    EmbeddingTable,
    GATE_NAMES,
    LstmCell,
    bilstm,
    embed,
    lstm_pass,
    load_embeddings,
    max_pool,
    mean_pool,
    truncate,
)


def reference_lstm(cell, emb, reverse=False):
    """Step-by-step LSTM built from autodiff primitives.

    Serves as the independent route against the fused sequence op: same
    recurrence, but every gate is its own recorded primitive, so values and
    gradients can be cross-checked between the two implementations.
    """
    rows = [nm.Tensor(r) if not emb.requires_grad else None for r in emb.value]
    if emb.requires_grad:
        rows = [nm.gather_rows(emb, [t]) for t in range(emb.value.shape[0])]
        rows = [nm.sum(r, axis=0) for r in rows]
    h = cell.hidden_size
    order = range(len(rows) - 1, -1, -1) if reverse else range(len(rows))
    h_prev = nm.constant(np.zeros(h))
    c_prev = nm.constant(np.zeros(h))
    outs = {}
    for t in order:
        x = rows[t]
        gates = {}
        for g in GATE_NAMES:
            pre = nm.add(
                nm.add(nm.matmul(x, getattr(cell, f"w_x{g}")), nm.matmul(h_prev, getattr(cell, f"w_h{g}"))),
                getattr(cell, f"b_{g}"),
            )
            gates[g] = nm.tanh(pre) if g == "g" else nm.sigmoid(pre)
        c = nm.add(nm.mul(gates["f"], c_prev), nm.mul(gates["i"], gates["g"]))
        ht = nm.mul(gates["o"], nm.tanh(c))
        outs[t] = ht
        h_prev, c_prev = ht, c
    return [outs[t] for t in range(len(rows))]


def make_cell(rng, e, h, prefix="cell"):
    return LstmCell.create(e, h, rng, prefix)


class TestEmbeddingTable:
    def test_shape_and_bounds(self):
        rng = np.random.default_rng(0)
        table = EmbeddingTable.create(10, 4, rng)
        assert table.table.value.shape == (10, 4)
        assert np.all(np.abs(table.table.value) <= 0.1)

    def test_pad_row_zero(self):
        rng = np.random.default_rng(1)
        table = EmbeddingTable.create(10, 4, rng)
        np.testing.assert_array_equal(table.table.value[1], np.zeros(4))

    def test_embed_shape_and_lookup(self):
        rng = np.random.default_rng(2)
        table = EmbeddingTable.create(10, 4, rng)
        out = embed(table, [3, 7, 3])
        assert out.shape == (3, 4)
        np.testing.assert_array_equal(out.value[0], table.table.value[3])
        np.testing.assert_array_equal(out.value[1], table.table.value[7])
        np.testing.assert_array_equal(out.value[2], table.table.value[3])

    def test_all_pad_sequence_embeds_to_zero(self):
        rng = np.random.default_rng(3)
        table = EmbeddingTable.create(10, 4, rng)
        out = embed(table, [1, 1, 1])
        np.testing.assert_array_equal(out.value, np.zeros((3, 4)))

    def test_empty_sequence_rejected(self):
        rng = np.random.default_rng(4)
        table = EmbeddingTable.create(10, 4, rng)
        with pytest.raises(ValueError, match="cannot encode empty sequence"):
            embed(table, [])


class TestLstmCellInit:
    def test_shapes(self):
        rng = np.random.default_rng(5)
        cell = make_cell(rng, 3, 4)
        for g in GATE_NAMES:
            assert getattr(cell, f"w_x{g}").value.shape == (3, 4)
            assert getattr(cell, f"w_h{g}").value.shape == (4, 4)
            assert getattr(cell, f"b_{g}").value.shape == (4,)

    def test_biases_start_at_zero(self):
        rng = np.random.default_rng(6)
        cell = make_cell(rng, 3, 4)
        for g in GATE_NAMES:
            np.testing.assert_array_equal(getattr(cell, f"b_{g}").value, np.zeros(4))

    def test_weight_bound(self):
        rng = np.random.default_rng(7)
        cell = make_cell(rng, 3, 16)
        bound = 1.0 / math.sqrt(16)
        for t in cell.tensors():
            assert np.all(np.abs(t.value) <= bound)


class TestLstmForward:
    def test_output_shape_matches_length(self):
        rng = np.random.default_rng(8)
        cell = make_cell(rng, 3, 5)
        for m in (1, 2, 7):
            out = lstm_pass(cell, nm.constant(rng.normal(size=(m, 3))))
            assert out.shape == (m, 5)

    def test_zero_parameters_give_zero_outputs(self):
        rng = np.random.default_rng(9)
        cell = make_cell(rng, 3, 4)
        for t in cell.tensors():
            t.value[...] = 0.0
        out = lstm_pass(cell, nm.constant(rng.normal(size=(5, 3))))
        np.testing.assert_array_equal(out.value, np.zeros((5, 4)))

    def test_single_step_hand_computed(self):
        """One timestep, scalar gates: i=f=o=sigmoid(x), g=tanh(x)."""
        rng = np.random.default_rng(10)
        cell = make_cell(rng, 1, 1)
        for g in GATE_NAMES:
            getattr(cell, f"w_x{g}").value[...] = 1.0
            getattr(cell, f"b_{g}").value[...] = 0.0
        x = 0.5
        out = lstm_pass(cell, nm.constant(np.array([[x]])))
        sig = 1.0 / (1.0 + math.exp(-x))
        c = sig * math.tanh(x)
        expect = sig * math.tanh(c)
        assert abs(out.value[0, 0] - expect) < 1e-15

    def test_matches_primitive_composition(self):
        rng = np.random.default_rng(11)
        for m, e, h in ((1, 3, 2), (2, 4, 3), (6, 2, 4)):
            cell = make_cell(rng, e, h)
            emb = nm.constant(rng.normal(size=(m, e)))
            for reverse in (False, True):
                fused = lstm_pass(cell, emb, reverse=reverse)
                ref = reference_lstm(cell, emb, reverse=reverse)
                for t in range(m):
                    np.testing.assert_allclose(fused.value[t], ref[t].value, atol=1e-12)

    def test_forward_causality(self):
        """Row i of the forward pass depends only on tokens up to i."""
        rng = np.random.default_rng(12)
        cell = make_cell(rng, 3, 4)
        base = rng.normal(size=(6, 3))
        changed = base.copy()
        changed[4] += 1.0
        a = lstm_pass(cell, nm.constant(base)).value
        b = lstm_pass(cell, nm.constant(changed)).value
        np.testing.assert_array_equal(a[:4], b[:4])
        assert not np.allclose(a[4:], b[4:])

    def test_backward_anticausality(self):
        """Row i of the reverse pass depends only on tokens from i onward."""
        rng = np.random.default_rng(13)
        cell = make_cell(rng, 3, 4)
        base = rng.normal(size=(6, 3))
        changed = base.copy()
        changed[1] += 1.0
        a = lstm_pass(cell, nm.constant(base), reverse=True).value
        b = lstm_pass(cell, nm.constant(changed), reverse=True).value
        np.testing.assert_array_equal(a[2:], b[2:])
        assert not np.allclose(a[:2], b[:2])

    def test_incompatible_width_rejected(self):
        rng = np.random.default_rng(14)
        cell = make_cell(rng, 3, 4)
        with pytest.raises(ValueError, match="lstm_pass: incompatible shapes"):
            lstm_pass(cell, nm.constant(np.zeros((2, 5))))


class TestLstmBackward:
    def test_gradients_match_primitive_composition(self):
        """The fused backward must agree with backprop through the same
        recurrence expressed as individually recorded primitives."""
        rng = np.random.default_rng(15)
        for m, e, h, reverse in ((2, 3, 2, False), (4, 2, 3, True), (5, 3, 2, False)):
            cell = make_cell(rng, e, h)
            emb_values = rng.normal(size=(m, e))
            probe = rng.normal(size=(m, h))

            emb_a = nm.parameter(emb_values.copy(), name="emb")
            with nm.Tape() as tape:
                out = lstm_pass(cell, emb_a, reverse=reverse)
                loss = nm.sum(nm.mul(out, nm.constant(probe)))
            tape.backward(loss)
            fused_grads = [p.grad.copy() for p in (emb_a, *cell.tensors())]

            for p in cell.tensors():
                p.grad = None
            emb_b = nm.parameter(emb_values.copy(), name="emb")
            with nm.Tape() as tape:
                rows = reference_lstm(cell, emb_b, reverse=reverse)
                terms = [nm.dot(r, nm.constant(probe[t])) for t, r in enumerate(rows)]
                loss = terms[0]
                for term in terms[1:]:
                    loss = nm.add(loss, term)
            tape.backward(loss)
            ref_grads = [p.grad.copy() for p in (emb_b, *cell.tensors())]

            for got, want in zip(fused_grads, ref_grads):
                np.testing.assert_allclose(got, want, atol=1e-10)
            for p in cell.tensors():
                p.grad = None

    def test_finite_difference_audit(self):
        rng = np.random.default_rng(16)
        cell = make_cell(rng, 2, 2)
        emb = nm.parameter(rng.normal(size=(2, 2)), name="emb")
        probe = nm.constant(rng.normal(size=(2, 2)))

        def f():
            return nm.sum(nm.mul(lstm_pass(cell, emb), probe))

        errs = nm.grad_check(f, [emb, *cell.tensors()])
        assert max(errs.values()) < 1e-4, errs


class TestBilstmAndPooling:
    def test_bilstm_concatenates_directions(self):
        rng = np.random.default_rng(17)
        fwd = make_cell(rng, 3, 4, "fwd")
        bwd = make_cell(rng, 3, 4, "bwd")
        emb = nm.constant(rng.normal(size=(5, 3)))
        out = bilstm(fwd, bwd, emb)
        assert out.shape == (5, 8)
        np.testing.assert_array_equal(out.value[:, :4], lstm_pass(fwd, emb).value)
        np.testing.assert_array_equal(out.value[:, 4:], lstm_pass(bwd, emb, reverse=True).value)

    def test_mean_pool_hand_case(self):
        enc = nm.constant(np.array([[1.0, 3.0], [3.0, 5.0]]))
        np.testing.assert_array_equal(mean_pool(enc).value, [2.0, 4.0])

    def test_max_pool_hand_case(self):
        enc = nm.constant(np.array([[1.0, 5.0], [3.0, 2.0]]))
        np.testing.assert_array_equal(max_pool(enc).value, [3.0, 5.0])

    def test_constant_rows_pool_to_themselves(self):
        enc = nm.constant(np.tile([2.5, -1.0], (4, 1)))
        np.testing.assert_array_equal(mean_pool(enc).value, [2.5, -1.0])
        np.testing.assert_array_equal(max_pool(enc).value, [2.5, -1.0])

    def test_single_row_pools_to_itself(self):
        enc = nm.constant(np.array([[7.0, -2.0, 0.5]]))
        np.testing.assert_array_equal(mean_pool(enc).value, [7.0, -2.0, 0.5])
        np.testing.assert_array_equal(max_pool(enc).value, [7.0, -2.0, 0.5])

    def test_max_dominates_mean(self):
        rng = np.random.default_rng(18)
        for _ in range(20):
            enc = nm.constant(rng.normal(size=(rng.integers(1, 7), 5)))
            assert np.all(max_pool(enc).value >= mean_pool(enc).value - 1e-15)


class TestTruncate:
    def test_shortens_long_sequences(self):
        assert truncate([1, 2, 3, 4], 2) == [1, 2]

    def test_leaves_short_sequences(self):
        assert truncate([1, 2], 5) == [1, 2]


class TestLoadEmbeddings:
    def test_loads_known_words_only(self, tmp_path):
        from glaqa.text import Vocabulary

        rng = np.random.default_rng(19)
        vocab = Vocabulary(["cat", "dog"])
        table = EmbeddingTable.create(len(vocab), 3, rng)
        before = table.table.value.copy()
        path = tmp_path / "emb.txt"
        path.write_text("cat 1 2 3\nbird 9 9 9\ndog 4 5 6\n")
        loaded = load_embeddings(path, vocab, table)
        assert loaded == 2
        np.testing.assert_array_equal(table.table.value[vocab.id_of("cat")], [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(table.table.value[vocab.id_of("dog")], [4.0, 5.0, 6.0])
        np.testing.assert_array_equal(table.table.value[1], before[1])

    def test_wrong_width_rejected(self, tmp_path):
        from glaqa.text import Vocabulary

        rng = np.random.default_rng(20)
        vocab = Vocabulary(["cat"])
        table = EmbeddingTable.create(len(vocab), 3, rng)
        path = tmp_path / "emb.txt"
        path.write_text("cat 1 2\n")
        with pytest.raises(ValueError, match="expected 3"):
            load_embeddings(path, vocab, table)
