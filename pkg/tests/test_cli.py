import csv

import pytest

from glaqa.cli import RunConfig, UsageError, load_run_config, main
from glaqa.training import DivergenceError

GEN_FLAGS = [
    "--seed", "5", "--vocab-size", "12", "--train", "8", "--valid", "0",
    "--test", "4", "--answer-len", "6", "--pool-k", "2", "--topics", "2",
    "--related", "1", "--qlen-min", "3", "--qlen-max", "4",
]

TRAIN_SETS = [
    "--set", "embed_size=8", "--set", "hidden_size=6", "--set", "tf_proj=4",
    "--set", "attn_proj=8", "--set", "epochs=5", "--set", "learning_rate=0.003",
    "--set", "keep_prob=1.0", "--set", "seed=2", "--set", "k=2",
]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A generated corpus plus one trained checkpoint, shared by the
    read-only command tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "ds.jsonl"
    ckpt = root / "model.ckpt"
    history = root / "history.csv"
    assert main(["gen-synthetic", "--out", str(data)] + GEN_FLAGS) == 0
    assert main([
        "train", "--data", str(data), "--out", str(ckpt), "--history", str(history),
    ] + TRAIN_SETS) == 0
    return {"root": root, "data": data, "ckpt": ckpt, "history": history}


class TestGenSynthetic:
    def test_same_seed_reproduces_bytes(self, tmp_path):
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        assert main(["gen-synthetic", "--out", str(p1)] + GEN_FLAGS) == 0
        assert main(["gen-synthetic", "--out", str(p2)] + GEN_FLAGS) == 0
        assert p1.read_bytes() == p2.read_bytes()

    def test_different_seed_changes_bytes(self, tmp_path):
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        flags = GEN_FLAGS[2:]
        assert main(["gen-synthetic", "--out", str(p1), "--seed", "5"] + flags) == 0
        assert main(["gen-synthetic", "--out", str(p2), "--seed", "6"] + flags) == 0
        assert p1.read_bytes() != p2.read_bytes()

    def test_invalid_spec_is_a_data_error(self, tmp_path, capsys):
        code = main(["gen-synthetic", "--out", str(tmp_path / "x.jsonl"), "--vocab-size", "9"])
        assert code == 2
        assert "data error" in capsys.readouterr().err


class TestTrain:
    def test_history_csv_layout(self, workdir):
        with open(workdir["history"], newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["epoch", "train_loss", "valid_p_at_1", "valid_mrr", "seconds"]
        assert len(rows) == 6
        for i, row in enumerate(rows[1:]):
            assert row[0] == str(i)
            float(row[1])
            assert row[2] == "" and row[3] == ""
            float(row[4])

    def test_resolved_config_is_logged(self, workdir, tmp_path, caplog):
        out = tmp_path / "m.ckpt"
        with caplog.at_level("INFO", logger="glaqa.cli"):
            assert main([
                "train", "--data", str(workdir["data"]), "--out", str(out),
            ] + TRAIN_SETS) == 0
        assert "resolved config:" in caplog.text
        assert "learning_rate=0.003" in caplog.text

    def test_repeat_run_writes_identical_checkpoint(self, workdir, tmp_path):
        out = tmp_path / "again.ckpt"
        assert main([
            "train", "--data", str(workdir["data"]), "--out", str(out),
        ] + TRAIN_SETS) == 0
        assert out.read_bytes() == workdir["ckpt"].read_bytes()

    def test_missing_data_file_is_a_data_error(self, tmp_path, capsys):
        code = main([
            "train", "--data", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "m.ckpt"),
        ])
        assert code == 2
        assert "data error" in capsys.readouterr().err


class TestEval:
    def test_report_fields(self, workdir, capsys):
        assert main([
            "eval", "--ckpt", str(workdir["ckpt"]), "--data", str(workdir["data"]),
            "--split", "test", "--k", "2",
        ]) == 0
        out = capsys.readouterr().out
        assert "p_at_1=" in out and "mrr=" in out and "n_pools=4" in out

    def test_output_is_bit_reproducible(self, workdir, capsys):
        argv = [
            "eval", "--ckpt", str(workdir["ckpt"]), "--data", str(workdir["data"]),
            "--split", "test", "--k", "2", "--seed", "7",
        ]
        assert main(argv) == 0
        first = capsys.readouterr().out
        assert main(argv) == 0
        assert capsys.readouterr().out == first

    def test_missing_checkpoint_is_a_data_error(self, workdir, tmp_path, capsys):
        code = main([
            "eval", "--ckpt", str(tmp_path / "nope.ckpt"), "--data", str(workdir["data"]),
        ])
        assert code == 2
        assert "data error" in capsys.readouterr().err

    def test_text_file_is_not_a_checkpoint(self, workdir, capsys):
        code = main([
            "eval", "--ckpt", str(workdir["data"]), "--data", str(workdir["data"]),
        ])
        assert code == 2
        assert "not a checkpoint file" in capsys.readouterr().err


class TestRank:
    def test_ranks_the_store(self, workdir, capsys):
        assert main([
            "rank", "--ckpt", str(workdir["ckpt"]), "--answers", str(workdir["data"]),
            "--question", "kw000 please", "--top", "2",
        ]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 2
        scores = []
        for rank, line in enumerate(lines, start=1):
            cols = line.split("\t")
            assert cols[0] == str(rank)
            assert int(cols[1]) in (0, 1)
            scores.append(float(cols[2]))
        assert scores == sorted(scores, reverse=True)

    def test_unencodable_question_is_a_data_error(self, workdir, capsys):
        code = main([
            "rank", "--ckpt", str(workdir["ckpt"]), "--answers", str(workdir["data"]),
            "--question", "...",
        ])
        assert code == 2
        assert "tokenizes to nothing" in capsys.readouterr().err


class TestExplain:
    def test_writes_html_and_default_tsv(self, workdir, tmp_path):
        html = tmp_path / "weights.html"
        assert main([
            "explain", "--ckpt", str(workdir["ckpt"]), "--data", str(workdir["data"]),
            "--question-id", "0", "--answer-id", "0", "--html", str(html),
        ]) == 0
        assert html.exists()
        tsv = tmp_path / "weights.html.tsv"
        rows = tsv.read_text().splitlines()
        assert len(rows) == 6
        total = sum(float(r.split("\t")[1]) for r in rows)
        assert abs(total - 1.0) < 1e-6

    def test_unknown_question_id_is_a_data_error(self, workdir, tmp_path, capsys):
        code = main([
            "explain", "--ckpt", str(workdir["ckpt"]), "--data", str(workdir["data"]),
            "--question-id", "999", "--answer-id", "0", "--html", str(tmp_path / "w.html"),
        ])
        assert code == 2
        assert "question id 999" in capsys.readouterr().err


class TestGradCheck:
    def test_tiny_model_passes(self, capsys):
        assert main([
            "grad-check", "--vocab", "12", "--embed", "4", "--hidden", "3",
            "--tf-proj", "2", "--proj", "4",
        ]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 6
        for line in lines:
            assert line.startswith("group=")
            assert line.endswith(" ok")
            assert "max_rel_err=" in line

    def test_exceedance_exits_3(self, capsys, monkeypatch):
        monkeypatch.setattr("glaqa.cli.check_model_gradients", lambda *a, **k: {"bad": 1.0})
        assert main(["grad-check"]) == 3
        out = capsys.readouterr().out
        assert "group=bad max_rel_err=1.000e+00 FAIL" in out
        assert "exceeds tolerance" in out


class TestExitCodes:
    def test_missing_command_is_usage(self, capsys):
        assert main([]) == 1
        assert "glaqa: error:" in capsys.readouterr().err

    def test_unknown_flag_is_usage(self, capsys):
        assert main(["gen-synthetic", "--out", "x", "--frobnicate"]) == 1
        assert "glaqa: error:" in capsys.readouterr().err

    def test_bad_set_value_is_usage(self, tmp_path, capsys):
        code = main([
            "train", "--data", "d", "--out", "o", "--set", "epochs=soon",
        ])
        assert code == 1
        assert "cannot parse 'soon' as int" in capsys.readouterr().err

    def test_divergence_exits_3(self, workdir, tmp_path, capsys, monkeypatch):
        def boom(*a, **k):
            raise DivergenceError("non-finite loss at epoch 0, step 1 (question 2)")

        monkeypatch.setattr("glaqa.cli.train", boom)
        code = main([
            "train", "--data", str(workdir["data"]), "--out", str(tmp_path / "m.ckpt"),
        ] + TRAIN_SETS)
        assert code == 3
        assert "training diverged" in capsys.readouterr().err


class TestRunConfigLoading:
    def test_file_values_with_comments(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text(
            "# experiment knobs\n"
            "epochs = 3\n"
            "learning_rate=0.01   # steep\n"
            "\n"
            "tf_counts = yes\n"
        )
        cfg = load_run_config(p)
        assert cfg.epochs == 3
        assert cfg.learning_rate == 0.01
        assert cfg.tf_counts is True

    def test_set_overrides_file(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("epochs=3\n")
        cfg = load_run_config(p, overrides=["epochs=9"])
        assert cfg.epochs == 9

    def test_defaults_without_sources(self):
        assert load_run_config() == RunConfig()

    def test_unknown_key_reports_location(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("epoochs=3\n")
        with pytest.raises(UsageError, match=r"run\.cfg:1: unknown config key 'epoochs'"):
            load_run_config(p)

    def test_line_without_equals_rejected(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("epochs\n")
        with pytest.raises(UsageError, match="expected key=value"):
            load_run_config(p)

    def test_bad_bool_rejected(self):
        with pytest.raises(UsageError, match="cannot parse 'maybe' as bool"):
            load_run_config(overrides=["tf_counts=maybe"])

    def test_set_without_equals_rejected(self):
        with pytest.raises(UsageError, match="expected key=value"):
            load_run_config(overrides=["epochs"])

    def test_invalid_combination_becomes_usage_error(self):
        with pytest.raises(UsageError, match="margin"):
            load_run_config(overrides=["margin=-1"])

    def test_unknown_variant_becomes_usage_error(self):
        with pytest.raises(UsageError, match="unknown model variant 'fancy'"):
            load_run_config(overrides=["variant=fancy"])
