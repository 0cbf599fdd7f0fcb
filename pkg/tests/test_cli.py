"""Tests for the `gmm-wae` command line."""

import csv

import pytest

from gmm_wae.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main

TRAIN_FLAGS = [
    "--latent-dim", "4",
    "--embed-dim", "8",
    "--hidden-dim", "8",
    "--max-len", "20",
    "--batch", "8",
    "--epochs", "1",
    "-q",
]


@pytest.fixture
def corpus(tmp_path):
    path = tmp_path / "synth.tsv"
    assert main(["synth", "--styles", "3", "--per-class", "30", "--out", str(path), "-q"]) == EXIT_OK
    return path


@pytest.fixture
def checkpoint(tmp_path, corpus):
    out = tmp_path / "ckpt"
    assert main(["train", "--corpus", str(corpus), "--out", str(out), *TRAIN_FLAGS]) == EXIT_OK
    return out


class TestSynth:
    """The `synth` subcommand."""

    def test_writes_lines(self, corpus):
        lines = corpus.read_text(encoding="utf-8").splitlines()
        assert len(lines) == 90
        assert all(len(line.split("\t")) == 2 for line in lines)

    def test_one_style(self, tmp_path):
        assert main(["synth", "--styles", "1", "--out", str(tmp_path / "x.tsv")]) == EXIT_USAGE


class TestTrain:
    """The `train` subcommand."""

    def test_writes_checkpoint(self, checkpoint):
        assert (checkpoint / "model.bin").is_file()
        assert (checkpoint / "history.csv").is_file()

    def test_missing_corpus(self, tmp_path):
        code = main(["train", "--corpus", str(tmp_path / "nope.tsv"), "--out", str(tmp_path / "c"), *TRAIN_FLAGS])
        assert code == EXIT_RUNTIME

    def test_invalid_batch(self, tmp_path, corpus):
        code = main(["train", "--corpus", str(corpus), "--out", str(tmp_path / "c"), "--batch", "1", "-q"])
        assert code == EXIT_USAGE

    def test_missing_required_flag(self, corpus):
        assert main(["train", "--corpus", str(corpus)]) == EXIT_USAGE


class TestGenerate:
    """The `generate` subcommand."""

    def test_seeded_output(self, checkpoint, capsys):
        argv = ["generate", "--ckpt", str(checkpoint), "--style", "travel", "--num", "4", "--seed", "7", "-q"]

        assert main(argv) == EXIT_OK
        first = capsys.readouterr().out
        assert main(argv) == EXIT_OK
        second = capsys.readouterr().out

        assert first == second
        assert len(first.splitlines()) == 4

    def test_interpolation_with_meta(self, checkpoint, capsys):
        argv = [
            "generate", "--ckpt", str(checkpoint),
            "--styles", "0,2", "--weights", "0.3,0.7",
            "--num", "2", "--with-meta", "-q",
        ]
        assert main(argv) == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 2
        assert all(line.startswith("[0.3, 0.0, 0.7]\t") for line in lines)

    def test_weights_must_sum_to_one(self, checkpoint):
        argv = ["generate", "--ckpt", str(checkpoint), "--styles", "0,1", "--weights", "0.6,0.5", "-q"]
        assert main(argv) == EXIT_USAGE

    def test_unknown_style(self, checkpoint):
        assert main(["generate", "--ckpt", str(checkpoint), "--style", "poetry", "-q"]) == EXIT_USAGE

    def test_weights_with_single_style(self, checkpoint):
        argv = ["generate", "--ckpt", str(checkpoint), "--style", "0", "--weights", "1.0", "-q"]
        assert main(argv) == EXIT_USAGE

    def test_style_required(self, checkpoint):
        assert main(["generate", "--ckpt", str(checkpoint)]) == EXIT_USAGE


class TestEval:
    """The `eval` subcommand."""

    def test_report_rows(self, checkpoint, corpus, tmp_path, capsys):
        report = tmp_path / "report.csv"
        argv = [
            "eval", "--ckpt", str(checkpoint), "--corpus", str(corpus),
            "--samples", "3", "--report", str(report), "-q",
        ]
        assert main(argv) == EXIT_OK

        with open(report, newline="") as f:
            rows = list(csv.reader(f))
        # 3 conditioned rows and 3 pairs
        assert len(rows) == 1 + 6
        assert (tmp_path / "report_summary.csv").is_file()
        assert "perplexity" in capsys.readouterr().out

    def test_unknown_metric(self, checkpoint, corpus):
        argv = ["eval", "--ckpt", str(checkpoint), "--corpus", str(corpus), "--metrics", "bleu", "-q"]
        assert main(argv) == EXIT_USAGE

    @pytest.mark.parametrize("fraction", ["0", "1.5"])
    def test_invalid_holdout_fraction(self, checkpoint, corpus, fraction):
        argv = [
            "eval", "--ckpt", str(checkpoint), "--corpus", str(corpus),
            "--holdout-fraction", fraction, "--samples", "2", "-q",
        ]
        assert main(argv) == EXIT_USAGE
