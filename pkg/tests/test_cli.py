"""CLI surface: end-to-end pipelines, config files, exit codes."""

import numpy as np
import pytest

from sar.cli import main


def run(args):
    return main([str(a) for a in args])


@pytest.fixture
def flat_corpus(tmp_path):
    train = tmp_path / "train.flat"
    test = tmp_path / "test.flat"
    rc = run(["synth-gen", "--seed", 3, "--labels", 2, "--features-per-view", 30,
              "--noise", 0.2, "--labeled", 20, "--unlabeled", 80, "--test", 60,
              "--out-train", train, "--out-test", test])
    assert rc == 0
    return train, test


@pytest.fixture
def conll_corpus(tmp_path):
    labeled = tmp_path / "labeled.conll"
    labeled.write_text(
        "He PRP B-NP\nruns VBZ B-VP\n\n"
        "The DT B-NP\ndog NN I-NP\nbarks VBZ B-VP\n\n"
        "She PRP B-NP\nwalks VBZ B-VP\nhome NN B-NP\n",
        encoding="utf-8")
    unlabeled = tmp_path / "unlabeled.conll"
    unlabeled.write_text("A DT\ncat NN\nsleeps VBZ\n\nHe PRP\nruns VBZ\n",
                         encoding="utf-8")
    return labeled, unlabeled


class TestExitCodes:
    def test_usage_error_missing_seed(self, tmp_path, capsys):
        rc = run(["synth-gen", "--out-train", tmp_path / "a",
                  "--out-test", tmp_path / "b"])
        assert rc == 1
        assert "--seed" in capsys.readouterr().err

    def test_data_error_bad_file(self, tmp_path, capsys):
        bad = tmp_path / "bad.flat"
        bad.write_text("pos\tonly-two-fields\n", encoding="utf-8")
        rc = run(["split-views", "--input", bad, "--output", tmp_path / "o",
                  "--seed", 1])
        assert rc == 2
        assert "data error" in capsys.readouterr().err

    def test_missing_file_is_data_error(self, tmp_path):
        assert run(["split-views", "--input", tmp_path / "nope",
                    "--output", tmp_path / "o", "--seed", 1]) == 2

    def test_usage_error_bad_value(self, tmp_path):
        assert run(["loss-surface", "--half-range", -1,
                    "--out", tmp_path / "x.csv"]) == 1


class TestConfigFile:
    def test_config_sets_flags_and_cli_overrides(self, tmp_path):
        train = tmp_path / "t.flat"
        test = tmp_path / "e.flat"
        cfg = tmp_path / "run.cfg"
        cfg.write_text("seed = 4\nlabels = 3\nnoise = 0.1\n", encoding="utf-8")
        rc = run(["synth-gen", "--config", cfg, "--labeled", 9, "--unlabeled", 0,
                  "--test", 5, "--out-train", train, "--out-test", test,
                  "--labels", 2])  # explicit --labels beats config's 3
        assert rc == 0
        labels = {line.split("\t")[0] for line in train.read_text().splitlines()}
        assert labels <= {"L0", "L1"}


class TestFlatPipeline:
    def test_full_flow(self, tmp_path, flat_corpus, capsys):
        train, test = flat_corpus
        model = tmp_path / "view1.model"
        assert run(["train-supervised", "--model-kind", "flat",
                    "--labeled", train, "--view", 1, "--sigma2", 1.0,
                    "--out", model]) == 0
        assert run(["eval", "--model-kind", "flat", "--model", model,
                    "--test", test, "--view", 1,
                    "--csv", tmp_path / "report.csv"]) == 0
        out = capsys.readouterr().out
        assert "accuracy:" in out
        csv = (tmp_path / "report.csv").read_text().splitlines()
        assert csv[0] == "metric,label,value"

        prefix = tmp_path / "sar_run"
        assert run(["train-sar", "--model-kind", "flat",
                    "--labeled1", train, "--labeled2", train,
                    "--unlabeled", train, "--c", 1.0, "--iterations", 3,
                    "--seed", 3, "--out-prefix", prefix]) == 0
        trace = (str(prefix) + ".trace.csv")
        lines = open(trace).read().splitlines()
        assert lines[0] == "iteration,L1,L2,klterm,total"
        totals = [float(l.split(",")[4]) for l in lines[1:]]
        assert all(totals[i + 1] <= totals[i] + 1e-6
                   for i in range(len(totals) - 1))

        assert run(["agree0-eval", "--model-kind", "flat",
                    "--model1", str(prefix) + ".view1.model",
                    "--model2", str(prefix) + ".view2.model",
                    "--test", test]) == 0

    def test_split_views_round_trip(self, tmp_path):
        raw = tmp_path / "raw.flat"
        raw.write_text("pos\tf1 f2 f3\t\nneg\tf2 f4\t\n", encoding="utf-8")
        out = tmp_path / "split.flat"
        assert run(["split-views", "--input", raw, "--output", out,
                    "--seed", 7]) == 0
        from sar.data import parse_flat
        split = parse_flat(out)
        for raw_ex, split_ex in zip(parse_flat(raw).examples, split.examples):
            assert set(raw_ex.view1) == set(split_ex.view1) | set(split_ex.view2)

    def test_collapse_labels_command(self, tmp_path):
        src = tmp_path / "fine.flat"
        src.write_text("a\tf\t\nb\tf\t\nc\tf\t\n", encoding="utf-8")
        mapping = tmp_path / "m.tsv"
        mapping.write_text("a\tX\nb\tX\nc\tZ\n", encoding="utf-8")
        out = tmp_path / "coarse.flat"
        assert run(["collapse-labels", "--input", src, "--output", out,
                    "--mapping", mapping]) == 0
        labels = [line.split("\t")[0] for line in out.read_text().splitlines()]
        assert labels == ["X", "X", "Z"]


class TestChainPipeline:
    def test_supervised_then_eval(self, tmp_path, conll_corpus, capsys):
        labeled, _ = conll_corpus
        model = tmp_path / "content.model"
        assert run(["train-supervised", "--model-kind", "chain",
                    "--labeled", labeled, "--view", 1, "--sigma2", 10.0,
                    "--out", model]) == 0
        assert run(["eval", "--model-kind", "chain", "--model", model,
                    "--test", labeled, "--view", 1, "--chunk-f1"]) == 0
        out = capsys.readouterr().out
        assert "chunk F1" in out

    def test_sar_chain_and_agree0(self, tmp_path, conll_corpus):
        labeled, unlabeled = conll_corpus
        prefix = tmp_path / "chain_run"
        assert run(["train-sar", "--model-kind", "chain",
                    "--labeled1", labeled, "--labeled2", labeled,
                    "--unlabeled", unlabeled, "--c", 0.5, "--iterations", 2,
                    "--seed", 1, "--out-prefix", prefix]) == 0
        assert run(["agree0-eval", "--model-kind", "chain",
                    "--model1", str(prefix) + ".view1.model",
                    "--model2", str(prefix) + ".view2.model",
                    "--test", labeled, "--chunk-f1"]) == 0

    def test_partial_agreement_with_mapping(self, tmp_path, conll_corpus):
        labeled, unlabeled = conll_corpus
        mapping = tmp_path / "m.tsv"
        mapping.write_text("B-NP\tB-P\nI-NP\tI-P\nB-VP\tB-P\n", encoding="utf-8")
        coarse = tmp_path / "coarse.conll"
        assert run(["collapse-labels", "--input", labeled, "--output", coarse,
                    "--mapping", mapping, "--format", "conll"]) == 0
        prefix = tmp_path / "partial_run"
        assert run(["train-sar", "--model-kind", "chain",
                    "--labeled1", labeled, "--labeled2", coarse,
                    "--unlabeled", unlabeled, "--mapping", mapping,
                    "--c", 0.5, "--iterations", 2, "--seed", 2,
                    "--out-prefix", prefix]) == 0


class TestLossSurfaceCommand:
    def test_grid_written(self, tmp_path):
        out = tmp_path / "surface.csv"
        assert run(["loss-surface", "--half-range", 2.0, "--step", 1.0,
                    "--out", out]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "s1,s2,penalty"
        assert len(lines) == 1 + 5 * 5
