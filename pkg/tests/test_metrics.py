"""Metrics: accuracy, relative error reduction, span F1, confusion, surfaces."""

import math

import numpy as np
import pytest

from sar.errors import DataError
from sar.metrics import (
    accuracy,
    chunk_f1,
    confusion,
    evaluate,
    extract_spans,
    format_rounded,
    loss_surface_rows,
    rre,
    write_loss_surface_csv,
)


class TestAccuracy:
    def test_all_correct(self):
        assert accuracy(["a", "b"], ["a", "b"]) == 100.0

    def test_fraction(self):
        preds = ["a"] * 74 + ["b"] * 26
        golds = ["a"] * 100
        assert accuracy(preds, golds) == 74.0

    def test_permutation_invariant(self):
        rng = np.random.default_rng(0)
        preds = list(rng.choice(["a", "b", "c"], size=50))
        golds = list(rng.choice(["a", "b", "c"], size=50))
        base = accuracy(preds, golds)
        order = rng.permutation(50)
        assert accuracy([preds[i] for i in order],
                        [golds[i] for i in order]) == base

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            accuracy([], [])


class TestRre:
    def test_paper_row_500(self):
        assert format_rounded(rre(74.0, 76.4), 1) == "9.2"

    def test_paper_chunking_row_10(self):
        assert format_rounded(rre(73.2, 78.2), 0) == "19"

    def test_no_change_is_zero(self):
        assert rre(80.0, 80.0) == 0.0

    def test_zero_baseline_error(self):
        with pytest.raises(ValueError, match="zero baseline error"):
            rre(100.0, 99.0)


class TestChunkF1:
    def test_identical_sequences(self):
        tags = ["B-NP", "I-NP", "O", "B-VP"]
        assert chunk_f1(tags, tags) == 100.0

    def test_identity_is_perfect_for_any_valid_bio(self):
        rng = np.random.default_rng(1)
        choices = ["O", "B-NP", "I-NP", "B-VP", "I-VP"]
        for _ in range(50):
            tags = list(rng.choice(choices, size=int(rng.integers(1, 12))))
            assert chunk_f1(tags, tags) == 100.0

    def test_no_overlap_is_zero(self):
        assert chunk_f1(["B-NP", "O", "O"], ["O", "O", "B-NP"]) == 0.0

    def test_partial_recall(self):
        gold = ["B-NP", "I-NP", "O", "B-NP"]
        pred = ["B-NP", "I-NP", "O", "O"]
        # pred finds one of two gold spans perfectly: P=100, R=50
        assert chunk_f1(pred, gold) == pytest.approx(200 / 3, abs=1e-9)

    def test_multiple_sequences(self):
        pred = [["B-NP"], ["O", "B-VP"]]
        gold = [["B-NP"], ["O", "B-VP"]]
        assert chunk_f1(pred, gold) == 100.0

    def test_malformed_tag(self):
        with pytest.raises(DataError, match="malformed BIO tag"):
            chunk_f1(["I-"], ["O"])
        with pytest.raises(DataError, match="malformed BIO tag"):
            chunk_f1(["O"], ["Q-NP"])

    def test_orphan_i_starts_span(self):
        assert extract_spans(["O", "I-NP", "I-NP"]) == {(1, 2, "NP")}

    def test_type_change_splits_span(self):
        assert extract_spans(["B-NP", "I-VP"]) == {(0, 0, "NP"), (1, 1, "VP")}


class TestConfusion:
    def test_perfect_predictions(self):
        labels, m = confusion(["a", "b", "a"], ["a", "b", "a"])
        np.testing.assert_allclose(np.diag(m), 100.0)
        np.testing.assert_allclose(m.sum(axis=1), 100.0)

    def test_four_class_shape_and_row_sums(self):
        rng = np.random.default_rng(2)
        classes = ["pc", "mac", "politics", "baseball"]
        golds = list(rng.choice(classes, size=400))
        preds = list(rng.choice(classes, size=400))
        labels, m = confusion(preds, golds, labels=classes)
        assert m.shape == (4, 4)
        np.testing.assert_allclose(m.sum(axis=1), 100.0, atol=0.1)

    def test_column_permutation_under_label_swap(self):
        rng = np.random.default_rng(3)
        golds = list(rng.choice(["a", "b", "c"], size=200))
        preds = list(rng.choice(["a", "b", "c"], size=200))
        swapped = [{"a": "b", "b": "a"}.get(p, p) for p in preds]
        labels, m1 = confusion(preds, golds, labels=["a", "b", "c"])
        _, m2 = confusion(swapped, golds, labels=["a", "b", "c"])
        np.testing.assert_allclose(m1[:, [1, 0, 2]], m2)

    def test_zero_gold_count_row_is_nan(self):
        labels, m = confusion(["a", "b"], ["a", "a"], labels=["a", "b"])
        assert np.isnan(m[1]).all()

    def test_accuracy_consistent_with_diagonal(self):
        rng = np.random.default_rng(4)
        golds = list(rng.choice(["a", "b", "c"], size=300))
        preds = list(rng.choice(["a", "b", "c"], size=300))
        labels, m = confusion(preds, golds)
        gold_freq = np.array([golds.count(l) for l in labels]) / len(golds)
        diag = np.array([m[i, i] for i in range(len(labels))])
        assert accuracy(preds, golds) == pytest.approx(
            float(gold_freq @ diag), abs=1e-9)


class TestEvalReport:
    def test_render_contains_rows(self):
        report = evaluate(["a", "b", "a"], ["a", "b", "b"],
                          baseline_acc=50.0, baseline_name="solo")
        text = report.render()
        assert "accuracy: 66.67" in text
        assert "error reduction vs solo" in text

    def test_csv_rows_schema(self):
        report = evaluate(["a", "b"], ["a", "b"])
        rows = report.csv_rows()
        assert ("accuracy", "", repr(100.0)) in rows
        assert any(r[0] == "confusion" and "->" in r[1] for r in rows)


class TestLossSurface:
    def test_diagonal_zero(self):
        for s1, s2, penalty in loss_surface_rows(2.0, 0.5):
            if s1 == s2:
                assert penalty == pytest.approx(0.0, abs=1e-12)

    def test_crossed_scores_match_flat_example(self):
        rows = {(round(s1, 6), round(s2, 6)): b
                for s1, s2, b in loss_surface_rows(math.log(9.0), math.log(9.0))}
        key = (round(math.log(9.0), 6), round(-math.log(9.0), 6))
        assert rows[key] == pytest.approx(-math.log(0.6), abs=1e-9)

    def test_symmetric_surface(self):
        rows = list(loss_surface_rows(1.0, 0.5))
        table = {(s1, s2): b for s1, s2, b in rows}
        for (s1, s2), b in table.items():
            assert table[(s2, s1)] == pytest.approx(b, abs=1e-12)

    def test_csv_locale_independent(self, tmp_path):
        path = tmp_path / "surface.csv"
        write_loss_surface_csv(1.0, 0.5, path)
        text = path.read_text()
        lines = text.splitlines()
        assert lines[0] == "s1,s2,penalty"
        assert "," in lines[1] and ";" not in text
        for line in lines[1:]:
            for cell in line.split(","):
                float(cell)  # every cell parses with a '.' decimal separator
