"""Evaluation metrics, report assembly, and the loss-surface grid export."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DataError
from .probs import Categorical, LabelSet, bhattacharyya

__all__ = [
    "accuracy",
    "rre",
    "format_rounded",
    "chunk_f1",
    "extract_spans",
    "confusion",
    "EvalReport",
    "evaluate",
    "loss_surface_rows",
    "write_loss_surface_csv",
]


def accuracy(preds: Sequence, golds: Sequence) -> float:
    """Percentage of exact matches."""
    if len(preds) != len(golds):
        raise ValueError("prediction/gold length mismatch")
    if not golds:
        raise ValueError("cannot score an empty evaluation set")
    correct = sum(1 for p, g in zip(preds, golds) if p == g)
    return 100.0 * correct / len(golds)


def rre(baseline_acc: float, new_acc: float) -> float:
    """Relative reduction in error versus a baseline accuracy, in percent."""
    if baseline_acc >= 100.0:
        raise ValueError("zero baseline error")
    return 100.0 * (new_acc - baseline_acc) / (100.0 - baseline_acc)


def format_rounded(value: float, decimals: int = 1) -> str:
    """Fixed-point rendering; decimals=0 drops the point entirely."""
    if decimals == 0:
        return str(int(round(value)))
    return f"{value:.{decimals}f}"


def _flatten_tag_sequences(tags) -> list[list[str]]:
    if not tags:
        return []
    if isinstance(tags[0], str):
        return [list(tags)]
    return [list(seq) for seq in tags]


def extract_spans(tags: Sequence[str]) -> set[tuple[int, int, str]]:
    """Maximal B-I runs as (start, end-inclusive, type) triples.

    An I- tag that does not continue a same-type span opens a new one, the
    convention the shared-task scorers use. Tags must be O, B-TYPE or
    I-TYPE; anything else is malformed.
    """
    spans: set[tuple[int, int, str]] = set()
    start: Optional[int] = None
    kind: Optional[str] = None
    for i, tag in enumerate(tags):
        if tag == "O":
            prefix, kind_i = "O", None
        else:
            prefix, _, kind_i = tag.partition("-")
            if prefix not in ("B", "I") or not kind_i:
                raise DataError(f"malformed BIO tag {tag!r} at position {i}")
        if start is not None and (prefix == "O" or prefix == "B" or kind_i != kind):
            spans.add((start, i - 1, kind))
            start, kind = None, None
        if prefix == "B" or (prefix == "I" and start is None):
            start, kind = i, kind_i
    if start is not None:
        spans.add((start, len(tags) - 1, kind))
    return spans


def chunk_f1(pred_tags, gold_tags) -> float:
    """Exact span-match F1 over BIO tags, in percent.

    Accepts a single aligned sequence or a list of aligned sequences (spans
    never cross sequence boundaries). Two empty span sets count as perfect.
    """
    preds = _flatten_tag_sequences(pred_tags)
    golds = _flatten_tag_sequences(gold_tags)
    if len(preds) != len(golds) or any(len(p) != len(g)
                                       for p, g in zip(preds, golds)):
        raise ValueError("prediction/gold shape mismatch")
    n_pred = n_gold = n_match = 0
    for p_seq, g_seq in zip(preds, golds):
        p_spans = extract_spans(p_seq)
        g_spans = extract_spans(g_seq)
        n_pred += len(p_spans)
        n_gold += len(g_spans)
        n_match += len(p_spans & g_spans)
    if n_pred == 0 and n_gold == 0:
        return 100.0
    precision = n_match / n_pred if n_pred else 0.0
    recall = n_match / n_gold if n_gold else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 100.0 * 2.0 * precision * recall / (precision + recall)


def confusion(preds: Sequence[str], golds: Sequence[str],
              labels: Optional[Sequence[str]] = None):
    """Row-percentage confusion matrix (rows = true labels).

    Returns (labels, matrix); a row with zero gold count comes back as NaN
    and renders as n/a. Cell (r, c) is 100 * count(gold=r, pred=c) / count(gold=r).
    """
    if len(preds) != len(golds):
        raise ValueError("prediction/gold length mismatch")
    if not golds:
        raise ValueError("cannot score an empty evaluation set")
    if labels is None:
        seen: dict[str, None] = {}
        for name in list(golds) + list(preds):
            seen.setdefault(name, None)
        labels = list(seen)
    labels = list(labels)
    index = {name: i for i, name in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)))
    for p, g in zip(preds, golds):
        counts[index[g], index[p]] += 1
    totals = counts.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        matrix = 100.0 * counts / totals[:, None]
    return labels, matrix


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    labels: tuple[str, ...]
    precision: tuple[float, ...]  # NaN where a class was never predicted
    recall: tuple[float, ...]  # NaN where a class never occurs in gold
    confusion: np.ndarray  # row percentages, NaN rows for absent gold classes
    chunk_f1: Optional[float] = None
    rre: Optional[float] = None
    baseline_name: Optional[str] = None

    def render(self) -> str:
        def pct(v: float) -> str:
            return "n/a" if np.isnan(v) else f"{v:.1f}"

        width = max(8, max(len(name) for name in self.labels) + 1)
        lines = [f"accuracy: {self.accuracy:.2f}"]
        if self.chunk_f1 is not None:
            lines.append(f"chunk F1: {self.chunk_f1:.2f}")
        if self.rre is not None:
            baseline = self.baseline_name or "baseline"
            lines.append(f"error reduction vs {baseline}: {format_rounded(self.rre)}%")
        lines.append("per-class precision/recall:")
        for i, name in enumerate(self.labels):
            lines.append(f"  {name:<{width}} P={pct(self.precision[i]):>6} "
                         f"R={pct(self.recall[i]):>6}")
        lines.append("confusion (rows = true label, row percentages):")
        header = " " * (width + 2) + " ".join(f"{n:>{width}}" for n in self.labels)
        lines.append(header)
        for i, name in enumerate(self.labels):
            cells = " ".join(f"{pct(self.confusion[i, j]):>{width}}"
                             for j in range(len(self.labels)))
            lines.append(f"  {name:<{width}}{cells}")
        return "\n".join(lines)

    def csv_rows(self) -> list[tuple[str, str, str]]:
        """Rows of (metric, label, value); see the CLI help for the schema."""
        rows = [("accuracy", "", repr(self.accuracy))]
        if self.chunk_f1 is not None:
            rows.append(("chunk_f1", "", repr(self.chunk_f1)))
        if self.rre is not None:
            rows.append(("rre", self.baseline_name or "", repr(self.rre)))
        for i, name in enumerate(self.labels):
            rows.append(("precision", name, repr(float(self.precision[i]))))
            rows.append(("recall", name, repr(float(self.recall[i]))))
        for i, gname in enumerate(self.labels):
            for j, pname in enumerate(self.labels):
                rows.append((f"confusion", f"{gname}->{pname}",
                             repr(float(self.confusion[i, j]))))
        return rows


def evaluate(preds: Sequence[str], golds: Sequence[str],
             labels: Optional[Sequence[str]] = None,
             baseline_acc: Optional[float] = None,
             baseline_name: Optional[str] = None,
             tag_sequences: Optional[tuple] = None) -> EvalReport:
    """Assemble the full report; pass tag_sequences=(pred, gold) to add chunk F1."""
    labels, matrix = confusion(preds, golds, labels)
    acc = accuracy(preds, golds)
    gold_counts = np.zeros(len(labels))
    pred_counts = np.zeros(len(labels))
    match_counts = np.zeros(len(labels))
    index = {name: i for i, name in enumerate(labels)}
    for p, g in zip(preds, golds):
        pred_counts[index[p]] += 1
        gold_counts[index[g]] += 1
        if p == g:
            match_counts[index[g]] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = 100.0 * match_counts / pred_counts
        recall = 100.0 * match_counts / gold_counts
    f1 = chunk_f1(*tag_sequences) if tag_sequences is not None else None
    rel = rre(baseline_acc, acc) if baseline_acc is not None else None
    return EvalReport(acc, tuple(labels), tuple(precision), tuple(recall),
                      matrix, f1, rel, baseline_name)


def _binary_from_score(score: float) -> Categorical:
    labels = LabelSet(("pos", "neg"))
    log_p_pos = -np.logaddexp(0.0, -score)
    log_p_neg = -np.logaddexp(0.0, score)
    return Categorical(labels, np.array([log_p_pos, log_p_neg]))


def loss_surface_rows(half_range: float, step: float) -> Iterable[tuple[float, float, float]]:
    """(s1, s2, penalty) over the grid s in [-a, a]: the disagreement penalty
    between two binary logistic classifiers as a function of their scores."""
    if half_range <= 0 or step <= 0:
        raise ValueError("half_range and step must be positive")
    grid = np.arange(-half_range, half_range + step / 2, step)
    for s1 in grid:
        p1 = _binary_from_score(float(s1))
        for s2 in grid:
            yield float(s1), float(s2), bhattacharyya(p1, _binary_from_score(float(s2)))


def write_loss_surface_csv(half_range: float, step: float, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("s1,s2,penalty\n")
        for s1, s2, penalty in loss_surface_rows(half_range, step):
            fh.write(f"{s1!r},{s2!r},{penalty!r}\n")
