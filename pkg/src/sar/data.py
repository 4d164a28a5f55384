"""Corpus formats, view construction, and the synthetic two-view generator.

File formats
------------
Flat: one example per line, ``label<TAB>view1-features<TAB>view2-features``.
Features are space-separated ``name:value`` tokens; a bare ``name`` means
value 1.0; the label ``?`` marks an unlabeled example. UTF-8, ``\\n`` ends.
A feature value is recognized by splitting on the last ``:`` whose tail
parses as a float, so names may contain ``:`` as long as they do not end in
a float-looking suffix (the writer rejects such names).

CoNLL: whitespace-separated columns, one token per line, blank-line
sentence separators; a column spec names the word/POS/tag columns.

Label mapping: lines ``fine<TAB>coarse``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .agreement import LabelMapping
from .errors import DataError
from .features import FeatureIndexer, FeatureVector
from .probs import LabelSet

__all__ = [
    "FlatExample",
    "FlatCorpus",
    "Token",
    "Sentence",
    "SeqCorpus",
    "ColumnSpec",
    "parse_flat",
    "write_flat",
    "parse_conll",
    "write_conll",
    "parse_mapping",
    "random_feature_split",
    "content_context_views",
    "GenConfig",
    "synth_two_view",
    "collapse_labels",
    "vectorize_flat",
    "chain_examples_from_seq",
]

UNLABELED = "?"


@dataclass(frozen=True)
class FlatExample:
    label: Optional[str]  # None marks unlabeled
    view1: dict[str, float]
    view2: dict[str, float]
    label_side: Optional[int] = None  # which view's label set the label uses


@dataclass(frozen=True)
class FlatCorpus:
    examples: tuple[FlatExample, ...]

    def labeled(self) -> list[FlatExample]:
        return [ex for ex in self.examples if ex.label is not None]

    def unlabeled(self) -> list[FlatExample]:
        return [ex for ex in self.examples if ex.label is None]

    def observed_labels(self) -> list[str]:
        seen: dict[str, None] = {}
        for ex in self.labeled():
            seen.setdefault(ex.label, None)
        return list(seen)

    def __len__(self) -> int:
        return len(self.examples)


@dataclass(frozen=True)
class Token:
    word: str
    pos: str
    tag: Optional[str] = None


Sentence = tuple[Token, ...]


@dataclass(frozen=True)
class SeqCorpus:
    sentences: tuple[Sentence, ...]

    def observed_tags(self) -> list[str]:
        seen: dict[str, None] = {}
        for sent in self.sentences:
            for tok in sent:
                if tok.tag is not None:
                    seen.setdefault(tok.tag, None)
        return list(seen)

    def __len__(self) -> int:
        return len(self.sentences)


@dataclass(frozen=True)
class ColumnSpec:
    word: int = 0
    pos: int = 1
    tag: Optional[int] = 2  # None for unlabeled files


def _parse_feature_token(token: str) -> tuple[str, float]:
    name, sep, tail = token.rpartition(":")
    if sep:
        try:
            return name, float(tail)
        except ValueError:
            pass
    return token, 1.0


def _feature_name_writable(name: str) -> bool:
    if not name or any(ch in name for ch in "\t\n "):
        return False
    head, sep, tail = name.rpartition(":")
    if sep:
        try:
            float(tail)
        except ValueError:
            return True
        return False
    return True


def _format_features(feats: dict[str, float]) -> str:
    parts = []
    for name, value in feats.items():
        if not _feature_name_writable(name):
            raise DataError(f"feature name not representable in flat format: {name!r}")
        parts.append(name if value == 1.0 else f"{name}:{float(value)!r}")
    return " ".join(parts)


def _parse_feature_section(section: str, lineno: int, view: str) -> dict[str, float]:
    feats: dict[str, float] = {}
    for token in section.split():
        name, value = _parse_feature_token(token)
        if name in feats:
            raise DataError(f"line {lineno}: duplicate feature {name!r} in {view}")
        feats[name] = value
    return feats


def parse_flat(path, label_side: int = 1) -> FlatCorpus:
    """Read a two-view flat file; ``?`` labels mark unlabeled rows."""
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise DataError(f"line {lineno}: expected 3 tab-separated fields, "
                                f"got {len(fields)}")
            label_str, feats1_str, feats2_str = fields
            feats1 = _parse_feature_section(feats1_str, lineno, "view 1")
            feats2 = _parse_feature_section(feats2_str, lineno, "view 2")
            if label_str == UNLABELED:
                examples.append(FlatExample(None, feats1, feats2, None))
            elif label_str:
                examples.append(FlatExample(label_str, feats1, feats2, label_side))
            else:
                raise DataError(f"line {lineno}: empty label")
    return FlatCorpus(tuple(examples))


def write_flat(corpus: FlatCorpus, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in corpus.examples:
            label = UNLABELED if ex.label is None else ex.label
            fh.write(f"{label}\t{_format_features(ex.view1)}"
                     f"\t{_format_features(ex.view2)}\n")


def parse_conll(path, column_spec: ColumnSpec = ColumnSpec()) -> SeqCorpus:
    """Read token-per-line sentences; blank lines separate, trailing blanks ignored."""
    needed = max(column_spec.word, column_spec.pos,
                 column_spec.tag if column_spec.tag is not None else 0)
    sentences: list[Sentence] = []
    current: list[Token] = []
    width: Optional[int] = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                if current:
                    sentences.append(tuple(current))
                    current = []
                continue
            cols = line.split()
            if width is None:
                width = len(cols)
                if width <= needed:
                    raise DataError(
                        f"line {lineno}: {width} columns but the column spec "
                        f"needs index {needed}"
                    )
            elif len(cols) != width:
                raise DataError(f"line {lineno}: ragged column count "
                                f"({len(cols)} vs {width})")
            tag = cols[column_spec.tag] if column_spec.tag is not None else None
            current.append(Token(cols[column_spec.word], cols[column_spec.pos], tag))
    if current:
        sentences.append(tuple(current))
    return SeqCorpus(tuple(sentences))


def write_conll(corpus: SeqCorpus, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, sent in enumerate(corpus.sentences):
            if i:
                fh.write("\n")
            for tok in sent:
                cols = [tok.word, tok.pos]
                if tok.tag is not None:
                    cols.append(tok.tag)
                fh.write(" ".join(cols) + "\n")


def parse_mapping(path) -> LabelMapping:
    """Read ``fine<TAB>coarse`` lines into a LabelMapping."""
    fine: list[str] = []
    coarse: list[str] = []
    targets: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"line {lineno}: expected 'fine<TAB>coarse'")
            f, c = parts
            if f in fine:
                raise DataError(f"line {lineno}: fine label {f!r} mapped twice")
            fine.append(f)
            if c not in coarse:
                coarse.append(c)
            targets.append(c)
    if not fine:
        raise DataError("empty mapping file")
    coarse_set = LabelSet(tuple(coarse))
    return LabelMapping(LabelSet(tuple(fine)), coarse_set,
                        np.array([coarse_set.index(c) for c in targets]))


def _split_coin(seed: int, name: str) -> int:
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=1,
                             key=str(seed).encode("utf-8")).digest()
    return digest[0] & 1


def random_feature_split(corpus: FlatCorpus, seed: int) -> FlatCorpus:
    """Partition an undivided feature space into two views by a seeded coin.

    The coin depends only on (seed, feature name), so the same feature lands
    on the same side in every corpus. Features already spread over both
    views are pooled first; a name may not appear in both views of one
    example.
    """
    examples = []
    for i, ex in enumerate(corpus.examples):
        pooled = dict(ex.view1)
        for name, value in ex.view2.items():
            if name in pooled:
                raise DataError(f"example {i}: feature {name!r} present in both views")
            pooled[name] = value
        v1 = {n: v for n, v in pooled.items() if _split_coin(seed, n) == 0}
        v2 = {n: v for n, v in pooled.items() if _split_coin(seed, n) == 1}
        examples.append(FlatExample(ex.label, v1, v2, ex.label_side))
    return FlatCorpus(tuple(examples))


def _char_trigrams(word: str) -> list[str]:
    padded = f"#{word}#"
    return [padded[i:i + 3] for i in range(len(padded) - 2)]


def content_context_views(
    seq: SeqCorpus, window: int, char_ngrams: bool = False
) -> list[list[tuple[dict[str, float], dict[str, float]]]]:
    """Per-token feature dicts: view 1 sees the token, view 2 its neighbors.

    View 1 holds ``w0=``/``p0=`` features (plus ``c3=`` character trigrams
    when enabled); view 2 holds ``w{+-k}=``/``p{+-k}=`` features for
    k = 1..window, with <BOS>/<EOS> fillers past the sentence edge.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    out = []
    for sent in seq.sentences:
        per_token = []
        for t, tok in enumerate(sent):
            content: dict[str, float] = {f"w0={tok.word}": 1.0, f"p0={tok.pos}": 1.0}
            if char_ngrams:
                for gram in _char_trigrams(tok.word):
                    content[f"c3={gram}"] = content.get(f"c3={gram}", 0.0) + 1.0
            context: dict[str, float] = {}
            for k in range(1, window + 1):
                left = t - k
                right = t + k
                lw, lp = (sent[left].word, sent[left].pos) if left >= 0 \
                    else ("<BOS>", "<BOS>")
                rw, rp = (sent[right].word, sent[right].pos) if right < len(sent) \
                    else ("<EOS>", "<EOS>")
                context[f"w-{k}={lw}"] = 1.0
                context[f"p-{k}={lp}"] = 1.0
                context[f"w+{k}={rw}"] = 1.0
                context[f"p+{k}={rp}"] = 1.0
            per_token.append((content, context))
        out.append(per_token)
    return out


@dataclass(frozen=True)
class GenConfig:
    """Synthetic two-view corpus: conditionally independent views given the label.

    Each view owns ``features_per_view`` features (a pair to size the views
    differently); feature j indicates class j mod num_labels. An example
    draws ``tokens_per_example`` features per view from its label's block,
    except that with probability ``noise`` (per view) the whole view is
    drawn from a uniformly random wrong class.
    """

    num_labels: int = 2
    features_per_view: tuple[int, int] = (40, 40)
    tokens_per_example: int = 4
    noise: tuple[float, float] = (0.0, 0.0)
    n_labeled: int = 20
    n_unlabeled: int = 500
    n_test: int = 500

    def __post_init__(self):
        noise = self.noise
        if isinstance(noise, (int, float)):
            noise = (float(noise), float(noise))
        object.__setattr__(self, "noise", (float(noise[0]), float(noise[1])))
        fpv = self.features_per_view
        if isinstance(fpv, int):
            fpv = (fpv, fpv)
        object.__setattr__(self, "features_per_view", (int(fpv[0]), int(fpv[1])))
        if self.num_labels < 2:
            raise ValueError("need at least 2 labels")
        if min(self.features_per_view) < self.num_labels:
            raise ValueError("need at least one feature per class per view")
        if not all(0.0 <= r <= 1.0 for r in self.noise):
            raise ValueError("noise rates must be in [0, 1]")

    @property
    def label_set(self) -> LabelSet:
        return LabelSet(tuple(f"L{i}" for i in range(self.num_labels)))


def _emit_view(rng: np.random.Generator, config: GenConfig, view: int,
               label_idx: int, noise: float) -> dict[str, float]:
    K = config.num_labels
    effective = label_idx
    if noise > 0 and rng.random() < noise:
        wrong = int(rng.integers(K - 1))
        effective = wrong if wrong < label_idx else wrong + 1
    block = np.arange(effective, config.features_per_view[view - 1], K)
    feats: dict[str, float] = {}
    for j in rng.choice(block, size=config.tokens_per_example, replace=True):
        name = f"v{view}_f{int(j)}"
        feats[name] = feats.get(name, 0.0) + 1.0
    return feats


def synth_two_view(config: GenConfig, seed: int) -> tuple[FlatCorpus, FlatCorpus]:
    """Deterministic (seeded) training corpus plus held-out labeled test set."""
    rng = np.random.default_rng(seed)
    labels = config.label_set

    def draw(n: int, labeled: bool) -> list[FlatExample]:
        out = []
        for _ in range(n):
            y = int(rng.integers(config.num_labels))
            v1 = _emit_view(rng, config, 1, y, config.noise[0])
            v2 = _emit_view(rng, config, 2, y, config.noise[1])
            out.append(FlatExample(labels.name(y) if labeled else None, v1, v2,
                                   1 if labeled else None))
        return out

    train = draw(config.n_labeled, True) + draw(config.n_unlabeled, False)
    test = draw(config.n_test, True)
    return FlatCorpus(tuple(train)), FlatCorpus(tuple(test))


def collapse_labels(corpus, mapping: LabelMapping):
    """Rewrite labels (or tags) through a fine-to-coarse mapping.

    Features are untouched; the collapse is not invertible whenever the
    mapping merges labels. Works for FlatCorpus and SeqCorpus.
    """
    if isinstance(corpus, FlatCorpus):
        examples = []
        for i, ex in enumerate(corpus.examples):
            if ex.label is None:
                examples.append(ex)
                continue
            if ex.label not in mapping.fine:
                raise DataError(f"example {i}: unmapped label {ex.label!r}")
            examples.append(FlatExample(mapping.coarse_name(ex.label),
                                        ex.view1, ex.view2, ex.label_side))
        return FlatCorpus(tuple(examples))
    if isinstance(corpus, SeqCorpus):
        sentences = []
        for i, sent in enumerate(corpus.sentences):
            toks = []
            for tok in sent:
                if tok.tag is None:
                    toks.append(tok)
                    continue
                if tok.tag not in mapping.fine:
                    raise DataError(f"sentence {i}: unmapped tag {tok.tag!r}")
                toks.append(Token(tok.word, tok.pos, mapping.coarse_name(tok.tag)))
            sentences.append(tuple(toks))
        return SeqCorpus(tuple(sentences))
    raise TypeError(f"cannot collapse labels of {type(corpus).__name__}")


def vectorize_flat(
    corpus: FlatCorpus, indexer1: FeatureIndexer, indexer2: FeatureIndexer
) -> list[tuple[FeatureVector, FeatureVector, Optional[str]]]:
    """Intern both views of every example, in corpus order."""
    return [
        (indexer1.vectorize(ex.view1), indexer2.vectorize(ex.view2), ex.label)
        for ex in corpus.examples
    ]


def chain_examples_from_seq(seq: SeqCorpus, view: int, window: int,
                            indexer: FeatureIndexer, char_ngrams: bool = False):
    """Build one-view ChainExamples from a sequence corpus (view 1 = content)."""
    from .chain import ChainExample

    views = content_context_views(seq, window, char_ngrams)
    out = []
    for sent, per_token in zip(seq.sentences, views):
        feats = tuple(indexer.vectorize(tok[0] if view == 1 else tok[1])
                      for tok in per_token)
        tags = tuple(tok.tag for tok in sent)
        gold = tags if all(t is not None for t in tags) else None
        out.append(ChainExample(feats, gold))
    return out
