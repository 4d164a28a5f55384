"""Sparse feature vectors and the name-to-id interning used by the data layer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["FeatureVector", "FeatureIndexer"]


@dataclass(frozen=True)
class FeatureVector:
    """Sparse map from nonnegative integer feature ids to finite real values."""

    ids: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        if ids.ndim != 1 or values.shape != ids.shape:
            raise ValueError("ids and values must be 1-d arrays of equal length")
        if ids.size and ids.min() < 0:
            raise ValueError("feature ids must be nonnegative")
        if ids.size != np.unique(ids).size:
            raise ValueError("duplicate feature id in one vector")
        if not np.all(np.isfinite(values)):
            raise ValueError("feature values must be finite")
        order = np.argsort(ids)
        ids = ids[order].copy()
        values = values[order].copy()
        ids.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_dict(cls, entries: dict[int, float]) -> "FeatureVector":
        return cls(np.fromiter(entries.keys(), dtype=np.int64, count=len(entries)),
                   np.fromiter(entries.values(), dtype=np.float64, count=len(entries)))

    @classmethod
    def empty(cls) -> "FeatureVector":
        return cls(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64))

    def __len__(self) -> int:
        return int(self.ids.size)

    def max_id(self) -> int:
        return int(self.ids.max()) if self.ids.size else -1


@dataclass
class FeatureIndexer:
    """Interns feature names to dense ids in deterministic first-seen order.

    While unfrozen, new names get fresh ids. Once frozen (the test-time
    regime) unknown names are silently dropped, so a model never sees ids it
    was not trained with.
    """

    _ids: dict[str, int] = field(default_factory=dict)
    frozen: bool = False

    def __len__(self) -> int:
        return len(self._ids)

    def intern(self, name: str) -> int | None:
        idx = self._ids.get(name)
        if idx is None and not self.frozen:
            idx = len(self._ids)
            self._ids[name] = idx
        return idx

    def vectorize(self, named: dict[str, float]) -> FeatureVector:
        entries: dict[int, float] = {}
        for name, value in named.items():
            idx = self.intern(name)
            if idx is not None:
                entries[idx] = entries.get(idx, 0.0) + value
        return FeatureVector.from_dict(entries)

    def freeze(self) -> "FeatureIndexer":
        self.frozen = True
        return self

    def names(self) -> list[str]:
        out = [""] * len(self._ids)
        for name, idx in self._ids.items():
            out[idx] = name
        return out

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for idx, name in enumerate(self.names()):
                fh.write(f"{idx}\t{name}\n")

    @classmethod
    def load(cls, path) -> "FeatureIndexer":
        indexer = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                idx_str, name = line.rstrip("\n").split("\t", 1)
                expected = int(idx_str)
                got = indexer.intern(name)
                if got != expected:
                    raise ValueError(f"feature map ids out of order at id {expected}")
        indexer.freeze()
        return indexer
