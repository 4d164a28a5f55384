"""Log-domain categorical distributions and the divergences built on them.

Every probability in this package lives in natural-log space; the structured
models multiply hundreds of potentials, so direct space would underflow long
before the label sets get interesting. A log-probability of -inf is a legal
value meaning "this label has probability zero", not an error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import NumericalError

__all__ = [
    "LabelSet",
    "Categorical",
    "log_normalize",
    "bhattacharyya",
    "kl_divergence",
]

_NORM_TOL = 1e-9


@dataclass(frozen=True)
class LabelSet:
    """An ordered alphabet of at least two distinct label names."""

    labels: tuple[str, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        labels = tuple(self.labels)
        if len(labels) < 2:
            raise ValueError("a label set needs at least 2 labels")
        index = {name: i for i, name in enumerate(labels)}
        if len(index) != len(labels):
            raise ValueError("label names must be unique")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise ValueError(f"unknown label {name!r}") from None

    def name(self, i: int) -> str:
        return self.labels[i]

    def __contains__(self, name: str) -> bool:
        return name in self._index


def _as_readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Categorical:
    """A normalized distribution over a LabelSet, stored as log-probabilities.

    Invariants: logsumexp(log_probs) == 0 within 1e-9 and every entry is
    <= 0 (-inf allowed). Use :func:`log_normalize` to build one from
    arbitrary log-weights.
    """

    label_set: LabelSet
    log_probs: np.ndarray

    def __post_init__(self):
        lp = _as_readonly(self.log_probs)
        if lp.shape != (len(self.label_set),):
            raise ValueError(
                f"expected {len(self.label_set)} log-probabilities, got shape {lp.shape}"
            )
        if np.any(np.isnan(lp)) or np.any(lp == np.inf):
            raise ValueError("log-probabilities must be finite or -inf")
        total = logsumexp(lp)
        if abs(total) > _NORM_TOL:
            raise ValueError(f"log-probabilities not normalized (logsumexp={total!r})")
        object.__setattr__(self, "log_probs", lp)

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    @classmethod
    def from_probs(cls, label_set: LabelSet, probs) -> "Categorical":
        p = np.asarray(probs, dtype=np.float64)
        with np.errstate(divide="ignore"):
            return log_normalize(label_set, np.log(p))

    def argmax(self) -> int:
        """Index of the most probable label; ties resolve to the lowest index."""
        return int(np.argmax(self.log_probs))


def log_normalize(label_set: LabelSet, log_weights) -> Categorical:
    """Normalize a vector of log-weights into a Categorical.

    Stable for arbitrarily large entries (the shift by the max happens inside
    logsumexp). Raises NumericalError when every weight is -inf.
    """
    lw = np.asarray(log_weights, dtype=np.float64)
    if lw.shape != (len(label_set),):
        raise ValueError(f"expected {len(label_set)} log-weights, got shape {lw.shape}")
    if np.any(np.isnan(lw)) or np.any(lw == np.inf):
        raise ValueError("log-weights must be finite or -inf")
    total = logsumexp(lw)
    if total == -np.inf:
        raise NumericalError("degenerate weight vector")
    # Tiny positive residue from the subtraction would violate the <= 0
    # invariant, so clamp.
    return Categorical(label_set, np.minimum(lw - total, 0.0))


def _check_same_label_set(p1: Categorical, p2: Categorical):
    if p1.label_set != p2.label_set:
        raise ValueError("mismatched label sets")


def bhattacharyya(p1: Categorical, p2: Categorical) -> float:
    """-log sum_y sqrt(p1(y) p2(y)), computed in log domain.

    Symmetric, nonnegative, zero iff the distributions coincide, +inf when
    the supports are disjoint.
    """
    _check_same_label_set(p1, p2)
    overlap = logsumexp(0.5 * (p1.log_probs + p2.log_probs))
    # Normalized inputs keep the overlap <= 0 up to rounding; do not let
    # rounding produce a negative distance.
    return max(0.0, -float(overlap))


def kl_divergence(q: Categorical, p: Categorical) -> float:
    """sum_y q(y) (log q(y) - log p(y)) with the 0 log 0 = 0 convention.

    Returns +inf when q puts mass where p has none.
    """
    _check_same_label_set(q, p)
    lq, lp = q.log_probs, p.log_probs
    support = lq > -np.inf
    if np.any(lp[support] == -np.inf):
        return math.inf
    val = float(np.sum(np.exp(lq[support]) * (lq[support] - lp[support])))
    return max(0.0, val)
