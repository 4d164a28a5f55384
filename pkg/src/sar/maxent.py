"""Multiclass maximum-entropy classifier with Gaussian prior and soft targets.

Targets are full distributions (hard labels are the one-hot special case),
so the same trainer serves both the supervised fits and the fractional-count
refits of the semi-supervised loop. The prior is (1/sigma^2) ||theta||^2;
send sigma^2 to infinity to switch it off.

The last weight column (feature id F-1) is a bias: every example implicitly
carries feature F-1 with value 1.0, added on top of whatever the caller put
there. Data pipelines built with FeatureIndexer never assign that id.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import logsumexp

from .errors import DataError
from .features import FeatureVector
from .optim import OptConfig, OptResult, minimize_deterministic
from .probs import Categorical, LabelSet

__all__ = [
    "MaxentParams",
    "SoftExample",
    "predict_dist",
    "objective",
    "gradient",
    "train",
    "MaxentTrainResult",
    "save_maxent",
    "load_maxent",
]


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class MaxentParams:
    label_set: LabelSet
    weights: np.ndarray  # K x F, bias in column F-1
    prior_variance: float

    def __post_init__(self):
        w = _readonly(self.weights)
        if w.ndim != 2 or w.shape[0] != len(self.label_set):
            raise ValueError(f"weights must be {len(self.label_set)} x F")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if self.prior_variance <= 0:
            raise ValueError("prior variance must be positive")
        object.__setattr__(self, "weights", w)

    @property
    def num_features(self) -> int:
        return int(self.weights.shape[1])

    @classmethod
    def zeros(cls, label_set: LabelSet, num_features: int,
              prior_variance: float) -> "MaxentParams":
        return cls(label_set, np.zeros((len(label_set), num_features)),
                   prior_variance)


@dataclass(frozen=True)
class SoftExample:
    features: FeatureVector
    target: Categorical
    weight: float

    def __post_init__(self):
        if not np.isfinite(self.weight) or self.weight < 0:
            raise ValueError("example weight must be finite and nonnegative")


def _scores(params: MaxentParams, x: FeatureVector) -> np.ndarray:
    F = params.num_features
    if x.ids.size and x.ids[-1] >= F:
        raise ValueError(f"unknown feature id {int(x.ids[-1])} (model has F={F})")
    return params.weights[:, x.ids] @ x.values + params.weights[:, F - 1]


def predict_dist(params: MaxentParams, x: FeatureVector) -> Categorical:
    """log p(y|x) = theta_y . x - logsumexp_y'(theta_y' . x)."""
    s = _scores(params, x)
    return Categorical(params.label_set, np.minimum(s - logsumexp(s), 0.0))


def _compile(params: MaxentParams,
             data: Sequence[SoftExample]) -> tuple[sp.csr_matrix, np.ndarray, np.ndarray]:
    """Stack sparse features (bias appended), target probabilities, weights."""
    K = len(params.label_set)
    F = params.num_features
    n = len(data)
    rows, cols, vals = [], [], []
    targets = np.empty((n, K))
    weights = np.empty(n)
    for i, ex in enumerate(data):
        if ex.target.label_set != params.label_set:
            raise ValueError("target over a different label set than the model")
        if ex.features.ids.size and ex.features.ids[-1] >= F:
            raise ValueError(
                f"unknown feature id {int(ex.features.ids[-1])} (model has F={F})"
            )
        rows.extend([i] * (len(ex.features) + 1))
        cols.extend(ex.features.ids.tolist())
        cols.append(F - 1)
        vals.extend(ex.features.values.tolist())
        vals.append(1.0)
        targets[i] = ex.target.probs
        weights[i] = ex.weight
    X = sp.csr_matrix(
        (np.asarray(vals), (np.asarray(rows), np.asarray(cols))), shape=(n, F)
    )
    return X, targets, weights


def _objective_gradient_compiled(weights: np.ndarray, X: sp.csr_matrix,
                                 targets: np.ndarray, ex_weights: np.ndarray,
                                 prior_variance: float):
    # Overflow here surfaces as a non-finite objective, which the optimizer
    # wrapper turns into the divergence error; no need for runtime warnings.
    with np.errstate(over="ignore", invalid="ignore"):
        scores = X @ weights.T  # n x K
        log_z = logsumexp(scores, axis=1)
        ce = log_z - np.sum(targets * scores, axis=1)
        value = float(ex_weights @ ce + np.sum(weights**2) / prior_variance)
        probs = np.exp(scores - log_z[:, None])
        grad = ((probs - targets) * ex_weights[:, None]).T @ X
        grad = np.asarray(grad) + 2.0 * weights / prior_variance
    return value, grad


def objective(params: MaxentParams, data: Sequence[SoftExample]) -> float:
    """sum_i weight_i * sum_y target_i(y) (-log p(y|x_i)) + (1/sigma^2)||theta||^2.

    Callers wanting the empirical mean give each of |L| examples weight 1/|L|.
    """
    if not data:
        raise ValueError("data must be nonempty")
    X, targets, ex_weights = _compile(params, data)
    value, _ = _objective_gradient_compiled(params.weights, X, targets, ex_weights,
                                            params.prior_variance)
    return value


def gradient(params: MaxentParams, data: Sequence[SoftExample]) -> np.ndarray:
    """K x F gradient: expected features under the model minus under the targets."""
    if not data:
        raise ValueError("data must be nonempty")
    X, targets, ex_weights = _compile(params, data)
    _, grad = _objective_gradient_compiled(params.weights, X, targets, ex_weights,
                                           params.prior_variance)
    return grad


@dataclass(frozen=True)
class MaxentTrainResult:
    params: MaxentParams
    converged: bool  # gradient max-norm met tolerance (else budget ran out)
    iterations: int
    grad_norm: float
    objective: float


def train(
    data: Sequence[SoftExample],
    init: MaxentParams,
    opt_config: OptConfig = OptConfig(),
) -> MaxentTrainResult:
    """Deterministic batch fit; pass the previous params as init to warm start."""
    if not data:
        raise ValueError("training data must be nonempty")
    X, targets, ex_weights = _compile(init, data)
    K, F = init.weights.shape

    def fun(theta: np.ndarray):
        value, grad = _objective_gradient_compiled(
            theta.reshape(K, F), X, targets, ex_weights, init.prior_variance
        )
        return value, grad.ravel()

    res: OptResult = minimize_deterministic(fun, init.weights.ravel(), opt_config)
    params = MaxentParams(init.label_set, res.x.reshape(K, F), init.prior_variance)
    return MaxentTrainResult(params, res.converged, res.iterations, res.grad_norm,
                             res.value)


_MAXENT_MAGIC = "sar-maxent-v1"


def save_maxent(params: MaxentParams, path) -> None:
    """Versioned flat text model file; exact round-trip for finite weights."""
    K = len(params.label_set)
    F = params.num_features
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{_MAXENT_MAGIC}\t{K}\t{F}\t{params.prior_variance!r}\n")
        for y, name in enumerate(params.label_set.labels):
            for f in range(F):
                fh.write(f"{name}\t{f}\t{float(params.weights[y, f])!r}\n")


def load_maxent(path) -> MaxentParams:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if len(header) != 4 or header[0] != _MAXENT_MAGIC:
            raise DataError(f"not a {_MAXENT_MAGIC} model file: {path}")
        K, F = int(header[1]), int(header[2])
        sigma2 = float(header[3])
        labels: list[str] = []
        weights = np.zeros((K, F))
        for _ in range(K * F):
            name, fid, w = fh.readline().rstrip("\n").split("\t")
            if not labels or labels[-1] != name:
                labels.append(name)
            weights[len(labels) - 1, int(fid)] = float(w)
    return MaxentParams(LabelSet(tuple(labels)), weights, sigma2)
