"""Linear-chain CRF: potentials, exact inference, decoding, training.

The chain is the one graphical model this package needs; node scores come
from per-position emission features, transition scores are tied across
positions, and there are no explicit start/stop states. Inference runs on
the compiled kernels when available (see sar._backend).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from . import _backend
from .errors import DataError, NumericalError
from .features import FeatureVector
from .optim import OptConfig, OptResult, minimize_deterministic
from .probs import Categorical, LabelSet, log_normalize

__all__ = [
    "ChainExample",
    "CrfParams",
    "ChainPotentials",
    "ChainMarginals",
    "build_potentials",
    "forward_backward",
    "viterbi",
    "crf_objective_gradient",
    "train_crf",
    "CrfTrainResult",
    "brute_force_dist",
    "enumerate_sequences",
    "sequence_label_set",
    "save_crf",
    "load_crf",
]

BRUTE_FORCE_BUDGET = 4096


@dataclass(frozen=True)
class ChainExample:
    """One sequence for one view: per-position emission features, optional gold tags."""

    features: tuple[FeatureVector, ...]
    gold: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        feats = tuple(self.features)
        if len(feats) < 1:
            raise ValueError("a chain example needs length >= 1")
        if self.gold is not None:
            gold = tuple(self.gold)
            if len(gold) != len(feats):
                raise ValueError("gold label sequence length mismatch")
            object.__setattr__(self, "gold", gold)
        object.__setattr__(self, "features", feats)

    def __len__(self) -> int:
        return len(self.features)


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class CrfParams:
    label_set: LabelSet
    emission: np.ndarray  # K x F
    transition: np.ndarray  # K x K, tied across positions
    prior_variance: float

    def __post_init__(self):
        K = len(self.label_set)
        em = _readonly(self.emission)
        tr = _readonly(self.transition)
        if em.ndim != 2 or em.shape[0] != K:
            raise ValueError(f"emission weights must be {K} x F")
        if tr.shape != (K, K):
            raise ValueError(f"transition weights must be {K} x {K}")
        if not (np.all(np.isfinite(em)) and np.all(np.isfinite(tr))):
            raise ValueError("weights must be finite")
        if self.prior_variance <= 0:
            raise ValueError("prior variance must be positive")
        object.__setattr__(self, "emission", em)
        object.__setattr__(self, "transition", tr)

    @property
    def num_features(self) -> int:
        return int(self.emission.shape[1])

    @classmethod
    def zeros(cls, label_set: LabelSet, num_features: int,
              prior_variance: float) -> "CrfParams":
        K = len(label_set)
        return cls(label_set, np.zeros((K, num_features)), np.zeros((K, K)),
                   prior_variance)


@dataclass(frozen=True)
class ChainPotentials:
    """Per-position log clique potentials: node (T, K), edge (T-1, K, K)."""

    node: np.ndarray
    edge: np.ndarray

    def __post_init__(self):
        node = _readonly(self.node)
        edge = _readonly(self.edge)
        if node.ndim != 2 or node.shape[0] < 1:
            raise ValueError("node potentials must be (T, K) with T >= 1")
        T, K = node.shape
        if edge.shape != (T - 1, K, K):
            raise ValueError(f"edge potentials must be ({T - 1}, {K}, {K})")
        for a in (node, edge):
            if np.any(np.isnan(a)) or np.any(a == np.inf):
                raise ValueError("potentials must be finite or -inf")
        object.__setattr__(self, "node", node)
        object.__setattr__(self, "edge", edge)

    @property
    def length(self) -> int:
        return int(self.node.shape[0])

    @property
    def num_labels(self) -> int:
        return int(self.node.shape[1])


@dataclass(frozen=True)
class ChainMarginals:
    """Posterior node/edge marginals and the log-partition value."""

    node: np.ndarray  # T x K, rows sum to 1
    edge: np.ndarray  # (T-1) x K x K, tables sum to 1
    log_partition: float

    def __post_init__(self):
        object.__setattr__(self, "node", _readonly(self.node))
        object.__setattr__(self, "edge", _readonly(self.edge))


def build_potentials(params: CrfParams, x: ChainExample) -> ChainPotentials:
    """Score an example: node(t, y) = emission[y] . feat(t), edge(t) = transition."""
    T = len(x)
    K = len(params.label_set)
    F = params.num_features
    node = np.empty((T, K))
    for t, fv in enumerate(x.features):
        if fv.ids.size and fv.ids[-1] >= F:
            raise ValueError(f"unknown feature id {int(fv.ids[-1])} (model has F={F})")
        node[t] = params.emission[:, fv.ids] @ fv.values
    edge = np.broadcast_to(params.transition, (max(T - 1, 0), K, K)).copy()
    return ChainPotentials(node, edge)


def forward_backward(pot: ChainPotentials) -> ChainMarginals:
    """Exact marginals in log domain; O(T K^2)."""
    try:
        node_marg, edge_marg, log_z = _backend.forward_backward(pot.node, pot.edge)
    except ValueError as exc:
        raise NumericalError(str(exc)) from None
    return ChainMarginals(node_marg, edge_marg, log_z)


def viterbi(pot: ChainPotentials) -> np.ndarray:
    """Argmax-score label-index path; ties break toward the lowest label index."""
    try:
        return _backend.viterbi_path(pot.node, pot.edge)
    except ValueError as exc:
        raise NumericalError(str(exc)) from None


Target = Union[ChainMarginals, Sequence[str], None]


def _target_marginals(params: CrfParams, x: ChainExample,
                      target: Target) -> ChainMarginals:
    if isinstance(target, ChainMarginals):
        if target.node.shape[0] != len(x):
            raise ValueError("target marginals length mismatch")
        return target
    labels = x.gold if target is None else tuple(target)
    if labels is None:
        raise ValueError("example has no gold labels and no target was given")
    if len(labels) != len(x):
        raise ValueError("target label sequence length mismatch")
    T, K = len(x), len(params.label_set)
    idx = [params.label_set.index(name) for name in labels]
    node = np.zeros((T, K))
    node[np.arange(T), idx] = 1.0
    edge = np.zeros((T - 1, K, K))
    for t in range(T - 1):
        edge[t, idx[t], idx[t + 1]] = 1.0
    return ChainMarginals(node, edge, 0.0)


def crf_objective_gradient(
    params: CrfParams,
    examples: Sequence[tuple[ChainExample, Target, float]],
) -> tuple[float, np.ndarray, np.ndarray]:
    """Weighted soft-target negative log-likelihood plus Gaussian prior.

    Per example: weight * (log Z - sum_t q_node(t,y) node(t,y)
    - sum_t q_edge(t,y,y') edge(t,y,y')), where q is the target marginal
    table (one-hot for gold labels). Prior adds (1/sigma^2) ||theta||^2.
    Returns (objective, emission gradient K x F, transition gradient K x K);
    the gradient is model marginal counts minus target counts plus the
    prior term 2 theta / sigma^2.
    """
    K = len(params.label_set)
    F = params.num_features
    value = 0.0
    g_em = np.zeros((K, F))
    g_tr = np.zeros((K, K))
    for x, target, weight in examples:
        q = _target_marginals(params, x, target)
        pot = build_potentials(params, x)
        marg = forward_backward(pot)
        value += weight * (
            marg.log_partition
            - float(np.sum(q.node * pot.node))
            - float(np.sum(q.edge * pot.edge))
        )
        node_diff = weight * (marg.node - q.node)
        for t, fv in enumerate(x.features):
            if fv.ids.size:
                g_em[:, fv.ids] += node_diff[t][:, None] * fv.values[None, :]
        g_tr += weight * np.sum(marg.edge - q.edge, axis=0)
    inv_var = 1.0 / params.prior_variance
    value += inv_var * (float(np.sum(params.emission**2))
                        + float(np.sum(params.transition**2)))
    g_em += 2.0 * inv_var * params.emission
    g_tr += 2.0 * inv_var * params.transition
    return value, g_em, g_tr


@dataclass(frozen=True)
class CrfTrainResult:
    params: CrfParams
    converged: bool  # gradient max-norm met tolerance (else budget ran out)
    iterations: int
    grad_norm: float
    objective: float


def train_crf(
    data: Sequence[tuple[ChainExample, Target, float]],
    init: CrfParams,
    opt_config: OptConfig = OptConfig(),
) -> CrfTrainResult:
    """Batch fit by deterministic quasi-Newton descent; warm-startable via init."""
    if not data:
        raise ValueError("training data must be nonempty")
    K = len(init.label_set)
    F = init.num_features
    n_em = K * F

    def fun(theta: np.ndarray):
        p = CrfParams(init.label_set, theta[:n_em].reshape(K, F),
                      theta[n_em:].reshape(K, K), init.prior_variance)
        value, g_em, g_tr = crf_objective_gradient(p, data)
        return value, np.concatenate([g_em.ravel(), g_tr.ravel()])

    x0 = np.concatenate([init.emission.ravel(), init.transition.ravel()])
    res: OptResult = minimize_deterministic(fun, x0, opt_config)
    params = CrfParams(init.label_set, res.x[:n_em].reshape(K, F),
                       res.x[n_em:].reshape(K, K), init.prior_variance)
    return CrfTrainResult(params, res.converged, res.iterations, res.grad_norm,
                          res.value)


def enumerate_sequences(length: int, num_labels: int):
    """All label-index paths of the given length, in lexicographic order."""
    return itertools.product(range(num_labels), repeat=length)


def sequence_label_set(length: int, num_labels: int) -> LabelSet:
    names = tuple("|".join(map(str, path))
                  for path in enumerate_sequences(length, num_labels))
    return LabelSet(names)


def brute_force_dist(pot: ChainPotentials) -> Categorical:
    """Exact distribution over all K^T paths by enumeration. Test oracle.

    Paths are ordered lexicographically and named by their label indices
    joined with '|'. Refuses instances with more than 4096 paths.
    """
    T, K = pot.length, pot.num_labels
    n_paths = K**T
    if n_paths > BRUTE_FORCE_BUDGET:
        raise ValueError(
            f"enumeration budget exceeded: {n_paths} paths > {BRUTE_FORCE_BUDGET}"
        )
    scores = np.empty(n_paths)
    for i, path in enumerate(enumerate_sequences(T, K)):
        s = pot.node[0, path[0]]
        for t in range(1, T):
            s += pot.edge[t - 1, path[t - 1], path[t]] + pot.node[t, path[t]]
        scores[i] = s
    return log_normalize(sequence_label_set(T, K), scores)


_CRF_MAGIC = "sar-crf-v1"
_TRANSITION_MARK = "transitions"


def save_crf(params: CrfParams, path) -> None:
    """Versioned flat text model file; exact round-trip for finite weights."""
    K = len(params.label_set)
    F = params.num_features
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{_CRF_MAGIC}\t{K}\t{F}\t{params.prior_variance!r}\n")
        for y, name in enumerate(params.label_set.labels):
            for f in range(F):
                fh.write(f"{name}\t{f}\t{float(params.emission[y, f])!r}\n")
        fh.write(_TRANSITION_MARK + "\n")
        for a, from_name in enumerate(params.label_set.labels):
            for b, to_name in enumerate(params.label_set.labels):
                fh.write(f"{from_name}\t{to_name}\t{float(params.transition[a, b])!r}\n")


def load_crf(path) -> CrfParams:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if len(header) != 4 or header[0] != _CRF_MAGIC:
            raise DataError(f"not a {_CRF_MAGIC} model file: {path}")
        K, F = int(header[1]), int(header[2])
        sigma2 = float(header[3])
        labels: list[str] = []
        emission = np.zeros((K, F))
        for _ in range(K * F):
            name, fid, w = fh.readline().rstrip("\n").split("\t")
            if not labels or labels[-1] != name:
                labels.append(name)
            emission[len(labels) - 1, int(fid)] = float(w)
        if fh.readline().rstrip("\n") != _TRANSITION_MARK:
            raise DataError("missing transition block")
        label_set = LabelSet(tuple(labels))
        transition = np.zeros((K, K))
        for _ in range(K * K):
            from_name, to_name, w = fh.readline().rstrip("\n").split("\t")
            transition[label_set.index(from_name), label_set.index(to_name)] = float(w)
    return CrfParams(label_set, emission, transition, sigma2)
