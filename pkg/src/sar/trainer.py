"""The alternating loop that couples two view models through agreement.

Each round projects the current predictive pair onto the agreement set for
every unlabeled instance (the constrained E-step), then refits each view on
its labeled loss plus the soft, weighted projections (the M-step). The
recorded objective

    total = loss1 + loss2 + gamma * mean-over-unlabeled achieved KL

never increases when the M-steps are solved to tolerance; an increase above
1e-4 raises, since it means the optimizer tolerances are too loose to trust
the run.

Weighting: labeled examples always carry 1/|L| inside their view's loss.
The per-instance weight of an unlabeled soft example is gamma / |U| with
gamma = c, or gamma = c * (|L1| + |L2|) / 2 in balance mode, which makes
each unlabeled instance count like |L|/|U| labeled ones.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import maxent as mx
from .agreement import (
    LabelMapping,
    SolverConfig,
    agree_chain,
    agree_chain_partial,
    agree_flat,
    agree_flat_partial,
)
from .chain import (
    ChainExample,
    CrfParams,
    build_potentials,
    crf_objective_gradient,
    train_crf,
    viterbi,
)
from .errors import NumericalError
from .features import FeatureVector
from .optim import OptConfig
from .probs import Categorical, LabelSet

__all__ = [
    "SarConfig",
    "SarState",
    "TraceEntry",
    "EStepStats",
    "ObjectiveParts",
    "train_sar",
    "objective_value",
    "agree0_predict",
    "agree0_decode",
    "one_hot",
    "write_trace_csv",
]

_MONOTONE_HARD = 1e-4


def _num_threads() -> int:
    try:
        return max(1, int(os.environ.get("SAR_THREADS", "1")))
    except ValueError:
        return 1


def _map_ordered(fn, items):
    """Apply fn across items, optionally threaded, always in input order."""
    workers = _num_threads()
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def one_hot(label_set: LabelSet, name: str) -> Categorical:
    lp = np.full(len(label_set), -np.inf)
    lp[label_set.index(name)] = 0.0
    return Categorical(label_set, lp)


@dataclass(frozen=True)
class SarConfig:
    c: float = 1.0
    balance_mode: bool = False
    iterations: int = 10
    sigma2_view1: float = 1.0
    sigma2_view2: float = 1.0
    opt_view1: OptConfig = field(default_factory=OptConfig)
    opt_view2: OptConfig = field(default_factory=OptConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    seed: int = 0
    early_stop_tol: Optional[float] = None

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("unlabeled weight c must be nonnegative")
        if self.iterations < 1:
            raise ValueError("need at least one iteration")


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    loss1: float
    loss2: float
    kl_term: float

    @property
    def total(self) -> float:
        return self.loss1 + self.loss2 + self.kl_term


@dataclass(frozen=True)
class EStepStats:
    iteration: int
    instances: int
    converged: int
    max_solver_iterations: int


@dataclass(frozen=True)
class SarState:
    params1: object  # MaxentParams or CrfParams
    params2: object
    trace: tuple[TraceEntry, ...]
    estep_stats: tuple[EStepStats, ...]


@dataclass(frozen=True)
class ObjectiveParts:
    loss1: float
    loss2: float
    kl_term: float
    mean_kl: float

    @property
    def total(self) -> float:
        return self.loss1 + self.loss2 + self.kl_term


class _FlatProblem:
    """Two maxent views over (possibly different) label sets."""

    kind = "flat"

    def __init__(self, labeled1, labeled2, unlabeled, config: SarConfig,
                 ls1: LabelSet, ls2: LabelSet, mapping: Optional[LabelMapping],
                 num_features: Optional[tuple[int, int]] = None):
        self.config = config
        self.mapping = mapping
        self.label_sets = (ls1, ls2)
        self.unlabeled = list(unlabeled)
        self._labeled = (list(labeled1), list(labeled2))
        if num_features is None:
            feats1 = [fv for fv, _ in labeled1] + [u[0] for u in self.unlabeled]
            feats2 = [fv for fv, _ in labeled2] + [u[1] for u in self.unlabeled]
            num_features = (self._feature_count(feats1),
                            self._feature_count(feats2))
        self._num_feats = num_features
        self._supervised = tuple(
            [mx.SoftExample(fv, one_hot(self.label_sets[i], y),
                            1.0 / len(self._labeled[i]))
             for fv, y in self._labeled[i]]
            for i in (0, 1)
        )

    @staticmethod
    def _feature_count(vectors: Sequence[FeatureVector]) -> int:
        top = max((fv.max_id() for fv in vectors), default=-1)
        return top + 2  # one past the max id, plus the bias column

    def labeled_sizes(self):
        return len(self._labeled[0]), len(self._labeled[1])

    def init_params(self, view: int):
        sigma2 = self.config.sigma2_view1 if view == 0 else self.config.sigma2_view2
        return mx.MaxentParams.zeros(self.label_sets[view], self._num_feats[view],
                                     sigma2)

    def fit(self, view: int, init, extra=None):
        data = list(self._supervised[view]) + (extra or [])
        opt = self.config.opt_view1 if view == 0 else self.config.opt_view2
        return mx.train(data, init, opt).params

    def supervised_loss(self, view: int, params) -> float:
        return mx.objective(params, self._supervised[view])

    def agree_instance(self, params1, params2, instance):
        fv1, fv2 = instance
        p1 = mx.predict_dist(params1, fv1)
        p2 = mx.predict_dist(params2, fv2)
        if self.mapping is None:
            return agree_flat(p1, p2)
        return agree_flat_partial(p1, p2, self.mapping)

    def soft_example(self, view: int, instance, outcome, weight: float):
        fv = instance[view]
        target = outcome.q1 if view == 0 else outcome.q2
        return mx.SoftExample(fv, target, weight)


class _ChainProblem:
    """Two linear-chain CRF views over (possibly different) label sets."""

    kind = "chain"

    def __init__(self, labeled1, labeled2, unlabeled, config: SarConfig,
                 ls1: LabelSet, ls2: LabelSet, mapping: Optional[LabelMapping],
                 num_features: Optional[tuple[int, int]] = None):
        self.config = config
        self.mapping = mapping
        self.label_sets = (ls1, ls2)
        self.unlabeled = list(unlabeled)
        self._labeled = (list(labeled1), list(labeled2))
        for i in (0, 1):
            for ex in self._labeled[i]:
                if ex.gold is None:
                    raise ValueError("labeled chain examples need gold tags")
        if num_features is None:
            feats1 = [fv for ex in self._labeled[0] for fv in ex.features] + \
                     [fv for u in self.unlabeled for fv in u[0].features]
            feats2 = [fv for ex in self._labeled[1] for fv in ex.features] + \
                     [fv for u in self.unlabeled for fv in u[1].features]
            num_features = (
                max((fv.max_id() for fv in feats1), default=-1) + 1 or 1,
                max((fv.max_id() for fv in feats2), default=-1) + 1 or 1,
            )
        self._num_feats = num_features
        self._supervised = tuple(
            [(ex, None, 1.0 / len(self._labeled[i])) for ex in self._labeled[i]]
            for i in (0, 1)
        )

    def labeled_sizes(self):
        return len(self._labeled[0]), len(self._labeled[1])

    def init_params(self, view: int):
        sigma2 = self.config.sigma2_view1 if view == 0 else self.config.sigma2_view2
        return CrfParams.zeros(self.label_sets[view], self._num_feats[view], sigma2)

    def fit(self, view: int, init, extra=None):
        data = list(self._supervised[view]) + (extra or [])
        opt = self.config.opt_view1 if view == 0 else self.config.opt_view2
        return train_crf(data, init, opt).params

    def supervised_loss(self, view: int, params) -> float:
        value, _, _ = crf_objective_gradient(params, self._supervised[view])
        return value

    def agree_instance(self, params1, params2, instance):
        ex1, ex2 = instance
        pot1 = build_potentials(params1, ex1)
        pot2 = build_potentials(params2, ex2)
        if self.mapping is None:
            return agree_chain(pot1, pot2)
        return agree_chain_partial(pot1, pot2, self.mapping, self.config.solver)

    def soft_example(self, view: int, instance, outcome, weight: float):
        ex = instance[view]
        target = outcome.q1_marginals if view == 0 else outcome.q2_marginals
        return (ex, target, weight)


def _make_problem(labeled1, labeled2, unlabeled, config, model_kind,
                  mapping, label_set, num_features=None):
    if (mapping is None) == (label_set is None):
        raise ValueError("give exactly one of mapping or label_set")
    if mapping is not None:
        ls1, ls2 = mapping.fine, mapping.coarse
    else:
        ls1 = ls2 = label_set
    if model_kind == "flat":
        return _FlatProblem(labeled1, labeled2, unlabeled, config, ls1, ls2,
                            mapping, num_features)
    if model_kind == "chain":
        return _ChainProblem(labeled1, labeled2, unlabeled, config, ls1, ls2,
                             mapping, num_features)
    raise ValueError(f"unknown model kind {model_kind!r}")


def _gamma(config: SarConfig, problem) -> float:
    if not config.balance_mode:
        return config.c
    n1, n2 = problem.labeled_sizes()
    return config.c * 0.5 * (n1 + n2)


def _run_estep(problem, params1, params2):
    def run(indexed):
        i, instance = indexed
        try:
            return problem.agree_instance(params1, params2, instance)
        except NumericalError as exc:
            raise NumericalError(
                f"agreement failed on unlabeled instance {i}: {exc}"
            ) from None

    return _map_ordered(run, list(enumerate(problem.unlabeled)))


def objective_value(params1, params2, labeled1, labeled2, unlabeled,
                    config: SarConfig, model_kind: str = "flat",
                    mapping: Optional[LabelMapping] = None,
                    label_set: Optional[LabelSet] = None,
                    num_features: Optional[tuple[int, int]] = None) -> ObjectiveParts:
    """Decomposed co-regularized objective at the given parameters.

    The coupling term is gamma times the mean achieved projection KL over
    the unlabeled set; components are reported separately so the totals in
    a trace can be recomputed from parts.
    """
    problem = _make_problem(labeled1, labeled2, unlabeled, config, model_kind,
                            mapping, label_set, num_features)
    gamma = _gamma(config, problem)
    loss1 = problem.supervised_loss(0, params1)
    loss2 = problem.supervised_loss(1, params2)
    if gamma > 0 and problem.unlabeled:
        outcomes = _run_estep(problem, params1, params2)
        mean_kl = float(np.mean([o.kl_value for o in outcomes]))
    else:
        mean_kl = 0.0
    return ObjectiveParts(loss1, loss2, gamma * mean_kl, mean_kl)


def train_sar(labeled1, labeled2, unlabeled, config: SarConfig,
              model_kind: str = "flat",
              mapping: Optional[LabelMapping] = None,
              label_set: Optional[LabelSet] = None,
              init: Optional[tuple] = None,
              num_features: Optional[tuple[int, int]] = None) -> SarState:
    """Supervised fits, then `iterations` rounds of agree-project-refit.

    `init` warm-starts the loop from an existing parameter pair instead of
    the supervised fits (used to probe fixpoints). The returned trace has
    one entry per round plus the supervised baseline; with c = 0 or no
    unlabeled data the loop leaves the supervised fits untouched.
    """
    problem = _make_problem(labeled1, labeled2, unlabeled, config, model_kind,
                            mapping, label_set, num_features)
    gamma = _gamma(config, problem)
    if init is not None:
        params1, params2 = init
    else:
        params1 = problem.fit(0, problem.init_params(0))
        params2 = problem.fit(1, problem.init_params(1))

    active = gamma > 0 and len(problem.unlabeled) > 0
    weight = gamma / len(problem.unlabeled) if active else 0.0

    trace: list[TraceEntry] = []
    stats: list[EStepStats] = []
    prev_total: Optional[float] = None
    for it in range(config.iterations + 1):
        outcomes = _run_estep(problem, params1, params2) if active else []
        mean_kl = float(np.mean([o.kl_value for o in outcomes])) if outcomes else 0.0
        entry = TraceEntry(it, problem.supervised_loss(0, params1),
                           problem.supervised_loss(1, params2), gamma * mean_kl)
        trace.append(entry)
        if outcomes:
            stats.append(EStepStats(
                it, len(outcomes),
                sum(1 for o in outcomes if o.converged),
                max(o.iterations for o in outcomes),
            ))
        if prev_total is not None and entry.total > prev_total + _MONOTONE_HARD:
            raise NumericalError(
                f"EM monotonicity violated at iteration {it}: "
                f"{prev_total!r} -> {entry.total!r}; optimizer tolerance too loose"
            )
        if it == config.iterations:
            break
        if (config.early_stop_tol is not None and prev_total is not None
                and prev_total - entry.total < config.early_stop_tol):
            break
        prev_total = entry.total
        if active:
            extras = [
                [problem.soft_example(view, inst, out, weight)
                 for inst, out in zip(problem.unlabeled, outcomes)]
                for view in (0, 1)
            ]
            params1 = problem.fit(0, params1, extras[0])
            params2 = problem.fit(1, params2, extras[1])
        else:
            params1 = problem.fit(0, params1)
            params2 = problem.fit(1, params2)
    return SarState(params1, params2, tuple(trace), tuple(stats))


def agree0_predict(params1, params2, x1: FeatureVector, x2: FeatureVector,
                   mapping: Optional[LabelMapping] = None) -> str:
    """Combine two flat models on one instance; argmax of the projected q1.

    Ties resolve to the lowest label index. With no mapping this is the
    logarithmic opinion pool of the two predictive distributions.
    """
    p1 = mx.predict_dist(params1, x1)
    p2 = mx.predict_dist(params2, x2)
    outcome = agree_flat(p1, p2) if mapping is None \
        else agree_flat_partial(p1, p2, mapping)
    return params1.label_set.name(outcome.q1.argmax())


def agree0_decode(params1, params2, ex1: ChainExample, ex2: ChainExample,
                  mapping: Optional[LabelMapping] = None) -> tuple[str, ...]:
    """Chain analogue of agree0_predict: Viterbi over the projected view-1 chain."""
    pot1 = build_potentials(params1, ex1)
    pot2 = build_potentials(params2, ex2)
    if mapping is None:
        outcome = agree_chain(pot1, pot2)
    else:
        outcome = agree_chain_partial(pot1, pot2, mapping)
    path = viterbi(outcome.q1_potentials)
    return tuple(params1.label_set.name(int(i)) for i in path)


def write_trace_csv(trace: Sequence[TraceEntry], path) -> None:
    """Objective trace as CSV: iteration, L1, L2, klterm, total."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("iteration,L1,L2,klterm,total\n")
        for entry in trace:
            fh.write(f"{entry.iteration},{float(entry.loss1)!r},"
                     f"{float(entry.loss2)!r},{float(entry.kl_term)!r},"
                     f"{float(entry.total)!r}\n")
