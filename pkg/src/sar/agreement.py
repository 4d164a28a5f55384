"""Minimum-KL agreement projections between two view models.

Four regimes share one idea: find the product distribution q1 x q2 closest
in KL to p1 x p2 subject to the views agreeing. With identical label sets
the solution is the normalized geometric mean (flat or per-clique for
chains). With label sets related by a surjection, agreement is required on
the coarse side only: the flat case stays closed-form; the chain case runs
a deterministic dual ascent that matches collapsed node and edge marginals.

The chain constraint family is per-clique (per-position coarse node
marginals plus per-adjacent-pair coarse edge marginals). Node constraints
alone cannot represent the geometric-mean solution when the two chains'
edge potentials differ, so the identity mapping would not reduce to the
closed form without the edge block.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from . import _backend
from .chain import ChainMarginals, ChainPotentials, forward_backward
from .errors import NumericalError
from .probs import Categorical, LabelSet, bhattacharyya, kl_divergence, log_normalize

__all__ = [
    "LabelMapping",
    "AgreementOutcome",
    "ChainAgreementOutcome",
    "DualVars",
    "SolverConfig",
    "agree_flat",
    "agree_flat_partial",
    "agree_chain",
    "agree_chain_partial",
    "dual_objective",
]

_DISJOINT = "agreement undefined: disjoint supports"


@dataclass(frozen=True)
class LabelMapping:
    """Surjection from a fine label set onto a coarse one."""

    fine: LabelSet
    coarse: LabelSet
    fine_to_coarse: np.ndarray  # index array, len(fine)

    def __post_init__(self):
        m = np.asarray(self.fine_to_coarse, dtype=np.int64).copy()
        if m.shape != (len(self.fine),):
            raise ValueError("mapping must assign every fine label")
        if m.min() < 0 or m.max() >= len(self.coarse):
            raise ValueError("mapping hits labels outside the coarse set")
        if np.unique(m).size != len(self.coarse):
            raise ValueError("mapping must be surjective onto the coarse set")
        m.setflags(write=False)
        object.__setattr__(self, "fine_to_coarse", m)

    @classmethod
    def identity(cls, label_set: LabelSet) -> "LabelMapping":
        return cls(label_set, label_set, np.arange(len(label_set)))

    @property
    def is_identity(self) -> bool:
        return self.fine == self.coarse and bool(
            np.all(self.fine_to_coarse == np.arange(len(self.fine)))
        )

    def coarse_name(self, fine_name: str) -> str:
        return self.coarse.name(int(self.fine_to_coarse[self.fine.index(fine_name)]))

    def collapse_log_probs(self, log_probs: np.ndarray) -> np.ndarray:
        """Coarse log-mass: logsumexp of each preimage group."""
        out = np.empty(len(self.coarse))
        for z in range(len(self.coarse)):
            out[z] = logsumexp(log_probs[self.fine_to_coarse == z])
        return out

    def collapse_vector(self, values: np.ndarray) -> np.ndarray:
        """Sum a fine-indexed probability vector into coarse bins."""
        return np.bincount(self.fine_to_coarse, weights=values,
                           minlength=len(self.coarse))

    def collapse_table(self, table: np.ndarray) -> np.ndarray:
        """Sum a fine x fine table into coarse x coarse bins."""
        onehot = np.zeros((len(self.fine), len(self.coarse)))
        onehot[np.arange(len(self.fine)), self.fine_to_coarse] = 1.0
        return onehot.T @ table @ onehot


@dataclass(frozen=True)
class AgreementOutcome:
    q1: Categorical
    q2: Categorical
    kl_value: float  # KL(q1 x q2 || p1 x p2)
    bhattacharyya_value: float
    dual_vars: Optional[np.ndarray]
    converged: bool
    iterations: int


@dataclass(frozen=True)
class DualVars:
    """One multiplier per coarse clique: node (T, Z), edge (T-1, Z, Z)."""

    node: np.ndarray
    edge: np.ndarray

    def __post_init__(self):
        node = np.asarray(self.node, dtype=np.float64)
        edge = np.asarray(self.edge, dtype=np.float64)
        T, Z = node.shape
        if edge.shape != (T - 1, Z, Z):
            raise ValueError("dual variable shapes are inconsistent")
        object.__setattr__(self, "node", node)
        object.__setattr__(self, "edge", edge)

    @classmethod
    def zeros(cls, length: int, num_coarse: int) -> "DualVars":
        return cls(np.zeros((length, num_coarse)),
                   np.zeros((max(length - 1, 0), num_coarse, num_coarse)))


@dataclass(frozen=True)
class ChainAgreementOutcome:
    q1_potentials: ChainPotentials
    q2_potentials: ChainPotentials
    q1_marginals: ChainMarginals
    q2_marginals: ChainMarginals
    kl_value: float
    bhattacharyya_value: Optional[float]  # set when the closed form applies
    dual_vars: Optional[DualVars]
    converged: bool
    iterations: int


@dataclass(frozen=True)
class SolverConfig:
    """Dual-ascent knobs: sweep budget, L-inf residual target, update damping."""

    max_iters: int = 200
    tol: float = 1e-6
    damping: float = 1.0

    def __post_init__(self):
        if self.max_iters < 1 or self.tol <= 0 or not 0 < self.damping <= 1:
            raise ValueError("invalid solver configuration")


def agree_flat(p1: Categorical, p2: Categorical) -> AgreementOutcome:
    """Identical label sets: q1 = q2 proportional to sqrt(p1 p2).

    The achieved KL(q1 x q2 || p1 x p2) is exactly twice the Bhattacharyya
    distance between p1 and p2.
    """
    if p1.label_set != p2.label_set:
        raise ValueError("mismatched label sets")
    avg = 0.5 * (p1.log_probs + p2.log_probs)
    if logsumexp(avg) == -np.inf:
        raise NumericalError(_DISJOINT)
    q = log_normalize(p1.label_set, avg)
    b = bhattacharyya(p1, p2)
    return AgreementOutcome(q, q, 2.0 * b, b, None, True, 0)


def agree_flat_partial(p1: Categorical, p2: Categorical,
                       m: LabelMapping) -> AgreementOutcome:
    """Mapped label sets, flat case: still closed form.

    The coarse agreement mass is proportional to sqrt(P1(z) p2(z)) where P1
    collapses p1 through the mapping; q1 redistributes that mass inside each
    preimage proportionally to p1. Collapsing q1 reproduces q2 exactly, and
    the identity mapping reduces to :func:`agree_flat` bit-for-bit (up to
    normalization roundoff).
    """
    if p1.label_set != m.fine or p2.label_set != m.coarse:
        raise ValueError("distributions do not match the mapping's label sets")
    lp1 = p1.log_probs
    lp2 = p2.log_probs
    coarse_p1 = m.collapse_log_probs(lp1)
    mass = 0.5 * (coarse_p1 + lp2)
    if logsumexp(mass) == -np.inf:
        raise NumericalError(_DISJOINT)
    q2 = log_normalize(p2.label_set, mass)

    q1_log = np.full(len(m.fine), -np.inf)
    fine_support = lp1 > -np.inf
    zs = m.fine_to_coarse[fine_support]
    q1_log[fine_support] = lp1[fine_support] - coarse_p1[zs] + q2.log_probs[zs]
    q1 = Categorical(m.fine, np.minimum(q1_log, 0.0))

    kl = kl_divergence(q1, p1) + kl_divergence(q2, p2)
    coarse_dist = Categorical(m.coarse, np.minimum(coarse_p1 - logsumexp(coarse_p1), 0.0))
    b = bhattacharyya(coarse_dist, p2)
    with np.errstate(invalid="ignore"):
        lam = 0.5 * (lp2 - coarse_p1)
    lam[~np.isfinite(lam)] = 0.0
    return AgreementOutcome(q1, q2, kl, b, lam, True, 0)


def _check_chain_pair(pot1: ChainPotentials, pot2: ChainPotentials,
                      num_labels2: int | None = None):
    k2 = pot2.num_labels if num_labels2 is None else num_labels2
    if pot1.length != pot2.length:
        raise ValueError("chains have different lengths")
    if num_labels2 is None and pot1.num_labels != pot2.num_labels:
        raise ValueError("mismatched label sets")
    if pot2.num_labels != k2:
        raise ValueError("second chain does not match the coarse label set")


def agree_chain(pot1: ChainPotentials, pot2: ChainPotentials) -> ChainAgreementOutcome:
    """Identical label sets: the agreement chain halves the summed log-potentials.

    The structured Bhattacharyya distance is
    (log Z1 + log Z2) / 2 - log Z_q, with Z_q the partition value of the
    geometric-mean chain; the achieved KL is twice that.
    """
    _check_chain_pair(pot1, pot2)
    q_pot = ChainPotentials(0.5 * (pot1.node + pot2.node),
                            0.5 * (pot1.edge + pot2.edge))
    try:
        marg = forward_backward(q_pot)
    except NumericalError:
        raise NumericalError(_DISJOINT) from None
    log_z1 = _backend.log_partition(pot1.node, pot1.edge)
    log_z2 = _backend.log_partition(pot2.node, pot2.edge)
    b = max(0.0, 0.5 * log_z1 + 0.5 * log_z2 - marg.log_partition)
    return ChainAgreementOutcome(q_pot, q_pot, marg, marg, 2.0 * b, b, None, True, 0)


def _adjusted_potentials(pot1: ChainPotentials, pot2: ChainPotentials,
                         m: LabelMapping, lam: DualVars):
    idx = m.fine_to_coarse
    q1 = ChainPotentials(pot1.node + lam.node[:, idx],
                         pot1.edge + lam.edge[:, idx][:, :, idx])
    q2 = ChainPotentials(pot2.node - lam.node, pot2.edge - lam.edge)
    return q1, q2


def _constraint_residual(m: LabelMapping, marg1: ChainMarginals,
                         marg2: ChainMarginals) -> float:
    T = marg1.node.shape[0]
    res = 0.0
    for t in range(T):
        gap = m.collapse_vector(marg1.node[t]) - marg2.node[t]
        res = max(res, float(np.max(np.abs(gap))))
    for t in range(T - 1):
        gap = m.collapse_table(marg1.edge[t]) - marg2.edge[t]
        res = max(res, float(np.max(np.abs(gap))))
    return res


def _log_ratio_step(numer: np.ndarray, denom: np.ndarray) -> np.ndarray:
    """0.5 log(numer/denom) with zero-mass guards, clipped to sane magnitude."""
    tiny = 1e-300
    both_zero = (numer < tiny) & (denom < tiny)
    step = 0.5 * (np.log(np.maximum(numer, tiny)) - np.log(np.maximum(denom, tiny)))
    step[both_zero] = 0.0
    return np.clip(step, -50.0, 50.0)


def agree_chain_partial(
    pot1: ChainPotentials,
    pot2: ChainPotentials,
    m: LabelMapping,
    solver_config: SolverConfig = SolverConfig(),
) -> ChainAgreementOutcome:
    """Mapped label sets, chain case: deterministic dual ascent.

    One multiplier per coarse clique tilts the two chains in opposite
    directions; each block update sets its clique's multipliers to the exact
    maximizer of the concave dual given the others (a closed-form half
    log-ratio of the current marginals), so the dual value never decreases.
    An iteration is one sweep over all node then edge blocks; convergence is
    declared when the worst collapsed-marginal gap drops below the residual
    tolerance.
    """
    if pot1.num_labels != len(m.fine) or pot2.num_labels != len(m.coarse):
        raise ValueError("potentials do not match the mapping's label sets")
    _check_chain_pair(pot1, pot2, num_labels2=len(m.coarse))
    T = pot1.length
    Z = len(m.coarse)

    log_z1 = _backend.log_partition(pot1.node, pot1.edge)
    log_z2 = _backend.log_partition(pot2.node, pot2.edge)
    if not (np.isfinite(log_z1) and np.isfinite(log_z2)):
        raise NumericalError("impossible chain")

    lam = DualVars.zeros(T, Z)

    def infer(current: DualVars):
        q1_pot, q2_pot = _adjusted_potentials(pot1, pot2, m, current)
        try:
            return q1_pot, q2_pot, forward_backward(q1_pot), forward_backward(q2_pot)
        except NumericalError:
            raise NumericalError(_DISJOINT) from None

    q1_pot, q2_pot, marg1, marg2 = infer(lam)
    residual = _constraint_residual(m, marg1, marg2)
    iterations = 0
    converged = residual <= solver_config.tol

    while not converged and iterations < solver_config.max_iters:
        lam_node = lam.node.copy()
        lam_edge = lam.edge.copy()
        for t in range(T):
            step = _log_ratio_step(marg2.node[t], m.collapse_vector(marg1.node[t]))
            lam_node[t] += solver_config.damping * step
            lam = DualVars(lam_node, lam_edge)
            q1_pot, q2_pot, marg1, marg2 = infer(lam)
        for t in range(T - 1):
            step = _log_ratio_step(marg2.edge[t], m.collapse_table(marg1.edge[t]))
            lam_edge[t] += solver_config.damping * step
            lam = DualVars(lam_node, lam_edge)
            q1_pot, q2_pot, marg1, marg2 = infer(lam)
        iterations += 1
        if not (np.all(np.isfinite(lam.node)) and np.all(np.isfinite(lam.edge))):
            raise NumericalError("dual divergence")
        residual = _constraint_residual(m, marg1, marg2)
        converged = residual <= solver_config.tol

    # KL(q1||p1) + KL(q2||p2), evaluated from the tilted chains' marginals:
    # the lam terms are E_q[lam . features], the partition terms the log
    # normalizer shifts.
    kl = log_z1 - marg1.log_partition + log_z2 - marg2.log_partition
    for t in range(T):
        kl += float(lam.node[t] @ (m.collapse_vector(marg1.node[t]) - marg2.node[t]))
    for t in range(T - 1):
        kl += float(np.sum(lam.edge[t] * (m.collapse_table(marg1.edge[t])
                                          - marg2.edge[t])))
    return ChainAgreementOutcome(q1_pot, q2_pot, marg1, marg2, max(0.0, kl),
                                 None, lam, converged, iterations)


def dual_objective(lam: DualVars, pot1: ChainPotentials, pot2: ChainPotentials,
                   m: LabelMapping) -> float:
    """Value of the agreement dual at lam, zero by convention at lam = 0.

    Computed as (log Z1 + log Z2) - (log Z1' + log Z2') where the primed
    partition values come from the lam-tilted chains. Concave in lam; at the
    optimum it equals the achieved primal KL (twice the Bhattacharyya
    distance when the mapping is the identity).
    """
    q1_pot, q2_pot = _adjusted_potentials(pot1, pot2, m, lam)
    log_z1 = _backend.log_partition(pot1.node, pot1.edge)
    log_z2 = _backend.log_partition(pot2.node, pot2.edge)
    adj1 = _backend.log_partition(q1_pot.node, q1_pot.edge)
    adj2 = _backend.log_partition(q2_pot.node, q2_pot.edge)
    return (log_z1 + log_z2) - (adj1 + adj2)
