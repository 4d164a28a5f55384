"""Pure-NumPy chain inference kernels.

Fallback for :mod:`sar._chain_fast`; same contracts, same -inf handling,
one Python-level loop over positions. Inputs are validated upstream: node
scores (T, K) and edge scores (T-1, K, K), entries finite or -inf.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

__all__ = ["forward_backward", "viterbi_path", "log_partition"]


def _forward(node: np.ndarray, edge: np.ndarray) -> np.ndarray:
    T, K = node.shape
    alpha = np.empty((T, K))
    alpha[0] = node[0]
    for t in range(1, T):
        alpha[t] = node[t] + logsumexp(alpha[t - 1][:, None] + edge[t - 1], axis=0)
    return alpha


def _backward(node: np.ndarray, edge: np.ndarray) -> np.ndarray:
    T, K = node.shape
    beta = np.empty((T, K))
    beta[T - 1] = 0.0
    for t in range(T - 2, -1, -1):
        beta[t] = logsumexp(edge[t] + (node[t + 1] + beta[t + 1])[None, :], axis=1)
    return beta


def log_partition(node: np.ndarray, edge: np.ndarray) -> float:
    alpha = _forward(node, edge)
    return float(logsumexp(alpha[-1]))


def forward_backward(node: np.ndarray, edge: np.ndarray):
    """Node/edge posterior marginals plus log-partition, all in one sweep.

    Raises ValueError when no finite-score path exists.
    """
    alpha = _forward(node, edge)
    log_z = float(logsumexp(alpha[-1]))
    if not np.isfinite(log_z):
        raise ValueError("impossible chain")
    beta = _backward(node, edge)
    node_marg = np.exp(alpha + beta - log_z)
    edge_marg = np.exp(
        alpha[:-1, :, None]
        + edge
        + (node[1:] + beta[1:])[:, None, :]
        - log_z
    )
    return node_marg, edge_marg, log_z


def viterbi_path(node: np.ndarray, edge: np.ndarray) -> np.ndarray:
    """Highest-scoring path; per-step ties resolve to the lowest label index."""
    T, K = node.shape
    backptr = np.zeros((T, K), dtype=np.int64)
    score = node[0].copy()
    for t in range(1, T):
        cand = score[:, None] + edge[t - 1]
        backptr[t] = np.argmax(cand, axis=0)
        score = node[t] + np.max(cand, axis=0)
    if not np.isfinite(np.max(score)):
        raise ValueError("impossible chain")
    path = np.empty(T, dtype=np.int64)
    path[T - 1] = int(np.argmax(score))
    for t in range(T - 2, -1, -1):
        path[t] = backptr[t + 1, path[t + 1]]
    return path
