"""Independent numeric oracles used only by the tests.

Everything here works in direct probability space and shares no code with
the package's projection machinery: the constrained-KL minimizer is a
projected-gradient descent over the simplex, enumeration helpers expand
chains path by path, and gradients are checked by central differences.
"""

from __future__ import annotations

import itertools

import numpy as np


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    idx = np.arange(1, len(v) + 1)
    rho = np.nonzero(u * idx > (css - 1.0))[0][-1]
    theta = (css[rho] - 1.0) / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def direct_kl(q: np.ndarray, p: np.ndarray) -> float:
    mask = q > 0
    if np.any(p[mask] <= 0):
        return float("inf")
    return float(np.sum(q[mask] * (np.log(q[mask]) - np.log(p[mask]))))


def constrained_kl_oracle(p1: np.ndarray, p2: np.ndarray, groups: np.ndarray,
                          grad_map_tol: float = 1e-10, max_iters: int = 20_000):
    """Minimize KL(q1||p1) + KL(q2||p2) s.t. q2 is q1 collapsed through groups.

    Substituting the constraint leaves an unconstrained-simplex problem in
    q1, solved by spectral projected gradient (Barzilai-Borwein steps with
    Armijo backtracking along the projection arc). The identity grouping
    recovers the full-agreement projection (q1 = q2). Returns
    (q1, q2, objective value).
    """
    n_fine, n_coarse = len(p1), len(p2)
    collapse = np.zeros((n_fine, n_coarse))
    collapse[np.arange(n_fine), groups] = 1.0

    def value(q: np.ndarray) -> float:
        return direct_kl(q, p1) + direct_kl(q @ collapse, p2)

    def grad(q: np.ndarray) -> np.ndarray:
        tiny = 1e-300
        q2 = q @ collapse
        g1 = np.log(np.maximum(q, tiny)) - np.log(p1) + 1.0
        g2 = np.log(np.maximum(q2, tiny)) - np.log(p2) + 1.0
        return g1 + g2[groups]

    q = np.full(n_fine, 1.0 / n_fine)
    v = value(q)
    g = grad(q)
    step = 1.0
    for _ in range(max_iters):
        if np.max(np.abs(project_simplex(q - g) - q)) <= grad_map_tol:
            break
        step = min(max(step, 1e-12), 1e8)
        accepted = False
        while step >= 1e-16:
            candidate = project_simplex(q - step * g)
            direction = candidate - q
            cv = value(candidate)
            if cv <= v + 1e-4 * float(g @ direction) + 1e-16:
                accepted = True
                break
            step *= 0.5
        if not accepted or np.max(np.abs(direction)) < 1e-15:
            break
        g_new = grad(candidate)
        s = direction
        y = g_new - g
        sy = float(s @ y)
        step = float(s @ s) / sy if sy > 1e-18 else step * 2.0
        q, v, g = candidate, cv, g_new
    return q, q @ collapse, v


def enumerate_paths(length: int, num_labels: int):
    return list(itertools.product(range(num_labels), repeat=length))


def path_index(path, num_labels: int) -> int:
    idx = 0
    for y in path:
        idx = idx * num_labels + int(y)
    return idx


def chain_path_log_scores(node: np.ndarray, edge: np.ndarray) -> np.ndarray:
    """Unnormalized log score of every path, in lexicographic order."""
    T, K = node.shape
    scores = np.empty(K**T)
    for i, path in enumerate(enumerate_paths(T, K)):
        s = node[0, path[0]]
        for t in range(1, T):
            s += edge[t - 1, path[t - 1], path[t]] + node[t, path[t]]
        scores[i] = s
    return scores


def chain_path_probs(node: np.ndarray, edge: np.ndarray) -> np.ndarray:
    scores = chain_path_log_scores(node, edge)
    scores -= scores.max()
    w = np.exp(scores)
    return w / w.sum()


def pushforward_coarse(q_fine: np.ndarray, length: int, num_fine: int,
                       num_coarse: int, groups: np.ndarray) -> np.ndarray:
    """Collapse a fine-path distribution through a per-position label map."""
    out = np.zeros(num_coarse**length)
    for i, path in enumerate(enumerate_paths(length, num_fine)):
        coarse = tuple(int(groups[y]) for y in path)
        out[path_index(coarse, num_coarse)] += q_fine[i]
    return out


def central_difference(f, x0: np.ndarray, coords, h: float = 1e-5) -> dict:
    """Central finite differences of a scalar function at chosen coordinates."""
    out = {}
    for idx in coords:
        xp = x0.copy()
        xp[idx] += h
        xm = x0.copy()
        xm[idx] -= h
        out[idx] = (f(xp) - f(xm)) / (2.0 * h)
    return out
