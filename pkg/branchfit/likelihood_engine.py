"""
Likelihood, magnetizations and derivatives of the CFN log-likelihood.

All per-pattern work is vectorized over the distinct patterns of a SampleSet:
magnetization tables are arrays of shape (2|E|, K), indexed by the tree's
directed-edge index (2k has head edges[k][0], 2k+1 has head edges[k][1]).
"""
import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np

from branchfit.cfn_model import (ENUMERATION_LEAF_LIMIT, EdgeVector, SampleSet,
                                 all_patterns, as_edge_vector)
from branchfit.errors import (EnumerationLimitError, InvalidParameterError,
                              NumericalError)
from branchfit.tree_core import DirectedEdge, Tree, edge_path_decomposition
from utils import logger

log = logger.customLogger()

DENOMINATOR_FLOOR = 1e-14


def _check_denominator(denom: np.ndarray, what: str) -> None:
    if np.any(np.abs(denom) < DENOMINATOR_FLOOR):
        log.error(f"Degenerate denominator in {what}: min |denominator| = {np.min(np.abs(denom)):.3e}")
        raise NumericalError(f"Degenerate parameters: denominator of {what} below {DENOMINATOR_FLOOR}")


def q_combine(s, t):
    """q(s, t) = (s + t) / (1 + s t)."""
    denom = 1.0 + s * t
    _check_denominator(np.asarray(denom), "q(s, t)")
    return (s + t) / denom


@dataclass(frozen=True)
class _Step:
    target: int
    leaf_column: Optional[int]
    inputs: Tuple[Tuple[int, int], ...]


@lru_cache(maxsize=64)
def message_schedule(tree: Tree) -> Tuple[_Step, ...]:
    """Upward messages in postorder, then downward messages in preorder."""
    order, parent = tree.rooted()

    def step(head: int, tail: int) -> _Step:
        if tree.is_leaf(head):
            return _Step(tree.directed_index(head, tail), tree.leaf_column[head], ())
        inputs = tuple((tree.edge_id(head, n), tree.directed_index(n, head))
                       for n in tree.adjacency[head] if n != tail)
        return _Step(tree.directed_index(head, tail), None, inputs)

    upward = [step(node, parent[node]) for node in reversed(order[1:])]
    downward = [step(parent[node], node) for node in order[1:]]
    return tuple(upward + downward)


def compute_step(step: _Step, theta: EdgeVector, patterns: np.ndarray, Z: np.ndarray) -> None:
    if step.leaf_column is not None:
        Z[step.target] = patterns[:, step.leaf_column]
        return
    (e1, d1), (e2, d2) = step.inputs
    Z[step.target] = q_combine(theta[e1] * Z[d1], theta[e2] * Z[d2])


def magnetization_matrix(tree: Tree, theta, patterns: np.ndarray) -> np.ndarray:
    """All directed magnetizations for every pattern row, shape (2|E|, K)."""
    theta = np.asarray(theta, dtype=float)
    patterns = np.atleast_2d(np.asarray(patterns, dtype=float))
    Z = np.empty((2 * tree.n_edges, patterns.shape[0]))
    for step in message_schedule(tree):
        compute_step(step, theta, patterns, Z)
    return Z


@dataclass(frozen=True, eq=False)
class MagnetizationTable:
    tree: Tree
    theta: EdgeVector
    pattern: np.ndarray
    values: np.ndarray

    def at(self, d: DirectedEdge) -> float:
        return float(self.values[self.tree.directed_index(d.head, d.tail)])


def magnetizations_all(tree: Tree, theta_hat, pattern) -> MagnetizationTable:
    theta = as_edge_vector(tree, theta_hat)
    pattern = np.asarray(pattern, dtype=np.int8).reshape(-1)
    if pattern.shape[0] != tree.n_leaves:
        raise InvalidParameterError(f"Pattern has {pattern.shape[0]} spins, tree has {tree.n_leaves} leaves")
    values = magnetization_matrix(tree, theta, pattern[None, :])[:, 0]
    return MagnetizationTable(tree=tree, theta=theta, pattern=pattern, values=values)


def magnetization_by_definition(tree: Tree, theta_hat, pattern, d: DirectedEdge,
                                leaf_limit: int = ENUMERATION_LEAF_LIMIT) -> float:
    """Conditional spin bias at d.head given the leaves on its side, by enumeration."""
    if tree.n_leaves > leaf_limit:
        raise EnumerationLimitError(f"Tree has {tree.n_leaves} leaves; enumeration is limited to {leaf_limit}")
    theta = as_edge_vector(tree, theta_hat)
    pattern = np.asarray(pattern).reshape(-1)
    if tree.is_leaf(d.head):
        return float(pattern[tree.leaf_column[d.head]])

    side = tree.side_nodes(d.head, d.tail)
    side_set = set(side)
    free = [v for v in side if v != d.head and not tree.is_leaf(v)]
    free_pos = {v: k for k, v in enumerate(free)}
    sub_edges = [(k, a, b) for k, (a, b) in enumerate(tree.edges) if a in side_set and b in side_set]

    assignments = all_patterns(len(free)) if free else np.ones((1, 0), dtype=np.int8)
    mass = {}
    for root_spin in (1, -1):
        def spin(node):
            if node == d.head:
                return float(root_spin)
            if tree.is_leaf(node):
                return float(pattern[tree.leaf_column[node]])
            return assignments[:, free_pos[node]].astype(float)

        weight = np.ones(assignments.shape[0])
        for k, a, b in sub_edges:
            weight = weight * 0.5 * (1.0 + theta[k] * spin(a) * spin(b))
        mass[root_spin] = float(weight.sum())

    total = mass[1] + mass[-1]
    if total <= 0.0:
        log.error(f"Zero conditional mass at node {d.head}")
        raise NumericalError("Conditioning event has zero probability")
    return (mass[1] - mass[-1]) / total


# likelihood by pruning

def pattern_log_probs(tree: Tree, theta, patterns: np.ndarray, root: Optional[int] = None) -> np.ndarray:
    """log P(pattern) for every row, sum-product from ``root`` with per-node rescaling."""
    theta = np.asarray(theta, dtype=float)
    patterns = np.atleast_2d(np.asarray(patterns))
    K = patterns.shape[0]
    order, parent = tree.rooted(root)

    partial = {}
    log_scale = np.zeros(K)
    for node in reversed(order):
        if tree.is_leaf(node):
            spins = patterns[:, tree.leaf_column[node]]
            L = np.stack([(spins > 0).astype(float), (spins < 0).astype(float)], axis=1)
        else:
            L = np.ones((K, 2))
        for child in tree.adjacency[node]:
            if child == parent[node]:
                continue
            th = theta[tree.edge_id(node, child)]
            stay, flip = 0.5 * (1.0 + th), 0.5 * (1.0 - th)
            Lc = partial.pop(child)
            L = L * np.stack([stay * Lc[:, 0] + flip * Lc[:, 1],
                              flip * Lc[:, 0] + stay * Lc[:, 1]], axis=1)
        scale = L.max(axis=1)
        if np.any(scale <= 0.0):
            log.error("Pattern probability underflowed to zero during pruning")
            raise NumericalError("A pattern has zero probability (boundary-degenerate parameters)")
        partial[node] = L / scale[:, None]
        log_scale += np.log(scale)

    L_root = partial[order[0]]
    return np.log(0.5 * (L_root[:, 0] + L_root[:, 1])) + log_scale


def log_likelihood(tree: Tree, theta_hat, samples: SampleSet, root: Optional[int] = None) -> float:
    theta = as_edge_vector(tree, theta_hat)
    samples.check_tree(tree)
    value = float(np.dot(samples.weights, pattern_log_probs(tree, theta, samples.patterns, root)))
    if not np.isfinite(value):
        raise NumericalError(f"Non-finite log-likelihood {value}")
    return value


# derivatives

def per_sample_gradient(tree: Tree, theta, patterns: np.ndarray, Z: Optional[np.ndarray] = None) -> np.ndarray:
    """(|E|, K) per-pattern derivative a / (1 + theta_e a) with a = Z_x Z_y."""
    theta = np.asarray(theta, dtype=float)
    if Z is None:
        Z = magnetization_matrix(tree, theta, patterns)
    a = Z[0::2] * Z[1::2]
    denom = 1.0 + theta[:, None] * a
    _check_denominator(denom, "the gradient")
    return a / denom


def gradient(tree: Tree, theta_hat, samples: SampleSet) -> EdgeVector:
    theta = as_edge_vector(tree, theta_hat)
    samples.check_tree(tree)
    return per_sample_gradient(tree, theta, samples.patterns) @ samples.weights


@dataclass(frozen=True)
class _PairTerm:
    e: int
    f: int
    dx: int
    dy: int
    dv: int
    path_edges: Tuple[int, ...]
    factors: Tuple[Tuple[int, int, int, int], ...]


@lru_cache(maxsize=64)
def hessian_pair_terms(tree: Tree) -> Tuple[_PairTerm, ...]:
    """Index bookkeeping for every off-diagonal pair e < f."""
    terms = []
    for e, f in itertools.combinations(range(tree.n_edges), 2):
        pd = edge_path_decomposition(tree, e, f)
        path_edges = tuple(tree.edge_id(pd.y_at(j), pd.y_at(j - 1)) for j in range(1, pd.n + 1))
        factors = []
        for j in range(pd.n + 1):
            yj, wj, prev = pd.y_at(j), pd.w_at(j), pd.y_at(j - 1)
            factors.append((tree.edge_id(yj, wj), tree.directed_index(wj, yj),
                            tree.edge_id(yj, prev), tree.directed_index(prev, yj)))
        terms.append(_PairTerm(
            e=e, f=f,
            dx=tree.directed_index(pd.x, pd.y),
            dy=tree.directed_index(pd.y, pd.x),
            dv=tree.directed_index(pd.v, pd.u),
            path_edges=path_edges,
            factors=tuple(factors),
        ))
    return tuple(terms)


def per_sample_hessians(tree: Tree, theta, patterns: np.ndarray, Z: Optional[np.ndarray] = None) -> np.ndarray:
    """(K, |E|, |E|) per-pattern Hessians of log P(pattern)."""
    theta = np.asarray(theta, dtype=float)
    patterns = np.atleast_2d(patterns)
    if Z is None:
        Z = magnetization_matrix(tree, theta, patterns)
    K, E = patterns.shape[0], tree.n_edges
    H = np.zeros((K, E, E))

    g = per_sample_gradient(tree, theta, patterns, Z)
    H[:, np.arange(E), np.arange(E)] = -(g.T ** 2)

    for term in hessian_pair_terms(tree):
        Zx, Zy, Zv = Z[term.dx], Z[term.dy], Z[term.dv]
        lead_denom = 1.0 + theta[term.e] * Zx * Zy
        _check_denominator(lead_denom, "the Hessian leading factor")
        value = Zx * Zv / lead_denom ** 2
        for k in term.path_edges:
            value = value * theta[k]
        for e_side, d_side, e_path, d_prev in term.factors:
            s = theta[e_side] * Z[d_side]
            denom = 1.0 + s * theta[e_path] * Z[d_prev]
            _check_denominator(denom, "a Hessian path factor")
            value = value * (1.0 - s ** 2) / denom ** 2
        H[:, term.e, term.f] = value
        H[:, term.f, term.e] = value
    return H


def weighted_hessian(tree: Tree, theta, patterns: np.ndarray, weights: np.ndarray) -> np.ndarray:
    H = np.tensordot(weights, per_sample_hessians(tree, theta, patterns), axes=(0, 0))
    return 0.5 * (H + H.T)


def hessian(tree: Tree, theta_hat, samples: SampleSet) -> np.ndarray:
    theta = as_edge_vector(tree, theta_hat)
    samples.check_tree(tree)
    return weighted_hessian(tree, theta, samples.patterns, samples.weights)


def edge_objective(products: np.ndarray, weights: np.ndarray, t: float) -> float:
    """Mean of log(1 + t a_i); the log-likelihood along one edge up to a constant."""
    with np.errstate(divide='ignore'):
        return float(np.dot(weights, np.log1p(t * products)))


# finite differences

def _step_inside(theta: EdgeVector, e: int, h: float) -> None:
    if abs(theta[e]) + h >= 1.0:
        raise InvalidParameterError(f"Finite-difference step {h} on edge {e} leaves (-1, 1) at theta={theta[e]}")


def fd_gradient(tree: Tree, theta_hat, samples: SampleSet, h: float = 1e-5) -> EdgeVector:
    theta = as_edge_vector(tree, theta_hat)
    out = np.zeros(tree.n_edges)
    for e in range(tree.n_edges):
        _step_inside(theta, e, h)
        up, down = theta.copy(), theta.copy()
        up[e] += h
        down[e] -= h
        out[e] = (log_likelihood(tree, up, samples) - log_likelihood(tree, down, samples)) / (2.0 * h)
    return out


def fd_hessian(tree: Tree, theta_hat, samples: SampleSet, h: float = 1e-4) -> np.ndarray:
    theta = as_edge_vector(tree, theta_hat)
    out = np.zeros((tree.n_edges, tree.n_edges))
    for f in range(tree.n_edges):
        _step_inside(theta, f, h)
        up, down = theta.copy(), theta.copy()
        up[f] += h
        down[f] -= h
        out[:, f] = (gradient(tree, up, samples) - gradient(tree, down, samples)) / (2.0 * h)
    return out


def third_derivative_fd(tree: Tree, theta_hat, samples: SampleSet, e1: int, e2: int, e3: int,
                        h: float = 1e-4) -> float:
    """Central difference of the (e1, e2) Hessian entry in direction e3."""
    theta = as_edge_vector(tree, theta_hat)
    for e in (e1, e2, e3):
        tree.check_edge(e)
    _step_inside(theta, e3, h)
    up, down = theta.copy(), theta.copy()
    up[e3] += h
    down[e3] -= h
    return float((hessian(tree, up, samples)[e1, e2] - hessian(tree, down, samples)[e1, e2]) / (2.0 * h))


@dataclass(frozen=True)
class DerivativeBounds:
    grad_bound: float
    third_deriv_bound: float
    hessian_entry_scale: float


def deterministic_bounds(delta: float, diam: int, c_bar: float, c_tilde: float = 1.0) -> DerivativeBounds:
    if delta <= 0 or diam <= 0 or c_bar <= 0 or c_tilde <= 0:
        raise InvalidParameterError("delta, diam, c_bar and c_tilde must be positive")
    base = 2.0 * c_bar * delta
    return DerivativeBounds(
        grad_bound=1.0 / base,
        third_deriv_bound=4.0 * diam / base ** (4 * diam + 2),
        hessian_entry_scale=(c_tilde / delta) ** (diam / 2.0 + 4.0),
    )


def coordinate_restriction_curvature(tree: Tree, theta_hat, samples: SampleSet, e: int,
                                     grid: Sequence[float]) -> List[float]:
    """Second derivative of t -> log-likelihood(theta with theta_e = t) at each grid value."""
    theta = as_edge_vector(tree, theta_hat)
    out = []
    for t in grid:
        point = theta.copy()
        point[e] = t
        g = per_sample_gradient(tree, point, samples.patterns)[e]
        out.append(float(-np.dot(samples.weights, g ** 2)))
    return out
