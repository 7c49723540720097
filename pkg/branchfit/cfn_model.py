"""
CFN two-state model on a fixed tree: edge parameters, restricted parameter
boxes, forward simulation and the brute-force leaf-pattern distribution.

theta_e in [-1, 1] is the edge correlation; the spin flips across edge e with
probability p_e = (1 - theta_e) / 2.
"""
import csv
import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from branchfit.errors import EnumerationLimitError, InvalidParameterError
from branchfit.tree_core import Tree
from utils import logger

log = logger.customLogger()

ENUMERATION_LEAF_LIMIT = 14

# EdgeVector and LeafPattern are plain numpy arrays indexed by edge id / leaf position
EdgeVector = np.ndarray
LeafPattern = np.ndarray


def as_edge_vector(tree: Tree, values, open_interval: bool = False) -> EdgeVector:
    theta = np.asarray(values, dtype=float).reshape(-1)
    if theta.shape[0] != tree.n_edges:
        raise InvalidParameterError(f"EdgeVector has {theta.shape[0]} entries, tree has {tree.n_edges} edges")
    if not np.all(np.isfinite(theta)):
        raise InvalidParameterError("EdgeVector contains non-finite values")
    if open_interval:
        if np.any(np.abs(theta) >= 1.0):
            raise InvalidParameterError(f"Edge parameters must lie in (-1, 1), got {theta.tolist()}")
    elif np.any(np.abs(theta) > 1.0):
        raise InvalidParameterError(f"Edge parameters must lie in [-1, 1], got {theta.tolist()}")
    return theta


@dataclass(frozen=True)
class ParamBox:
    """Per-edge theta interval [1 - 2*upper_flip*delta, 1 - 2*lower_flip*delta]."""
    delta: float
    lower_flip: float
    upper_flip: float

    @property
    def low(self) -> float:
        return 1.0 - 2.0 * self.upper_flip * self.delta

    @property
    def high(self) -> float:
        return 1.0 - 2.0 * self.lower_flip * self.delta

    @property
    def interval(self) -> Tuple[float, float]:
        return self.low, self.high

    @property
    def center_value(self) -> float:
        return 0.5 * (self.low + self.high)

    @property
    def width(self) -> float:
        return self.high - self.low

    def center(self, n_edges: int) -> EdgeVector:
        return np.full(n_edges, self.center_value)

    def l2_diameter(self, n_edges: int) -> float:
        return float(np.sqrt(n_edges) * self.width)

    def contains(self, theta, open_box: bool = True) -> bool:
        theta = np.asarray(theta, dtype=float)
        if open_box:
            return bool(np.all((theta > self.low) & (theta < self.high)))
        return bool(np.all((theta >= self.low) & (theta <= self.high)))

    def sample(self, n_edges: int, rng: np.random.Generator) -> EdgeVector:
        return rng.uniform(self.low, self.high, size=n_edges)


def make_param_box(delta: float, c: float, C: float) -> ParamBox:
    if not delta > 0:
        raise InvalidParameterError(f"delta must be positive, got {delta}")
    if not c > 0:
        raise InvalidParameterError(f"lower flip coefficient c must be positive, got {c}")
    if not c < C:
        raise InvalidParameterError(f"lower flip coefficient must be below the upper one (c={c}, C={C})")
    if not 2.0 * C * delta < 1.0:
        raise InvalidParameterError(f"2*C*delta must be below 1 (C={C}, delta={delta})")
    return ParamBox(delta=float(delta), lower_flip=float(c), upper_flip=float(C))


def check_box_nesting(c_bar: float, c: float, C: float, C_bar: float) -> None:
    """Parameter regime for the truth box (c, C) inside the estimation box (c_bar, C_bar)."""
    if not (0 < c_bar < c < C < C_bar):
        raise InvalidParameterError(
            f"Box constants must satisfy 0 < c_bar < c < C < C_bar, got {c_bar}, {c}, {C}, {C_bar}")
    if not C_bar >= 2.0 * c_bar:
        raise InvalidParameterError(f"C_bar must be at least 2*c_bar, got C_bar={C_bar}, c_bar={c_bar}")


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Distinct leaf patterns (rows of +-1) with multiplicities."""
    patterns: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        if self.patterns.ndim != 2 or self.patterns.shape[0] != self.counts.shape[0]:
            raise InvalidParameterError("patterns must be (K, n_leaves) with one count per row")
        if self.patterns.shape[0] == 0:
            raise InvalidParameterError("SampleSet is empty")
        if np.any(self.counts < 1):
            raise InvalidParameterError("Every pattern count must be >= 1")
        if not np.all(np.isin(self.patterns, (-1, 1))):
            raise InvalidParameterError("Leaf spins must be +1 or -1")

    @classmethod
    def from_raw(cls, raw: np.ndarray) -> "SampleSet":
        """Aggregate an (m, n_leaves) spin array into distinct patterns."""
        raw = np.asarray(raw, dtype=np.int8)
        patterns, counts = np.unique(raw, axis=0, return_counts=True)
        return cls(patterns=patterns.astype(np.int8), counts=counts.astype(np.int64))

    @classmethod
    def from_counts(cls, mapping: Dict[Tuple[int, ...], int]) -> "SampleSet":
        keys = sorted(mapping)
        return cls(patterns=np.array(keys, dtype=np.int8),
                   counts=np.array([mapping[k] for k in keys], dtype=np.int64))

    @property
    def m(self) -> int:
        return int(self.counts.sum())

    @property
    def n_leaves(self) -> int:
        return int(self.patterns.shape[1])

    @property
    def weights(self) -> np.ndarray:
        return self.counts / self.counts.sum()

    def as_dict(self) -> Dict[Tuple[int, ...], int]:
        return {tuple(int(s) for s in row): int(c) for row, c in zip(self.patterns, self.counts)}

    def check_tree(self, tree: Tree) -> None:
        if self.n_leaves != tree.n_leaves:
            raise InvalidParameterError(
                f"Samples have {self.n_leaves} leaves but the tree has {tree.n_leaves}")


def pattern_to_string(pattern: Iterable[int]) -> str:
    return "".join('+' if s > 0 else '-' for s in pattern)


def string_to_pattern(text: str) -> np.ndarray:
    text = text.strip()
    if not text or any(ch not in '+-' for ch in text):
        raise InvalidParameterError(f"Pattern must be a string of '+' and '-', got {text!r}")
    return np.array([1 if ch == '+' else -1 for ch in text], dtype=np.int8)


def save_samples_csv(samples: SampleSet, path, preamble: Sequence[str] = ()) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='', encoding='utf-8') as fh:
        for line in preamble:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator='\n')
        writer.writerow(['pattern', 'count'])
        for row, count in zip(samples.patterns, samples.counts):
            writer.writerow([pattern_to_string(row), int(count)])
    return path


def load_samples_csv(path, tree: Optional[Tree] = None) -> SampleSet:
    path = Path(path)
    counts: Dict[Tuple[int, ...], int] = {}
    with path.open('r', encoding='utf-8') as fh:
        reader = csv.reader(line for line in fh if not line.startswith('#'))
        header = next(reader, None)
        if header != ['pattern', 'count']:
            raise InvalidParameterError(f"{path}: expected header 'pattern,count', got {header}")
        for row in reader:
            if not row:
                continue
            key = tuple(int(s) for s in string_to_pattern(row[0]))
            counts[key] = counts.get(key, 0) + int(row[1])
    samples = SampleSet.from_counts(counts)
    if tree is not None:
        samples.check_tree(tree)
    return samples


def spawn_rng(master_seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for (master_seed, stream...), stable under reordering."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(s) for s in stream)))


def simulate_spins(tree: Tree, theta: EdgeVector, m: int, rng: np.random.Generator) -> np.ndarray:
    """(m, n_nodes) full spin configurations, rooted at the tree's default root."""
    order, parent = tree.rooted()
    spins = np.empty((m, tree.n_nodes), dtype=np.int8)
    spins[:, order[0]] = np.where(rng.random(m) < 0.5, 1, -1)
    for node in order[1:]:
        p_flip = 0.5 * (1.0 - theta[tree.edge_id(node, parent[node])])
        flips = rng.random(m) < p_flip
        spins[:, node] = np.where(flips, -spins[:, parent[node]], spins[:, parent[node]])
    return spins


def sample_spins(tree: Tree, theta, seed: int, m: int, stream: Sequence[int] = ()) -> SampleSet:
    if not isinstance(m, (int, np.integer)) or m < 1:
        raise InvalidParameterError(f"m must be a positive integer, got {m}")
    theta = as_edge_vector(tree, theta)
    rng = spawn_rng(seed, *stream)
    spins = simulate_spins(tree, theta, int(m), rng)
    return SampleSet.from_raw(spins[:, list(tree.leaves)])


def all_patterns(n: int) -> np.ndarray:
    """Every +-1 vector of length n, all-plus first."""
    return np.array(list(itertools.product((1, -1), repeat=n)), dtype=np.int8).reshape(-1, n)


def exact_pattern_table(tree: Tree, theta, leaf_limit: int = ENUMERATION_LEAF_LIMIT,
                        chunk: int = 256) -> Tuple[np.ndarray, np.ndarray]:
    """All 2^n_leaves patterns and their exact probabilities by summing over internal spins."""
    if tree.n_leaves > leaf_limit:
        log.error(f"Exact enumeration requested for {tree.n_leaves} leaves (limit {leaf_limit})")
        raise EnumerationLimitError(f"Tree has {tree.n_leaves} leaves; enumeration is limited to {leaf_limit}")
    theta = as_edge_vector(tree, theta)

    patterns = all_patterns(tree.n_leaves)
    internal = list(tree.internal_nodes)
    internal_pos = {v: k for k, v in enumerate(internal)}
    assignments = all_patterns(len(internal)) if internal else np.ones((1, 0), dtype=np.int8)

    probs = np.zeros(patterns.shape[0])
    for start in range(0, assignments.shape[0], chunk):
        block = assignments[start:start + chunk].astype(float)

        def spin(node):
            if tree.is_leaf(node):
                return patterns[:, tree.leaf_column[node]].astype(float)[:, None]
            return block[None, :, internal_pos[node]]

        weight = np.full((patterns.shape[0], block.shape[0]), 0.5)
        for k, (a, b) in enumerate(tree.edges):
            weight = weight * (0.5 * (1.0 + theta[k] * spin(a) * spin(b)))
        probs += weight.sum(axis=1)
    return patterns, probs


def exact_leaf_distribution(tree: Tree, theta, leaf_limit: int = ENUMERATION_LEAF_LIMIT) -> Dict[Tuple[int, ...], float]:
    patterns, probs = exact_pattern_table(tree, theta, leaf_limit)
    return {tuple(int(s) for s in row): float(p) for row, p in zip(patterns, probs)}


def total_variation(samples: SampleSet, distribution: Dict[Tuple[int, ...], float]) -> float:
    empirical = {k: c / samples.m for k, c in samples.as_dict().items()}
    keys = set(empirical) | set(distribution)
    return 0.5 * sum(abs(empirical.get(k, 0.0) - distribution.get(k, 0.0)) for k in keys)


# gauge symmetry: flipping an internal spin negates its three incident edges

def gauge_flip(tree: Tree, theta, node: int) -> EdgeVector:
    if tree.is_leaf(node):
        raise InvalidParameterError(f"Gauge flips act on internal nodes; {node} is a leaf")
    out = np.array(theta, dtype=float)
    for nbr in tree.adjacency[node]:
        out[tree.edge_id(node, nbr)] *= -1.0
    return out


def gauge_canonical(tree: Tree, theta) -> EdgeVector:
    """Representative with the root's lowest-id edge and every parent edge of an internal node >= 0."""
    out = np.array(theta, dtype=float)
    if not tree.internal_nodes:
        return out
    order, parent = tree.rooted()
    root = order[0]
    first_edge = min(tree.edge_id(root, nbr) for nbr in tree.adjacency[root])
    if out[first_edge] < 0:
        out = gauge_flip(tree, out, root)
    for node in order[1:]:
        if not tree.is_leaf(node) and out[tree.edge_id(node, parent[node])] < 0:
            out = gauge_flip(tree, out, node)
    return out


def gauge_classes(tree: Tree, thetas: Sequence[EdgeVector], tol: float = 1e-6) -> List[int]:
    """Class label per vector; two vectors share a label when their canonical forms agree within tol."""
    reps: List[np.ndarray] = []
    labels = []
    for theta in thetas:
        canon = gauge_canonical(tree, theta)
        for k, rep in enumerate(reps):
            if np.max(np.abs(rep - canon)) <= tol:
                labels.append(k)
                break
        else:
            reps.append(canon)
            labels.append(len(reps) - 1)
    return labels


def random_in_ball(center: EdgeVector, radius: float, rng: np.random.Generator,
                   bounds: Tuple[float, float] = (-1.0, 1.0)) -> EdgeVector:
    """Uniform point of the L2 ball around center, clipped strictly inside bounds."""
    n = center.shape[0]
    direction = rng.standard_normal(n)
    direction /= np.linalg.norm(direction)
    point = center + radius * rng.random() ** (1.0 / n) * direction
    span = bounds[1] - bounds[0]
    return np.clip(point, bounds[0] + 1e-9 * span, bounds[1] - 1e-9 * span)
