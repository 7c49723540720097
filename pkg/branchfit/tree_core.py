"""
Unrooted binary tree topologies: construction, Newick I/O and the structural
queries used by the likelihood derivatives (edge paths, diameter).

Node and edge ids are plain integers. Edge ids follow the order in which edges
are first created while reading the Newick text (or while running a builder),
so an EdgeVector index means the same edge on every run.
"""
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from branchfit.errors import InvalidParameterError, TreeFormatError
from utils import logger

log = logger.customLogger()


@dataclass(frozen=True)
class DirectedEdge:
    """Edge seen from ``head``: the magnetization lives at head, over head's side."""
    edge_id: int
    head: int
    tail: int


@dataclass(frozen=True)
class Tree:
    n_nodes: int
    adjacency: Tuple[Tuple[int, ...], ...]
    edges: Tuple[Tuple[int, int], ...]
    leaves: Tuple[int, ...]
    leaf_names: Tuple[str, ...] = field(default=())

    @classmethod
    def from_edges(cls, n_nodes: int, edges: Sequence[Tuple[int, int]],
                   leaves: Optional[Sequence[int]] = None,
                   leaf_names: Optional[Sequence[str]] = None) -> "Tree":
        """Build and validate a tree; edge ids are positions in ``edges``."""
        adjacency: List[List[int]] = [[] for _ in range(n_nodes)]
        for a, b in edges:
            if not (0 <= a < n_nodes and 0 <= b < n_nodes) or a == b:
                raise TreeFormatError(f"Invalid edge ({a}, {b}) for {n_nodes} nodes")
            adjacency[a].append(b)
            adjacency[b].append(a)

        if leaves is None:
            leaves = [v for v in range(n_nodes) if len(adjacency[v]) == 1]
        if leaf_names is None or len(leaf_names) == 0:
            leaf_names = [f"t{k}" for k in range(len(leaves))]

        tree = cls(
            n_nodes=n_nodes,
            adjacency=tuple(tuple(nbrs) for nbrs in adjacency),
            edges=tuple((int(a), int(b)) for a, b in edges),
            leaves=tuple(int(v) for v in leaves),
            leaf_names=tuple(leaf_names),
        )
        tree.validate()
        return tree

    def validate(self) -> None:
        """Raise TreeFormatError unless this is a connected unrooted binary tree."""
        if len(self.leaves) < 2:
            raise TreeFormatError(f"A tree needs at least 2 leaves, got {len(self.leaves)}")
        if len(self.edges) != self.n_nodes - 1:
            raise TreeFormatError(f"|E| = {len(self.edges)} but |V| - 1 = {self.n_nodes - 1}")
        for v, nbrs in enumerate(self.adjacency):
            if len(nbrs) not in (1, 3):
                raise TreeFormatError(f"Node {v} has degree {len(nbrs)}; only degrees 1 and 3 are allowed")
        if sorted(self.leaves) != [v for v in range(self.n_nodes) if len(self.adjacency[v]) == 1]:
            raise TreeFormatError("Leaf list does not match the degree-1 nodes")
        if len(self.leaf_names) != len(self.leaves) or len(set(self.leaf_names)) != len(self.leaf_names):
            raise TreeFormatError("Leaf names must be unique, one per leaf")
        if len(_bfs_distances(self, 0)) != self.n_nodes:
            raise TreeFormatError("Tree is not connected")

    # structural lookups

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    def is_leaf(self, node: int) -> bool:
        return len(self.adjacency[node]) == 1

    @cached_property
    def internal_nodes(self) -> Tuple[int, ...]:
        return tuple(v for v in range(self.n_nodes) if len(self.adjacency[v]) == 3)

    @cached_property
    def leaf_column(self) -> Dict[int, int]:
        """Leaf node -> position in a LeafPattern."""
        return {v: k for k, v in enumerate(self.leaves)}

    @cached_property
    def _edge_lookup(self) -> Dict[Tuple[int, int], int]:
        lookup = {}
        for k, (a, b) in enumerate(self.edges):
            lookup[(a, b)] = k
            lookup[(b, a)] = k
        return lookup

    def edge_id(self, a: int, b: int) -> int:
        try:
            return self._edge_lookup[(a, b)]
        except KeyError:
            raise InvalidParameterError(f"Nodes {a} and {b} are not adjacent") from None

    def check_edge(self, e: int) -> None:
        if not isinstance(e, (int, np.integer)) or not 0 <= e < self.n_edges:
            raise InvalidParameterError(f"Invalid edge id {e!r} (tree has {self.n_edges} edges)")

    @cached_property
    def directed_edges(self) -> Tuple[DirectedEdge, ...]:
        """Index 2k has head edges[k][0]; index 2k+1 has head edges[k][1]."""
        out = []
        for k, (a, b) in enumerate(self.edges):
            out.append(DirectedEdge(k, a, b))
            out.append(DirectedEdge(k, b, a))
        return tuple(out)

    def directed_index(self, head: int, tail: int) -> int:
        k = self.edge_id(head, tail)
        return 2 * k if self.edges[k][0] == head else 2 * k + 1

    @cached_property
    def default_root(self) -> int:
        """Lowest-indexed internal node, or the first endpoint of a single-edge tree."""
        return self.internal_nodes[0] if self.internal_nodes else self.edges[0][0]

    def rooted(self, root: Optional[int] = None) -> Tuple[List[int], List[int]]:
        """Preorder node list and parent array (-1 at the root) for ``root``."""
        root = self.default_root if root is None else root
        parent = [-1] * self.n_nodes
        order = []
        stack = [root]
        seen = {root}
        while stack:
            node = stack.pop()
            order.append(node)
            for nbr in reversed(self.adjacency[node]):
                if nbr not in seen:
                    seen.add(nbr)
                    parent[nbr] = node
                    stack.append(nbr)
        return order, parent

    def side_nodes(self, head: int, tail: int) -> List[int]:
        """Nodes of the component containing ``head`` once edge {head, tail} is removed."""
        seen = {head, tail}
        out = [head]
        stack = [head]
        while stack:
            node = stack.pop()
            for nbr in self.adjacency[node]:
                if nbr not in seen:
                    seen.add(nbr)
                    out.append(nbr)
                    stack.append(nbr)
        return out

    def describe(self) -> str:
        return f"{to_newick(self)} leaves={self.n_leaves} edges={self.n_edges}"


@dataclass(frozen=True)
class PathDecomposition:
    """
    Path between edge e = {x, y} and edge f = {u, v}, y on the side of f and u
    on the side of e. ``path_vertices`` runs y_N, ..., y_0 with y_N = y and
    y_0 = u; ``side_vertices[j]`` is w_j, the third neighbour of y_j.
    """
    e: int
    f: int
    x: int
    y: int
    u: int
    v: int
    n: int
    path_vertices: Tuple[int, ...]
    side_vertices: Tuple[int, ...]

    @property
    def endpoint_extension(self) -> Tuple[int, int]:
        """(y_{-1}, y_{N+1}) = (v, x)."""
        return self.v, self.x

    def y_at(self, j: int) -> int:
        if j == -1:
            return self.v
        if j == self.n + 1:
            return self.x
        return self.path_vertices[self.n - j]

    def w_at(self, j: int) -> int:
        return self.side_vertices[j]


def _bfs_distances(tree: Tree, source: int) -> Dict[int, int]:
    dist = {source: 0}
    queue = deque([source])
    while queue:
        node = queue.popleft()
        for nbr in tree.adjacency[node]:
            if nbr not in dist:
                dist[nbr] = dist[node] + 1
                queue.append(nbr)
    return dist


def _bfs_path(tree: Tree, source: int, target: int) -> List[int]:
    parent = {source: None}
    queue = deque([source])
    while queue:
        node = queue.popleft()
        if node == target:
            break
        for nbr in tree.adjacency[node]:
            if nbr not in parent:
                parent[nbr] = node
                queue.append(nbr)
    path = [target]
    while path[-1] != source:
        path.append(parent[path[-1]])
    return path[::-1]


def diameter(tree: Tree) -> int:
    """Maximum number of edges on a simple path (double BFS)."""
    first = _bfs_distances(tree, tree.leaves[0])
    far = max(first, key=lambda node: (first[node], -node))
    return max(_bfs_distances(tree, far).values())


def edge_path_decomposition(tree: Tree, e: int, f: int) -> PathDecomposition:
    tree.check_edge(e)
    tree.check_edge(f)
    if e == f:
        raise InvalidParameterError(f"Path decomposition needs two distinct edges, got e = f = {e}")

    a, b = tree.edges[e]
    c, d = tree.edges[f]
    from_c = _bfs_distances(tree, c)
    from_d = _bfs_distances(tree, d)

    def to_f(node):
        return min(from_c[node], from_d[node])

    y, x = (a, b) if to_f(a) < to_f(b) else (b, a)
    u, v = (c, d) if from_c[y] < from_d[y] else (d, c)

    path = _bfs_path(tree, y, u)
    n = len(path) - 1

    # y_{j-1} and y_{j+1} around every path vertex
    extended = [x] + path + [v]
    side = [0] * (n + 1)
    for pos in range(1, len(extended) - 1):
        node = extended[pos]
        excluded = {extended[pos - 1], extended[pos + 1]}
        others = [w for w in tree.adjacency[node] if w not in excluded]
        if len(others) != 1:
            raise TreeFormatError(f"Path vertex {node} is not a degree-3 node")
        j = n - (pos - 1)
        side[j] = others[0]

    return PathDecomposition(e=e, f=f, x=x, y=y, u=u, v=v, n=n,
                             path_vertices=tuple(path), side_vertices=tuple(side))


# Newick I/O

class _ParseNode:
    __slots__ = ("parent", "children", "label")

    def __init__(self, parent=None):
        self.parent = parent
        self.children = []
        self.label = ""


def parse_newick(text: str) -> Tree:
    """Read one Newick tree; branch lengths and internal labels are ignored."""
    if not isinstance(text, str):
        raise TreeFormatError("Newick input must be a string")
    ts = text.strip()
    if not ts.endswith(';'):
        log.error(f"Newick string has no terminating semicolon: {ts!r}")
        raise TreeFormatError("Newick string must end with ';'")

    nodes = [_ParseNode()]
    created_edges: List[Tuple[int, int]] = []
    current = 0
    ignored_lengths = False
    i = 0
    while i < len(ts):
        ch = ts[i]
        if ch == ';':
            if i != len(ts) - 1 or current != 0:
                raise TreeFormatError(f"Unbalanced parentheses in Newick string: {ts!r}")
        elif ch == '(':
            nodes.append(_ParseNode(current))
            nodes[current].children.append(len(nodes) - 1)
            created_edges.append((current, len(nodes) - 1))
            current = len(nodes) - 1
        elif ch == ')':
            if nodes[current].parent is None:
                raise TreeFormatError(f"Unbalanced parentheses in Newick string: {ts!r}")
            current = nodes[current].parent
        elif ch == ',':
            parent = nodes[current].parent
            if parent is None:
                raise TreeFormatError(f"Sibling outside any group in Newick string: {ts!r}")
            nodes.append(_ParseNode(parent))
            nodes[parent].children.append(len(nodes) - 1)
            created_edges.append((parent, len(nodes) - 1))
            current = len(nodes) - 1
        elif ch == ':':
            i += 1
            while i < len(ts) and ts[i] not in ',);':
                i += 1
            ignored_lengths = True
            continue
        elif ch == '[':
            close = ts.find(']', i)
            if close < 0:
                raise TreeFormatError("Unterminated comment in Newick string")
            i = close
        elif ch.isspace():
            pass
        else:
            label = ''
            while i < len(ts) and ts[i] not in ':,();[':
                label += ts[i]
                i += 1
            nodes[current].label = label.strip().strip("'\"")
            continue
        i += 1

    if ignored_lengths:
        log.warning("Branch lengths in Newick input are ignored")
    return _assemble(nodes, created_edges)


def _assemble(nodes: List[_ParseNode], created_edges: List[Tuple[int, int]]) -> Tree:
    leaves = [k for k, node in enumerate(nodes) if not node.children]
    if len(leaves) < 2:
        raise TreeFormatError(f"A tree needs at least 2 leaves, got {len(leaves)}")

    root = nodes[0]
    keep = list(range(len(nodes)))
    edges = list(created_edges)
    if len(root.children) == 2:
        # degree-2 root: merge its two edges into one at the first edge's position
        left, right = root.children
        edges = [(left, right) if edge == (0, left) else edge for edge in edges if edge != (0, right)]
        keep.remove(0)
    elif len(root.children) == 1:
        raise TreeFormatError("Outermost group has a single child")

    for k, node in enumerate(nodes):
        if k == 0:
            continue
        if node.children and len(node.children) != 2:
            raise TreeFormatError(f"Internal node with {len(node.children)} children; only binary splits are allowed")
        if node.children and node.label:
            log.warning(f"Internal node label '{node.label}' is ignored")

    renumber = {old: new for new, old in enumerate(keep)}
    names = []
    for k in leaves:
        names.append(nodes[k].label or f"t{len(names)}")
    if len(set(names)) != len(names):
        raise TreeFormatError("Duplicate leaf labels")

    return Tree.from_edges(
        n_nodes=len(keep),
        edges=[(renumber[a], renumber[b]) for a, b in edges],
        leaves=[renumber[k] for k in leaves],
        leaf_names=names,
    )


def to_newick(tree: Tree) -> str:
    """Leaf labels only, rooted at the default root."""
    names = {v: tree.leaf_names[k] for k, v in enumerate(tree.leaves)}
    if tree.n_edges == 1:
        a, b = tree.edges[0]
        return f"({names[a]},{names[b]});"

    order, parent = tree.rooted()

    def emit(node: int) -> str:
        if tree.is_leaf(node):
            return names[node]
        kids = [c for c in tree.adjacency[node] if c != parent[node]]
        return "(" + ",".join(emit(c) for c in kids) + ")"

    return emit(order[0]) + ";"


def read_newick_file(path) -> Tree:
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except FileNotFoundError:
        log.error(f"Tree file not found: {path}")
        raise
    lines = [line for line in text.splitlines() if line.strip()]
    if len(lines) != 1:
        raise TreeFormatError(f"Expected exactly one tree in {path}, found {len(lines)} lines")
    return parse_newick(lines[0])


def write_newick_file(tree: Tree, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_newick(tree) + "\n", encoding='utf-8')
    return path


def describe_edges(tree: Tree) -> List[str]:
    """One 'id:split' string per edge, split = leaf names on the first endpoint's side."""
    names = {v: tree.leaf_names[k] for k, v in enumerate(tree.leaves)}
    rows = []
    for k, (a, b) in enumerate(tree.edges):
        side = sorted(names[v] for v in tree.side_nodes(a, b) if tree.is_leaf(v))
        rows.append(f"{k}:{'|'.join(side)}")
    return rows


def is_isomorphic(first: Tree, second: Tree) -> bool:
    """Leaf-label-preserving isomorphism, compared through the sets of leaf splits."""
    if sorted(first.leaf_names) != sorted(second.leaf_names):
        return False
    return _splits(first) == _splits(second)


def _splits(tree: Tree) -> frozenset:
    everyone = frozenset(tree.leaf_names)
    names = {v: tree.leaf_names[k] for k, v in enumerate(tree.leaves)}
    out = set()
    for a, b in tree.edges:
        side = frozenset(names[v] for v in tree.side_nodes(a, b) if tree.is_leaf(v))
        out.add(min(side, everyone - side, key=lambda s: sorted(s)))
    return frozenset(out)


# builders

def _complete(prefix_counter: List[int], depth: int) -> str:
    if depth == 0:
        name = f"t{prefix_counter[0]}"
        prefix_counter[0] += 1
        return name
    return "(" + _complete(prefix_counter, depth - 1) + "," + _complete(prefix_counter, depth - 1) + ")"


def build_balanced(depth: int) -> Tree:
    """Two complete rooted binary trees of depth ``depth - 1`` joined by a central edge."""
    if not isinstance(depth, (int, np.integer)) or depth < 1:
        raise InvalidParameterError(f"depth must be >= 1, got {depth}")
    counter = [0]
    left = _complete(counter, depth - 1)
    right = _complete(counter, depth - 1)
    return parse_newick(f"({left},{right});")


def build_caterpillar(n_leaves: int) -> Tree:
    if not isinstance(n_leaves, (int, np.integer)) or n_leaves < 2:
        raise InvalidParameterError(f"n_leaves must be >= 2, got {n_leaves}")
    if n_leaves == 2:
        return parse_newick("(t0,t1);")
    if n_leaves == 3:
        return parse_newick("(t0,t1,t2);")
    inner = f"(t{n_leaves - 2},t{n_leaves - 1})"
    for k in range(n_leaves - 3, 1, -1):
        inner = f"(t{k},{inner})"
    return parse_newick(f"(t0,t1,{inner});")


def build_random(n_leaves: int, seed: int) -> Tree:
    """Random topology: start from two leaves and subdivide a uniformly chosen edge per new leaf."""
    if n_leaves < 2:
        raise InvalidParameterError(f"n_leaves must be >= 2, got {n_leaves}")
    rng = np.random.default_rng(seed)
    edges = [(0, 1)]
    leaves = [0, 1]
    n_nodes = 2
    while len(leaves) < n_leaves:
        k = int(rng.integers(len(edges)))
        a, b = edges[k]
        mid, leaf = n_nodes, n_nodes + 1
        n_nodes += 2
        edges[k] = (a, mid)
        edges.append((mid, b))
        edges.append((mid, leaf))
        leaves.append(leaf)
    return Tree.from_edges(n_nodes, edges, leaves=leaves)


def build_named(name: str, size: int) -> Tree:
    """Dispatch used by experiment configs: balanced, caterpillar or random."""
    builders = {
        'balanced': build_balanced,
        'caterpillar': build_caterpillar,
    }
    if name == 'random':
        return build_random(size, seed=size)
    if name not in builders:
        raise InvalidParameterError(f"Unknown tree builder '{name}'")
    return builders[name](size)
