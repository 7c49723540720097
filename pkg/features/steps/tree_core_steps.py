from collections import deque
from pathlib import Path

from behave import given, when, then
import numpy as np

from branchfit.tree_core import (build_balanced, build_caterpillar, build_random, diameter,
                                 edge_path_decomposition, is_isomorphic, parse_newick, read_newick_file,
                                 to_newick, write_newick_file)
from features.support.helpers import capture_error, leaf_node, pendant_edge, tree_from_row
from utils.allure_helper import AllureHelper
from utils.file_reader import fixture_path, read_file
from utils import logger

allure_helper = AllureHelper()
log = logger.customLogger()


# --- Building trees ---

@given('the tree "{newick}"')
def step_given_tree(context, newick):
    context.tree = parse_newick(newick)


@given('the tree file "{name}"')
def step_given_tree_file(context, name):
    context.tree = read_newick_file(fixture_path('trees', name))


@given('a balanced tree of depth {depth:d}')
def step_given_balanced(context, depth):
    context.tree = build_balanced(depth)


@given('a caterpillar tree with {n:d} leaves')
def step_given_caterpillar(context, n):
    context.tree = build_caterpillar(n)


@given('a random tree with {n:d} leaves from seed {seed:d}')
def step_given_random_tree(context, n, seed):
    context.tree = build_random(n, seed)


@when('the Newick string "{newick}" is parsed')
def step_parse_newick(context, newick):
    with capture_error(context):
        context.tree = parse_newick(newick)
    assert context.error is None, f"Parsing {newick} failed: {context.error}"


@when('the Newick fixture "{case}" from "{fixture}" is parsed')
def step_parse_bad_fixture(context, case, fixture):
    text = read_file('trees', fixture)[case]
    log.info(f"Parsing fixture {case}: {text}")
    with capture_error(context):
        context.tree = parse_newick(text)


@when('a {builder} tree of size {size:d} is requested')
def step_request_builder(context, builder, size):
    builders = {'balanced': build_balanced, 'caterpillar': build_caterpillar,
                'random': lambda n: build_random(n, seed=0)}
    with capture_error(context):
        context.tree = builders[builder](size)


@then('the error "{name}" is raised')
def step_error_raised(context, name):
    assert context.error is not None, f"Expected {name}, but no error was raised"
    assert type(context.error).__name__ == name, \
        f"Expected {name}, got {type(context.error).__name__}: {context.error}"


# --- Structure ---

@then('the tree has {leaves:d} leaves and {edges:d} edges')
def step_check_sizes(context, leaves, edges):
    tree = context.tree
    assert tree.n_leaves == leaves, f"Expected {leaves} leaves, got {tree.n_leaves}"
    assert tree.n_edges == edges, f"Expected {edges} edges, got {tree.n_edges}"
    assert tree.n_edges == 2 * tree.n_leaves - 3 or tree.n_leaves == 2


@then('the tree diameter is {expected:d}')
def step_check_diameter(context, expected):
    actual = diameter(context.tree)
    assert actual == expected, f"Expected diameter {expected}, got {actual}"


@then('every node has degree 1 or 3')
def step_check_degrees(context):
    degrees = {len(nbrs) for nbrs in context.tree.adjacency}
    assert degrees <= {1, 3}, f"Unexpected degrees {sorted(degrees)}"


@then('the tree is isomorphic to the tree file "{name}"')
def step_check_isomorphic_file(context, name):
    other = read_newick_file(fixture_path('trees', name))
    assert is_isomorphic(context.tree, other), f"{to_newick(context.tree)} differs from {to_newick(other)}"


@then('the leaf names are "{names}"')
def step_check_leaf_names(context, names):
    expected = tuple(names.split(','))
    assert context.tree.leaf_names == expected, f"Expected {expected}, got {context.tree.leaf_names}"


@then('balanced trees of depth {lo:d} to {hi:d} have diameter 2d-1')
def step_balanced_diameters(context, lo, hi):
    for depth in range(lo, hi + 1):
        actual = diameter(build_balanced(depth))
        assert actual == 2 * depth - 1, f"depth {depth}: diameter {actual}"


@then('caterpillar trees with {lo:d} to {hi:d} leaves have diameter n-1')
def step_caterpillar_diameters(context, lo, hi):
    for n in range(lo, hi + 1):
        actual = diameter(build_caterpillar(n))
        assert actual == n - 1, f"{n} leaves: diameter {actual}"


# --- Path decompositions ---

@when('the path between the pendant edges of "{first}" and "{second}" is decomposed')
def step_decompose(context, first, second):
    tree = context.tree
    with capture_error(context):
        context.decomposition = edge_path_decomposition(tree, pendant_edge(tree, first), pendant_edge(tree, second))


@then('the path length N is {n:d}')
def step_check_path_length(context, n):
    assert context.error is None, f"Decomposition failed: {context.error}"
    assert context.decomposition.n == n, f"Expected N={n}, got {context.decomposition.n}"


@then('side vertex w_{j:d} is leaf "{name}"')
def step_check_side_leaf(context, j, name):
    actual = context.decomposition.w_at(j)
    assert actual == leaf_node(context.tree, name), f"w_{j} is node {actual}, not leaf {name}"


@then('side vertex w_{j:d} is the internal neighbour of leaf "{name}"')
def step_check_side_internal(context, j, name):
    tree = context.tree
    neighbour = tree.adjacency[leaf_node(tree, name)][0]
    actual = context.decomposition.w_at(j)
    assert actual == neighbour, f"w_{j} is node {actual}, expected {neighbour}"


@then('the path is extended by leaf "{before}" before and leaf "{after}" after')
def step_check_extension(context, before, after):
    tree = context.tree
    y_minus, y_plus = context.decomposition.endpoint_extension
    assert y_minus == leaf_node(tree, before), f"y_-1 is node {y_minus}"
    assert y_plus == leaf_node(tree, after), f"y_N+1 is node {y_plus}"


def _bfs_distances(tree, source):
    dist = {source: 0}
    queue = deque([source])
    while queue:
        node = queue.popleft()
        for nbr in tree.adjacency[node]:
            if nbr not in dist:
                dist[nbr] = dist[node] + 1
                queue.append(nbr)
    return dist


def _check_decomposition(tree, e, f):
    dec = edge_path_decomposition(tree, e, f)
    ends_e, ends_f = set(tree.edges[e]), set(tree.edges[f])
    assert {dec.x, dec.y} == ends_e and {dec.u, dec.v} == ends_f, f"({e},{f}): wrong endpoints"

    distances = {a: _bfs_distances(tree, a) for a in ends_e}
    closest = min(distances[a][b] for a in ends_e for b in ends_f)
    assert dec.n == closest, f"({e},{f}): N={dec.n}, BFS distance {closest}"

    walk = [dec.y_at(j) for j in range(dec.n + 1, -2, -1)]
    for a, b in zip(walk, walk[1:]):
        assert b in tree.adjacency[a], f"({e},{f}): {a} and {b} are not adjacent"
    assert len(set(walk)) == len(walk), f"({e},{f}): path revisits a vertex"

    for j in range(dec.n + 1):
        y, w = dec.y_at(j), dec.w_at(j)
        assert w in tree.adjacency[y], f"({e},{f}): w_{j} is not adjacent to y_{j}"
        assert w not in (dec.y_at(j - 1), dec.y_at(j + 1)), f"({e},{f}): w_{j} lies on the path"


@then('every edge pair of these trees decomposes consistently')
def step_check_all_decompositions(context):
    for row in context.table:
        tree = tree_from_row(row)
        pairs = 0
        for e in range(tree.n_edges):
            for f in range(tree.n_edges):
                if e != f:
                    _check_decomposition(tree, e, f)
                    pairs += 1
        log.info(f"{row['tree']}({row['size']}): {pairs} ordered edge pairs checked")


# --- Serialization ---

@then('random trees with {lo:d} to {hi:d} leaves survive a Newick round trip')
def step_round_trip(context, lo, hi):
    for n in range(lo, hi + 1):
        for seed in range(3):
            tree = build_random(n, seed)
            again = parse_newick(to_newick(tree))
            assert is_isomorphic(tree, again), f"n={n} seed={seed}: {to_newick(tree)} changed on re-parse"
            assert np.array_equal(sorted(len(a) for a in tree.adjacency), sorted(len(a) for a in again.adjacency))


@when('the tree is written to a file and read back')
def step_write_read(context):
    path = write_newick_file(context.tree, Path(context.workdir) / 'tree.nwk')
    context.tree_read_back = read_newick_file(path)


@then('the tree read back is isomorphic to the original')
def step_check_read_back(context):
    assert is_isomorphic(context.tree, context.tree_read_back), \
        f"{to_newick(context.tree)} != {to_newick(context.tree_read_back)}"
