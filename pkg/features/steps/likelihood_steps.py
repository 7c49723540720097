import itertools
import math

from behave import when, then
import numpy as np

from branchfit.cfn_model import SampleSet, all_patterns, exact_pattern_table, make_param_box, sample_spins, string_to_pattern
from branchfit.likelihood_engine import (coordinate_restriction_curvature, deterministic_bounds, fd_gradient,
                                         fd_hessian, gradient, hessian, log_likelihood, magnetization_by_definition,
                                         magnetization_matrix, magnetizations_all, pattern_log_probs,
                                         third_derivative_fd)
from branchfit.landscape_probe import EdgeBounds, scan_points
from branchfit.tree_core import DirectedEdge, build_balanced, build_random, diameter, parse_newick
from features.support.helpers import leaf_node, tree_from_row
from utils.allure_helper import AllureHelper
from utils import logger

allure_helper = AllureHelper()
log = logger.customLogger()


# --- Magnetizations ---

def _cherry_edge(tree, first, second):
    parent = tree.adjacency[leaf_node(tree, first)][0]
    children = {leaf_node(tree, first), leaf_node(tree, second)}
    tail = next(v for v in tree.adjacency[parent] if v not in children)
    return DirectedEdge(tree.edge_id(parent, tail), parent, tail)


@then('the magnetization at the parent of "{first}" and "{second}" for pattern "{pattern}" is {expected:g} within {tol:g}')
def step_check_cherry(context, first, second, pattern, expected, tol):
    d = _cherry_edge(context.tree, first, second)
    context.pattern = string_to_pattern(pattern)
    context.directed = d
    actual = magnetizations_all(context.tree, context.theta, context.pattern).at(d)
    allure_helper.attach_numbers("cherry magnetization", expected, actual, tol, abs(actual - expected) < tol)
    assert abs(actual - expected) < tol, f"Z = {actual!r}, expected {expected}"


@then('it matches the magnetization by definition within {tol:g}')
def step_check_definition(context, tol):
    recursive = magnetizations_all(context.tree, context.theta, context.pattern).at(context.directed)
    direct = magnetization_by_definition(context.tree, context.theta, context.pattern, context.directed)
    assert abs(recursive - direct) < tol, f"recursion {recursive!r} vs definition {direct!r}"


@then('the magnetization at leaf "{name}" for pattern "{pattern}" is {expected:g}')
def step_check_leaf_magnetization(context, name, pattern, expected):
    tree = context.tree
    leaf = leaf_node(tree, name)
    d = DirectedEdge(tree.edge_id(leaf, tree.adjacency[leaf][0]), leaf, tree.adjacency[leaf][0])
    actual = magnetizations_all(tree, context.theta, string_to_pattern(pattern)).at(d)
    assert actual == expected, f"Leaf magnetization {actual}, expected {expected}"


@then('{count:d} random tree, parameter and pattern triples agree with the definition within {tol:g}')
def step_check_magnetization_oracle(context, count, tol):
    rng = context.rng
    worst = 0.0
    for k in range(count):
        tree = build_random(int(rng.integers(3, 9)), seed=k)
        theta = rng.uniform(-0.95, 0.95, size=tree.n_edges)
        pattern = rng.choice([-1, 1], size=tree.n_leaves)
        table = magnetizations_all(tree, theta, pattern)
        for d in tree.directed_edges:
            diff = abs(table.at(d) - magnetization_by_definition(tree, theta, pattern, d))
            worst = max(worst, diff)
            assert diff < tol, f"triple {k}: edge {d} differs by {diff}"
    log.info(f"Magnetization oracle: worst difference {worst:.3e}")


# --- Log-likelihood and derivatives ---

@when('every edge parameter is reset to {value:g}')
def step_reset_theta(context, value):
    context.theta = np.full(context.tree.n_edges, float(value))


@then('the log-likelihood is {expected:g} within {tol:g}')
def step_check_loglik(context, expected, tol):
    actual = log_likelihood(context.tree, context.theta, context.samples)
    assert abs(actual - expected) < tol, f"log-likelihood {actual!r}, expected {expected}"


@then('the log-likelihood is minus the leaf count times log 2')
def step_check_uniform_loglik(context):
    expected = -context.tree.n_leaves * math.log(2.0)
    actual = log_likelihood(context.tree, context.theta, context.samples)
    assert abs(actual - expected) < 1e-12, f"log-likelihood {actual!r}, expected {expected!r}"


@then('the gradient is {expected:g} within {tol:g}')
def step_check_gradient_value(context, expected, tol):
    actual = gradient(context.tree, context.theta, context.samples)
    assert np.max(np.abs(actual - expected)) < tol, f"gradient {actual}, expected {expected}"


@then('the Hessian is {expected:g} within {tol:g}')
def step_check_hessian_value(context, expected, tol):
    actual = hessian(context.tree, context.theta, context.samples)
    assert np.max(np.abs(actual - expected)) < tol, f"Hessian {actual}, expected {expected}"


@then('the finite-difference third derivative along edge {e:d} is {expected:g} within {tol:g}')
def step_check_third(context, e, expected, tol):
    actual = third_derivative_fd(context.tree, context.theta, context.samples, e, e, e)
    assert abs(actual - expected) < tol, f"third derivative {actual!r}, expected {expected}"
    bound = deterministic_bounds(0.1, diameter(context.tree), 1.0).third_deriv_bound
    assert abs(actual) <= bound, f"third derivative {actual} above the bound {bound}"


@then('negating every pattern negates each directed magnetization within {tol:g}')
def step_check_magnetization_flip(context, tol):
    patterns = context.samples.patterns
    Z = magnetization_matrix(context.tree, context.theta, patterns)
    flipped = magnetization_matrix(context.tree, context.theta, -patterns)
    assert np.max(np.abs(Z + flipped)) < tol, f"Largest asymmetry {np.max(np.abs(Z + flipped))}"


@then('negating every pattern leaves the log-likelihood unchanged within {tol:g}')
def step_check_loglik_flip(context, tol):
    flipped = SampleSet(patterns=-context.samples.patterns, counts=context.samples.counts)
    before = log_likelihood(context.tree, context.theta, context.samples)
    after = log_likelihood(context.tree, context.theta, flipped)
    assert abs(before - after) < tol, f"log-likelihood {before!r} became {after!r}"


def _single_patterns(samples):
    for row in samples.patterns:
        yield SampleSet(patterns=row[None, :].copy(), counts=np.array([1], dtype=np.int64))


@then('each single-pattern Hessian diagonal is minus its squared gradient within {tol:g}')
def step_check_diagonal_identity(context, tol):
    for single in _single_patterns(context.samples):
        g = gradient(context.tree, context.theta, single)
        diag = np.diag(hessian(context.tree, context.theta, single))
        assert np.max(np.abs(diag + g ** 2)) < tol, f"pattern {single.patterns[0]}: {diag} vs {-g ** 2}"


@then('the same holds for finite-difference Hessians within {tol:g}')
def step_check_diagonal_identity_fd(context, tol):
    for single in _single_patterns(context.samples):
        g = gradient(context.tree, context.theta, single)
        diag = np.diag(fd_hessian(context.tree, context.theta, single))
        assert np.max(np.abs(diag + g ** 2)) < tol, f"pattern {single.patterns[0]}: {diag} vs {-g ** 2}"

@then('pruning agrees with enumeration on every pattern within {tol:g} for')
def step_check_pruning(context, tol):
    context.checked_trees = []
    for row in context.table:
        tree = tree_from_row(row)
        theta = context.rng.uniform(0.5, 0.95, size=tree.n_edges)
        patterns, probs = exact_pattern_table(tree, theta)
        pruned = pattern_log_probs(tree, theta, patterns)
        diff = float(np.max(np.abs(pruned - np.log(probs))))
        assert diff < tol, f"{row['tree']}({row['size']}): pruning differs from enumeration by {diff}"
        context.checked_trees.append((tree, theta, patterns, pruned))


@then('the pruning result does not depend on the root')
def step_check_roots(context):
    for tree, theta, patterns, pruned in context.checked_trees:
        for root in tree.internal_nodes:
            other = pattern_log_probs(tree, theta, patterns, root=root)
            assert np.max(np.abs(other - pruned)) < 1e-10, f"root {root} changes the result"


@then('the exact expected log-likelihood equals the sum of p log p within {tol:g}')
def step_check_entropy(context, tol):
    patterns, probs = exact_pattern_table(context.tree, context.theta)
    expected = float(np.dot(probs, np.log(probs)))
    actual = float(np.dot(probs, pattern_log_probs(context.tree, context.theta, patterns)))
    assert abs(actual - expected) < tol, f"{actual!r} vs {expected!r}"


@then('on {count:d} quartet and balanced depth-3 instances the gradient matches to {g_tol:g} relative '
      'and the Hessian to {h_tol:g} absolute')
def step_check_finite_differences(context, count, g_tol, h_tol):
    trees = [parse_newick("(A,B,(C,D));"), build_balanced(3)]
    worst_g, worst_h = 0.0, 0.0
    for k in range(count):
        tree = trees[k % 2]
        theta = context.rng.uniform(0.3, 0.7, size=tree.n_edges)
        samples = sample_spins(tree, context.rng.uniform(0.5, 0.95, size=tree.n_edges), k, 200)
        g = gradient(tree, theta, samples)
        g_err = np.abs(g - fd_gradient(tree, theta, samples)) / np.maximum(1.0, np.abs(g))
        h_err = np.abs(hessian(tree, theta, samples) - fd_hessian(tree, theta, samples))
        worst_g, worst_h = max(worst_g, g_err.max()), max(worst_h, h_err.max())
        assert g_err.max() < g_tol, f"instance {k}: gradient error {g_err.max()}"
        assert h_err.max() < h_tol, f"instance {k}: Hessian error {h_err.max()}"
    allure_helper.attach_json("finite differences", {"worst_gradient": worst_g, "worst_hessian": worst_h})


@then('the Hessian is symmetric within {tol:g}')
def step_check_symmetric(context, tol):
    H = hessian(context.tree, context.theta, context.samples)
    assert np.max(np.abs(H - H.T)) < tol, f"Hessian asymmetry {np.max(np.abs(H - H.T))}"


@then('the Hessian diagonal is negative')
def step_check_diagonal(context):
    diag = np.diag(hessian(context.tree, context.theta, context.samples))
    assert np.all(diag < 0), f"Hessian diagonal {diag}"


@then('the curvature along every edge is nonpositive on a grid over [{low:g}, {high:g}]')
def step_check_curvature(context, low, high):
    grid = np.linspace(low, high, 21)
    for e in range(context.tree.n_edges):
        curvature = coordinate_restriction_curvature(context.tree, context.theta, context.samples, e, grid)
        assert max(curvature) <= 0.0, f"edge {e}: positive curvature {max(curvature)}"


# --- Deterministic bounds ---

@when('deterministic bounds are computed for delta {delta:g}, diameter {diam:d} and c_bar {c_bar:g}')
def step_compute_bounds(context, delta, diam, c_bar):
    context.bounds = deterministic_bounds(delta, diam, c_bar)


@then('the gradient bound is {grad:g} and the third-derivative bound is {third:g}')
def step_check_bounds(context, grad, third):
    assert math.isclose(context.bounds.grad_bound, grad, rel_tol=1e-9), f"gradient bound {context.bounds.grad_bound}"
    assert math.isclose(context.bounds.third_deriv_bound, third, rel_tol=1e-9), \
        f"third-derivative bound {context.bounds.third_deriv_bound}"


@then('on the box with delta {delta:g}, c_bar {c_bar:g} and C_bar {C_bar:g} every gradient and third derivative '
      'is within its deterministic bound')
def step_check_bound_scan(context, delta, c_bar, C_bar):
    tree, samples = context.tree, context.samples
    box = make_param_box(delta, c_bar, C_bar)
    bounds = deterministic_bounds(delta, diameter(tree), c_bar)
    points, _ = scan_points(EdgeBounds.uniform(box, tree.n_edges), 2)
    points = np.vstack([points, box.center(tree.n_edges)])
    triples = list(itertools.combinations_with_replacement(range(tree.n_edges), 3))
    worst_grad, worst_third = 0.0, 0.0
    for point in points:
        worst_grad = max(worst_grad, float(np.max(np.abs(gradient(tree, point, samples)))))
        for e1, e2, e3 in triples:
            worst_third = max(worst_third, abs(third_derivative_fd(tree, point, samples, e1, e2, e3, h=1e-5)))
    log.info(f"bound scan over {len(points)} points: max |grad| {worst_grad:.4g}, max |third| {worst_third:.4g}")
    assert worst_grad <= bounds.grad_bound * (1 + 1e-12), f"gradient {worst_grad} above {bounds.grad_bound}"
    assert worst_third <= bounds.third_deriv_bound, f"third derivative {worst_third} above {bounds.third_deriv_bound}"
