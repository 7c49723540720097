from pathlib import Path

from behave import given, when, then
import numpy as np

from branchfit.cfn_model import (SampleSet, check_box_nesting, exact_leaf_distribution, exact_pattern_table,
                                 gauge_classes, gauge_flip, load_samples_csv, make_param_box, sample_spins,
                                 save_samples_csv, string_to_pattern, total_variation)
from features.support.helpers import capture_error
from utils.allure_helper import AllureHelper
from utils import logger

allure_helper = AllureHelper()
log = logger.customLogger()


# --- Parameters and samples ---

@given('every edge parameter is {value:g}')
def step_constant_theta(context, value):
    context.theta = np.full(context.tree.n_edges, float(value))


@given('edge parameters drawn uniformly from [{low:g}, {high:g}]')
def step_uniform_theta(context, low, high):
    context.theta = context.rng.uniform(low, high, size=context.tree.n_edges)


@given('the samples')
def step_given_samples(context):
    counts = {}
    for row in context.table:
        if int(row['count']) == 0:
            continue
        key = tuple(int(s) for s in string_to_pattern(row['pattern']))
        counts[key] = counts.get(key, 0) + int(row['count'])
    context.samples = SampleSet.from_counts(counts)


@when('{m:d} samples are drawn with seed {seed:d}')
def step_draw_samples(context, m, seed):
    context.samples = sample_spins(context.tree, context.theta, seed, m)
    log.info(f"Drew {m} samples: {context.samples.patterns.shape[0]} distinct patterns")


@when('the samples are checked against the tree')
def step_check_samples_tree(context):
    with capture_error(context):
        context.samples.check_tree(context.tree)


# --- Boxes ---

@when('a parameter box with delta {delta:g}, c {c:g} and C {C:g} is made')
def step_make_box(context, delta, c, C):
    context.box = None
    with capture_error(context):
        context.box = make_param_box(delta, c, C)


@when('parameter boxes with c {c:g} and C {C:g} are made for delta {deltas}')
def step_make_boxes(context, c, C, deltas):
    values = [float(v) for v in deltas.replace(' and ', ',').split(',')]
    context.boxes = [make_param_box(delta, c, C) for delta in values]


@then('the box interval is [{low:g}, {high:g}]')
def step_check_box(context, low, high):
    assert context.error is None, f"Box construction failed: {context.error}"
    actual = context.box.interval
    assert np.allclose(actual, (low, high), atol=1e-12), f"Expected [{low}, {high}], got {actual}"


@then('both box bounds decrease strictly with delta')
def step_check_box_monotone(context):
    lows = [box.low for box in context.boxes]
    highs = [box.high for box in context.boxes]
    assert np.all(np.diff(lows) < 0), f"Lower bounds {lows}"
    assert np.all(np.diff(highs) < 0), f"Upper bounds {highs}"


@when('the box constants {c_bar:g}, {c:g}, {C:g}, {C_bar:g} are checked for nesting')
def step_check_nesting(context, c_bar, c, C, C_bar):
    with capture_error(context):
        check_box_nesting(c_bar, c, C, C_bar)


@then('the nesting check {outcome}')
def step_nesting_outcome(context, outcome):
    if outcome == 'passes':
        assert context.error is None, f"Nesting check failed: {context.error}"
    else:
        assert type(context.error).__name__ == 'InvalidParameterError', "Nesting check should have failed"


# --- Exact distribution ---

@then('the exact pattern probabilities are')
def step_check_exact_table(context):
    distribution = exact_leaf_distribution(context.tree, context.theta)
    for row in context.table:
        key = tuple(int(s) for s in string_to_pattern(row['pattern']))
        expected = float(row['probability'])
        assert abs(distribution[key] - expected) < 1e-12, \
            f"P({row['pattern']}) = {distribution[key]}, expected {expected}"


@then('the exact pattern probabilities sum to 1 within {tol:g}')
def step_check_normalized(context, tol):
    _, probs = exact_pattern_table(context.tree, context.theta)
    assert abs(probs.sum() - 1.0) < tol, f"Probabilities sum to {probs.sum()!r}"


@then('every exact pattern probability is positive')
def step_check_positive(context):
    _, probs = exact_pattern_table(context.tree, context.theta)
    assert np.all(probs > 0), f"Minimum probability {probs.min()}"


@then('every exact pattern is as likely as its global spin flip within {tol:g}')
def step_check_spin_flip(context, tol):
    distribution = exact_leaf_distribution(context.tree, context.theta)
    for key, probability in distribution.items():
        flipped = distribution[tuple(-s for s in key)]
        assert abs(probability - flipped) < tol, f"P({key}) = {probability!r}, flipped {flipped!r}"


@then('every single-leaf marginal is one half within {tol:g}')
def step_check_marginals(context, tol):
    patterns, probs = exact_pattern_table(context.tree, context.theta)
    marginals = (patterns == 1).T.astype(float) @ probs
    assert np.all(np.abs(marginals - 0.5) < tol), f"Leaf marginals {marginals}"


@when('the exact pattern table is requested')
def step_request_table(context):
    with capture_error(context):
        exact_pattern_table(context.tree, context.theta)


# --- Sampling checks ---

@then('only the patterns "{first}" and "{second}" occur')
def step_check_only_patterns(context, first, second):
    allowed = {tuple(int(s) for s in string_to_pattern(p)) for p in (first, second)}
    seen = set(context.samples.as_dict())
    assert seen <= allowed, f"Unexpected patterns {seen - allowed}"


@then('every leaf mean is within {tol:g} of 0')
def step_check_leaf_means(context, tol):
    means = np.dot(context.samples.weights, context.samples.patterns)
    assert np.max(np.abs(means)) < tol, f"Leaf means {means}"


@then('the leaves agree in a fraction {expected:g} within {tol:g}')
def step_check_agreement(context, expected, tol):
    s = context.samples
    agree = float(np.dot(s.weights, s.patterns[:, 0] == s.patterns[:, 1]))
    allure_helper.attach_numbers("agreement", expected, agree, tol, abs(agree - expected) < tol)
    assert abs(agree - expected) < tol, f"Agreement fraction {agree}, expected {expected}"


@then('the total variation distance to the exact distribution is below {tol:g}')
def step_check_tv(context, tol):
    tv = total_variation(context.samples, exact_leaf_distribution(context.tree, context.theta))
    assert tv < tol, f"Total variation {tv}"


@then('samples drawn twice with seed {seed:d} are identical')
def step_check_reproducible(context, seed):
    first = sample_spins(context.tree, context.theta, seed, 2000)
    second = sample_spins(context.tree, context.theta, seed, 2000)
    assert first.as_dict() == second.as_dict(), "Same seed produced different samples"


@then('samples from different streams of seed {seed:d} differ')
def step_check_streams(context, seed):
    first = sample_spins(context.tree, context.theta, seed, 2000, stream=(2000, 0))
    second = sample_spins(context.tree, context.theta, seed, 2000, stream=(2000, 1))
    assert first.as_dict() != second.as_dict(), "Different streams produced identical samples"


# --- Gauge symmetry ---

@when('every internal node is gauge flipped in turn')
def step_gauge_flip_all(context):
    context.flipped = [gauge_flip(context.tree, context.theta, v) for v in context.tree.internal_nodes]


@then('each flipped vector has the same exact pattern probabilities within {tol:g}')
def step_check_gauge_distribution(context, tol):
    _, base = exact_pattern_table(context.tree, context.theta)
    for theta in context.flipped:
        _, probs = exact_pattern_table(context.tree, theta)
        assert np.max(np.abs(probs - base)) < tol, f"Gauge flip changed the distribution by {np.max(np.abs(probs - base))}"


@then('all flipped vectors fall into one gauge class')
def step_check_one_class(context):
    labels = gauge_classes(context.tree, [context.theta] + context.flipped)
    assert set(labels) == {0}, f"Gauge labels {labels}"


@then('the vectors below fall into {count:d} gauge classes')
def step_check_class_count(context, count):
    thetas = [np.array([float(v) for v in row['theta'].split(',')]) for row in context.table]
    labels = gauge_classes(context.tree, thetas)
    assert len(set(labels)) == count, f"Expected {count} classes, got labels {labels}"


# --- CSV files ---

@when('the samples are saved to "{name}" with a metadata preamble')
def step_save_samples(context, name):
    save_samples_csv(context.samples, Path(context.workdir) / name, preamble=['seed: 10', 'tree: (A,B,(C,D));'])


@then('loading "{name}" gives the same pattern counts')
def step_load_samples(context, name):
    loaded = load_samples_csv(Path(context.workdir) / name, context.tree)
    assert loaded.as_dict() == context.samples.as_dict(), "Saved and loaded counts differ"
    assert loaded.m == context.samples.m
