from behave import given, when, then
import numpy as np

from branchfit.cfn_model import make_param_box, random_in_ball, sample_spins, spawn_rng
from branchfit.experiments import analyse_pair, steel_starts
from branchfit.likelihood_engine import gradient
from branchfit.optimizer import (OptConfig, OptTrace, confinement_report, coordinate_update, fit,
                                 multi_start)
from features.support.helpers import capture_error
from utils.allure_helper import AllureHelper
from utils.file_reader import read_file
from utils import logger

allure_helper = AllureHelper()
log = logger.customLogger()


def _vector(text):
    return np.array([float(v) for v in text.split(',')])


@given('the edge parameters are "{values}"')
def step_explicit_theta(context, values):
    context.theta = _vector(values)


# --- Single-edge updates ---

@when('edge {e:d} is updated')
def step_update_edge(context, e):
    context.updated = coordinate_update(context.tree, context.theta, context.samples, e)


@when('edge {e:d} is updated inside the box with delta {delta:g}, c {c:g} and C {C:g}')
def step_update_edge_clamped(context, e, delta, c, C):
    config = OptConfig(clamp_box=make_param_box(delta, c, C))
    context.updated = coordinate_update(context.tree, context.theta, context.samples, e, config=config)


@then('the updated parameter is {expected:g} within {tol:g}')
def step_check_update(context, expected, tol):
    assert abs(context.updated - expected) <= tol, f"Updated value {context.updated!r}, expected {expected}"


@then('after updating any one edge on [{low:g}, {high:g}] its derivative is zero within {tol:g} or points outward')
def step_check_update_optimality(context, low, high, tol):
    config = OptConfig(bounds=(low, high))
    for e in range(context.tree.n_edges):
        theta = context.theta.copy()
        theta[e] = coordinate_update(context.tree, context.theta, context.samples, e, config=config)
        derivative = gradient(context.tree, theta, context.samples)[e]
        if theta[e] == low:
            assert derivative <= tol, f"edge {e} at the lower end with derivative {derivative}"
        elif theta[e] == high:
            assert derivative >= -tol, f"edge {e} at the upper end with derivative {derivative}"
        else:
            assert abs(derivative) < tol, f"edge {e} stopped at {theta[e]} with derivative {derivative}"


# --- Full fits ---

@when('the parameters are fitted')
def step_fit(context):
    context.trace = fit(context.tree, context.theta, context.samples)


@when('the parameters are fitted from the center of the box with delta {delta:g}, c {c:g} and C {C:g}')
def step_fit_from_center(context, delta, c, C):
    start = make_param_box(delta, c, C).center(context.tree.n_edges)
    context.trace = fit(context.tree, start, context.samples)


@when('the parameters are fitted with edge order "{order}"')
def step_fit_with_order(context, order):
    edge_order = tuple(int(v) for v in order.split(','))
    with capture_error(context):
        context.trace = fit(context.tree, context.theta, context.samples, OptConfig(edge_order=edge_order))


@when('the parameters are fitted from {count:d} random starts')
def step_multi_start(context, count):
    starts = [context.rng.uniform(0.5, 0.95, size=context.tree.n_edges) for _ in range(count)]
    context.traces = multi_start(context.tree, context.samples, starts)


@then('the fit converged within {sweeps:d} sweeps')
def step_check_converged(context, sweeps):
    trace = context.trace
    assert trace.termination == 'converged', f"Fit stopped with '{trace.termination}'"
    assert trace.sweeps <= sweeps, f"Fit needed {trace.sweeps} sweeps"


@then('the fitted parameters are "{values}" within {tol:g}')
def step_check_fitted(context, values, tol):
    diff = np.max(np.abs(context.trace.final - _vector(values)))
    assert diff < tol, f"Fitted {context.trace.final}, expected {values}"


@then('the objective never decreases')
def step_check_monotone(context):
    trace = context.trace
    assert trace.is_monotone(), f"Objective sequence {trace.objectives} is not nondecreasing"
    allure_helper.attach_json("objectives", {"objectives": trace.objectives, "max_changes": trace.max_changes})


@then('the last coordinate change is below {tol:g}')
def step_check_last_change(context, tol):
    assert context.trace.max_changes[-1] < tol, f"Last sweep moved by {context.trace.max_changes[-1]}"


@then('the fitted gradient vanishes within {tol:g}')
def step_check_stationary(context, tol):
    g = gradient(context.tree, context.trace.final, context.samples)
    assert np.max(np.abs(g)) < tol, f"Gradient at the fit {g}"


@then('one more sweep from the fit moves no coordinate by more than {tol:g}')
def step_check_fixed_point(context, tol):
    again = fit(context.tree, context.trace.final, context.samples, OptConfig(max_sweeps=1))
    assert again.max_changes[0] <= tol, f"Extra sweep moved a coordinate by {again.max_changes[0]}"
    assert abs(again.objectives[-1] - context.trace.objectives[-1]) <= 1e-12, "Extra sweep changed the objective"


@then('the fitted parameters agree with the default order within {tol:g}')
def step_check_order_invariance(context, tol):
    reference = fit(context.tree, context.theta, context.samples)
    diff = np.max(np.abs(reference.final - context.trace.final))
    assert diff < tol, f"Edge order changed the fit by {diff}"


@then('there are {count:d} traces and all of them converged')
def step_check_traces(context, count):
    assert len(context.traces) == count, f"Got {len(context.traces)} traces"
    assert all(t.termination == 'converged' for t in context.traces), \
        f"Terminations {[t.termination for t in context.traces]}"


# --- Confinement ---

def _trajectory(values):
    trace = OptTrace()
    trace.iterates = [np.array([v]) for v in _vector(values)]
    return trace


@then('a trajectory through "{values}" stays inside the box with delta {delta:g}, c {c:g} and C {C:g}')
def step_check_inside(context, values, delta, c, C):
    report = confinement_report(_trajectory(values), make_param_box(delta, c, C))
    assert report.all_interior and report.first_escape_sweep is None, f"Unexpected escape: {report}"


@then('a trajectory through "{values}" first leaves the box with delta {delta:g}, c {c:g} and C {C:g} '
      'at sweep {sweep:d}')
def step_check_escape(context, values, delta, c, C, sweep):
    report = confinement_report(_trajectory(values), make_param_box(delta, c, C))
    assert not report.all_interior, "Trajectory should leave the box"
    assert report.first_escape_sweep == sweep, f"First escape at {report.first_escape_sweep}, expected {sweep}"


@then('fits with delta {delta:g} and {m:d} samples over {seeds:d} seeds keep every iterate strictly '
      'inside the estimation box')
def step_check_confinement(context, delta, m, seeds):
    tree = context.tree
    truth = make_param_box(delta, 1.0, 2.0)
    estimation = make_param_box(delta, 0.5, 4.0)
    theta_star = truth.center(tree.n_edges)
    escapes = []
    for seed in range(seeds):
        samples = sample_spins(tree, theta_star, seed, m)
        start = random_in_ball(theta_star, 0.5 * delta, spawn_rng(seed, 1))
        report = confinement_report(fit(tree, start, samples), estimation)
        if not report.all_interior:
            escapes.append((seed, report.first_escape_sweep))
    assert not escapes, f"Iterates left the estimation box (seed, sweep): {escapes}"


# --- Multiple maxima ---

@when('the pattern pair of the "{fixture}" fixture is fitted from its recorded starts')
def step_fit_fixture_pair(context, fixture):
    doc = read_file('steel', fixture)
    margin = doc['boundary_margin']
    opt = OptConfig(bounds=(-1.0 + margin, 1.0 - margin))
    pair = tuple(doc['pairs'][0])
    starts = steel_starts(doc['seed'], 0, doc['starts'], context.tree.n_edges, doc['start_range'])
    context.analysis = analyse_pair(context.tree, pair, starts, opt, doc['separation'], doc['objective_tol'])
    context.objective_tol = doc['objective_tol']


@when('the pattern pair "{first}" and "{second}" is fitted from {count:d} starts')
def step_fit_pair(context, first, second, count):
    opt = OptConfig(bounds=(-1.0 + 1e-6, 1.0 - 1e-6))
    starts = steel_starts(1, 0, count, context.tree.n_edges, 0.9)
    context.analysis = analyse_pair(context.tree, (first, second), starts, opt)


@then('at least {count:d} separated limits reach the best objective within {tol:g}')
def step_check_limits(context, count, tol):
    analysis = context.analysis
    log.info(f"{analysis.pair}: best {analysis.best_objective:.12g}, {len(analysis.limits)} limits")
    assert len(analysis.limits) >= count, f"Only {len(analysis.limits)} separated limit(s)"
    assert analysis.witness
    near_best = [o for o in analysis.objectives if o >= analysis.best_objective - tol]
    assert len(near_best) >= count, "Too few starts reached the best objective"


@then('the limits form a single class up to internal-node sign flips')
def step_check_single_class(context):
    assert context.analysis.gauge_class_count == 1, \
        f"{context.analysis.gauge_class_count} gauge classes among the limits"
