import math

from behave import when, then
import numpy as np
from scipy.optimize import brentq

from branchfit.cfn_model import make_param_box, sample_spins
from branchfit.likelihood_engine import deterministic_bounds
from branchfit.landscape_probe import (BernsteinParams, EmpiricalSource, PopulationSource, bernstein_bound,
                                       bernstein_deviation_level, box_scan, covering_number_bound,
                                       estimation_error_bound, explicit_sample_complexity, extreme_eigenvalues,
                                       hessian_concentration_bound, hessian_deviation_experiment,
                                       monte_carlo_hessian, population_hessian, sample_complexity,
                                       statistical_sample_requirement)
from features.support.helpers import capture_error
from utils.allure_helper import AllureHelper
from utils import logger

allure_helper = AllureHelper()
log = logger.customLogger()

TIGHT_BOX = (0.9, 2.2)
TRUTH_BOX = (1.0, 2.0)


def _matrix(text):
    return np.array([[float(v) for v in row.split(',')] for row in text.split(';')])


# --- Population and Monte Carlo Hessians ---

@when('the exact population Hessian at truth {truth:g} is evaluated at {estimate:g}')
def step_population_hessian(context, truth, estimate):
    n = context.tree.n_edges
    context.hessian = population_hessian(context.tree, np.full(n, truth), np.full(n, estimate))


@then('the single Hessian entry is {expected:g} within {tol:g}')
def step_check_single_entry(context, expected, tol):
    actual = float(context.hessian[0, 0])
    assert abs(actual - expected) < tol, f"Hessian entry {actual!r}, expected {expected}"


@then('the Monte Carlo Hessian from {m:d} samples is within {k:d} standard errors of the exact one')
def step_check_monte_carlo(context, m, k):
    theta_hat = context.theta - 0.02
    exact = population_hessian(context.tree, context.theta, theta_hat)
    estimate, stderr = monte_carlo_hessian(context.tree, context.theta, theta_hat, m, seed=33)
    excess = np.abs(estimate - exact) - k * stderr
    allure_helper.attach_json("monte carlo", {"exact": exact, "estimate": estimate, "stderr": stderr})
    assert np.all(excess <= 1e-12), f"Entries beyond {k} standard errors: {np.argwhere(excess > 1e-12).tolist()}"


# --- Eigenvalues ---

@then('the extreme eigenvalues of "{matrix}" are {low:g} and {high:g}')
def step_check_eigenvalues(context, matrix, low, high):
    actual = extreme_eigenvalues(_matrix(matrix))
    assert np.allclose(actual, (low, high), atol=1e-12), f"Eigenvalues {actual}, expected ({low}, {high})"


@when('the extreme eigenvalues of "{matrix}" are requested')
def step_request_eigenvalues(context, matrix):
    with capture_error(context):
        extreme_eigenvalues(_matrix(matrix))


def _characteristic_roots(M):
    """Roots of det(M - x I) isolated by sign changes between the Gershgorin bounds."""
    radius = np.max(np.sum(np.abs(M), axis=1))
    grid = np.linspace(-radius - 1.0, radius + 1.0, 4001)

    def char(x):
        return float(np.linalg.det(M - x * np.eye(M.shape[0])))

    values = [char(x) for x in grid]
    roots = []
    for a, b, fa, fb in zip(grid, grid[1:], values, values[1:]):
        if fa == 0.0:
            roots.append(a)
        elif fa * fb < 0:
            roots.append(brentq(char, a, b, xtol=1e-14))
    return roots


@then('{count:d} random symmetric 3x3 matrices have extreme eigenvalues matching their characteristic roots '
      'within {tol:g}')
def step_check_eigen_oracle(context, count, tol):
    for k in range(count):
        A = context.rng.normal(size=(3, 3))
        M = A + A.T
        roots = _characteristic_roots(M)
        lo, hi = extreme_eigenvalues(M)
        assert abs(lo - min(roots)) < tol and abs(hi - max(roots)) < tol, \
            f"matrix {k}: ({lo}, {hi}) vs roots {roots}"


# --- Box scans ---

@when('the matched population Hessian is scanned over the box with delta {delta:g}, c {c:g} and C {C:g} '
      'on {points:d} grid points')
def step_scan_matched(context, delta, c, C, points):
    context.report = box_scan(context.tree, PopulationSource(), make_param_box(delta, c, C), points)


@when('the empirical Hessian is scanned diagonally over the box with delta {delta:g}, c {c:g} and C {C:g}')
def step_scan_diagonal(context, delta, c, C):
    context.report = box_scan(context.tree, EmpiricalSource(context.samples), make_param_box(delta, c, C),
                              mode_diag_only_offsets=True)


@when('the empirical Hessian is scanned over the box with delta {delta:g}, c {c:g} and C {C:g}')
def step_scan_empirical(context, delta, c, C):
    context.report = box_scan(context.tree, EmpiricalSource(context.samples), make_param_box(delta, c, C))


@when('the population Hessian at the truth-box center is scanned with delta {delta:g} on the tight box')
def step_scan_tight(context, delta):
    theta_star = make_param_box(delta, *TRUTH_BOX).center(context.tree.n_edges)
    context.report = box_scan(context.tree, PopulationSource(theta_star), make_param_box(delta, *TIGHT_BOX))


@then('the scanned eigenvalues lie in [{low:g}, {high:g}] within {tol:g}')
def step_check_scan_range(context, low, high, tol):
    report = context.report
    assert abs(report.inf_lambda_min - low) < tol, f"scanned inf lambda_min {report.inf_lambda_min!r}"
    assert abs(report.sup_lambda_max - high) < tol, f"scanned sup lambda_max {report.sup_lambda_max!r}"


@then('the scan covers {count:d} points')
def step_check_scan_size(context, count):
    assert len(context.report.points) == count, f"{len(context.report.points)} points scanned"


@then('every scanned eigenvalue pair equals the extreme diagonal entries')
def step_check_diagonal_scan(context):
    report = context.report
    assert np.allclose(report.lambda_min, report.diagonals.min(axis=1), atol=1e-14)
    assert np.allclose(report.lambda_max, report.diagonals.max(axis=1), atol=1e-14)
    assert report.mode.endswith('-diagonal'), f"Mode label {report.mode}"


@then('the scanned largest eigenvalue is negative')
def step_check_negative(context):
    sup = context.report.sup_lambda_max
    allure_helper.attach_numbers("scanned sup lambda_max", "< 0", sup, None, sup < 0)
    assert sup < 0, f"scanned sup lambda_max = {sup}"


@then('every scanned diagonal entry lies in [minus the squared gradient bound for c_bar {c_bar:g}, 0)')
def step_check_diagonal_range(context, c_bar):
    report = context.report
    floor = -deterministic_bounds(report.delta, 1, c_bar).grad_bound ** 2
    assert np.all(report.diagonals < 0), f"Nonnegative diagonal entry {report.diagonals.max()}"
    assert np.all(report.diagonals >= floor), f"Diagonal entry {report.diagonals.min()} below {floor}"

@then('the matched population eigenvalue ratio between delta {small:g} and delta {large:g} lies in '
      '[{low:g}, {high:g}]')
def step_check_delta_scaling(context, small, large, low, high):
    def center_eigenvalue(delta):
        theta = make_param_box(delta, *TRUTH_BOX).center(context.tree.n_edges)
        return extreme_eigenvalues(population_hessian(context.tree, theta, theta))[1]

    ratio = center_eigenvalue(small) / center_eigenvalue(large)
    assert low <= ratio <= high, f"Eigenvalue ratio {ratio}"


@then('with delta {delta:g} and {m:d} samples the empirical scan on the tight box is negative for at least '
      '{needed:d} of {seeds:d} seeds')
def step_check_empirical_event(context, delta, m, needed, seeds):
    tree = context.tree
    theta_star = make_param_box(delta, *TRUTH_BOX).center(tree.n_edges)
    box = make_param_box(delta, *TIGHT_BOX)
    sups = [box_scan(tree, EmpiricalSource(sample_spins(tree, theta_star, seed, m)), box).sup_lambda_max
            for seed in range(seeds)]
    negative = sum(1 for s in sups if s < 0)
    log.info(f"Empirical negativity held for {negative}/{seeds} seeds")
    assert negative >= needed, f"Only {negative}/{seeds} scans negative: {sups}"


# --- Calculators ---

@when('the Bernstein bound is computed for p {p:d}, d {d:d}, n {n:d}, R {R:g}, L {L:g}, sigma2 {sigma2:g}, '
      'diameter {diam:g} and t {t:g}')
def step_bernstein(context, p, d, n, R, L, sigma2, diam, t):
    context.bernstein = BernsteinParams(p=p, d=d, n=n, R=R, L=L, sigma2=sigma2, theta_diam=diam, t=t)


@then('the Bernstein bound is {expected:g} within {tol:g}')
def step_check_bernstein(context, expected, tol):
    params = context.bernstein
    actual = bernstein_bound(params)
    formula = (2 * params.d * params.theta_diam ** params.p * (1 + 4 * params.n * params.L / params.t) ** params.p
               * math.exp(-(params.t ** 2 / 8) / (params.sigma2 + params.R * params.t / 6)))
    assert abs(actual - expected) < tol, f"Bernstein bound {actual!r}, expected about {expected}"
    assert math.isclose(actual, formula, rel_tol=1e-12), f"{actual!r} vs formula {formula!r}"


@then('the Bernstein deviation level for probability {probability:g} brings the bound to {expected:g}')
def step_check_bernstein_level(context, probability, expected):
    level = bernstein_deviation_level(context.bernstein, probability)
    actual = bernstein_bound(context.bernstein.with_t(level))
    assert math.isclose(actual, expected, rel_tol=1e-8), f"bound at level {level} is {actual}"


@then('the covering bound for diameter {diam:g}, dimension {p:d} and radius {eps:g} is {expected:g}')
def step_check_covering(context, diam, p, eps, expected):
    actual = covering_number_bound(diam, p, eps)
    assert math.isclose(actual, expected, rel_tol=1e-12), f"Covering bound {actual}, expected {expected}"


@then('the sample complexity for delta {delta:g}, diameter {diam:d}, eps {eps:g} and C {C:g} is {expected:d}')
def step_check_sample_complexity(context, delta, diam, eps, C, expected):
    actual = sample_complexity(delta, diam, eps, C)
    assert actual == expected, f"Sample complexity {actual}, expected {expected}"


@when('the sample complexity for delta {delta:g}, diameter {diam:d}, eps {eps:g} and C {C:g} is requested')
def step_request_sample_complexity(context, delta, diam, eps, C):
    with capture_error(context):
        sample_complexity(delta, diam, eps, C)


@then('the estimation error bound for C {C:g}, {edges:d} edges, {m:d} samples and eps {eps:g} is {expected:g} '
      'within {tol:g}')
def step_check_error_bound(context, C, edges, m, eps, expected, tol):
    actual = estimation_error_bound(C, edges, m, eps)
    assert abs(actual - expected) < tol, f"Error bound {actual!r}, expected {expected}"


@then('the explicit sample complexity for {edges:d} edge, diameter {diam:d}, delta {delta:g}, box {c_bar:g} to '
      '{C_bar:g}, eps {eps:g} and J {J:g} is {expected:d}')
def step_check_explicit_complexity(context, edges, diam, delta, c_bar, C_bar, eps, J, expected):
    actual = explicit_sample_complexity(edges, diam, delta, c_bar, C_bar, eps, J)
    assert actual == expected, f"Explicit sample complexity {actual}, expected {expected}"


@then('the explicit concentration bound for {edges:d} edge, diameter {diam:d}, delta {delta:g}, box {c_bar:g} to '
      '{C_bar:g}, {m:d} samples and J {J:g} is {expected:g} within {tol:g}')
def step_check_explicit_bound(context, edges, diam, delta, c_bar, C_bar, m, J, expected, tol):
    actual = hessian_concentration_bound(edges, diam, delta, c_bar, C_bar, m, J)
    assert abs(actual - expected) < tol, f"Concentration bound {actual!r}, expected {expected}"
    assert hessian_concentration_bound(edges, diam, delta, c_bar, C_bar, 4 * m, J) < actual


@then('the statistical sample requirement for {edges:d} edges, delta {delta:g}, c_bar {c_bar:g}, C {C:g} and eps '
      '{eps:g} is {expected:d}')
def step_check_statistical_requirement(context, edges, delta, c_bar, C, eps, expected):
    actual = statistical_sample_requirement(edges, delta, c_bar, C, eps)
    assert actual == expected, f"Statistical requirement {actual}, expected {expected}"


@then('the sup Hessian deviation with {large:d} samples is below the one with {small:d} samples in at least '
      '{needed:d} of {trials:d} paired trials')
def step_check_deviation_decay(context, large, small, needed, trials):
    runs = {m: _deviation_rows(context, m, trials, seed=34) for m in (small, large)}
    wins = sum(1 for a, b in zip(runs[large], runs[small]) if a.sup_deviation < b.sup_deviation)
    log.info(f"Deviation at m={large} below m={small} in {wins}/{trials} trials")
    assert wins >= needed, f"Only {wins}/{trials} paired trials improved"


def _deviation_rows(context, m, trials, seed):
    box = make_param_box(0.05, 0.5, 4.0)
    return hessian_deviation_experiment(context.tree, context.theta, box, m, trials, seed=seed)


@then('the Weyl gap of {trials:d} deviation trials with {m:d} samples is at most {tol:g}')
def step_check_weyl_gap(context, trials, m, tol):
    gaps = [row.weyl_gap for row in _deviation_rows(context, m, trials, seed=35)]
    assert max(gaps) <= tol, f"Weyl gaps {gaps}"


@then('the sup Hessian deviation with {m:d} samples is within the Bernstein level in at least {needed:d} of '
      '{trials:d} trials')
def step_check_bernstein_coverage(context, m, needed, trials):
    rows = _deviation_rows(context, m, trials, seed=36)
    level = rows[0].bernstein_level
    held = sum(1 for row in rows if row.sup_deviation <= row.bernstein_level)
    allure_helper.attach_numbers("trials within the Bernstein level", needed, held, None, held >= needed)
    log.info(f"Bernstein level {level:.4g} held in {held}/{trials} trials")
    assert held >= needed, f"Only {held}/{trials} trials within {level}: {[r.sup_deviation for r in rows]}"
