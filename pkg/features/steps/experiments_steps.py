import filecmp
import json
import math
import shlex
from pathlib import Path
from unittest import mock

from behave import when, then
import numpy as np
from scipy import stats

import run_experiments
from branchfit import errors
from branchfit.experiments import ExperimentConfig, error_trials, run_experiment
from branchfit.optimizer import OptConfig
from features.support.helpers import capture_error, floats, write_config
from utils.allure_helper import AllureHelper
from utils.report_manager import read_csv_report
from utils import logger

allure_helper = AllureHelper()
log = logger.customLogger()


def _output(context, name='run'):
    return str(Path(context.workdir) / name)


def _report(context, name):
    return read_csv_report(Path(context.config_under_test.output_dir) / name)


# --- Configs ---

@when('the experiment config is loaded from')
def step_load_config_text(context):
    context.config_text = context.text
    with capture_error(context):
        context.config_under_test = ExperimentConfig.from_dict(json.loads(context.text))


@when('the experiment config "{path}" is loaded')
def step_load_config_file(context, path):
    context.config_under_test = ExperimentConfig.from_json(path)


@when('the configured tree is built')
def step_build_configured_tree(context):
    assert context.error is None, f"Config did not load: {context.error}"
    with capture_error(context):
        context.config_under_test.build_tree()


@then('loading it again gives the same hash')
def step_check_hash_stable(context):
    again = ExperimentConfig.from_dict(json.loads(context.config_text))
    assert again.hash == context.config_under_test.hash, "Hash changed between loads"
    relocated = again.with_overrides(output_dir=_output(context, 'elsewhere'))
    assert relocated.hash == again.hash, "Output location changed the hash"


@then('overriding the seed with {seed:d} changes the hash')
def step_check_hash_seed(context, seed):
    changed = context.config_under_test.with_overrides(seed=seed)
    assert changed.hash != context.config_under_test.hash, "Seed override kept the hash"


# --- Runners ---

@when('the experiment is run')
def step_run_experiment(context):
    assert context.error is None, f"Config did not load: {context.error}"
    context.config_under_test = context.config_under_test.with_overrides(output_dir=_output(context))
    context.result = run_experiment(context.config_under_test)
    for report in context.result.reports:
        allure_helper.attach_csv(report.path)


@then('the summary value "{key}" is {expected:g}')
def step_check_summary_exact(context, key, expected):
    actual = context.result.summary[key]
    assert actual == expected, f"{key} = {actual}, expected {expected}"


@then('the summary value "{key}" is {expected:g} within {tol:g}')
def step_check_summary_close(context, key, expected, tol):
    actual = float(context.result.summary[key])
    assert abs(actual - expected) < tol, f"{key} = {actual!r}, expected {expected}"


@then('the summary flag "{key}" is true')
def step_check_summary_flag(context, key):
    assert context.result.summary[key] is True, f"{key} = {context.result.summary[key]}"


@then('the CSV "{name}" has the metadata keys "{keys}"')
def step_check_metadata(context, name, keys):
    report = _report(context, name)
    missing = [k for k in keys.split(',') if k not in report.metadata]
    assert not missing, f"{name} preamble lacks {missing}; has {sorted(report.metadata)}"
    assert report.metadata['config_hash'] == context.config_under_test.hash


@then('the CSV "{name}" has {count:d} rows')
def step_check_row_count(context, name, count):
    rows = len(_report(context, name).rows)
    assert rows == count, f"{name} has {rows} rows, expected {count}"


@then('running it twice gives identical CSV files')
def step_check_determinism(context):
    outputs = []
    for name in ('first', 'second'):
        config = context.config_under_test.with_overrides(output_dir=_output(context, name))
        run_experiment(config)
        outputs.append(Path(config.output_dir))
    names = sorted(p.name for p in outputs[0].glob('*.csv'))
    assert names, "No CSV files were written"
    _, mismatch, errors = filecmp.cmpfiles(outputs[0], outputs[1], names, shallow=False)
    assert not mismatch and not errors, f"Files differ between runs: {mismatch + errors}"


@then('every witness row in "{name}" has {count:d} class up to internal-node sign flips')
def step_check_witness_classes(context, name, count):
    report = _report(context, name)
    witnesses = [row for row, flag in zip(report.rows, report.column('witness')) if flag == 'true']
    assert witnesses, "No witness rows"
    classes = [int(row[report.header.index('gauge_classes')]) for row in witnesses]
    assert all(c == count for c in classes), f"Gauge classes {classes}"


@then('the median deviation in "{name}" decreases with m')
def step_check_deviation_trend(context, name):
    report = _report(context, name)
    medians = floats(report.column('median_deviation'))
    assert np.all(np.diff(medians) < 0), f"Median deviations {medians}"


@then('the exceedance fraction in "{name}" is at most the target probability')
def step_check_exceedance(context, name):
    report = _report(context, name)
    for fraction, probability in zip(floats(report.column('exceedance_fraction')),
                                     floats(report.column('probability'))):
        assert fraction <= probability, f"Exceedance {fraction} above {probability}"


# --- Error scaling ---

def _scaled_errors(tree, truth, trials, m):
    outcomes = error_trials(tree, np.full(tree.n_edges, truth), m, trials, seed=41, opt=OptConfig())
    assert all(ok for _, ok in outcomes), "A 2-leaf fit failed to converge"
    return np.array([err for err, _ in outcomes]) * math.sqrt(m)


@then('the median error of {trials:d} fits at truth {truth:g} with {m:d} samples is within {pct:d}% of '
      '{constant:g} over root m')
def step_check_median_error(context, trials, truth, m, pct, constant):
    median = float(np.median(_scaled_errors(context.tree, truth, trials, m)))
    allure_helper.attach_numbers("median error times root m", constant, median, pct / 100.0)
    assert abs(median - constant) <= constant * pct / 100.0, f"median error x sqrt(m) = {median}"


@then('the scaled errors of {trials:d} fits at truth {truth:g} with {m:d} samples are half-normal with scale '
      '{scale:g} up to a KS distance of {limit:g}')
def step_check_half_normal(context, trials, truth, m, scale, limit):
    scaled = _scaled_errors(context.tree, truth, trials, m)
    result = stats.kstest(scaled, 'halfnorm', args=(0.0, scale))
    log.info(f"KS distance to half-normal({scale}): {result.statistic:.4f}")
    assert result.statistic <= limit, f"KS distance {result.statistic}"


@then('the log-log slope of the median error lies in [{low:g}, {high:g}]')
def step_check_slope(context, low, high):
    slope = context.result.summary['loglog_slope']
    assert low <= slope <= high, f"log-log slope {slope}"


@then('no trial in "{name}" failed to converge')
def step_check_all_converged(context, name):
    flags = _report(context, name).column('converged')
    assert all(f == 'true' for f in flags), f"{flags.count('false')} trial(s) did not converge"


# --- Convergence ---

def _summary_rows(context, name):
    report = _report(context, name)
    return [dict(zip(report.header, row)) for row in report.rows]


@then('every trial in "{name}" has a nonincreasing gap')
def step_check_gap_monotone(context, name):
    for row in _summary_rows(context, name):
        assert row['gap_nonincreasing'] == 'true', f"trial {row['trial']}: gap increased"


@then('every trial in "{name}" has a log-gap fit with R squared at least {threshold:g}')
def step_check_r_squared(context, name, threshold):
    for row in _summary_rows(context, name):
        assert float(row['r_squared']) >= threshold, f"trial {row['trial']}: R^2 = {row['r_squared']}"


@then('every trial in "{name}" contracts no slower than {factor:g} times the reference rate')
def step_check_contraction(context, name, factor):
    for row in _summary_rows(context, name):
        contraction, reference = float(row['contraction']), float(row['reference_rate'])
        assert contraction <= factor * reference, \
            f"trial {row['trial']}: contraction {contraction} vs reference {reference}"


# --- Command line ---

def _run_cli(context, arguments):
    argv = shlex.split(arguments) + ['--out', _output(context, 'cli')]
    log.info(f"run_experiments {' '.join(argv)}")
    return run_experiments.main(argv)


@when('the command line runs "{arguments}"')
def step_run_cli(context, arguments):
    context.exit_code = _run_cli(context, arguments)


@when('the command line runs "{arguments}" with the config')
def step_run_cli_with_config(context, arguments):
    path = write_config(context, json.loads(context.text))
    context.exit_code = _run_cli(context, f"{arguments} --config {path}")


@when('the command line runs "{arguments}" and the run raises {error}')
def step_run_cli_raising(context, arguments, error):
    with mock.patch.object(run_experiments, 'run_experiment',
                           side_effect=getattr(errors, error)(f"{error} during the run")):
        context.exit_code = _run_cli(context, arguments)


@then('the exit code is {code:d}')
def step_check_exit_code(context, code):
    assert context.exit_code == code, f"Exit code {context.exit_code}, expected {code}"


def _samples_preamble(context):
    lines = (Path(_output(context, 'cli')) / 'samples.csv').read_text(encoding='utf-8').splitlines()
    meta = {}
    for line in lines:
        if line.startswith('#'):
            key, _, value = line[1:].strip().partition(':')
            meta[key.strip()] = value.strip()
    return meta


@then('the samples file has the metadata keys "{keys}"')
def step_check_samples_preamble(context, keys):
    meta = _samples_preamble(context)
    missing = [k for k in keys.split(',') if k not in meta]
    assert not missing, f"samples.csv preamble lacks {missing}"


@then('the samples file records seed {seed:d}')
def step_check_samples_seed(context, seed):
    assert _samples_preamble(context)['seed'] == str(seed)


@then('the fit summary reports an interior converged fit')
def step_check_fit_summary(context):
    doc = json.loads((Path(_output(context, 'cli')) / 'fit_summary.json').read_text(encoding='utf-8'))
    summary = doc['summary']
    assert summary['termination'] == 'converged', f"termination {summary['termination']}"
    assert summary['all_interior'], f"fit left the estimation box at sweep {summary['first_escape_sweep']}"
