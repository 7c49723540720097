import math
import warnings
from collections import defaultdict
from pathlib import Path
from typing import Any, Dict, List, Optional

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
from jinja2 import Template

from utils import logger
from utils.report_manager import CsvReport, read_csv_report

log = logger.customLogger()

warnings.filterwarnings('ignore', category=RuntimeWarning, module='matplotlib')


def _floats(values: List[str]) -> List[float]:
    return [float(v) if v not in ('', 'nan') else math.nan for v in values]


class TestMetrics:
    """Scenario pass/fail counts from a behave JSON result file"""

    def calculate_metrics(self, features: List[Dict[str, Any]]) -> Dict[str, Any]:
        scenarios = []
        for feature in features:
            for element in feature.get('elements', []):
                if element.get('type') != 'scenario':
                    continue
                statuses = [s.get('result', {}).get('status', 'skipped') for s in element.get('steps', [])]
                if any(s in ('failed', 'error') for s in statuses):
                    status = 'failed'
                elif statuses and all(s == 'passed' for s in statuses):
                    status = 'passed'
                else:
                    status = 'skipped'
                duration = sum(s.get('result', {}).get('duration', 0.0) for s in element.get('steps', []))
                scenarios.append({'feature': feature.get('name', ''), 'name': element.get('name', ''),
                                  'status': status, 'duration': round(duration, 3),
                                  'tags': element.get('tags', [])})
        total = len(scenarios)
        passed = sum(1 for s in scenarios if s['status'] == 'passed')
        failed = sum(1 for s in scenarios if s['status'] == 'failed')
        return {
            'summary': {
                'total_scenarios': total,
                'passed_scenarios': passed,
                'failed_scenarios': failed,
                'skipped_scenarios': total - passed - failed,
                'scenario_pass_rate': round(passed / total * 100, 2) if total else 0,
                'total_duration': round(sum(s['duration'] for s in scenarios), 2),
            },
            'detailed_scenarios': scenarios,
        }


class ExperimentFigures:
    """Figures for the CSVs an experiment run leaves in its output directory"""

    def __init__(self, results_dir: str = 'results', output_dir: Optional[str] = None):
        self.results_dir = Path(results_dir)
        self.output_dir = Path(output_dir) if output_dir else self.results_dir / 'figures'
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def _load(self, name: str) -> Optional[CsvReport]:
        path = self.results_dir / name
        if not path.exists():
            return None
        return read_csv_report(path)

    def _save(self, fig, name: str) -> str:
        path = self.output_dir / name
        fig.savefig(path, dpi=150, bbox_inches='tight')
        plt.close(fig)
        log.info(f"Figure saved: {path}")
        return str(path)

    def error_scaling(self) -> Optional[str]:
        report = self._load('error_scaling_summary.csv')
        if report is None:
            return None
        ms = _floats(report.column('m'))
        medians = _floats(report.column('median_error'))
        fig, ax = plt.subplots(figsize=(6, 4.5))
        ax.loglog(ms, medians, 'o-', label='median error')
        ref = [medians[0] * math.sqrt(ms[0] / m) for m in ms]
        ax.loglog(ms, ref, '--', color='grey', label='m^-1/2 reference')
        ax.set_xlabel('samples m')
        ax.set_ylabel('||theta_hat - theta*||_2')
        ax.legend()
        return self._save(fig, 'error_scaling.png')

    def convergence(self) -> Optional[str]:
        report = self._load('convergence.csv')
        if report is None:
            return None
        by_trial = defaultdict(list)
        for trial, sweep, gap in zip(report.column('trial'), report.column('sweep'), report.column('gap')):
            by_trial[trial].append((int(sweep), float(gap)))
        fig, ax = plt.subplots(figsize=(6, 4.5))
        for trial, points in sorted(by_trial.items()):
            points = [(k, g) for k, g in points if g > 0]
            if points:
                ax.semilogy(*zip(*points), marker='.', alpha=0.6, label=f'trial {trial}')
        ax.set_xlabel('sweep')
        ax.set_ylabel('objective gap')
        if len(by_trial) <= 8:
            ax.legend()
        return self._save(fig, 'convergence.png')

    def landscape(self) -> Optional[str]:
        reports = {mode: self._load(f'landscape_{mode}.csv') for mode in ('exact', 'empirical')}
        reports = {k: v for k, v in reports.items() if v is not None}
        if not reports:
            return None
        fig, ax = plt.subplots(figsize=(6, 4.5))
        for mode, report in reports.items():
            ax.hist(_floats(report.column('lambda_max')), bins=30, alpha=0.6, label=f'{mode} lambda_max')
        ax.axvline(0.0, color='black', linewidth=0.8)
        ax.set_xlabel('largest Hessian eigenvalue')
        ax.legend()
        return self._save(fig, 'landscape.png')

    def steel_slice(self) -> Optional[str]:
        report = self._load('steel_slice.csv')
        if report is None:
            return None
        a_name, b_name = report.header[0], report.header[1]
        ta = sorted(set(_floats(report.column(a_name))))
        tb = sorted(set(_floats(report.column(b_name))))
        values = _floats(report.column('objective'))
        grid = [values[i * len(tb):(i + 1) * len(tb)] for i in range(len(ta))]
        fig, ax = plt.subplots(figsize=(5.5, 4.5))
        contour = ax.contourf(tb, ta, grid, levels=30)
        fig.colorbar(contour, ax=ax, label='log-likelihood')
        ax.set_xlabel(b_name)
        ax.set_ylabel(a_name)
        return self._save(fig, 'steel_slice.png')

    def bernstein(self) -> Optional[str]:
        report = self._load('bernstein_summary.csv')
        if report is None:
            return None
        ms = _floats(report.column('m'))
        fig, ax = plt.subplots(figsize=(6, 4.5))
        ax.loglog(ms, _floats(report.column('median_deviation')), 'o-', label='median sup deviation')
        ax.loglog(ms, _floats(report.column('bernstein_level')), 's--', label='Bernstein level')
        ax.set_xlabel('samples m')
        ax.set_ylabel('spectral norm')
        ax.legend()
        return self._save(fig, 'bernstein.png')

    def generate_all(self) -> List[str]:
        figures = []
        for make in (self.error_scaling, self.convergence, self.landscape, self.steel_slice, self.bernstein):
            try:
                path = make()
            except Exception as e:
                log.warning(f"Failed to draw {make.__name__}: {e}")
                continue
            if path:
                figures.append(path)
        return figures

    def write_index(self, figures: List[str]) -> str:
        csvs = sorted(p.name for p in self.results_dir.glob('*.csv'))
        html = INDEX_TEMPLATE.render(results_dir=str(self.results_dir), csvs=csvs,
                                     figures=[Path(f).name for f in figures])
        path = self.output_dir / 'index.html'
        path.write_text(html, encoding='utf-8')
        log.info(f"Figure index generated: {path}")
        return str(path)


class TestRunReport:
    """HTML summary of one behave run"""

    def __init__(self, output_dir: str = 'reports'):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(exist_ok=True)
        self.metrics = TestMetrics()

    def generate_html_report(self, features: List[Dict[str, Any]]) -> str:
        metrics = self.metrics.calculate_metrics(features)
        path = self.output_dir / 'test_report.html'
        path.write_text(RUN_TEMPLATE.render(metrics=metrics), encoding='utf-8')
        log.info(f"HTML report generated: {path}")
        return str(path)


INDEX_TEMPLATE = Template("""<!DOCTYPE html>
<html>
<head>
    <title>Experiment figures</title>
    <style>
        body { font-family: Arial, sans-serif; margin: 20px; }
        img { max-width: 640px; display: block; margin: 10px 0 30px 0; }
    </style>
</head>
<body>
    <h1>Experiment figures</h1>
    <p>Source directory: {{ results_dir }}</p>
    <h2>CSV files</h2>
    <ul>{% for name in csvs %}<li>{{ name }}</li>{% endfor %}</ul>
    {% for fig in figures %}
    <h2>{{ fig }}</h2>
    <img src="{{ fig }}" alt="{{ fig }}">
    {% endfor %}
</body>
</html>
""")

RUN_TEMPLATE = Template("""<!DOCTYPE html>
<html>
<head>
    <title>Test Report</title>
    <style>
        body { font-family: Arial, sans-serif; margin: 20px; }
        .passed { color: #28a745; }
        .failed { color: #dc3545; }
        .skipped { color: #ffc107; }
        table { width: 100%; border-collapse: collapse; margin: 20px 0; }
        th, td { border: 1px solid #dee2e6; padding: 8px; text-align: left; }
        th { background-color: #f8f9fa; }
    </style>
</head>
<body>
    <h1>Test Execution Report</h1>
    <p>
        <span class="passed">{{ metrics.summary.passed_scenarios }} passed</span>,
        <span class="failed">{{ metrics.summary.failed_scenarios }} failed</span>,
        <span class="skipped">{{ metrics.summary.skipped_scenarios }} skipped</span>
        ({{ metrics.summary.scenario_pass_rate }}% in {{ metrics.summary.total_duration }}s)
    </p>
    <table>
        <thead><tr><th>Feature</th><th>Scenario</th><th>Status</th><th>Duration</th></tr></thead>
        <tbody>
        {% for scenario in metrics.detailed_scenarios %}
            <tr>
                <td>{{ scenario.feature }}</td>
                <td>{{ scenario.name }}</td>
                <td class="{{ scenario.status }}">{{ scenario.status }}</td>
                <td>{{ scenario.duration }}s</td>
            </tr>
        {% endfor %}
        </tbody>
    </table>
</body>
</html>
""")
