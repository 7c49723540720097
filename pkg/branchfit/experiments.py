"""
Reproducible experiments wired from the library modules.

Every experiment takes an ExperimentConfig (one JSON document), derives all
randomness from (seed, m, trial[, stream]) and writes CSV files through
utils.report_manager with a metadata preamble. Row order never depends on
thread scheduling.
"""
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from branchfit.cfn_model import (ENUMERATION_LEAF_LIMIT, ParamBox, SampleSet,
                                 all_patterns,
                                 as_edge_vector, check_box_nesting,
                                 gauge_classes, load_samples_csv,
                                 make_param_box, pattern_to_string,
                                 random_in_ball, sample_spins,
                                 save_samples_csv, spawn_rng,
                                 string_to_pattern)
from branchfit.errors import ConfigError, InvalidParameterError, TreeFormatError
from branchfit.landscape_probe import (SCAN_POINT_BUDGET, EdgeBounds, EmpiricalSource,
                                       PopulationSource, box_scan,
                                       estimation_error_bound,
                                       hessian_deviation_experiment,
                                       sample_complexity,
                                       statistical_sample_requirement)
from branchfit.likelihood_engine import log_likelihood
from branchfit.optimizer import (OptConfig, OptTrace, confinement_report, fit,
                                 multi_start, trajectory_bounds)
from branchfit.tree_core import (Tree, build_named, describe_edges, diameter,
                                 parse_newick, read_newick_file, to_newick)
from utils.config_manager import get_config
from utils import logger
from utils.file_reader import read_file
from utils.parallel_runner import TrialRunner
from utils.report_manager import CsvReport, ReportManager, config_hash

log = logger.customLogger()

KINDS = ('error-scaling', 'convergence', 'landscape', 'steel-demo', 'bernstein', 'simulate', 'fit')
GAP_FLOOR = 1e-14


def _from_mapping(cls, doc: Any, where: str):
    if doc is None:
        return cls()
    if not isinstance(doc, dict):
        raise ConfigError(f"'{where}' must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigError(f"Unknown key(s) in '{where}': {', '.join(unknown)}")
    return cls(**doc)


@dataclass(frozen=True)
class TreeSpec:
    newick: Optional[str] = None
    path: Optional[str] = None
    builder: Optional[str] = None
    size: Optional[int] = None

    def build(self) -> Tree:
        chosen = [x for x in (self.newick, self.path, self.builder) if x is not None]
        if len(chosen) != 1:
            raise ConfigError("tree needs exactly one of 'newick', 'path' or 'builder'")
        try:
            if self.newick is not None:
                return parse_newick(self.newick)
            if self.path is not None:
                return read_newick_file(self.path)
            if self.size is None:
                raise ConfigError(f"tree builder '{self.builder}' needs a 'size'")
            return build_named(self.builder, int(self.size))
        except (TreeFormatError, InvalidParameterError, FileNotFoundError) as e:
            raise ConfigError(f"Cannot build tree: {e}") from e


@dataclass(frozen=True)
class BoxSpec:
    c_bar: float = 0.5
    c: float = 1.0
    C: float = 2.0
    C_bar: float = 4.0


@dataclass(frozen=True)
class ThetaSpec:
    placement: str = "center"
    values: Optional[Tuple[float, ...]] = None
    seed: Optional[int] = None


@dataclass(frozen=True)
class OptimizerSpec:
    sweep_tolerance: float = 1e-10
    solver_tolerance: float = 1e-12
    max_sweeps: int = 500
    edge_order: Optional[Tuple[int, ...]] = None
    clamp: bool = False
    step_size: Optional[float] = None


@dataclass(frozen=True)
class SteelSpec:
    pairs: Optional[Tuple[Tuple[str, str], ...]] = None
    fixture: Optional[str] = "steel_witness"
    search: bool = False
    starts: int = 32
    start_range: float = 0.9
    boundary_margin: float = 1e-6
    separation: float = 0.05
    objective_tol: float = 1e-9
    slice_edges: Tuple[int, int] = (0, 2)
    slice_points: int = 41


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    tree: TreeSpec = field(default_factory=TreeSpec)
    delta: float = 0.05
    box: BoxSpec = field(default_factory=BoxSpec)
    theta_star: ThetaSpec = field(default_factory=ThetaSpec)
    m: Tuple[int, ...] = (10000,)
    trials: int = 1
    seed: int = 0
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    init_radius: Optional[float] = None
    grid_points_per_edge: int = 3
    eps: float = 0.05
    complexity_constant: float = 1.0
    probability: float = 0.5
    population: str = "fixed"
    random_points: int = 64
    steel: SteelSpec = field(default_factory=SteelSpec)
    output_dir: str = "results"

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("Experiment config must be a JSON object")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - names)
        if unknown:
            raise ConfigError(f"Unknown key(s) in experiment config: {', '.join(unknown)}")
        if 'kind' not in doc:
            raise ConfigError("Experiment config needs a 'kind'")
        args = dict(doc)
        args['tree'] = _from_mapping(TreeSpec, doc.get('tree'), 'tree')
        args['box'] = _from_mapping(BoxSpec, doc.get('box'), 'box')
        args['theta_star'] = _from_mapping(ThetaSpec, doc.get('theta_star'), 'theta_star')
        args['optimizer'] = _from_mapping(OptimizerSpec, doc.get('optimizer'), 'optimizer')
        args['steel'] = _from_mapping(SteelSpec, doc.get('steel'), 'steel')
        m = doc.get('m', [10000])
        args['m'] = tuple(int(v) for v in (m if isinstance(m, (list, tuple)) else [m]))
        try:
            config = cls(**args)
        except TypeError as e:
            raise ConfigError(f"Invalid experiment config: {e}") from e
        config.validate()
        return config

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding='utf-8'))
        except FileNotFoundError as e:
            log.error(f"Config file not found: {path}")
            raise ConfigError(f"Config file not found: {path}") from e
        except json.JSONDecodeError as e:
            log.error(f"Error decoding JSON from config file: {path}. Error: {e}")
            raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
        return cls.from_dict(doc)

    def to_dict(self) -> Dict[str, Any]:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    @property
    def hash(self) -> str:
        """sha256 of the canonical config; the output location is not part of the experiment"""
        doc = self.to_dict()
        doc.pop('output_dir', None)
        return config_hash(doc)

    def with_overrides(self, seed: Optional[int] = None, tree_path: Optional[str] = None,
                       output_dir: Optional[str] = None) -> "ExperimentConfig":
        changes: Dict[str, Any] = {}
        if seed is not None:
            changes['seed'] = int(seed)
        if tree_path is not None:
            changes['tree'] = TreeSpec(path=str(tree_path))
        if output_dir is not None:
            changes['output_dir'] = str(output_dir)
        updated = dataclasses.replace(self, **changes)
        updated.validate()
        return updated

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"Unknown experiment kind '{self.kind}'; expected one of {', '.join(KINDS)}")
        b = self.box
        try:
            check_box_nesting(b.c_bar, b.c, b.C, b.C_bar)
            make_param_box(self.delta, b.c, b.C)
            make_param_box(self.delta, b.c_bar, b.C_bar)
        except InvalidParameterError as e:
            raise ConfigError(str(e)) from e
        if not self.m or any(v < 1 for v in self.m):
            raise ConfigError(f"Every m must be >= 1, got {list(self.m)}")
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if self.theta_star.placement not in ('center', 'explicit', 'random'):
            raise ConfigError(f"Unknown theta_star placement '{self.theta_star.placement}'")
        if self.theta_star.placement == 'explicit' and not self.theta_star.values:
            raise ConfigError("theta_star placement 'explicit' needs 'values'")
        if self.population not in ('fixed', 'matched'):
            raise ConfigError(f"population must be 'fixed' or 'matched', got '{self.population}'")
        if not 0 < self.eps < 1:
            raise ConfigError(f"eps must lie in (0, 1), got {self.eps}")
        if not 0 < self.probability < 1:
            raise ConfigError(f"probability must lie in (0, 1), got {self.probability}")
        if self.grid_points_per_edge < 2:
            raise ConfigError("grid_points_per_edge must be >= 2")
        if self.kind == 'error-scaling':
            distinct = sorted(set(self.m))
            if len(distinct) < 3 or distinct[-1] < 100 * distinct[0]:
                raise ConfigError("error-scaling needs >= 3 distinct m values spanning >= 2 decades")
        if self.kind == 'convergence' and len(self.m) != 1:
            raise ConfigError("convergence runs use a single m")

    # derived objects

    @property
    def truth_box(self) -> ParamBox:
        return make_param_box(self.delta, self.box.c, self.box.C)

    @property
    def estimation_box(self) -> ParamBox:
        return make_param_box(self.delta, self.box.c_bar, self.box.C_bar)

    @property
    def radius(self) -> float:
        return 0.5 * self.delta if self.init_radius is None else float(self.init_radius)

    def build_tree(self) -> Tree:
        return self.tree.build()

    def check_scan_budget(self, tree: Tree, tensor_edge_limit: int) -> None:
        if tree.n_edges > tensor_edge_limit:
            return
        size = self.grid_points_per_edge ** tree.n_edges
        if size > SCAN_POINT_BUDGET:
            raise ConfigError(f"grid_points_per_edge={self.grid_points_per_edge} on {tree.n_edges} edges gives a "
                              f"{size}-point tensor grid, above the scan budget {SCAN_POINT_BUDGET}")

    def true_theta(self, tree: Tree) -> np.ndarray:
        spec = self.theta_star
        if spec.placement == 'center':
            return self.truth_box.center(tree.n_edges)
        if spec.placement == 'explicit':
            try:
                return as_edge_vector(tree, spec.values)
            except InvalidParameterError as e:
                raise ConfigError(f"theta_star values: {e}") from e
        rng = spawn_rng(self.seed if spec.seed is None else spec.seed, 0x7E7A)
        return self.truth_box.sample(tree.n_edges, rng)

    def opt_config(self) -> OptConfig:
        spec = self.optimizer
        try:
            return OptConfig(
                sweep_tolerance=spec.sweep_tolerance,
                solver_tolerance=spec.solver_tolerance,
                max_sweeps=spec.max_sweeps,
                edge_order=tuple(spec.edge_order) if spec.edge_order is not None else None,
                clamp_box=self.estimation_box if spec.clamp else None,
                step_size=spec.step_size,
            )
        except InvalidParameterError as e:
            raise ConfigError(f"optimizer: {e}") from e


@dataclass
class ExperimentResult:
    kind: str
    reports: List[CsvReport]
    summary: Dict[str, Any]
    summary_path: Optional[Path] = None

    def report(self, file_name: str) -> CsvReport:
        for r in self.reports:
            if r.path.name == file_name:
                return r
        raise KeyError(file_name)


def _reporter(config: ExperimentConfig, tree: Tree, seed: Optional[int] = None) -> ReportManager:
    b = config.box
    digits = get_config().get_run_config()['float_digits']
    return ReportManager(config.output_dir, float_digits=digits, metadata={
        'kind': config.kind,
        'config_hash': config.hash,
        'seed': config.seed if seed is None else seed,
        'tree': to_newick(tree),
        'edges': describe_edges(tree),
        'delta': config.delta,
        'box': {'c_bar': b.c_bar, 'c': b.c, 'C': b.C, 'C_bar': b.C_bar},
    })


def _theta_header(tree: Tree) -> List[str]:
    return [f'theta_{e}' for e in range(tree.n_edges)]


# error scaling

def error_trial(tree: Tree, theta_star: np.ndarray, m: int, trial: int, seed: int,
                opt: OptConfig, radius: float) -> Tuple[float, bool]:
    """One draw at theta_star, one fit from a perturbed start; returns (L2 error, converged)."""
    samples = sample_spins(tree, theta_star, seed, m, stream=(m, trial))
    start = random_in_ball(theta_star, radius, spawn_rng(seed, m, trial, 1), bounds=opt.interval())
    trace = fit(tree, start, samples, opt)
    return float(np.linalg.norm(trace.final - theta_star)), trace.termination == 'converged'


def error_trials(tree: Tree, theta_star, m: int, trials: int, seed: int, opt: Optional[OptConfig] = None,
                 radius: float = 0.025, workers: Optional[int] = None) -> List[Tuple[float, bool]]:
    opt = opt or OptConfig()
    theta_star = as_edge_vector(tree, theta_star)
    return TrialRunner(workers).run(
        lambda trial: error_trial(tree, theta_star, m, trial, seed, opt, radius), range(trials))


def loglog_slope(ms: Sequence[float], values: Sequence[float]) -> float:
    return float(np.polyfit(np.log(ms), np.log(values), 1)[0])


def run_error_scaling(config: ExperimentConfig, workers: Optional[int] = None) -> ExperimentResult:
    tree = config.build_tree()
    theta_star = config.true_theta(tree)
    opt = config.opt_config()
    keys = [(m, trial) for m in sorted(set(config.m)) for trial in range(config.trials)]
    log.info(f"error-scaling on {tree.describe()}: m={sorted(set(config.m))}, {config.trials} trials")

    outcomes = TrialRunner(workers).run(
        lambda key: error_trial(tree, theta_star, key[0], key[1], config.seed, opt, config.radius),
        keys, label="error trial")
    rows = [[m, trial, err, ok] for (m, trial), (err, ok) in zip(keys, outcomes)]

    summary_rows = []
    fit_ms, fit_medians = [], []
    E = tree.n_edges
    for m in sorted(set(config.m)):
        errs = [r[2] for r in rows if r[0] == m and r[3]]
        excluded = sum(1 for r in rows if r[0] == m and not r[3])
        if excluded:
            log.warning(f"m={m}: {excluded} trial(s) did not converge and are excluded")
        if not errs:
            summary_rows.append([m, float('nan'), float('nan'), float('nan'), float('nan'), 0, excluded])
            continue
        median = float(np.median(errs))
        quantile = float(np.quantile(errs, 1.0 - config.eps))
        normalized = quantile / (math.sqrt(E / m) * math.log(E / config.eps)) if E > config.eps else float('nan')
        summary_rows.append([m, median, quantile, median * math.sqrt(m), normalized, len(errs), excluded])
        fit_ms.append(m)
        fit_medians.append(median)

    slope = loglog_slope(fit_ms, fit_medians) if len(fit_ms) >= 2 else float('nan')
    reporter = _reporter(config, tree)
    reports = [
        reporter.write_csv('error_scaling.csv', ['m', 'trial', 'error', 'converged'], rows),
        reporter.write_csv('error_scaling_summary.csv',
                           ['m', 'median_error', 'quantile_error', 'median_times_sqrt_m',
                            'bound_normalized_quantile', 'n_converged', 'n_excluded'],
                           summary_rows, {'quantile': 1.0 - config.eps}),
    ]
    summary = {'loglog_slope': slope, 'theta_star': theta_star.tolist(),
               'per_m': {str(r[0]): {'median_error': r[1], 'quantile_error': r[2]} for r in summary_rows}}
    log.info(f"error-scaling log-log slope of median error: {slope:.4f}")
    return ExperimentResult('error-scaling', reports, summary,
                            reporter.write_summary('error_scaling_summary.json', summary))


# convergence

@dataclass(frozen=True)
class RateFit:
    slope: float
    r_squared: float
    points: int

    @property
    def contraction(self) -> float:
        return math.exp(self.slope)


def fit_log_gap(gaps: Sequence[float], floor: float = GAP_FLOOR) -> RateFit:
    """Least-squares line through log(gap_k) over the leading sweeps with gap above floor."""
    ks, logs = [], []
    for k, gap in enumerate(gaps):
        if gap <= floor:
            break
        ks.append(k)
        logs.append(math.log(gap))
    if len(ks) < 2:
        log.warning(f"Only {len(ks)} gap value(s) above {floor}; rate fit is degenerate")
        return RateFit(slope=-math.inf, r_squared=1.0, points=len(ks))
    slope, intercept = np.polyfit(ks, logs, 1)
    predicted = slope * np.array(ks) + intercept
    ss_res = float(np.sum((np.array(logs) - predicted) ** 2))
    ss_tot = float(np.sum((np.array(logs) - np.mean(logs)) ** 2))
    r2 = 1.0 if ss_tot == 0.0 or len(ks) == 2 else 1.0 - ss_res / ss_tot
    return RateFit(slope=float(slope), r_squared=r2, points=len(ks))


def reference_rate(tree: Tree, samples: SampleSet, trace: OptTrace, extra: Sequence[np.ndarray] = (),
                   grid_points_per_edge: int = 2, random_points: int = 64, seed: int = 0) -> Dict[str, float]:
    """1 - rho/L with rho = -sup lambda_max and L = min_e sup |H_ee| over the trajectory's bounding box."""
    lower, upper = trajectory_bounds(trace, extra)
    report = box_scan(tree, EmpiricalSource(samples), EdgeBounds(lower, upper), grid_points_per_edge,
                      seed=seed, random_points=random_points)
    rho = -report.sup_lambda_max
    L = float(np.min(np.max(np.abs(report.diagonals), axis=0)))
    return {'rho_hat': rho, 'L_hat': L, 'reference_rate': 1.0 - rho / L}


def convergence_trial(tree: Tree, theta_star: np.ndarray, m: int, trial: int, seed: int,
                      opt: OptConfig, radius: float, random_points: int = 64) -> Dict[str, Any]:
    samples = sample_spins(tree, theta_star, seed, m, stream=(m, trial))
    start = random_in_ball(theta_star, radius, spawn_rng(seed, m, trial, 1), bounds=opt.interval())
    trace = fit(tree, start, samples, opt)
    long_run = fit(tree, trace.final, samples,
                   dataclasses.replace(opt, sweep_tolerance=1e-13, solver_tolerance=1e-15, max_sweeps=1000))
    best = max(long_run.objectives[-1], max(trace.objectives))
    optimum = long_run.final

    gaps = [max(best - obj, 0.0) for obj in trace.objectives]
    distances = [float(np.linalg.norm(optimum - theta)) for theta in trace.iterates]
    rate = fit_log_gap(gaps)
    ref = reference_rate(tree, samples, trace, [optimum], seed=seed, random_points=random_points)
    return {
        'trace': trace, 'gaps': gaps, 'distances': distances, 'fit': rate,
        'nonincreasing': bool(np.all(np.diff(gaps) <= 1e-12)), **ref,
    }


def run_convergence(config: ExperimentConfig, workers: Optional[int] = None) -> ExperimentResult:
    tree = config.build_tree()
    theta_star = config.true_theta(tree)
    opt = config.opt_config()
    m = config.m[0]
    log.info(f"convergence on {tree.describe()}: m={m}, {config.trials} trials")

    results = TrialRunner(workers).run(
        lambda trial: convergence_trial(tree, theta_star, m, trial, config.seed, opt, config.radius,
                                        config.random_points),
        range(config.trials), label="convergence trial")

    rows, summary_rows = [], []
    for trial, res in enumerate(results):
        for k, (obj, gap, dist) in enumerate(zip(res['trace'].objectives, res['gaps'], res['distances'])):
            rows.append([trial, k, obj, gap, dist])
        rate: RateFit = res['fit']
        summary_rows.append([trial, res['trace'].sweeps, rate.contraction, rate.r_squared, rate.points,
                             res['rho_hat'], res['L_hat'], res['reference_rate'], res['nonincreasing']])

    reporter = _reporter(config, tree)
    reports = [
        reporter.write_csv('convergence.csv', ['trial', 'sweep', 'objective', 'gap', 'distance'], rows),
        reporter.write_csv('convergence_summary.csv',
                           ['trial', 'sweeps', 'contraction', 'r_squared', 'fit_points',
                            'rho_hat', 'L_hat', 'reference_rate', 'gap_nonincreasing'],
                           summary_rows, {'gap_floor': GAP_FLOOR}),
    ]
    summary = {
        'median_contraction': float(np.median([r[2] for r in summary_rows])),
        'median_reference_rate': float(np.median([r[7] for r in summary_rows])),
        'min_r_squared': float(min(r[3] for r in summary_rows)),
    }
    return ExperimentResult('convergence', reports, summary,
                            reporter.write_summary('convergence_summary.json', summary))


# landscape

def run_landscape(config: ExperimentConfig, workers: Optional[int] = None) -> ExperimentResult:
    tree = config.build_tree()
    limits = get_config().get_numerics_config()
    config.check_scan_budget(tree, limits['scan_tensor_edge_limit'])
    theta_star = config.true_theta(tree)
    box = config.estimation_box
    m = config.m[0]
    samples = sample_spins(tree, theta_star, config.seed, m, stream=(m, 0))
    reporter = _reporter(config, tree)
    log.info(f"landscape scan on {tree.describe()}, box [{box.low:.4f}, {box.high:.4f}]")

    scan_args = dict(seed=config.seed, random_points=config.random_points,
                     tensor_edge_limit=limits['scan_tensor_edge_limit'])
    scans = {'empirical': box_scan(tree, EmpiricalSource(samples), box, config.grid_points_per_edge, **scan_args)}
    if tree.n_leaves <= min(limits['enumeration_leaf_limit'], ENUMERATION_LEAF_LIMIT):
        source = PopulationSource(None if config.population == 'matched' else theta_star)
        scans['exact'] = box_scan(tree, source, box, config.grid_points_per_edge, **scan_args)

    reports = []
    summary_rows = []
    for name, report in scans.items():
        reports.append(reporter.write_csv(f'landscape_{name}.csv', report.header(), report.rows(),
                                          {'mode': report.mode, 'grid': report.grid_description}))
        summary_rows.append([f'{name}_scanned_inf_lambda_min', report.inf_lambda_min])
        summary_rows.append([f'{name}_scanned_sup_lambda_max', report.sup_lambda_max])
        summary_rows.append([f'{name}_points', len(report.points)])

    diam = diameter(tree)
    requirement = sample_complexity(config.delta, diam, config.eps, config.complexity_constant)
    summary_rows.append(['theoretical_requirement', requirement])
    summary_rows.append(['statistical_requirement', statistical_sample_requirement(
        tree.n_edges, config.delta, config.box.c_bar, config.complexity_constant, config.eps)])
    reports.append(reporter.write_csv('landscape_summary.csv', ['quantity', 'value'], summary_rows,
                                      {'m': m, 'eps': config.eps, 'complexity_constant': config.complexity_constant}))
    summary = {row[0]: row[1] for row in summary_rows}
    return ExperimentResult('landscape', reports, summary,
                            reporter.write_summary('landscape_summary.json', summary))


# Steel-type multiple maxima

@dataclass
class PairAnalysis:
    pair: Tuple[str, str]
    finals: List[np.ndarray]
    objectives: List[float]
    best_objective: float
    limits: List[np.ndarray]
    gauge_class_count: int

    @property
    def witness(self) -> bool:
        return len(self.limits) >= 2


def analyse_pair(tree: Tree, pair: Tuple[str, str], starts: np.ndarray, opt: OptConfig,
                 separation: float = 0.05, objective_tol: float = 1e-9) -> PairAnalysis:
    """Multi-start fits on a 2-sample instance; limits are near-best finals at least ``separation`` apart in L-inf."""
    samples = SampleSet.from_raw(np.array([string_to_pattern(p) for p in pair]))
    samples.check_tree(tree)
    traces = multi_start(tree, samples, list(starts), opt)
    finals = [t.final for t in traces]
    objectives = [t.objectives[-1] for t in traces]
    best = max(objectives)

    limits: List[np.ndarray] = []
    for theta, obj in zip(finals, objectives):
        if obj < best - objective_tol:
            continue
        if all(np.max(np.abs(theta - rep)) >= separation for rep in limits):
            limits.append(theta)
    n_classes = len(set(gauge_classes(tree, limits))) if limits else 0
    return PairAnalysis(pair=tuple(pair), finals=finals, objectives=objectives, best_objective=best,
                        limits=limits, gauge_class_count=n_classes)


def steel_pairs(config: ExperimentConfig, tree: Tree) -> Tuple[List[Tuple[str, str]], int, Dict[str, Any]]:
    """Pattern pairs to examine, the seed to use and where they came from."""
    spec = config.steel
    if spec.pairs:
        return [tuple(p) for p in spec.pairs], config.seed, {'source': 'config'}
    if spec.search:
        patterns = [pattern_to_string(p) for p in all_patterns(tree.n_leaves)]
        pairs = [(patterns[i], patterns[j]) for i in range(len(patterns)) for j in range(i, len(patterns))]
        return pairs, config.seed, {'source': 'search'}
    if spec.fixture:
        fixture = read_file('steel', spec.fixture)
        return [tuple(p) for p in fixture['pairs']], int(fixture['seed']), {'source': f"fixture:{spec.fixture}"}
    raise ConfigError("steel-demo needs 'pairs', 'search' or a 'fixture'")


def steel_starts(seed: int, pair_index: int, starts: int, n_edges: int, start_range: float) -> np.ndarray:
    return spawn_rng(seed, pair_index, 0x57E1).uniform(-start_range, start_range, size=(starts, n_edges))


def run_steel_demo(config: ExperimentConfig, workers: Optional[int] = None) -> ExperimentResult:
    tree = config.build_tree()
    if tree.n_leaves != 4:
        raise ConfigError(f"steel-demo runs on a quartet, got {tree.n_leaves} leaves")
    spec = config.steel
    pairs, seed, origin = steel_pairs(config, tree)
    margin = spec.boundary_margin
    opt = dataclasses.replace(config.opt_config(), bounds=(-1.0 + margin, 1.0 - margin), clamp_box=None)
    log.info(f"steel-demo on {len(pairs)} pattern pair(s) from {origin['source']}, {spec.starts} starts each")

    analyses = TrialRunner(workers).run(
        lambda idx: analyse_pair(tree, pairs[idx],
                                 steel_starts(seed, idx, spec.starts, tree.n_edges, spec.start_range),
                                 opt, spec.separation, spec.objective_tol),
        range(len(pairs)), label="pattern pair")

    rows, summary_rows = [], []
    for analysis in analyses:
        label = "|".join(analysis.pair)
        for init_id, (theta, obj) in enumerate(zip(analysis.finals, analysis.objectives)):
            rows.append([label, init_id] + [float(v) for v in theta] + [obj])
        summary_rows.append([label, analysis.best_objective, len(analysis.limits),
                             analysis.gauge_class_count, analysis.witness])

    witnesses = [a for a in analyses if a.witness]
    shown = witnesses[0] if witnesses else analyses[0]
    a, b = spec.slice_edges
    grid = np.linspace(-1.0 + 0.01, 1.0 - 0.01, spec.slice_points)
    samples = SampleSet.from_raw(np.array([string_to_pattern(p) for p in shown.pair]))
    base = shown.limits[0] if shown.limits else shown.finals[0]
    slice_rows = []
    for ta in grid:
        for tb in grid:
            point = base.copy()
            point[a], point[b] = ta, tb
            slice_rows.append([float(ta), float(tb), log_likelihood(tree, point, samples)])

    reporter = _reporter(config, tree, seed)
    extra = dict(origin, starts=spec.starts, separation=spec.separation, objective_tol=spec.objective_tol)
    reports = [
        reporter.write_csv('steel_demo.csv', ['pattern_pair', 'init_id'] + _theta_header(tree) + ['objective'],
                           rows, extra),
        reporter.write_csv('steel_summary.csv',
                           ['pattern_pair', 'best_objective', 'distinct_limits', 'gauge_classes', 'witness'],
                           summary_rows, extra),
        reporter.write_csv('steel_slice.csv', [f'theta_{a}', f'theta_{b}', 'objective'], slice_rows,
                           {'pattern_pair': "|".join(shown.pair), 'fixed_point': base.tolist()}),
    ]
    summary = {
        'witness_found': bool(witnesses),
        'witness_pairs': ["|".join(w.pair) for w in witnesses],
        'seed': seed,
    }
    if not witnesses:
        log.warning("No pattern pair with two distinct equal-objective limits was found")
    return ExperimentResult('steel-demo', reports, summary, reporter.write_summary('steel_summary.json', summary))


# Bernstein comparison

def run_bernstein(config: ExperimentConfig, workers: Optional[int] = None) -> ExperimentResult:
    tree = config.build_tree()
    leaf_limit = min(get_config().get_numerics_config()['enumeration_leaf_limit'], ENUMERATION_LEAF_LIMIT)
    if tree.n_leaves > leaf_limit:
        raise ConfigError(f"bernstein needs an enumerable tree (<= {leaf_limit} leaves)")
    theta_star = config.true_theta(tree)
    box = config.estimation_box
    ms = sorted(set(config.m))

    per_m = TrialRunner(workers).run(
        lambda m: hessian_deviation_experiment(tree, theta_star, box, m, config.trials, config.seed,
                                               c_bar=config.box.c_bar,
                                               grid_points_per_edge=config.grid_points_per_edge,
                                               probability=config.probability,
                                               random_points=config.random_points),
        ms, label="sample size")

    rows, summary_rows = [], []
    for m, dev_rows in zip(ms, per_m):
        for r in dev_rows:
            rows.append([r.m, r.trial, r.sup_deviation, r.bernstein_level, r.bound_at_observed,
                         r.covering_number, r.weyl_gap])
        devs = np.array([r.sup_deviation for r in dev_rows])
        level = dev_rows[0].bernstein_level
        summary_rows.append([m, float(np.median(devs)), float(np.quantile(devs, 0.9)), level,
                             float(np.mean(devs >= level)), config.probability])

    reporter = _reporter(config, tree)
    reports = [
        reporter.write_csv('bernstein.csv',
                           ['m', 'trial', 'sup_deviation', 'bernstein_level', 'bound_at_observed',
                            'covering_number', 'weyl_gap'], rows),
        reporter.write_csv('bernstein_summary.csv',
                           ['m', 'median_deviation', 'q90_deviation', 'bernstein_level',
                            'exceedance_fraction', 'probability'], summary_rows),
    ]
    summary = {str(r[0]): {'median_deviation': r[1], 'bernstein_level': r[3], 'exceedance_fraction': r[4]}
               for r in summary_rows}
    return ExperimentResult('bernstein', reports, summary,
                            reporter.write_summary('bernstein_summary.json', summary))


# plumbing subcommands

def run_simulate(config: ExperimentConfig, workers: Optional[int] = None) -> ExperimentResult:
    tree = config.build_tree()
    theta_star = config.true_theta(tree)
    m = config.m[0]
    samples = sample_spins(tree, theta_star, config.seed, m, stream=(m, 0))
    reporter = _reporter(config, tree)
    preamble = [line[2:] for line in reporter.preamble({'m': m, 'theta_star': theta_star.tolist()})]
    path = save_samples_csv(samples, Path(config.output_dir) / 'samples.csv', preamble)
    report = CsvReport(path=path, header=['pattern', 'count'],
                       rows=[[pattern_to_string(p), int(c)] for p, c in zip(samples.patterns, samples.counts)])
    summary = {'m': m, 'distinct_patterns': int(samples.patterns.shape[0]), 'theta_star': theta_star.tolist()}
    log.info(f"Simulated {m} samples ({samples.patterns.shape[0]} distinct patterns) to {path}")
    return ExperimentResult('simulate', [report], summary, reporter.write_summary('simulate_summary.json', summary))


def run_fit(config: ExperimentConfig, samples_path=None, workers: Optional[int] = None) -> ExperimentResult:
    tree = config.build_tree()
    if samples_path is None:
        samples_path = Path(config.output_dir) / 'samples.csv'
    try:
        samples = load_samples_csv(samples_path, tree)
    except FileNotFoundError as e:
        raise ConfigError(f"Samples file not found: {samples_path}") from e
    except InvalidParameterError as e:
        raise ConfigError(f"Samples file {samples_path}: {e}") from e
    box = config.estimation_box
    trace = fit(tree, box.center(tree.n_edges), samples, config.opt_config())
    confinement = confinement_report(trace, box)

    reporter = _reporter(config, tree)
    report = reporter.write_csv('fit_trace.csv', OptTrace.header(tree.n_edges), trace.rows(),
                                {'samples': str(samples_path), 'termination': trace.termination})
    summary = {
        'theta_hat': trace.final.tolist(),
        'objective': trace.objectives[-1],
        'sweeps': trace.sweeps,
        'termination': trace.termination,
        'all_interior': confinement.all_interior,
        'first_escape_sweep': confinement.first_escape_sweep,
        'error_bound_shape': estimation_error_bound(1.0, tree.n_edges, samples.m, config.eps),
    }
    return ExperimentResult('fit', [report], summary, reporter.write_summary('fit_summary.json', summary))


EXPERIMENTS: Dict[str, Callable[..., ExperimentResult]] = {
    'error-scaling': run_error_scaling,
    'convergence': run_convergence,
    'landscape': run_landscape,
    'steel-demo': run_steel_demo,
    'bernstein': run_bernstein,
    'simulate': run_simulate,
    'fit': run_fit,
}


def run_experiment(config: ExperimentConfig, **kwargs) -> ExperimentResult:
    return EXPERIMENTS[config.kind](config, **kwargs)
