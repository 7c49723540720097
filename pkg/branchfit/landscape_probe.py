"""
Likelihood landscape probes: population and empirical Hessians, extreme
eigenvalues over a parameter box, and the concentration / sample-size
calculators the landscape statements are phrased in.

Aggregates in a LandscapeReport are extremes over the scanned points only.
"""
import itertools
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import brentq

from branchfit.cfn_model import (ENUMERATION_LEAF_LIMIT, EdgeVector, ParamBox,
                                 SampleSet, as_edge_vector, exact_pattern_table,
                                 sample_spins, spawn_rng)
from branchfit.errors import InvalidParameterError
from branchfit.likelihood_engine import (deterministic_bounds,
                                         per_sample_hessians, weighted_hessian)
from branchfit.tree_core import Tree, diameter
from utils import logger

log = logger.customLogger()

SYMMETRY_TOL = 1e-12
TENSOR_EDGE_LIMIT = 6
RANDOM_SCAN_POINTS = 64
SCAN_POINT_BUDGET = 100_000


@dataclass(frozen=True)
class MonteCarlo:
    m: int
    seed: int


@dataclass(frozen=True)
class PopulationSource:
    """Exact expectation under theta_star; None means the truth equals each scanned point."""
    theta_star: Optional[EdgeVector] = None

    @property
    def label(self) -> str:
        return "population-exact" if self.theta_star is not None else "population-matched"


@dataclass(frozen=True)
class EmpiricalSource:
    samples: SampleSet

    @property
    def label(self) -> str:
        return f"empirical(m={self.samples.m})"


Source = Union[PopulationSource, EmpiricalSource, SampleSet]


def population_hessian(tree: Tree, theta_star, theta_hat, mode: Union[str, MonteCarlo] = "exact") -> np.ndarray:
    theta_hat = as_edge_vector(tree, theta_hat)
    theta_star = as_edge_vector(tree, theta_star)
    if isinstance(mode, MonteCarlo):
        return monte_carlo_hessian(tree, theta_star, theta_hat, mode.m, mode.seed)[0]
    if mode != "exact":
        raise InvalidParameterError(f"Unknown population Hessian mode {mode!r}")
    patterns, probs = exact_pattern_table(tree, theta_star, ENUMERATION_LEAF_LIMIT)
    return weighted_hessian(tree, theta_hat, patterns, probs)


def monte_carlo_hessian(tree: Tree, theta_star, theta_hat, m: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Empirical Hessian of m sampled patterns and the entrywise standard errors."""
    samples = sample_spins(tree, theta_star, seed, m)
    per = per_sample_hessians(tree, theta_hat, samples.patterns)
    w = samples.weights
    mean = np.tensordot(w, per, axes=(0, 0))
    second = np.tensordot(w, per ** 2, axes=(0, 0))
    var = np.maximum(second - mean ** 2, 0.0)
    return 0.5 * (mean + mean.T), np.sqrt(var / samples.m)


def source_hessian(tree: Tree, source: Source, theta_hat: EdgeVector) -> np.ndarray:
    if isinstance(source, SampleSet):
        source = EmpiricalSource(source)
    if isinstance(source, EmpiricalSource):
        return weighted_hessian(tree, theta_hat, source.samples.patterns, source.samples.weights)
    truth = theta_hat if source.theta_star is None else source.theta_star
    return population_hessian(tree, truth, theta_hat, "exact")


def extreme_eigenvalues(H: np.ndarray, tol: float = 1e-12) -> Tuple[float, float]:
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise InvalidParameterError(f"Expected a square matrix, got shape {H.shape}")
    asym = float(np.max(np.abs(H - H.T))) if H.size else 0.0
    if asym > SYMMETRY_TOL:
        log.error(f"Matrix is not symmetric (max asymmetry {asym:.3e})")
        raise InvalidParameterError(f"Matrix is not symmetric: max |H - H^T| = {asym:.3e}")
    eig = np.linalg.eigvalsh(0.5 * (H + H.T))
    return float(eig[0]), float(eig[-1])


def spectral_norm(M: np.ndarray) -> float:
    lo, hi = extreme_eigenvalues(M)
    return max(abs(lo), abs(hi))


@dataclass(frozen=True, eq=False)
class EdgeBounds:
    """Per-edge scan interval; ParamBox is the uniform special case."""
    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def uniform(cls, box: ParamBox, n_edges: int) -> "EdgeBounds":
        return cls(np.full(n_edges, box.low), np.full(n_edges, box.high))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def grid(self, e: int, points: int) -> np.ndarray:
        return np.unique(np.linspace(self.lower[e], self.upper[e], points))


def scan_points(bounds: EdgeBounds, grid_points_per_edge: int, seed: int = 0,
                tensor_edge_limit: int = TENSOR_EDGE_LIMIT,
                random_points: int = RANDOM_SCAN_POINTS) -> Tuple[np.ndarray, str]:
    """Scanned parameter vectors and a description of the grid policy used."""
    if grid_points_per_edge < 2:
        raise InvalidParameterError(f"grid_points_per_edge must be >= 2, got {grid_points_per_edge}")
    n_edges = bounds.lower.shape[0]
    axes = [bounds.grid(e, grid_points_per_edge) for e in range(n_edges)]

    if n_edges <= tensor_edge_limit:
        size = int(np.prod([len(a) for a in axes]))
        if size > SCAN_POINT_BUDGET:
            raise InvalidParameterError(f"Tensor grid of {size} points exceeds the scan budget {SCAN_POINT_BUDGET}")
        points = np.array(list(itertools.product(*axes)), dtype=float)
        return points, f"tensor grid, {grid_points_per_edge} values per edge"

    center = bounds.center
    rows = [center.copy()]
    for e, axis in enumerate(axes):
        for value in axis:
            point = center.copy()
            point[e] = value
            if not np.allclose(point, center):
                rows.append(point)
    rng = spawn_rng(seed, 0xB0C5)
    rows.extend(rng.uniform(bounds.lower, bounds.upper, size=(random_points, n_edges)))
    description = (f"center slices ({grid_points_per_edge} values per edge) plus {random_points} "
                   f"uniform interior points; not a full tensor grid")
    return np.array(rows), description


@dataclass
class LandscapeReport:
    points: np.ndarray
    lambda_min: np.ndarray
    lambda_max: np.ndarray
    diagonals: np.ndarray
    mode: str
    delta: float
    grid_description: str
    hessians: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def inf_lambda_min(self) -> float:
        return float(np.min(self.lambda_min))

    @property
    def sup_lambda_max(self) -> float:
        return float(np.max(self.lambda_max))

    def header(self) -> List[str]:
        return ['point_index'] + [f'theta_{e}' for e in range(self.points.shape[1])] + ['lambda_min', 'lambda_max']

    def rows(self) -> List[list]:
        return [[k] + [float(v) for v in point] + [float(lo), float(hi)]
                for k, (point, lo, hi) in enumerate(zip(self.points, self.lambda_min, self.lambda_max))]


def box_scan(tree: Tree, source: Source, box: Union[ParamBox, EdgeBounds], grid_points_per_edge: int = 3,
             mode_diag_only_offsets: bool = False, seed: int = 0,
             tensor_edge_limit: int = TENSOR_EDGE_LIMIT, random_points: int = RANDOM_SCAN_POINTS,
             keep_hessians: bool = False) -> LandscapeReport:
    """
    Hessian extreme eigenvalues at every scanned point of the box.
    With ``mode_diag_only_offsets`` the eigenvalues come from the diagonal alone,
    i.e. the off-diagonal coupling is dropped.
    """
    if isinstance(source, SampleSet):
        source = EmpiricalSource(source)
    bounds = EdgeBounds.uniform(box, tree.n_edges) if isinstance(box, ParamBox) else box
    delta = box.delta if isinstance(box, ParamBox) else float('nan')
    points, description = scan_points(bounds, grid_points_per_edge, seed, tensor_edge_limit, random_points)

    lam_min, lam_max, diags, kept = [], [], [], []
    for point in points:
        H = source_hessian(tree, source, point)
        if mode_diag_only_offsets:
            H = np.diag(np.diag(H))
        lo, hi = extreme_eigenvalues(H)
        lam_min.append(lo)
        lam_max.append(hi)
        diags.append(np.diag(H).copy())
        if keep_hessians:
            kept.append(H)

    mode = source.label + ("-diagonal" if mode_diag_only_offsets else "")
    report = LandscapeReport(points=points, lambda_min=np.array(lam_min), lambda_max=np.array(lam_max),
                             diagonals=np.array(diags), mode=mode, delta=delta,
                             grid_description=description,
                             hessians=np.array(kept) if keep_hessians else None)
    log.info(f"box_scan [{mode}] {len(points)} points: scanned inf lambda_min={report.inf_lambda_min:.6g}, "
             f"scanned sup lambda_max={report.sup_lambda_max:.6g}")
    return report


# concentration and sample-size calculators

@dataclass(frozen=True)
class BernsteinParams:
    p: int
    d: int
    n: int
    R: float
    L: float
    sigma2: float
    theta_diam: float
    t: float = 1.0

    def __post_init__(self):
        for name in ('p', 'd', 'n', 'R', 'L', 'sigma2', 'theta_diam', 't'):
            if getattr(self, name) < 0:
                raise InvalidParameterError(f"BernsteinParams.{name} must be nonnegative")

    def with_t(self, t: float) -> "BernsteinParams":
        return BernsteinParams(self.p, self.d, self.n, self.R, self.L, self.sigma2, self.theta_diam, t)


def bernstein_log_bound(params: BernsteinParams) -> float:
    if params.t <= 0:
        raise InvalidParameterError("Bernstein bound needs t > 0")
    t = params.t
    denom = params.sigma2 + params.R * t / 6.0
    exponent = -math.inf if denom == 0 else -(t * t / 8.0) / denom
    if params.theta_diam == 0:
        return -math.inf if params.p > 0 else math.log(2 * params.d) + exponent
    return (math.log(2 * params.d) + params.p * math.log(params.theta_diam)
            + params.p * math.log1p(4.0 * params.n * params.L / t) + exponent)


def bernstein_bound(params: BernsteinParams) -> float:
    """2d ||Theta||^p (1 + 4nL/t)^p exp(-(t^2/8) / (sigma^2 + R t / 6)); not capped at 1."""
    value = bernstein_log_bound(params)
    return math.inf if value > 709.0 else math.exp(value)


def bernstein_deviation_level(params: BernsteinParams, probability: float = 0.5) -> float:
    """Smallest t at which the bound drops to ``probability``."""
    if not 0 < probability:
        raise InvalidParameterError("probability must be positive")
    target = math.log(probability)

    # bracket in log t so both ends stay finite
    def excess(u):
        return bernstein_log_bound(params.with_t(math.exp(u))) - target

    u_lo = math.log(1e-30)
    u_hi = math.log(max(1.0, params.R, math.sqrt(params.sigma2)))
    if excess(u_lo) <= 0:
        return math.exp(u_lo)
    while excess(u_hi) > 0:
        u_hi += 1.0
        if u_hi > 690.0:
            raise InvalidParameterError("Bernstein level search diverged")
    return float(math.exp(brentq(excess, u_lo, u_hi, xtol=1e-13, maxiter=500)))


def covering_number_bound(theta_diam: float, p: int, eps: float) -> float:
    if eps <= 0:
        raise InvalidParameterError(f"eps must be positive, got {eps}")
    return theta_diam ** p * (1.0 + 2.0 / eps) ** p


def _ceil_count(value: float) -> int:
    # tolerate round-off just above an integer
    return max(1, int(math.ceil(value * (1.0 - 1e-12))))


def sample_complexity(delta: float, diam: int, eps: float, C: float) -> int:
    """ceil((C/delta)^(diam+8) log(1/eps)), at least 1."""
    if not 0 < eps < 1:
        raise InvalidParameterError(f"eps must lie in (0, 1), got {eps}")
    if delta <= 0 or C <= 0:
        raise InvalidParameterError("delta and C must be positive")
    return _ceil_count((C / delta) ** (diam + 8) * math.log(1.0 / eps))


def _net_log_factor(n_edges: int, diam: int, delta: float, c_bar: float, C_bar: float) -> float:
    radius = 2.0 * math.sqrt(n_edges) * (C_bar - c_bar) * delta
    grid = 1.0 + 16.0 * diam / (2.0 * c_bar * delta) ** (4 * diam + 2)
    return n_edges * (math.log(radius) + math.log(grid))


def hessian_concentration_bound(n_edges: int, diam: int, delta: float, c_bar: float, C_bar: float,
                                m: int, J: float) -> float:
    """Explicit-constant failure probability of uniform Hessian concentration (raw, may exceed 1)."""
    R = n_edges * J
    sigma2 = m * n_edges ** 2 * J ** 2
    log_value = (math.log(2 * n_edges) + _net_log_factor(n_edges, diam, delta, c_bar, C_bar)
                 - (m * m / 8.0) / (sigma2 + R * m / 6.0))
    return math.exp(min(log_value, 700.0))


def explicit_sample_complexity(n_edges: int, diam: int, delta: float, c_bar: float, C_bar: float,
                               eps: float, J: float) -> int:
    if not 0 < eps < 1:
        raise InvalidParameterError(f"eps must lie in (0, 1), got {eps}")
    bracket = math.log(2 * n_edges) + _net_log_factor(n_edges, diam, delta, c_bar, C_bar) + math.log(2.0 / eps)
    return _ceil_count(8.0 * (1.0 + n_edges * J) ** 2 * bracket)


def statistical_sample_requirement(n_edges: int, delta: float, c_bar: float, C_pop: float, eps: float) -> int:
    """m needed for the MLE to sit inside the estimation box: |E|^2 / (4 C^6 c_bar^6 delta^3 eps)."""
    if not 0 < eps < 1:
        raise InvalidParameterError(f"eps must lie in (0, 1), got {eps}")
    return _ceil_count(n_edges ** 2 / (4.0 * C_pop ** 6 * c_bar ** 6 * delta ** 3 * eps))


def estimation_error_bound(C: float, n_edges: int, m: int, eps: float) -> float:
    """C sqrt(|E|/m) log(|E|/eps)."""
    if m < 1 or not 0 < eps < 1:
        raise InvalidParameterError("m must be >= 1 and eps must lie in (0, 1)")
    return C * math.sqrt(n_edges / m) * math.log(n_edges / eps)


# Hessian deviation experiment

@dataclass(frozen=True)
class DeviationRow:
    m: int
    trial: int
    sup_deviation: float
    weyl_gap: float
    bernstein_level: float
    bound_at_observed: float
    covering_number: float


def _deviation_constants(tree: Tree, theta_star: EdgeVector, points: np.ndarray, m: int,
                         box: ParamBox, c_bar: float) -> Tuple[BernsteinParams, List[np.ndarray]]:
    """Bernstein inputs for summands X_k = (H_k - H)/m, taken exactly over the scanned points."""
    patterns, probs = exact_pattern_table(tree, theta_star)
    E = tree.n_edges
    R = 0.0
    sigma2 = 0.0
    population = []
    for point in points:
        per = per_sample_hessians(tree, point, patterns)
        H = np.tensordot(probs, per, axes=(0, 0))
        population.append(0.5 * (H + H.T))
        centered = per - H[None]
        R = max(R, max(spectral_norm(0.5 * (D + D.T)) for D in centered) / m)
        second = np.tensordot(probs, np.einsum('kij,kjl->kil', centered, centered), axes=(0, 0))
        sigma2 = max(sigma2, spectral_norm(0.5 * (second + second.T)) / m)
    third = deterministic_bounds(box.delta, diameter(tree), c_bar).third_deriv_bound
    L = 2.0 * E ** 1.5 * third / m
    params = BernsteinParams(p=E, d=E, n=m, R=R, L=L, sigma2=sigma2,
                             theta_diam=box.l2_diameter(E))
    return params, population


def hessian_deviation_experiment(tree: Tree, theta_star, box: ParamBox, m: int, trials: int, seed: int,
                                 c_bar: Optional[float] = None, grid_points_per_edge: int = 2,
                                 probability: float = 0.5, random_points: int = 16) -> List[DeviationRow]:
    """Per trial, sup over scanned points of ||H_hat - H||_2 next to the Bernstein calculator."""
    theta_star = as_edge_vector(tree, theta_star)
    if trials < 1 or m < 1:
        raise InvalidParameterError("m and trials must be >= 1")
    c_bar = box.lower_flip if c_bar is None else c_bar
    points, _ = scan_points(EdgeBounds.uniform(box, tree.n_edges), grid_points_per_edge, seed,
                            random_points=random_points)
    params, population = _deviation_constants(tree, theta_star, points, m, box, c_bar)
    level = bernstein_deviation_level(params, probability)

    rows = []
    for trial in range(trials):
        samples = sample_spins(tree, theta_star, seed, m, stream=(m, trial))
        sup_dev = 0.0
        weyl = 0.0
        for point, H in zip(points, population):
            H_hat = weighted_hessian(tree, point, samples.patterns, samples.weights)
            dev = spectral_norm(H_hat - H)
            sup_dev = max(sup_dev, dev)
            weyl = max(weyl, abs(extreme_eigenvalues(H_hat)[1] - extreme_eigenvalues(H)[1]) - dev)
        t_obs = max(sup_dev, 1e-300)
        rows.append(DeviationRow(
            m=m, trial=trial, sup_deviation=sup_dev, weyl_gap=weyl,
            bernstein_level=level,
            bound_at_observed=bernstein_bound(params.with_t(t_obs)),
            covering_number=covering_number_bound(params.theta_diam, params.p, level / (2.0 * params.n * params.L)),
        ))
    log.info(f"Hessian deviation m={m}: median sup deviation "
             f"{np.median([r.sup_deviation for r in rows]):.4g}, Bernstein level {level:.4g}")
    return rows
