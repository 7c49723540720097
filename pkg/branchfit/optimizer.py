"""
Cyclic coordinate maximization of the empirical CFN log-likelihood.

Each edge update holds the two magnetizations across the edge fixed; along
that edge the log-likelihood is mean(log(1 + t a_i)) plus a constant, with
a_i = Z_x Z_y. Its derivative is strictly decreasing in t, so the maximizer is
found by bisection on the derivative, or is an endpoint when the derivative
keeps one sign.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from branchfit.cfn_model import EdgeVector, ParamBox, SampleSet, as_edge_vector
from branchfit.errors import InvalidParameterError, NumericalError
from branchfit.likelihood_engine import (compute_step, edge_objective,
                                         log_likelihood, magnetization_matrix,
                                         message_schedule)
from branchfit.tree_core import Tree
from utils import logger

log = logger.customLogger()

ASCENT_SLACK = 1e-12


@dataclass(frozen=True)
class OptConfig:
    """Coordinate maximization settings. The exact 1D solve ignores step_size."""
    sweep_tolerance: float = 1e-10
    solver_tolerance: float = 1e-12
    max_sweeps: int = 500
    edge_order: Optional[Tuple[int, ...]] = None
    clamp_box: Optional[ParamBox] = None
    bounds: Tuple[float, float] = (-1.0, 1.0)
    step_size: Optional[float] = None

    def __post_init__(self):
        if self.sweep_tolerance <= 0 or self.solver_tolerance <= 0:
            raise InvalidParameterError("Optimizer tolerances must be positive")
        if self.max_sweeps < 1:
            raise InvalidParameterError(f"max_sweeps must be >= 1, got {self.max_sweeps}")
        lo, hi = self.bounds
        if not -1.0 <= lo < hi <= 1.0:
            raise InvalidParameterError(f"bounds must satisfy -1 <= lo < hi <= 1, got {self.bounds}")

    def order_for(self, tree: Tree) -> Tuple[int, ...]:
        if self.edge_order is None:
            return tuple(range(tree.n_edges))
        if sorted(self.edge_order) != list(range(tree.n_edges)):
            raise InvalidParameterError(f"edge_order {self.edge_order} is not a permutation of 0..{tree.n_edges - 1}")
        return tuple(int(e) for e in self.edge_order)

    def interval(self) -> Tuple[float, float]:
        if self.clamp_box is not None:
            return self.clamp_box.interval
        return self.bounds


@dataclass
class OptTrace:
    iterates: List[EdgeVector] = field(default_factory=list)
    objectives: List[float] = field(default_factory=list)
    max_changes: List[float] = field(default_factory=list)
    termination: str = ""
    flat_updates: int = 0
    update_gains: List[float] = field(default_factory=list)

    @property
    def final(self) -> EdgeVector:
        return self.iterates[-1]

    @property
    def sweeps(self) -> int:
        return len(self.iterates) - 1

    def is_monotone(self, slack: float = ASCENT_SLACK) -> bool:
        diffs = np.diff(self.objectives)
        return bool(np.all(diffs >= -slack)) and all(g >= -slack for g in self.update_gains)

    def rows(self) -> List[list]:
        """sweep, objective, max_coord_change, theta_<id>..."""
        out = []
        for k, (theta, obj) in enumerate(zip(self.iterates, self.objectives)):
            change = self.max_changes[k - 1] if k > 0 else float('nan')
            out.append([k, obj, change] + [float(v) for v in theta])
        return out

    @staticmethod
    def header(n_edges: int) -> List[str]:
        return ['sweep', 'objective', 'max_coord_change'] + [f'theta_{e}' for e in range(n_edges)]


def solve_coordinate(products: np.ndarray, weights: np.ndarray, lo: float, hi: float,
                     tol: float, current: float) -> Tuple[float, bool]:
    """Maximizer of mean(log(1 + t a)) on [lo, hi]; the flag is True for a flat coordinate."""
    if np.all(products == 0.0):
        return current, True

    def g(t):
        with np.errstate(divide='ignore', invalid='ignore'):
            return float(np.dot(weights, products / (1.0 + t * products)))

    if g(lo) <= 0.0:
        return lo, False
    if g(hi) >= 0.0:
        return hi, False
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if g(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi), False


class MessageCache:
    """Directed magnetizations for the current parameters, refreshed lazily after edge updates."""

    def __init__(self, tree: Tree, theta: EdgeVector, samples: SampleSet):
        self.tree = tree
        self.theta = theta
        self.patterns = samples.patterns.astype(float)
        self.schedule = message_schedule(tree)
        self.Z = magnetization_matrix(tree, theta, samples.patterns)
        self.dirty = np.zeros(2 * tree.n_edges, dtype=bool)
        self._depends = self._dependency_table()

    def _dependency_table(self) -> Dict[int, np.ndarray]:
        # message (head, tail) depends on every edge lying inside head's side
        table = {}
        sides = []
        for d in self.tree.directed_edges:
            sides.append(set(self.tree.side_nodes(d.head, d.tail)))
        for e, (a, b) in enumerate(self.tree.edges):
            table[e] = np.array([a in side and b in side for side in sides])
        return table

    def update(self, e: int, value: float) -> None:
        self.theta[e] = value
        self.dirty |= self._depends[e]

    def products(self, e: int) -> np.ndarray:
        if self.dirty[2 * e] or self.dirty[2 * e + 1]:
            self.refresh()
        return self.Z[2 * e] * self.Z[2 * e + 1]

    def refresh(self) -> None:
        for step in self.schedule:
            if self.dirty[step.target]:
                compute_step(step, self.theta, self.patterns, self.Z)
        self.dirty[:] = False


def coordinate_update(tree: Tree, theta_hat, samples: SampleSet, e: int, tol: float = 1e-12,
                      config: Optional[OptConfig] = None) -> float:
    theta = as_edge_vector(tree, theta_hat)
    tree.check_edge(e)
    config = config or OptConfig(solver_tolerance=tol)
    Z = magnetization_matrix(tree, theta, samples.patterns)
    lo, hi = config.interval()
    value, flat = solve_coordinate(Z[2 * e] * Z[2 * e + 1], samples.weights, lo, hi, tol, float(theta[e]))
    if flat:
        log.warning(f"flat-coordinate: every magnetization product across edge {e} is zero")
    return value


def fit(tree: Tree, theta0, samples: SampleSet, config: Optional[OptConfig] = None) -> OptTrace:
    config = config or OptConfig()
    samples.check_tree(tree)
    theta = as_edge_vector(tree, theta0).copy()
    order = config.order_for(tree)
    lo, hi = config.interval()
    weights = samples.weights

    cache = MessageCache(tree, theta, samples)
    trace = OptTrace()
    trace.iterates.append(theta.copy())
    trace.objectives.append(log_likelihood(tree, theta, samples))

    for sweep in range(1, config.max_sweeps + 1):
        max_change = 0.0
        for e in order:
            a = cache.products(e)
            old = float(theta[e])
            new, flat = solve_coordinate(a, weights, lo, hi, config.solver_tolerance, old)
            if flat:
                trace.flat_updates += 1
                log.warning(f"flat-coordinate on edge {e} in sweep {sweep}")
            gain = edge_objective(a, weights, new) - edge_objective(a, weights, old)
            trace.update_gains.append(gain)
            if gain < -ASCENT_SLACK:
                log.warning(f"Update of edge {e} in sweep {sweep} lowered the objective by {-gain:.3e}")
            max_change = max(max_change, abs(new - old))
            cache.update(e, new)

        objective = log_likelihood(tree, theta, samples)
        if not np.isfinite(objective):
            log.error(f"Objective became non-finite in sweep {sweep}")
            raise NumericalError(f"Non-finite objective after sweep {sweep}")
        trace.iterates.append(theta.copy())
        trace.objectives.append(objective)
        trace.max_changes.append(max_change)
        log.debug(f"sweep {sweep}: objective={objective:.15g} max_change={max_change:.3e}")

        if max_change < config.sweep_tolerance:
            trace.termination = "converged"
            break
    else:
        trace.termination = "max_sweeps"
        log.warning(f"Coordinate maximization stopped after {config.max_sweeps} sweeps without converging")

    return trace


def multi_start(tree: Tree, samples: SampleSet, starts: Sequence[EdgeVector],
                config: Optional[OptConfig] = None) -> List[OptTrace]:
    return [fit(tree, start, samples, config) for start in starts]


@dataclass(frozen=True)
class ConfinementReport:
    all_interior: bool
    first_escape_sweep: Optional[int]


def confinement_report(trace: OptTrace, box: ParamBox) -> ConfinementReport:
    if not trace.iterates:
        raise InvalidParameterError("Confinement needs a non-empty trace")
    for k, theta in enumerate(trace.iterates):
        if not box.contains(theta, open_box=True):
            return ConfinementReport(all_interior=False, first_escape_sweep=k)
    return ConfinementReport(all_interior=True, first_escape_sweep=None)


def trajectory_bounds(trace: OptTrace, extra: Sequence[EdgeVector] = ()) -> Tuple[np.ndarray, np.ndarray]:
    """Per-edge bounding box of all iterates (plus any extra points)."""
    stacked = np.vstack(list(trace.iterates) + list(extra))
    return stacked.min(axis=0), stacked.max(axis=0)
