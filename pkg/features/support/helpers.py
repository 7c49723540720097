"""Shared helpers for step modules (kept out of features/steps so behave loads them once)."""
import json
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from branchfit.errors import BranchfitError
from branchfit.tree_core import build_balanced, build_caterpillar, build_random


def pendant_edge(tree, leaf_name):
    """Edge id of the edge hanging the named leaf."""
    leaf = tree.leaves[tree.leaf_names.index(leaf_name)]
    return tree.edge_id(leaf, tree.adjacency[leaf][0])


def leaf_node(tree, leaf_name):
    return tree.leaves[tree.leaf_names.index(leaf_name)]


def tree_from_row(row):
    """Tree from a table row with 'tree' (balanced/caterpillar/random) and 'size' columns."""
    kind, size = row['tree'], int(row['size'])
    if kind == 'balanced':
        return build_balanced(size)
    if kind == 'caterpillar':
        return build_caterpillar(size)
    return build_random(size, seed=size)


def random_theta(rng, n_edges, low=0.5, high=0.95):
    return rng.uniform(low, high, size=n_edges)


@contextmanager
def capture_error(context):
    """Store a library error on the context instead of failing the step."""
    context.error = None
    try:
        yield
    except BranchfitError as e:
        context.error = e


def write_config(context, doc, name='config.json'):
    path = Path(context.workdir) / name
    path.write_text(json.dumps(doc, indent=2), encoding='utf-8')
    return path


def floats(values):
    return np.array([float(v) for v in values])
