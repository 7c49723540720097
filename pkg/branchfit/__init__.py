"""CFN branch-parameter estimation by cyclic coordinate maximization."""
__version__ = "0.1.0"

from branchfit.errors import (BranchfitError, ConfigError, EnumerationLimitError,
                              InvalidParameterError, NumericalError, TreeFormatError)
from branchfit.tree_core import Tree, parse_newick, to_newick
from branchfit.cfn_model import ParamBox, SampleSet, make_param_box, sample_spins
from branchfit.likelihood_engine import gradient, hessian, log_likelihood
from branchfit.optimizer import OptConfig, OptTrace, coordinate_update, fit

__all__ = [
    "__version__",
    "BranchfitError", "ConfigError", "EnumerationLimitError", "InvalidParameterError",
    "NumericalError", "TreeFormatError",
    "Tree", "parse_newick", "to_newick",
    "ParamBox", "SampleSet", "make_param_box", "sample_spins",
    "gradient", "hessian", "log_likelihood",
    "OptConfig", "OptTrace", "coordinate_update", "fit",
]
