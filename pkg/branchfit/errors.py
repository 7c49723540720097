"""Exception hierarchy shared by every branchfit module."""


class BranchfitError(Exception):
    """Base class for all branchfit failures."""


class TreeFormatError(BranchfitError, ValueError):
    """Malformed Newick text or a topology that is not unrooted binary."""


class InvalidParameterError(BranchfitError, ValueError):
    """A caller-supplied value violates an operation's precondition."""


class EnumerationLimitError(BranchfitError):
    """Brute-force enumeration requested on a tree that is too large."""


class NumericalError(BranchfitError, ArithmeticError):
    """Degenerate denominator, zero-probability pattern or non-finite objective."""


class ConfigError(BranchfitError, ValueError):
    """Experiment or environment configuration cannot be used."""


# exit codes used by run_experiments.py
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
