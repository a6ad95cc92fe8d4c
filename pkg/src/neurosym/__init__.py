"""Neuro-symbolic constraint solving: symbolic constraints conjoined with learned networks."""

from .dataset import Dataset, DatasetError
from .lang import ConstraintFile, parse, parse_constraint, print_constraint, print_file
from .mixed_solver import MixedConfig, SolveResult, solve

__version__ = "0.1.0"

__all__ = [
    "ConstraintFile", "Dataset", "DatasetError", "MixedConfig", "SolveResult",
    "parse", "parse_constraint", "print_constraint", "print_file", "solve", "__version__",
]
