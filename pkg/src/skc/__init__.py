"""Compositional Gaussian process kernel search with BIC interval bounds."""

from .data import Dataset, ingest_csv
from .exceptions import (
    CholeskyError,
    ConfigError,
    DataError,
    KernelDimensionError,
    NumericalError,
    SKCError,
    SpectralTruncationError,
)
from .gp import GPModel, bic, exact_logml
from .kernels import canonical, lin, parse_kernel, per, se, to_string
from .bounds import nip_upper_bound, nld_upper_bound, sandwich, var_lower_bound
from .config import RunConfig
from .search import run_cks, run_search, run_skc
from .report import emit_report, run

__version__ = "0.1.0"
