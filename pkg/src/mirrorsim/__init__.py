"""Memristor-aware analog circuit simulation for current-mirror studies."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AnalysisError,
    ConvergenceError,
    MirrorsimError,
    NetlistError,
    SingularCircuitError,
    UndefinedTHDError,
    ValidationError,
)
from .netlist import Circuit, load_netlist, parse_netlist, parse_value, validate  # noqa: E402
from .engine import dc_sweep, solve_dc, transient  # noqa: E402
from .analysis import (  # noqa: E402
    extract_hparams_numeric,
    analytic_hparams,
    fourier_coefficients,
    linear_fit,
    thd,
    thd_report,
)
