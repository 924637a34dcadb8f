"""Simulator and verifier for charging-station protocol security.

Runs symbolic protocol flows between vehicles, charge points, operators
and e-mobility providers, lets configurable attackers interfere, and
grades nine security requirements over the recorded trace.
"""

from .config import load_config, validate_config_dict
from .errors import (
    CapabilityViolation,
    ChargesecError,
    ConfigError,
    CorruptTrace,
    IncompleteTrace,
    InfeasibleAllocation,
)
from .model import (
    ClientAuth,
    LinkMode,
    Protection,
    Role,
    ScenarioConfig,
    Topology,
    build_topology,
)
from .runner import RunResult, run_scenario
from .scenarios import builtin_names, load_builtin, matrix_rows, resolve
from .trace import TOOL_VERSION, Trace, load_trace
from .verdict import (
    REQUIREMENTS, Finding, Report, Status, check_all, congestion_check,
    redaction_check, redaction_gdpr_check,
)

__version__ = TOOL_VERSION

__all__ = [
    "CapabilityViolation",
    "ChargesecError",
    "ClientAuth",
    "ConfigError",
    "CorruptTrace",
    "Finding",
    "IncompleteTrace",
    "InfeasibleAllocation",
    "LinkMode",
    "Protection",
    "REQUIREMENTS",
    "Report",
    "Role",
    "RunResult",
    "ScenarioConfig",
    "Status",
    "TOOL_VERSION",
    "Topology",
    "Trace",
    "build_topology",
    "builtin_names",
    "check_all",
    "congestion_check",
    "load_builtin",
    "load_config",
    "load_trace",
    "matrix_rows",
    "redaction_check",
    "redaction_gdpr_check",
    "resolve",
    "run_scenario",
    "validate_config_dict",
    "__version__",
]
