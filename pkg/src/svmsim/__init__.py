"""svmsim: cycle-approximate simulator of a host + clustered-manycore SoC
with software-managed shared virtual memory and non-intrusive event tracing."""

__version__ = "0.1.0"

from .config import (CalibrationConfig, ConfigError, PlatformConfig,
                     parse_config, serialize_config, validate)
from .engine import EventLimitError, Simulator
from .faults import SimulationFault
from .machine import Machine
from .offload import DataArg, OffloadDescriptor, RunReport, run_offload

__all__ = [
    "CalibrationConfig", "ConfigError", "PlatformConfig", "parse_config",
    "serialize_config", "validate", "EventLimitError", "Simulator",
    "SimulationFault", "Machine", "DataArg", "OffloadDescriptor",
    "RunReport", "run_offload", "__version__",
]
