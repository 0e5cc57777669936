"""Online identification of PV single-diode parameters with DREM."""
from .errors import PVIdentError
from .harness import (
    ScenarioConfig,
    modes_config,
    run_scenario,
    run_scenario_modes,
    run_scenario_stc,
    stc_config,
)
from .model import MODES, EtaParams, OperatingMode, PhysicalParams, get_mode

__all__ = [
    "MODES",
    "EtaParams",
    "OperatingMode",
    "PhysicalParams",
    "PVIdentError",
    "ScenarioConfig",
    "get_mode",
    "modes_config",
    "run_scenario",
    "run_scenario_modes",
    "run_scenario_stc",
    "stc_config",
]
__version__ = "0.1.0"
