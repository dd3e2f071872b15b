"""Joint bandwidth, antenna and subchannel allocation for URLLC over a
multi-antenna base station, with Monte Carlo validation of the delivery
mechanisms (UL frequency hopping, DL proactive dropping)."""

__version__ = "0.1.0"

from .errors import (
    AllocError,
    ConfigError,
    ConvergenceError,
    DomainError,
    InfeasibleError,
    InfeasibleLatencyError,
)
from .montecarlo import SimConfig, ValidationReport, validate_allocation
from .powermodel import CostBreakdown, PowerCircuitParams, total_power_upper_bound
from .qos import LinkParams, QosBudget
from .reliability import DiversityConfig
from .scenario import Scenario, SystemParams, generate_scenario
from .solver import (
    Allocation,
    AllocationProblem,
    SolverReport,
    baseline_allocate,
    compare_strategies,
    three_step_allocate,
)
