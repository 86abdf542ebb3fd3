"""DER Feedback Optimization Simulator."""

from .aggregation import (
    DisaggregationResult,
    MemberCost,
    aggregate_gradient,
    disaggregate,
    dual_bound,
    estimate_dual_lipschitz,
    minimize_quadratic,
)
from .analysis import (
    ConvergenceConstants,
    certify,
    contraction,
    estimate_constants,
    max_stepsize,
    measure_run,
    solve_saddle_point,
    steady_state_max_voltage,
    tracking_fraction,
    trajectory_bound,
)
from .controller import (
    ControllerParams,
    ControllerState,
    DualState,
    FleetCosts,
    FleetRegions,
    aggregation_step,
    controller_step,
    device_step,
    dual_step,
)
from .devices import BatteryState, CommandLink, EvState, HvacState, actuate
from .factory import create_plant
from .interpolation import InterpolationMethod, Profile, ingest_timeseries, profile_from_spec
from .network import (
    BaseValues,
    GridModel,
    InjectionPoint,
    PhaseConnection,
    build_admittance,
    build_delta_incidence,
    load_grid,
    parse_connection,
)
from .plant import (
    LinearPlant,
    MeasurementFrame,
    MeasurementSets,
    NonlinearPlant,
    PlantInterface,
    PlantReading,
)
from .powerflow import InjectionSpec, PowerFlowSolution, PowerFlowSolver, head_power, line_currents, solve
from .regions import (
    Discrete,
    Disk,
    ErrorAccumulator,
    Interval,
    OperatingRegion,
    Polygon,
    Singleton,
    Translated,
    convex_hull,
    error_diffusion_step,
    fold_aggregate,
    inner_radius,
    minkowski_disk_disk_inner,
    minkowski_disk_interval,
    minkowski_interval,
    project,
)
from .runlog import RunLog, StepRecord
from .scenario import Scenario, ScenarioEngine, SimEvent, load_scenario
from .sensitivity import SensitivityModel, gain_bound, linearize, predict
from .sim import SimulationEngine, run

__all__ = [
    "BaseValues",
    "BatteryState",
    "CommandLink",
    "ControllerParams",
    "ControllerState",
    "ConvergenceConstants",
    "Discrete",
    "DisaggregationResult",
    "Disk",
    "DualState",
    "ErrorAccumulator",
    "EvState",
    "FleetCosts",
    "FleetRegions",
    "GridModel",
    "HvacState",
    "InjectionPoint",
    "InjectionSpec",
    "InterpolationMethod",
    "Interval",
    "LinearPlant",
    "MeasurementFrame",
    "MeasurementSets",
    "MemberCost",
    "NonlinearPlant",
    "OperatingRegion",
    "PhaseConnection",
    "PlantInterface",
    "PlantReading",
    "Polygon",
    "PowerFlowSolution",
    "PowerFlowSolver",
    "Profile",
    "RunLog",
    "Scenario",
    "ScenarioEngine",
    "SensitivityModel",
    "SimEvent",
    "SimulationEngine",
    "Singleton",
    "StepRecord",
    "Translated",
    "actuate",
    "aggregate_gradient",
    "aggregation_step",
    "build_admittance",
    "build_delta_incidence",
    "certify",
    "contraction",
    "convex_hull",
    "controller_step",
    "create_plant",
    "device_step",
    "disaggregate",
    "dual_bound",
    "dual_step",
    "error_diffusion_step",
    "estimate_constants",
    "estimate_dual_lipschitz",
    "fold_aggregate",
    "gain_bound",
    "head_power",
    "ingest_timeseries",
    "inner_radius",
    "line_currents",
    "linearize",
    "load_grid",
    "load_scenario",
    "max_stepsize",
    "measure_run",
    "minimize_quadratic",
    "minkowski_disk_disk_inner",
    "minkowski_disk_interval",
    "minkowski_interval",
    "parse_connection",
    "predict",
    "profile_from_spec",
    "project",
    "run",
    "solve",
    "solve_saddle_point",
    "steady_state_max_voltage",
    "tracking_fraction",
    "trajectory_bound",
]
