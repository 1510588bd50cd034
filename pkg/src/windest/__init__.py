"""Wind, drag and touch-force estimation for a whiskered multirotor."""

from .vehicle import VehicleParams, VehicleState, WrenchInput, DisturbanceInput
from .whisker import WhiskerRig, SensorMount, default_rig
from .ukf import BeliefState, ProcessNoise, OdometryMeasurement, FilterOutput
from .logio import FlightLog, load_log, save_log
from .sim import Scenario, run_scenario

__all__ = [
    "VehicleParams",
    "VehicleState",
    "WrenchInput",
    "DisturbanceInput",
    "WhiskerRig",
    "SensorMount",
    "default_rig",
    "BeliefState",
    "ProcessNoise",
    "OdometryMeasurement",
    "FilterOutput",
    "FlightLog",
    "load_log",
    "save_log",
    "Scenario",
    "run_scenario",
]
