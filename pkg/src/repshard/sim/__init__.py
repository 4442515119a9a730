from repshard.sim.config import ScenarioConfig, load_config
from repshard.sim.runner import Simulation, run_scenario

__all__ = ["ScenarioConfig", "load_config", "Simulation", "run_scenario"]
