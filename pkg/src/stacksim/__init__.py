"""Simulation and phase optimisation for links between two stacked
intelligent metasurfaces, with network-calculus delay bounds."""
from .channel import ChannelState, PhaseConfig, achievable_rate, assemble_H, build_channel
from .config import LinkScenario, default_scenario, load_scenario
from .optimizer import AOPhaseOptimizer, BCDPhaseOptimizer, ao_baseline, bcd_optimize
from .snc import queueing_bound, simulate_queue, total_delay_bound

__version__ = "0.1.0"

__all__ = [
    "AOPhaseOptimizer", "BCDPhaseOptimizer", "ChannelState", "LinkScenario", "PhaseConfig",
    "achievable_rate", "ao_baseline", "assemble_H", "bcd_optimize", "build_channel",
    "default_scenario", "load_scenario", "queueing_bound", "simulate_queue", "total_delay_bound",
]
