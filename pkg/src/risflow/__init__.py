"""Phase design and flow-level stability for RIS-assisted cell-free uplinks."""
from .channel import ChannelStats, CorrelationModel, Scenario, build_correlation, build_stats
from .config import load_config
from .phase_opt import PhaseSolution, optimize
from .sinr import PhaseConfig, eta, sinr_closed_form

__version__ = "0.1.0"
