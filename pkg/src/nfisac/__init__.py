"""Hybrid beamforming for rate-splitting near-field ISAC."""

from .channel import (PolarCoord, Scatterer, Scenario, build_comm_channel, build_scenario,
                      build_sense_channel, ff_steering, nf_steering, rayleigh_distance)
from .config import SystemConfig, desk_config, get_profile, paper_config
from .optimizer import HybridBeamformer, PddOptions, PddState, Solution, optimize
from .rates import RateReport, comm_rates, power_terms, sensing_sinr

__version__ = "0.1.0"
