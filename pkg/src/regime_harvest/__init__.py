"""Optimal resource extraction under sequentially detected regime shifts."""

from .catastrophe import (CatastropheReport, InverseGaussian, KfeSolution, at_risk, classify,
                          expected_time_to_catastrophe, extinction_probability,
                          ig_first_passage, solve_kfe)
from .detection import (CusumDetector, expected_delay, expected_detection_horizon,
                        solve_threshold)
from .hjb_oracle import HjbSolution, compare_policies, solve_hjb
from .model_core import (DerivedConstants, DetectionConfig, MarketParams, RegimeState,
                         ResourceParams, derive_constants, validate)
from .policy import PolicySpec, build_policy, expected_mr_drift, optimal_extraction, resource_rent
from .sde_sim import Scenario, SimConfig, Trajectory, monte_carlo, simulate_period
from .sequential import EpisodeConfig, EpisodeResult, lambda_update, post_horizon_policy, run_episode

__version__ = "0.1.0"
