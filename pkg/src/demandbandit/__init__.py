"""Advertiser demand learning with dropout-Thompson contextual bandits."""
from .agent import DemandBanditAgent, RandomDemandAgent
from .bidding import BiddingOutcome, brute_force_oracle, impression_utility, simulate_bidding
from .bidlog import BidLog, Impression, LogGenParams, generate_log, load_log, save_log
from .env import AdoptionModelParams, AdUnit, DemandBasis, adoption_probability, generate_units
from .exceptions import (
    ConfigError,
    ContractError,
    DemandBanditError,
    InvariantViolationError,
    MalformedLogError,
    SchemaVersionError,
)
from .experiment import ExperimentConfig, run_experiment, sweep

__version__ = "0.1.0"

__all__ = [
    "AdUnit", "AdoptionModelParams", "BidLog", "BiddingOutcome", "ConfigError",
    "ContractError", "DemandBanditAgent", "DemandBanditError", "DemandBasis",
    "ExperimentConfig", "Impression", "InvariantViolationError", "LogGenParams",
    "MalformedLogError", "RandomDemandAgent", "SchemaVersionError", "adoption_probability",
    "brute_force_oracle", "generate_log", "generate_units", "impression_utility",
    "load_log", "run_experiment", "save_log", "simulate_bidding", "sweep",
]
