"""Scheduling a PV plant with battery and hydrogen storage by reinforcement learning,
plus an interpretable prototype policy distilled from the trained agent."""

from .config import CASES, ExperimentConfig
from .env import Action, CaseSpec, MarketSeries, Plant, PVESSEnv, load_series, synth_series
from .harness import Lab, compute_mse, emit_report, lr_ablation, run_case
from .ppo import ActorCritic, PpoConfig, train
from .proto import PrototypeSet, distill, explain

__all__ = [
    "CASES",
    "Action",
    "ActorCritic",
    "CaseSpec",
    "ExperimentConfig",
    "Lab",
    "MarketSeries",
    "PVESSEnv",
    "Plant",
    "PpoConfig",
    "PrototypeSet",
    "compute_mse",
    "distill",
    "emit_report",
    "explain",
    "load_series",
    "lr_ablation",
    "run_case",
    "synth_series",
    "train",
]
