"""Remote reinforcement learning over imperfect channels with homomorphic state representations."""
from .channel import Channel, ChannelConfig, ChannelMessage, analytic_loss_rate, channel_preset
from .config import ExperimentConfig, parse_config, serialize_config
from .envs import Env, env_reset, observe
from .orchestrator import (
    RunMetrics,
    run_baseline_delay_augmented,
    run_baseline_hold,
    run_experiment,
    run_training,
)
from .transmitter import SfrModel, Transmitter

__version__ = "0.1.0"
