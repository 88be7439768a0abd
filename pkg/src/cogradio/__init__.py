"""Cognitive-radio spectrum access toolkit.

Markov channel occupancy, energy-detection sensing, belief-state MAC
policies, an Elman-RNN occupancy predictor and the experiment harness that
ties them together.
"""

__version__ = "0.1.0"

from .channel import ChannelParams, OccupancyTrace, SlotState, generate_trace  # noqa: E402
from .mac import Action, RewardParams, Scenario, dp_policy, run_simulation  # noqa: E402
from .sensing import DetectorConfig, SensingPlan, sensing_plan  # noqa: E402

__all__ = [
    "__version__",
    "ChannelParams",
    "OccupancyTrace",
    "SlotState",
    "generate_trace",
    "Action",
    "RewardParams",
    "Scenario",
    "dp_policy",
    "run_simulation",
    "DetectorConfig",
    "SensingPlan",
    "sensing_plan",
]
