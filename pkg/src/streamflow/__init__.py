"""Streaming flow policies: action trajectories as flow trajectories.

The velocity field is trained by conditional flow matching against analytic
stabilizing flows built around demonstrations, and actions are streamed to a
controller one integration step at a time.
"""

from streamflow.core import (
    ChunkParams,
    Dataset,
    Demonstration,
    ObservationHistory,
    Trajectory,
    dataset_load,
    dataset_save,
    traj_deriv,
    traj_eval,
)
from streamflow.flows import FlowConfig, LatentFlowConfig

__all__ = [
    "ChunkParams",
    "Dataset",
    "Demonstration",
    "FlowConfig",
    "LatentFlowConfig",
    "ObservationHistory",
    "Trajectory",
    "dataset_load",
    "dataset_save",
    "traj_deriv",
    "traj_eval",
]

__version__ = "0.1.0"
