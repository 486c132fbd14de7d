"""Dense-network substrate with a compiled fast path and numpy fallback."""

from .backend import BACKEND
from .checkpoint import (
    CheckpointError,
    load_bundle,
    load_network,
    save_bundle,
    save_network,
)
from .core import (
    ACTIVATIONS,
    AdamState,
    ForwardCache,
    Gradients,
    Layer,
    Network,
    adam_step,
    adam_update_array,
    backward,
    forward,
    init_adam,
    init_network,
)

__all__ = [
    "ACTIVATIONS",
    "AdamState",
    "BACKEND",
    "CheckpointError",
    "ForwardCache",
    "Gradients",
    "Layer",
    "Network",
    "adam_step",
    "adam_update_array",
    "backward",
    "forward",
    "init_adam",
    "init_network",
    "load_bundle",
    "load_network",
    "save_bundle",
    "save_network",
]
