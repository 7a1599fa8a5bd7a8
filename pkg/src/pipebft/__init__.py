"""Leaderless Byzantine state machine replication with a distributed
consensus pipeline: replicas spawn concurrent consensus epochs from local
resource signals instead of waiting on a leader or on the previous instance.

Runs over real TCP (`pipebft node`) or inside a deterministic discrete-event
network simulator (`pipebft sim`) for verification and benchmarking.
"""

from .core import Batch, Config, ConfigError, default_batch_size, digest, quorums
from .kernels import BACKEND as kernel_backend

__version__ = "0.1.0"

__all__ = [
    "Batch",
    "Config",
    "ConfigError",
    "default_batch_size",
    "digest",
    "quorums",
    "kernel_backend",
]
