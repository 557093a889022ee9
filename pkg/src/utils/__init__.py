"""Utility modules shared by the experiment harness."""
from .threading import ThreadSafeCsvWriter, ProgressReporter
from .rng import derive_rng, derive_seed, restore_rng, rng_state
from .container import read_container, write_container, parameter_hash

__all__ = [
    "ThreadSafeCsvWriter",
    "ProgressReporter",
    "derive_rng",
    "derive_seed",
    "restore_rng",
    "rng_state",
    "read_container",
    "write_container",
    "parameter_hash",
]
