"""Deterministic per-consumer random streams split from one top-level seed."""
import zlib

import numpy as np


def consumer_key(consumer: str) -> int:
    return zlib.crc32(consumer.encode("utf-8"))


def derive_seed_sequence(seed: int, consumer: str) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed), spawn_key=(consumer_key(consumer),))


def derive_rng(seed: int, consumer: str) -> np.random.Generator:
    """Return an independent generator for `consumer` (e.g. 'data', 'init', 'dropnet')."""
    return np.random.Generator(np.random.PCG64(derive_seed_sequence(seed, consumer)))


def derive_seed(seed: int, consumer: str) -> int:
    return int(derive_seed_sequence(seed, consumer).generate_state(1, dtype=np.uint32)[0])


def rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def restore_rng(state: dict) -> np.random.Generator:
    bit_generator = np.random.PCG64()
    bit_generator.state = state
    return np.random.Generator(bit_generator)
