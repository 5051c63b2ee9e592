"""
Seeded random streams.

One master seed fans out into independent Philox streams, one per consumer,
keyed by a fixed index so adding a consumer never shifts the others.
"""

from typing import Any, Dict

import numpy as np

STREAMS = {
    "env": 0,
    "policy": 1,
    "init": 2,
    "buffer": 3,
    "eval": 4,
}


def make_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for consumer `name` under master `seed`."""
    if name not in STREAMS:
        raise ValueError(f"Unknown random stream '{name}', expected one of {sorted(STREAMS)}")
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(STREAMS[name],))
    return np.random.Generator(np.random.Philox(seq))


def make_streams(seed: int) -> Dict[str, np.random.Generator]:
    return {name: make_stream(seed, name) for name in STREAMS}


def get_rng_state(rng: np.random.Generator) -> Dict[str, Any]:
    return rng.bit_generator.state


def set_rng_state(rng: np.random.Generator, state: Dict[str, Any]) -> None:
    rng.bit_generator.state = state
