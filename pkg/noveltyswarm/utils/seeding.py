"""Seed derivation.

All randomness in a run is derived from the master seed through
``numpy.random.SeedSequence`` entropy tuples, so any stream can be rebuilt
from its coordinates (run, generation, purpose) without stored RNG state.
"""

from enum import IntEnum
from typing import List

import numpy as np


class Stream(IntEnum):
    """Purpose tags that keep derived streams independent"""
    RUN = 0
    INIT = 1
    TRIALS = 2
    REPRODUCTION = 3
    NOVELTY = 4
    SELECTION = 5
    POSTEVAL = 6
    ANALYSIS = 7


def derive_seed(*entropy: int) -> int:
    """Derive a 63-bit integer seed from a tuple of non-negative integers"""
    state = np.random.SeedSequence([int(e) for e in entropy]).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1])) & ((1 << 63) - 1)


def run_seed(master_seed: int, run_index: int) -> int:
    """Seed of one evolutionary run"""
    return derive_seed(master_seed, Stream.RUN, run_index)


def generation_rng(seed: int, generation: int, stream: Stream) -> np.random.Generator:
    """Generator for one purpose within one generation of a run"""
    return np.random.default_rng(derive_seed(seed, stream, generation))


def trial_seeds(seed: int, generation: int, n_trials: int, stream: Stream = Stream.TRIALS) -> List[int]:
    """Trial seeds shared by every individual of a generation"""
    state = np.random.SeedSequence([int(seed), int(stream), int(generation)]).generate_state(
        n_trials, dtype=np.uint64
    )
    return [int(s) & ((1 << 63) - 1) for s in state]
