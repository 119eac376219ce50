"""Seeded counter-based random streams.

All stochastic code takes an explicit :class:`numpy.random.Generator`. The bit
generator is Philox-4x64-10: a counter-based generator whose output for a
given (key, counter) pair is fixed by its round constants

    multipliers  0xD2E7470EE14C6C93, 0xCA5A826395121157
    key bumps    0x9E3779B97F4A7C15, 0xBB67AE8584CAA73B

so streams are reproducible across platforms. Independent sub-streams are
derived by hashing ``(seed, *keys)`` through :class:`numpy.random.SeedSequence`.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Return a Philox generator keyed by ``seed`` and optional stream keys."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, *(int(k) for k in keys)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def rng_state(rng: np.random.Generator) -> dict:
    """JSON-serialisable snapshot of the generator position."""
    state = rng.bit_generator.state
    return {
        "bit_generator": state["bit_generator"],
        "state": {k: [int(v) for v in vals] for k, vals in state["state"].items()},
        "buffer": [int(v) for v in state["buffer"]],
        "buffer_pos": int(state["buffer_pos"]),
        "has_uint32": int(state["has_uint32"]),
        "uinteger": int(state["uinteger"]),
    }


def restore_rng(snapshot: dict) -> np.random.Generator:
    bit_gen = np.random.Philox()
    bit_gen.state = {
        "bit_generator": snapshot["bit_generator"],
        "state": {k: np.array(v, dtype=np.uint64) for k, v in snapshot["state"].items()},
        "buffer": np.array(snapshot["buffer"], dtype=np.uint64),
        "buffer_pos": snapshot["buffer_pos"],
        "has_uint32": snapshot["has_uint32"],
        "uinteger": snapshot["uinteger"],
    }
    return np.random.Generator(bit_gen)
