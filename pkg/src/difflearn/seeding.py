"""Named RNG substreams derived from one master seed.

Every stochastic component (model init, shard partitioning, per-agent
batching, topology generation, eval subsampling, scenario draws) pulls
from its own labeled stream, so changing e.g. the topology draw never
perturbs the mini-batch order of an otherwise identical run.
"""
from __future__ import annotations

import numpy as np

_STREAM_CODES = {
    "init": 0,
    "partition": 1,
    "batch": 2,
    "topology": 3,
    "eval": 4,
    "scenario": 5,
    "data": 6,
}


def substream(master_seed: int, label: str, index: int = 0) -> np.random.SeedSequence:
    """Return the SeedSequence for the (label, index) stream of a master seed."""
    if master_seed < 0:
        raise ValueError(f"master seed must be non-negative, got {master_seed}")
    try:
        code = _STREAM_CODES[label]
    except KeyError:
        raise ValueError(f"unknown stream label {label!r}") from None
    return np.random.SeedSequence((int(master_seed), code, int(index)))


def substream_rng(master_seed: int, label: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(substream(master_seed, label, index))


def substream_int(master_seed: int, label: str, index: int = 0) -> int:
    """Collapse a stream to a single 64-bit integer seed."""
    hi, lo = substream(master_seed, label, index).generate_state(2, np.uint32)
    return (int(hi) << 32) | int(lo)
