"""Combination weight rules for the combine step.

Two rules are provided: the constant rule weighting each neighbor by its
shard size, and the adaptive rule that additionally scores neighbors by
how well their recent gradient direction agrees with the neighborhood
gradient (smaller smoothed angle, exponentially larger weight, via a
Gompertz-shaped score). Both produce weights on the probability simplex
over exactly the supplied neighbor list.

All sums run in ascending neighbor-id order so floating-point results are
reproducible run to run.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptyNeighborhoodError,
    KeyMismatchError,
    NonpositiveSizeError,
    NonpositiveStepSizeError,
)

# Vectors shorter than this are treated as silent (no usable direction).
ZERO_NORM = 1e-15

WeightVector = dict[int, float]


@dataclass(frozen=True)
class GombertzParams:
    """Scale parameter of the angle-to-score mapping f(x) = a(1 - e^(-e^(-a(x-1))))."""

    a: float = 5.0

    def __post_init__(self):
        if self.a <= 0:
            raise ValueError(f"a must be positive, got {self.a}")


@dataclass(frozen=True)
class AngleState:
    """Per-neighbor smoothed angles plus the global round counter driving Eq-style smoothing."""

    smoothed: Mapping[int, float]
    round_counter: int = 0

    def angle(self, neighbor: int) -> float:
        return self.smoothed[neighbor]


def fresh_angle_state() -> AngleState:
    return AngleState(smoothed={}, round_counter=0)


def _checked_ids(neighbor_ids: Sequence[int]) -> list[int]:
    ids = [int(i) for i in neighbor_ids]
    if not ids:
        raise EmptyNeighborhoodError("neighbor list is empty")
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate neighbor ids in {ids}")
    return ids


def _checked_sizes(ids: Sequence[int], shard_sizes: Mapping[int, int]) -> list[int]:
    missing = [i for i in ids if i not in shard_sizes]
    if missing:
        raise KeyMismatchError(f"shard sizes missing for agents {missing}")
    sizes = [int(shard_sizes[i]) for i in ids]
    if any(s <= 0 for s in sizes):
        raise NonpositiveSizeError(f"shard sizes must be positive, got {dict(zip(ids, sizes))}")
    return sizes


def constant_weights(neighbor_ids: Sequence[int], shard_sizes: Mapping[int, int]) -> WeightVector:
    """Weight each neighbor by its shard size, normalized over the list."""
    ids = _checked_ids(neighbor_ids)
    sizes = _checked_sizes(ids, shard_sizes)
    total = float(sum(sizes))
    return {i: s / total for i, s in zip(ids, sizes)}


def neighborhood_gradient(
    deltas: Mapping[int, np.ndarray],
    step_sizes: Mapping[int, float],
    base_weights: Mapping[int, float],
) -> np.ndarray:
    """Estimate the neighborhood gradient as -sum_l a_l * delta_l / mu_l.

    Each delta is -mu_l times the accumulated local gradient, so dividing
    by mu_l and negating recovers a size-weighted gradient average. The
    base weights are the constant (size-proportional) ones.
    """
    ids = sorted(base_weights)
    if set(deltas) != set(ids) or set(step_sizes) != set(ids):
        raise KeyMismatchError(
            f"key sets differ: weights {ids}, deltas {sorted(deltas)}, mus {sorted(step_sizes)}"
        )
    bad = {i: step_sizes[i] for i in ids if step_sizes[i] <= 0}
    if bad:
        raise NonpositiveStepSizeError(f"step sizes must be positive, got {bad}")
    total = np.zeros_like(np.asarray(deltas[ids[0]], dtype=np.float64))
    for i in ids:
        total += base_weights[i] * (np.asarray(deltas[i], dtype=np.float64) / step_sizes[i])
    return -total


def gradient_angle(delta_l: np.ndarray, global_grad: np.ndarray) -> float:
    """Angle in [0, pi] between the direction -delta_l and the neighborhood gradient.

    -delta_l points along the sender's accumulated gradient (the mu_l
    scaling drops out of the angle). A vanishing vector on either side
    yields the neutral pi/2. The cosine is clamped to [-1, 1] so rounding
    can never produce NaN.
    """
    delta_l = np.asarray(delta_l, dtype=np.float64)
    global_grad = np.asarray(global_grad, dtype=np.float64)
    if delta_l.shape != global_grad.shape:
        raise DimensionMismatchError(
            f"delta shape {delta_l.shape} vs gradient shape {global_grad.shape}"
        )
    norm_d = float(np.linalg.norm(delta_l))
    norm_g = float(np.linalg.norm(global_grad))
    if norm_d < ZERO_NORM or norm_g < ZERO_NORM:
        return math.pi / 2.0
    cosine = float(-np.dot(delta_l, global_grad) / (norm_d * norm_g))
    return math.acos(max(-1.0, min(1.0, cosine)))


def update_smoothed_angle(state: AngleState, raw_angles: Mapping[int, float]) -> AngleState:
    """Fold one round of raw angles into the running per-neighbor mean.

    The counter t is global across the whole run and never resets; with a
    static neighbor set the result is the arithmetic mean of all angles
    observed so far. A neighbor appearing for the first time starts at its
    raw angle.
    """
    missing = [i for i in state.smoothed if i not in raw_angles]
    if missing:
        raise KeyMismatchError(f"raw angles missing for known neighbors {missing}")
    t = state.round_counter + 1
    smoothed: dict[int, float] = {}
    for neighbor, theta in raw_angles.items():
        if neighbor in state.smoothed:
            smoothed[neighbor] = (t - 1) / t * state.smoothed[neighbor] + theta / t
        else:
            smoothed[neighbor] = float(theta)
    return AngleState(smoothed=smoothed, round_counter=t)


def gombertz(params: GombertzParams, x: float) -> float:
    """Decreasing score of an angle with range (0, a), saturating at the limits."""
    a = params.a
    exponent = -a * (x - 1.0)
    # Past exp's overflow point the inner term is effectively infinite and
    # the score equals its x -> -inf limit.
    if exponent > 700.0:
        return a
    return a * (1.0 - math.exp(-math.exp(exponent)))


def adaptive_weights(
    neighbor_ids: Sequence[int],
    shard_sizes: Mapping[int, int],
    smoothed_angles: Mapping[int, float],
    params: GombertzParams,
) -> WeightVector:
    """Weight neighbors by D_l * e^(f(smoothed angle)), normalized over the list.

    The maximum score is subtracted before exponentiation, which keeps the
    exponentials in range and makes the equal-angles case reduce to the
    constant rule bit for bit (every factor becomes exactly 1.0).
    """
    ids = _checked_ids(neighbor_ids)
    sizes = _checked_sizes(ids, shard_sizes)
    missing = [i for i in ids if i not in smoothed_angles]
    if missing:
        raise KeyMismatchError(f"smoothed angles missing for agents {missing}")
    scores = [gombertz(params, float(smoothed_angles[i])) for i in ids]
    top = max(scores)
    scaled = [s * math.exp(f - top) for s, f in zip(sizes, scores)]
    total = float(sum(scaled))
    return {i: v / total for i, v in zip(ids, scaled)}


def combine(models: Mapping[int, np.ndarray], weights: Mapping[int, float]) -> np.ndarray:
    """Convex combination of neighbor models, summed in ascending id order."""
    ids = sorted(weights)
    if set(models) != set(ids):
        raise KeyMismatchError(f"model keys {sorted(models)} != weight keys {ids}")
    first = np.asarray(models[ids[0]], dtype=np.float64)
    result = np.zeros_like(first)
    for i in ids:
        vec = np.asarray(models[i], dtype=np.float64)
        if vec.shape != first.shape:
            raise DimensionMismatchError(f"model {i} has shape {vec.shape}, expected {first.shape}")
        result += weights[i] * vec
    return result
