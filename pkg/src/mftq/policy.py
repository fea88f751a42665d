"""Smoothed and exact greedy action distributions over Q-table rows."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DomainError, Rng, _validated_probs

# Exact float ties are the intended semantics of the uniform argmin; the
# tolerance only absorbs rounding from prior arithmetic.
TIE_TOL = 1e-12


@dataclass(frozen=True)
class ActionDistribution:
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _validated_probs(self.probs, "action distribution"))

    @property
    def size(self) -> int:
        return self.probs.shape[0]

    def as_array(self) -> np.ndarray:
        return self.probs


def softmin_weights(q_row: np.ndarray, phi: float) -> np.ndarray:
    """Unnormalized exp(-phi * (z - min z)). Shared with the trainers' hot loops."""
    z = np.asarray(q_row, dtype=np.float64)
    return np.exp(-phi * (z - z.min()))


def softmin(q_row, phi: float) -> ActionDistribution:
    """Boltzmann distribution over row entries, favouring small values.

    The row minimum is subtracted before exponentiation. The result is
    mathematically unchanged (softmin is shift invariant) but the
    computation survives phi as large as the torus experiments' 3000,
    where naive exp(-phi z) underflows to an all-zero vector.
    """
    z = np.asarray(q_row, dtype=np.float64)
    if z.ndim != 1:
        raise DomainError(f"q row must be 1-d, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise DomainError("q row has non-finite entries")
    if not phi >= 0:
        raise DomainError(f"phi must be nonnegative, got {phi!r}")
    w = softmin_weights(z, phi)
    return ActionDistribution(w / w.sum())


def argmin_e(q_row) -> ActionDistribution:
    """Uniform distribution over the exact minimizers of the row."""
    z = np.asarray(q_row, dtype=np.float64)
    if z.ndim != 1:
        raise DomainError(f"q row must be 1-d, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise DomainError("q row has non-finite entries")
    ties = z <= z.min() + TIE_TOL
    probs = ties / ties.sum()
    return ActionDistribution(probs)


def sample_action(dist: ActionDistribution, rng: Rng) -> int:
    """Inverse-CDF sample from the distribution using a single uniform draw."""
    return sample_action_from_uniform(dist.probs, rng.random())


def sample_action_from_uniform(probs: np.ndarray, u: float) -> int:
    cdf = np.cumsum(probs)
    idx = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return min(idx, len(probs) - 1)
