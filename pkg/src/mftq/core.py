"""Foundational spaces, distributions, tables, and environment abstractions.

Everything here is immutable after construction and safe to share across
threads. Random number generators are the one exception: each run owns
exactly one `Rng` and never shares it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

# Construction rejects entries below -NEGATIVE_TOL; smaller negative dust is
# clipped to zero. SUM_TOL separates floating-point drift from genuine bugs:
# vectors whose mass deviates more than this are refused, not renormalized.
NEGATIVE_TOL = 1e-12
SUM_TOL = 1e-6


class DomainError(ValueError):
    """A precondition on shapes, ranges, or probability mass was violated."""


@dataclass(frozen=True)
class StateSpace:
    size: int
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.size < 1:
            raise DomainError(f"state space needs size >= 1, got {self.size}")
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))
            if len(self.labels) != self.size:
                raise DomainError("labels must have exactly one entry per state")


@dataclass(frozen=True)
class ActionSpace:
    size: int
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.size < 1:
            raise DomainError(f"action space needs size >= 1, got {self.size}")
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))
            if len(self.labels) != self.size:
                raise DomainError("labels must have exactly one entry per action")


def _validated_probs(raw, what: str) -> np.ndarray:
    probs = np.asarray(raw, dtype=np.float64)
    if probs.ndim != 1:
        raise DomainError(f"{what} must be a 1-d vector, got shape {probs.shape}")
    if not np.all(np.isfinite(probs)):
        raise DomainError(f"{what} has non-finite entries")
    if probs.min(initial=0.0) < -NEGATIVE_TOL:
        raise DomainError(f"{what} has a negative entry below -{NEGATIVE_TOL:g}")
    probs = np.clip(probs, 0.0, None)
    total = probs.sum()
    if abs(total - 1.0) > SUM_TOL:
        raise DomainError(f"{what} mass {total!r} is not 1 within {SUM_TOL:g}")
    probs = probs / total
    probs.flags.writeable = False
    return probs


@dataclass(frozen=True)
class SimplexVector:
    """Probability distribution over the finite state space (the mean field)."""

    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _validated_probs(self.probs, "simplex vector"))

    @property
    def size(self) -> int:
        return self.probs.shape[0]

    def as_array(self) -> np.ndarray:
        return self.probs

    @staticmethod
    def uniform(size: int) -> "SimplexVector":
        return SimplexVector(np.full(size, 1.0 / size))

    @staticmethod
    def from_weights(weights) -> "SimplexVector":
        """Normalize an arbitrary nonnegative weight vector with positive mass."""
        w = np.asarray(weights, dtype=np.float64)
        total = w.sum()
        if not np.isfinite(total) or total <= 0:
            raise DomainError("weights must be nonnegative with positive finite mass")
        return SimplexVector(w / total)


@dataclass(frozen=True)
class QTable:
    """State-action value table, |X| x |A|."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DomainError(f"Q table must be 2-d, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DomainError("Q table has non-finite entries")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def n_states(self) -> int:
        return self.values.shape[0]

    @property
    def n_actions(self) -> int:
        return self.values.shape[1]

    @staticmethod
    def zeros(n_states: int, n_actions: int) -> "QTable":
        return QTable(np.zeros((n_states, n_actions)))


@dataclass(frozen=True)
class TabularMFEnvironment:
    """One-population environment: cost f(x, a, mu) and kernel p(.|x, a, mu).

    `cost` and `kernel` take a state index, an action index, and the mean
    field as a plain float array. `kernel` returns next-state probabilities
    (array or SimplexVector). The optional vectorized hooks return the whole
    cost table / kernel tensor at once; built-in environments provide them,
    and the generic fallbacks loop over the scalar callables.

    Lipschitz constants (L^1 in mu) and the sup of |f| are declared when
    known; `l_p == 0` is taken to mean the kernel does not depend on mu,
    which unlocks cached-kernel fast paths.
    """

    states: StateSpace
    actions: ActionSpace
    cost: Callable[[int, int, np.ndarray], float]
    kernel: Callable[[int, int, np.ndarray], "SimplexVector | np.ndarray"]
    l_f: float | None = None
    l_p: float | None = None
    f_sup: float | None = None
    cost_table_fn: Callable[[np.ndarray], np.ndarray] | None = None
    kernel_tensor_fn: Callable[[np.ndarray], np.ndarray] | None = None

    @property
    def n_states(self) -> int:
        return self.states.size

    @property
    def n_actions(self) -> int:
        return self.actions.size

    @property
    def mu_free_kernel(self) -> bool:
        return self.l_p == 0.0

    def kernel_array(self, x: int, a: int, mu: np.ndarray) -> np.ndarray:
        out = self.kernel(x, a, mu)
        if isinstance(out, SimplexVector):
            return out.probs
        return _validated_probs(out, f"kernel row p(.|{x},{a},mu)")

    def kernel_dist(self, x: int, a: int, mu: np.ndarray) -> SimplexVector:
        return SimplexVector(self.kernel_array(x, a, mu))

    def cost_table(self, mu: np.ndarray) -> np.ndarray:
        if self.cost_table_fn is not None:
            return self.cost_table_fn(mu)
        nx, na = self.n_states, self.n_actions
        table = np.empty((nx, na))
        for x in range(nx):
            for a in range(na):
                table[x, a] = self.cost(x, a, mu)
        return table

    def kernel_tensor(self, mu: np.ndarray) -> np.ndarray:
        """Dense p[x, a, x'] at the given mean field."""
        if self.kernel_tensor_fn is not None:
            return self.kernel_tensor_fn(mu)
        nx, na = self.n_states, self.n_actions
        tensor = np.empty((nx, na, nx))
        for x in range(nx):
            for a in range(na):
                tensor[x, a] = self.kernel_array(x, a, mu)
        return tensor


@dataclass(frozen=True)
class ThreePopEnvironment:
    """Two-measure environment: cost f(x, a, mu, mu_loc), kernel p3(.|x, a, mu, mu_loc)."""

    states: StateSpace
    actions: ActionSpace
    cost3: Callable[[int, int, np.ndarray, np.ndarray], float]
    kernel3: Callable[[int, int, np.ndarray, np.ndarray], "SimplexVector | np.ndarray"]
    l_f_glob: float | None = None
    l_f_loc: float | None = None
    l_p_glob: float | None = None
    l_p_loc: float | None = None
    f_sup: float | None = None
    cost_table_fn: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    kernel_tensor_fn: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None

    @property
    def n_states(self) -> int:
        return self.states.size

    @property
    def n_actions(self) -> int:
        return self.actions.size

    @property
    def mu_free_kernel(self) -> bool:
        return self.l_p_glob == 0.0 and self.l_p_loc == 0.0

    def kernel_array(self, x, a, mu, mu_loc) -> np.ndarray:
        out = self.kernel3(x, a, mu, mu_loc)
        if isinstance(out, SimplexVector):
            return out.probs
        return _validated_probs(out, f"kernel row p3(.|{x},{a},mu,mu_loc)")

    def cost_table(self, mu: np.ndarray, mu_loc: np.ndarray) -> np.ndarray:
        if self.cost_table_fn is not None:
            return self.cost_table_fn(mu, mu_loc)
        nx, na = self.n_states, self.n_actions
        table = np.empty((nx, na))
        for x in range(nx):
            for a in range(na):
                table[x, a] = self.cost3(x, a, mu, mu_loc)
        return table

    def kernel_tensor(self, mu: np.ndarray, mu_loc: np.ndarray) -> np.ndarray:
        if self.kernel_tensor_fn is not None:
            return self.kernel_tensor_fn(mu, mu_loc)
        nx, na = self.n_states, self.n_actions
        tensor = np.empty((nx, na, nx))
        for x in range(nx):
            for a in range(na):
                tensor[x, a] = self.kernel_array(x, a, mu, mu_loc)
        return tensor


RNG_ALGORITHM = "pcg64"


@dataclass
class Rng:
    """Seeded deterministic generator; identical seed, identical stream."""

    seed: int
    algorithm: str = RNG_ALGORITHM
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.algorithm != RNG_ALGORITHM:
            raise DomainError(f"unsupported rng algorithm {self.algorithm!r}")
        if not 0 <= self.seed < 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def random(self) -> float:
        return float(self.generator.random())

    def uniform_block(self, n: int) -> np.ndarray:
        return self.generator.random(n)


def make_rng(seed: int) -> Rng:
    return Rng(seed)


def dirac(x: int, states: StateSpace) -> SimplexVector:
    """Point mass at state x."""
    if not 0 <= x < states.size:
        raise DomainError(f"state index {x} out of range for |X|={states.size}")
    probs = np.zeros(states.size)
    probs[x] = 1.0
    return SimplexVector(probs)


def l1_distance(a: SimplexVector, b: SimplexVector) -> float:
    if a.size != b.size:
        raise DomainError(f"length mismatch: {a.size} vs {b.size}")
    return float(np.abs(a.probs - b.probs).sum())


def sup_distance(a: QTable, b: QTable) -> float:
    if a.values.shape != b.values.shape:
        raise DomainError(f"shape mismatch: {a.values.shape} vs {b.values.shape}")
    return float(np.abs(a.values - b.values).max())
