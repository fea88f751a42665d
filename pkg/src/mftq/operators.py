"""Deterministic mean-field operators: population transition, Bellman, and
the drift fields driving the two- and three-timescale iterations.

Drift vectors are signed (differences of measures), not simplex vectors;
trainers, not operators, keep the updated iterates inside the simplex.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (DomainError, QTable, SimplexVector, TabularMFEnvironment,
                   ThreePopEnvironment)
from .policy import ActionDistribution, argmin_e, softmin


@dataclass(frozen=True)
class PolicyTable:
    """One action distribution per state, |X| x |A|."""

    rows: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            raise DomainError(f"policy table must be 2-d, got shape {rows.shape}")
        validated = np.vstack([ActionDistribution(row).probs for row in rows])
        validated.flags.writeable = False
        object.__setattr__(self, "rows", validated)

    @staticmethod
    def from_softmin(q: QTable, phi: float) -> "PolicyTable":
        return PolicyTable(np.vstack([softmin(row, phi).probs for row in q.values]))

    @staticmethod
    def from_argmin(q: QTable) -> "PolicyTable":
        return PolicyTable(np.vstack([argmin_e(row).probs for row in q.values]))

    @staticmethod
    def pure(action: int, n_states: int, n_actions: int) -> "PolicyTable":
        rows = np.zeros((n_states, n_actions))
        rows[:, action] = 1.0
        return PolicyTable(rows)


def policy_kernel_matrix(tensor: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """K[x', x] = sum_a pi(a|x') p(x|x', a, .), rows indexed by source state."""
    return np.einsum("xa,xay->xy", rows, tensor)


def transition_operator(env: TabularMFEnvironment, pi: PolicyTable,
                        mu: SimplexVector, input_dist: SimplexVector) -> SimplexVector:
    """One application of the population transition: the pushforward of
    `input_dist` under the policy-averaged kernel frozen at mean field `mu`."""
    if pi.rows.shape != (env.n_states, env.n_actions):
        raise DomainError("policy table shape does not match the environment")
    tensor = env.kernel_tensor(mu.probs)
    out = input_dist.probs @ policy_kernel_matrix(tensor, pi.rows)
    return SimplexVector(out)


def bellman(env: TabularMFEnvironment, q: QTable, mu: SimplexVector,
            gamma: float) -> QTable:
    """(B_mu Q)(x, a) = f(x, a, mu) + gamma * sum_x' p(x'|x, a, mu) min_a' Q(x', a')."""
    if not 0 < gamma < 1:
        raise DomainError(f"gamma must lie in (0, 1), got {gamma!r}")
    return QTable(_bellman_array(env, q.values, mu.probs, gamma))


def _bellman_array(env, q_values: np.ndarray, mu: np.ndarray, gamma: float) -> np.ndarray:
    tensor = env.kernel_tensor(mu)
    return env.cost_table(mu) + gamma * tensor @ q_values.min(axis=1)


def p2(env: TabularMFEnvironment, q: QTable, mu: SimplexVector, phi: float) -> np.ndarray:
    """Population drift under the softmin policy; entries sum to 0."""
    return _p2_array(env, q.values, mu.probs, phi)


def _p2_array(env, q_values: np.ndarray, mu: np.ndarray, phi: float) -> np.ndarray:
    rows = _softmin_rows(q_values, phi)
    tensor = env.kernel_tensor(mu)
    return mu @ policy_kernel_matrix(tensor, rows) - mu


def _softmin_rows(q_values: np.ndarray, phi: float) -> np.ndarray:
    z = q_values - q_values.min(axis=1, keepdims=True)
    w = np.exp(-phi * z)
    return w / w.sum(axis=1, keepdims=True)


def t2(env: TabularMFEnvironment, q: QTable, mu: SimplexVector, gamma: float) -> np.ndarray:
    """Bellman residual B_mu Q - Q; zero exactly at Q = Q*_mu."""
    return _t2_array(env, q.values, mu.probs, gamma)


def _t2_array(env, q_values: np.ndarray, mu: np.ndarray, gamma: float) -> np.ndarray:
    return _bellman_array(env, q_values, mu, gamma) - q_values


def p3(env3: ThreePopEnvironment, q: QTable, mu: SimplexVector,
       mu_loc: SimplexVector, phi: float) -> np.ndarray:
    """Drift of the global distribution under the two-measure kernel."""
    return _p3_array(env3, q.values, mu.probs, mu_loc.probs, phi, local=False)


def p3_prime(env3: ThreePopEnvironment, q: QTable, mu: SimplexVector,
             mu_loc: SimplexVector, phi: float) -> np.ndarray:
    """Drift of the local distribution under the same kernel."""
    return _p3_array(env3, q.values, mu.probs, mu_loc.probs, phi, local=True)


def _p3_array(env3, q_values, mu, mu_loc, phi, *, local: bool) -> np.ndarray:
    rows = _softmin_rows(q_values, phi)
    tensor = env3.kernel_tensor(mu, mu_loc)
    matrix = policy_kernel_matrix(tensor, rows)
    moved = mu_loc if local else mu
    return moved @ matrix - moved


def t3(env3: ThreePopEnvironment, q: QTable, mu: SimplexVector,
       mu_loc: SimplexVector, gamma: float) -> np.ndarray:
    """Two-measure Bellman residual."""
    return _t3_array(env3, q.values, mu.probs, mu_loc.probs, gamma)


def _t3_array(env3, q_values, mu, mu_loc, gamma) -> np.ndarray:
    tensor = env3.kernel_tensor(mu, mu_loc)
    target = env3.cost_table(mu, mu_loc) + gamma * tensor @ q_values.min(axis=1)
    return target - q_values


@dataclass(frozen=True)
class ConstantEstimates:
    c_min: float
    c_max: float
    l_f_hat: float
    l_p_hat: float
    l_f_declared: float | None
    l_p_declared: float | None

    @property
    def l_f(self) -> float:
        return self.l_f_declared if self.l_f_declared is not None else self.l_f_hat

    @property
    def l_p(self) -> float:
        return self.l_p_declared if self.l_p_declared is not None else self.l_p_hat


class ConstantsError(DomainError):
    """An estimated constant exceeds the environment's declared one."""


def simplex_grid(size: int, resolution: int):
    """All compositions of `resolution` into `size` parts, scaled to the simplex."""
    if resolution < 2:
        raise DomainError("grid resolution must be >= 2")

    def compositions(total, parts):
        if parts == 1:
            yield (total,)
            return
        for head in range(total + 1):
            for rest in compositions(total - head, parts - 1):
                yield (head,) + rest

    for combo in compositions(resolution, size):
        yield np.asarray(combo, dtype=np.float64) / resolution


def estimate_constants(env: TabularMFEnvironment, grid_resolution: int = 5,
                       samples: int = 200, seed: int = 0) -> ConstantEstimates:
    """Empirical kernel range and Lipschitz lower bounds over a simplex grid
    plus random mean fields. Declared metadata constants take precedence and
    the estimates are cross-checked against them.
    """
    rng = np.random.default_rng(seed)
    nx = env.n_states
    mus = list(simplex_grid(nx, grid_resolution))
    if samples > 0:
        draws = rng.dirichlet(np.ones(nx), size=samples)
        mus.extend(np.asarray(row) for row in draws)

    c_min, c_max = np.inf, -np.inf
    for mu in mus:
        tensor = env.kernel_tensor(mu)
        c_min = min(c_min, float(tensor.min()))
        c_max = max(c_max, float(tensor.max()))

    l_f_hat = 0.0
    l_p_hat = 0.0
    n_pairs = max(len(mus) - 1, 1)
    for i in range(n_pairs):
        mu_a, mu_b = mus[i], mus[i + 1]
        gap = float(np.abs(mu_a - mu_b).sum())
        if gap < 1e-12:
            continue
        df = np.abs(env.cost_table(mu_a) - env.cost_table(mu_b)).max()
        dp = np.abs(env.kernel_tensor(mu_a) - env.kernel_tensor(mu_b)).sum(axis=2).max()
        l_f_hat = max(l_f_hat, float(df) / gap)
        l_p_hat = max(l_p_hat, float(dp) / gap)

    for name, declared, estimated in (("L_f", env.l_f, l_f_hat),
                                      ("L_p", env.l_p, l_p_hat)):
        if declared is not None and estimated > declared + 1e-9:
            raise ConstantsError(
                f"estimated {name} = {estimated:.6g} exceeds declared {declared:.6g}")

    return ConstantEstimates(c_min=c_min, c_max=c_max, l_f_hat=l_f_hat,
                             l_p_hat=l_p_hat, l_f_declared=env.l_f,
                             l_p_declared=env.l_p)
