"""Built-in environments: the two-state-and-up torus family and generic
table-defined environments.

The torus has states {0, ..., N_x - 1}, actions {-1, 0, +1}, and moves to
x + a mod N_x unless an independent uniform shake hits (probability
p_zeta, landing uniformly on the whole torus). Its kernel does not depend
on the mean field, so L_p = 0; the cost couples through the crowding term
mu(x)^2 with L_f = 1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (ActionSpace, DomainError, SimplexVector, StateSpace,
                   TabularMFEnvironment, ThreePopEnvironment)

TORUS_ACTIONS = (-1, 0, 1)


@dataclass(frozen=True)
class TorusSpec:
    n_states: int
    p_zeta: float

    def __post_init__(self):
        if self.n_states < 2:
            raise DomainError("torus needs at least 2 states")
        if not 0 < self.p_zeta <= 1:
            raise DomainError("p_zeta must lie in (0, 1]")


def _torus_kernel_tensor(n_states: int, p_zeta: float) -> np.ndarray:
    tensor = np.full((n_states, len(TORUS_ACTIONS), n_states), p_zeta / n_states)
    for x in range(n_states):
        for ai, move in enumerate(TORUS_ACTIONS):
            tensor[x, ai, (x + move) % n_states] += 1.0 - p_zeta
    tensor.flags.writeable = False
    return tensor


def _torus_base_cost(n_states: int) -> np.ndarray:
    base = np.array([[(x / n_states - 0.5) ** 2 + move * move
                      for move in TORUS_ACTIONS] for x in range(n_states)])
    base.flags.writeable = False
    return base


def torus_env(spec: TorusSpec) -> TabularMFEnvironment:
    """Torus environment with cost |x/N - 1/2|^2 + mu(x)^2 + |a|^2."""
    nx = spec.n_states
    tensor = _torus_kernel_tensor(nx, spec.p_zeta)
    base = _torus_base_cost(nx)

    def cost(x, a, mu):
        return base[x, a] + mu[x] * mu[x]

    def kernel(x, a, mu):
        return SimplexVector(tensor[x, a])

    def cost_table(mu):
        return base + np.square(np.asarray(mu))[:, None]

    def kernel_tensor(mu):
        return tensor

    return TabularMFEnvironment(
        states=StateSpace(nx),
        actions=ActionSpace(len(TORUS_ACTIONS), labels=("-1", "0", "+1")),
        cost=cost,
        kernel=kernel,
        l_f=1.0,
        l_p=0.0,
        f_sup=float(base.max() + 1.0),
        cost_table_fn=cost_table,
        kernel_tensor_fn=kernel_tensor,
    )


def torus3_env(spec: TorusSpec, local_coeff: float, global_coeff: float) -> ThreePopEnvironment:
    """Two-measure torus: crowding charged against both the global and the
    local distribution. A test instance; with local_coeff = 0 the cost
    degenerates to the one-population torus cost.
    """
    nx = spec.n_states
    tensor = _torus_kernel_tensor(nx, spec.p_zeta)
    base = _torus_base_cost(nx)

    def cost3(x, a, mu, mu_loc):
        return base[x, a] + global_coeff * mu[x] * mu[x] + local_coeff * mu_loc[x] * mu_loc[x]

    def kernel3(x, a, mu, mu_loc):
        return SimplexVector(tensor[x, a])

    def cost_table(mu, mu_loc):
        crowd = global_coeff * np.square(np.asarray(mu)) + local_coeff * np.square(np.asarray(mu_loc))
        return base + crowd[:, None]

    def kernel_tensor(mu, mu_loc):
        return tensor

    # |c (mu(x)^2 - nu(x)^2)| <= 2|c| |mu(x) - nu(x)| <= |c| ||mu - nu||_1,
    # the same mass-balance argument that gives the torus L_f = 1.
    return ThreePopEnvironment(
        states=StateSpace(nx),
        actions=ActionSpace(len(TORUS_ACTIONS), labels=("-1", "0", "+1")),
        cost3=cost3,
        kernel3=kernel3,
        l_f_glob=abs(global_coeff),
        l_f_loc=abs(local_coeff),
        l_p_glob=0.0,
        l_p_loc=0.0,
        f_sup=float(base.max() + max(global_coeff, 0.0) + max(local_coeff, 0.0)),
        cost_table_fn=cost_table,
        kernel_tensor_fn=kernel_tensor,
    )


@dataclass(frozen=True)
class TableEnvSpec:
    """Generic tabular instance: a mu-independent kernel table plus the cost
    family base(x, a) + coeff(x, a) * mu(x)^k.
    """

    kernel_table: np.ndarray  # |X| x |A| x |X|
    cost_base: np.ndarray     # |X| x |A|
    cost_mf_coeff: np.ndarray # |X| x |A|
    cost_mf_power: int = 2

    def __post_init__(self):
        kernel = np.asarray(self.kernel_table, dtype=np.float64)
        base = np.asarray(self.cost_base, dtype=np.float64)
        coeff = np.asarray(self.cost_mf_coeff, dtype=np.float64)
        if kernel.ndim != 3 or kernel.shape[0] != kernel.shape[2]:
            raise DomainError(f"kernel table must be |X| x |A| x |X|, got {kernel.shape}")
        nx, na, _ = kernel.shape
        if base.shape != (nx, na) or coeff.shape != (nx, na):
            raise DomainError("cost arrays must be |X| x |A|")
        if not (np.all(np.isfinite(kernel)) and np.all(np.isfinite(base))
                and np.all(np.isfinite(coeff))):
            raise DomainError("table entries must be finite")
        if kernel.min() < 0:
            raise DomainError("kernel table has negative entries")
        sums = kernel.sum(axis=2)
        if np.abs(sums - 1.0).max() > 1e-6:
            raise DomainError("kernel rows must sum to 1 within 1e-6")
        kernel = kernel / sums[:, :, None]
        if self.cost_mf_power < 1:
            raise DomainError("cost_mf_power must be a positive integer")
        kernel.flags.writeable = False
        base = base.copy(); base.flags.writeable = False
        coeff = coeff.copy(); coeff.flags.writeable = False
        object.__setattr__(self, "kernel_table", kernel)
        object.__setattr__(self, "cost_base", base)
        object.__setattr__(self, "cost_mf_coeff", coeff)


def table_env(spec: TableEnvSpec) -> TabularMFEnvironment:
    nx, na, _ = spec.kernel_table.shape
    kernel_tab = spec.kernel_table
    base = spec.cost_base
    coeff = spec.cost_mf_coeff
    k = spec.cost_mf_power

    def cost(x, a, mu):
        return base[x, a] + coeff[x, a] * mu[x] ** k

    def kernel(x, a, mu):
        return SimplexVector(kernel_tab[x, a])

    def cost_table(mu):
        return base + coeff * (np.asarray(mu) ** k)[:, None]

    def kernel_tensor(mu):
        return kernel_tab

    # sup over [0,1] of the derivative of mu(x)^k, valid as an L^1 constant
    # by the same mass-balance argument as the torus cost.
    l_f = float(np.abs(coeff).max() * k)
    f_sup = float((np.abs(base) + np.abs(coeff)).max())
    return TabularMFEnvironment(
        states=StateSpace(nx),
        actions=ActionSpace(na),
        cost=cost,
        kernel=kernel,
        l_f=l_f,
        l_p=0.0,
        f_sup=f_sup,
        cost_table_fn=cost_table,
        kernel_tensor_fn=kernel_tensor,
    )


def torus_as_table(spec: TorusSpec) -> TableEnvSpec:
    """The torus expressed in the generic table family (bitwise-identical
    kernel and cost values)."""
    nx = spec.n_states
    return TableEnvSpec(
        kernel_table=_torus_kernel_tensor(nx, spec.p_zeta).copy(),
        cost_base=_torus_base_cost(nx).copy(),
        cost_mf_coeff=np.ones((nx, len(TORUS_ACTIONS))),
        cost_mf_power=2,
    )
