"""Reference solutions: contraction fixed points, equilibrium
characterizations, action gaps, the softmin-parameter ceiling, and
accuracy-bound evaluation.

All solvers report the undamped fixed-point residual of the returned
iterate. Damping starts at 1 (plain iteration, the contraction regime) and
is halved whenever the residual stagnates or a short cycle is detected, so
super-critical softmin parameters degrade into a damped sliding search
instead of diverging. Non-convergence raises `ConvergenceError`, which
carries the best iterate seen.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .core import (DomainError, QTable, SimplexVector, TabularMFEnvironment,
                   ThreePopEnvironment)
from .operators import (PolicyTable, _bellman_array, _softmin_rows, _t2_array,
                        policy_kernel_matrix)
from .policy import TIE_TOL


@dataclass(frozen=True)
class FixedPointSolution:
    mu: SimplexVector
    q: QTable
    mu_loc: SimplexVector | None = None
    iterations: int = 0
    residuals: dict = field(default_factory=dict)
    converged: bool = True
    residual_history: tuple = ()


class ConvergenceError(RuntimeError):
    """Solver failed to reach tolerance; `best` holds the best iterate seen."""

    def __init__(self, message: str, best: FixedPointSolution | None = None,
                 layer: str | None = None):
        super().__init__(message)
        self.best = best
        self.layer = layer


def solve_q_star(env: TabularMFEnvironment, mu: SimplexVector, gamma: float,
                 tol: float = 1e-10, max_iter: int = 200_000,
                 q0: np.ndarray | None = None) -> QTable:
    """Value iteration to the frozen-mean-field optimal table.

    Stops once the sweep residual is below tol * (1 - gamma) / gamma, which
    bounds the distance to the fixed point by tol via the gamma-contraction.
    """
    if tol <= 0:
        raise DomainError("tol must be positive")
    values = _solve_q_star_array(env, mu.probs, gamma, tol, max_iter, q0)
    return QTable(values)


def _solve_q_star_array(env, mu: np.ndarray, gamma: float, tol: float,
                        max_iter: int, q0: np.ndarray | None) -> np.ndarray:
    q = np.zeros((env.n_states, env.n_actions)) if q0 is None else np.array(q0, dtype=float)
    stop = tol * (1.0 - gamma) / gamma
    cost = env.cost_table(mu)
    tensor = env.kernel_tensor(mu)
    last = None
    for _ in range(max_iter):
        new = cost + gamma * tensor @ q.min(axis=1)
        resid = float(np.abs(new - q).max())
        q = new
        if resid <= stop:
            return q
        # gamma-contraction sanity: each sweep shrinks the residual by >= gamma
        # (checked away from the float noise floor).
        if last is not None and last > 1e-13 * (1 + np.abs(q).max()):
            if resid > gamma * last + 1e-9 * (1 + last):
                raise ConvergenceError(
                    f"value-iteration residual grew ({last:g} -> {resid:g})")
        last = resid
    raise ConvergenceError(
        f"value iteration did not reach tol={tol:g} in {max_iter} sweeps "
        f"(last residual {resid:g})")


class StationaryResult(NamedTuple):
    mu: SimplexVector
    iterations: int
    unique: bool
    residual: float


def stationary_distribution(env: TabularMFEnvironment, pi: PolicyTable,
                            mu_in_kernel: SimplexVector, tol: float = 1e-12,
                            max_iter: int = 1_000_000,
                            start: SimplexVector | None = None) -> StationaryResult:
    """Power iteration to the fixed point of the policy-averaged transition
    with the kernel frozen at `mu_in_kernel`. Uniqueness is flagged from
    strict positivity of the materialized transition matrix.
    """
    tensor = env.kernel_tensor(mu_in_kernel.probs)
    matrix = policy_kernel_matrix(tensor, pi.rows)
    start_arr = start.probs if start is not None else np.full(env.n_states, 1.0 / env.n_states)
    mu, iters, resid = _power_iterate(matrix, start_arr, tol, max_iter)
    unique = bool(matrix.min() > 0.0)
    return StationaryResult(SimplexVector(mu), iters, unique, resid)


def _power_iterate(matrix: np.ndarray, start: np.ndarray, tol: float,
                   max_iter: int) -> tuple[np.ndarray, int, float]:
    mu = start
    for k in range(max_iter):
        new = mu @ matrix
        resid = float(np.abs(new - mu).sum())
        if resid <= tol:
            return new, k + 1, resid
        mu = new
    raise ConvergenceError(
        f"power iteration did not reach tol={tol:g} in {max_iter} steps "
        f"(residual {resid:g})", layer="stationary")


def _damped_search(apply_map: Callable[[np.ndarray], np.ndarray],
                   x0: np.ndarray, norm: Callable[[np.ndarray], float],
                   tol: float, max_iter: int, eta0: float = 1.0,
                   min_eta: float = 1e-4, stall_window: int = 12):
    """Damped fixed-point search with stagnation- and cycle-triggered halving.

    Returns (x, fx, iterations, history) on success; raises ConvergenceError
    carrying (best_x, best_fx, history) otherwise.
    """
    x = np.array(x0, dtype=float)
    eta = eta0
    history: list[float] = []
    best = None
    since_improve = 0
    recent: list[np.ndarray] = []
    for k in range(max_iter):
        fx = apply_map(x)
        resid = norm(fx - x)
        history.append(resid)
        if best is None or resid < best[0]:
            best = (resid, x.copy(), fx.copy(), k)
            since_improve = 0
        else:
            since_improve += 1
        if resid <= tol:
            return x, fx, k + 1, history
        x_next = x + eta * (fx - x)
        step = norm(x_next - x)
        cycle = any(norm(x_next - p) < 0.1 * step + 1e-15 for p in recent)
        if (since_improve >= stall_window or cycle) and eta > min_eta:
            eta = max(eta / 2.0, min_eta)
            since_improve = 0
        recent.append(x.copy())
        if len(recent) > 3:
            recent.pop(0)
        x = x_next
    err = ConvergenceError(
        f"fixed-point search stalled at residual {best[0]:g} "
        f"(tol {tol:g}, {max_iter} sweeps)")
    err.payload = best + (history,)
    raise err


def _stationary_under_rows(env, rows: np.ndarray, start: np.ndarray,
                           tol: float, max_iter: int = 2_000_000) -> np.ndarray:
    """Stationary distribution under fixed policy rows. For a mean-field-free
    kernel this is plain power iteration on a fixed matrix; otherwise the
    kernel is refrozen at the current iterate every sweep.
    """
    if env.mu_free_kernel:
        matrix = policy_kernel_matrix(env.kernel_tensor(start), rows)
        mu, _, _ = _power_iterate(matrix, start, tol, max_iter)
        return mu

    def mu_map(mu):
        return mu @ policy_kernel_matrix(env.kernel_tensor(mu), rows)

    try:
        mu, _, _, _ = _damped_search(mu_map, start,
                                     lambda v: float(np.abs(v).sum()),
                                     tol, max_iter)
    except ConvergenceError as err:
        err.layer = "stationary"
        raise
    return mu


def solve_mfg_fixed_point(env: TabularMFEnvironment, gamma: float, phi: float,
                          tol: float = 1e-8, max_iter: int = 5000) -> FixedPointSolution:
    """Fixed point of mu <- P^{softmin Q*_mu, mu} mu with a nested value
    iteration per sweep (run at tol / 10).
    """
    inner_tol = tol / 10.0
    q_cache = {"q": None}

    def apply_map(mu):
        q = _solve_q_star_array(env, mu, gamma, inner_tol, 200_000, q_cache["q"])
        q_cache["q"] = q
        rows = _softmin_rows(q, phi)
        tensor = env.kernel_tensor(mu)
        return mu @ policy_kernel_matrix(tensor, rows)

    def finish(mu_arr, iterations, history, converged):
        q = _solve_q_star_array(env, mu_arr, gamma, inner_tol, 200_000, q_cache["q"])
        mu_vec = SimplexVector(mu_arr)
        rows = _softmin_rows(q, phi)
        p_res = float(np.abs(mu_arr @ policy_kernel_matrix(env.kernel_tensor(mu_arr), rows)
                             - mu_arr).sum())
        t_res = float(np.abs(_t2_array(env, q, mu_arr, gamma)).max())
        return FixedPointSolution(
            mu=mu_vec, q=QTable(q), iterations=iterations,
            residuals={"p_residual_l1": p_res, "t_residual_sup": t_res},
            converged=converged, residual_history=tuple(history))

    x0 = np.full(env.n_states, 1.0 / env.n_states)
    norm = lambda v: float(np.abs(v).sum())
    try:
        x, _, iters, history = _damped_search(apply_map, x0, norm, tol, max_iter)
    except ConvergenceError as err:
        if hasattr(err, "payload"):
            resid, best_x, _, best_k, history = err.payload
            err.best = finish(best_x, best_k + 1, history, converged=False)
        raise
    return finish(x, iters, history, converged=True)


def solve_mfc_fixed_point(env: TabularMFEnvironment, gamma: float, phi: float,
                          tol: float = 1e-8, max_iter: int = 5000) -> FixedPointSolution:
    """Fixed point of Q <- B_{mu*_Q} Q where mu*_Q is the stationary
    distribution under softmin_phi Q (inner fixed point per sweep).
    """
    inner_tol = tol / 10.0
    mu_cache = {"mu": np.full(env.n_states, 1.0 / env.n_states)}

    def stationary_for(q_values):
        rows = _softmin_rows(q_values, phi)
        mu = _stationary_under_rows(env, rows, mu_cache["mu"], inner_tol)
        mu_cache["mu"] = mu
        return mu

    def apply_map(q_flat):
        q = q_flat.reshape(env.n_states, env.n_actions)
        mu = stationary_for(q)
        return _bellman_array(env, q, mu, gamma).ravel()

    def finish(q_flat, iterations, history, converged):
        q = q_flat.reshape(env.n_states, env.n_actions)
        mu = stationary_for(q)
        rows = _softmin_rows(q, phi)
        p_res = float(np.abs(mu @ policy_kernel_matrix(env.kernel_tensor(mu), rows) - mu).sum())
        t_res = float(np.abs(_bellman_array(env, q, mu, gamma) - q).max())
        return FixedPointSolution(
            mu=SimplexVector(mu), q=QTable(q), iterations=iterations,
            residuals={"p_residual_l1": p_res, "t_residual_sup": t_res},
            converged=converged, residual_history=tuple(history))

    x0 = np.zeros(env.n_states * env.n_actions)
    norm = lambda v: float(np.abs(v).max())
    try:
        x, _, iters, history = _damped_search(apply_map, x0, norm, tol, max_iter)
    except ConvergenceError as err:
        if err.layer is None and hasattr(err, "payload"):
            resid, best_x, _, best_k, history = err.payload
            err.best = finish(best_x, best_k + 1, history, converged=False)
        raise
    return finish(x, iters, history, converged=True)


def solve_mfcg_fixed_point(env3: ThreePopEnvironment, gamma: float, phi: float,
                           tol: float = 1e-6, max_iter: int = 2000) -> FixedPointSolution:
    """Three nested fixed points: innermost local distribution given (Q, mu),
    middle value table given mu, outer global distribution. A stalled layer
    is identified in the raised error.
    """
    tol_mid = tol / 10.0
    tol_loc = tol / 100.0
    caches = {"q": None, "mu_loc": None}

    def local_fixed_point(q_values, mu):
        rows = _softmin_rows(q_values, phi)
        start = caches["mu_loc"] if caches["mu_loc"] is not None \
            else np.full(env3.n_states, 1.0 / env3.n_states)
        try:
            if env3.mu_free_kernel:
                matrix = policy_kernel_matrix(env3.kernel_tensor(mu, start), rows)
                mu_loc, _, _ = _power_iterate(matrix, start, tol_loc, 2_000_000)
            else:
                def loc_map(mu_loc):
                    tensor = env3.kernel_tensor(mu, mu_loc)
                    return mu_loc @ policy_kernel_matrix(tensor, rows)

                mu_loc, _, _, _ = _damped_search(loc_map, start,
                                                 lambda v: float(np.abs(v).sum()),
                                                 tol_loc, 2_000_000)
        except ConvergenceError as err:
            err.layer = "local"
            raise
        caches["mu_loc"] = mu_loc
        return mu_loc

    def value_fixed_point(mu):
        def q_map(q_flat):
            q = q_flat.reshape(env3.n_states, env3.n_actions)
            mu_loc = local_fixed_point(q, mu)
            target = env3.cost_table(mu, mu_loc) \
                + gamma * env3.kernel_tensor(mu, mu_loc) @ q.min(axis=1)
            return target.ravel()

        start = caches["q"].ravel() if caches["q"] is not None \
            else np.zeros(env3.n_states * env3.n_actions)
        try:
            q_flat, _, _, _ = _damped_search(q_map, start,
                                             lambda v: float(np.abs(v).max()),
                                             tol_mid, 100_000)
        except ConvergenceError as err:
            if err.layer is None:
                err.layer = "value"
            raise
        q = q_flat.reshape(env3.n_states, env3.n_actions)
        caches["q"] = q
        return q

    def apply_map(mu):
        q = value_fixed_point(mu)
        mu_loc = local_fixed_point(q, mu)
        rows = _softmin_rows(q, phi)
        tensor = env3.kernel_tensor(mu, mu_loc)
        return mu @ policy_kernel_matrix(tensor, rows)

    def finish(mu, iterations, history, converged):
        q = value_fixed_point(mu)
        mu_loc = local_fixed_point(q, mu)
        rows = _softmin_rows(q, phi)
        tensor = env3.kernel_tensor(mu, mu_loc)
        matrix = policy_kernel_matrix(tensor, rows)
        target = env3.cost_table(mu, mu_loc) + gamma * tensor @ q.min(axis=1)
        return FixedPointSolution(
            mu=SimplexVector(mu), q=QTable(q), mu_loc=SimplexVector(mu_loc),
            iterations=iterations,
            residuals={"p_residual_l1": float(np.abs(mu @ matrix - mu).sum()),
                       "t_residual_sup": float(np.abs(target - q).max()),
                       "p_loc_residual_l1": float(np.abs(mu_loc @ matrix - mu_loc).sum())},
            converged=converged, residual_history=tuple(history))

    x0 = np.full(env3.n_states, 1.0 / env3.n_states)
    try:
        x, _, iters, history = _damped_search(apply_map, x0,
                                              lambda v: float(np.abs(v).sum()),
                                              tol, max_iter)
    except ConvergenceError as err:
        if err.layer is None:
            err.layer = "global"
            if hasattr(err, "payload"):
                resid, best_x, _, best_k, history = err.payload
                err.best = finish(best_x, best_k + 1, history, converged=False)
        raise
    return finish(x, iters, history, converged=True)


def action_gap(q: QTable) -> float:
    """Smallest margin between a row minimum and the row's next distinct
    value; rows with all entries tied contribute infinity.
    """
    delta = math.inf
    for row in q.values:
        mn = row.min()
        above = row[row > mn + TIE_TOL]
        if above.size:
            delta = min(delta, float(above.min() - mn))
    return delta


def phi_max(c_min: float, l_p: float, l_f: float, gamma: float,
            state_count: int, action_count: int, f_sup: float) -> float:
    """Softmin-parameter ceiling for the contraction argument."""
    mass_gap = state_count * c_min - l_p
    if mass_gap <= 0:
        raise DomainError(
            f"|X| c_min = {state_count * c_min:g} must exceed L_p = {l_p:g}")
    return (mass_gap / action_count) * (1.0 - gamma) / (
        l_f + gamma / (1.0 - gamma) * l_p * f_sup)


@dataclass(frozen=True)
class BoundReport:
    kind: str
    phi: float
    phi_max: float
    delta: float
    mu_bound: float
    q_bound: float
    applicable: bool


def error_bounds(kind: str, phi: float, phi_max_value: float, delta: float,
                 l_f: float, l_p: float, f_sup: float, gamma: float,
                 action_count: int) -> BoundReport:
    """Distance bounds between the softmin equilibrium and the sharp one.

    Evaluating at phi = phi_max - 1/delta reproduces the optimized
    exp(1 - phi_max * delta) forms. For the two-measure setting pass the
    total (global + local) Lipschitz constants.
    """
    if kind not in ("MFG", "MFC", "MFCG"):
        raise DomainError(f"unknown bound kind {kind!r}")
    if not delta > 0:
        raise DomainError("action gap must be positive")
    applicable = phi < phi_max_value
    if not applicable:
        return BoundReport(kind, phi, phi_max_value, delta,
                           math.nan, math.nan, False)
    decay = 0.0 if math.isinf(delta) else math.exp(-phi * delta)
    root_a = math.sqrt(action_count)
    denom = (l_f + gamma / (1.0 - gamma) * l_p * f_sup) * (phi_max_value - phi)
    mu_bound = 2.0 * root_a * (1.0 - gamma) * decay / denom
    q_bound = 2.0 * root_a * decay / (phi_max_value - phi)
    return BoundReport(kind, phi, phi_max_value, delta, mu_bound, q_bound, True)


def solve_sharp_equilibrium(env: TabularMFEnvironment, gamma: float,
                            tol: float = 1e-8, max_iter: int = 5000,
                            kind: str = "MFG") -> FixedPointSolution:
    """The exact-greedy analogue of the softmin fixed points.

    No contraction is available here, so the iteration starts damped (0.5)
    and keeps halving on oscillation; a mixed equilibrium that the uniform
    tie-splitting policy cannot represent surfaces as a ConvergenceError
    whose `best` iterate is still the closest approach.
    """
    if kind not in ("MFG", "MFC"):
        raise DomainError(f"unknown sharp-equilibrium kind {kind!r}")
    inner_tol = tol / 10.0

    def greedy_rows(q_values):
        ties = q_values <= q_values.min(axis=1, keepdims=True) + TIE_TOL
        return ties / ties.sum(axis=1, keepdims=True)

    if kind == "MFG":
        q_cache = {"q": None}

        def apply_map(mu):
            q = _solve_q_star_array(env, mu, gamma, inner_tol, 200_000, q_cache["q"])
            q_cache["q"] = q
            rows = greedy_rows(q)
            return mu @ policy_kernel_matrix(env.kernel_tensor(mu), rows)

        def finish(mu, iterations, history, converged):
            q = _solve_q_star_array(env, mu, gamma, inner_tol, 200_000, q_cache["q"])
            rows = greedy_rows(q)
            p_res = float(np.abs(mu @ policy_kernel_matrix(env.kernel_tensor(mu), rows)
                                 - mu).sum())
            t_res = float(np.abs(_t2_array(env, q, mu, gamma)).max())
            return FixedPointSolution(
                mu=SimplexVector(mu), q=QTable(q), iterations=iterations,
                residuals={"p_residual_l1": p_res, "t_residual_sup": t_res},
                converged=converged, residual_history=tuple(history))

        x0 = np.full(env.n_states, 1.0 / env.n_states)
        norm = lambda v: float(np.abs(v).sum())
    else:
        mu_cache = {"mu": np.full(env.n_states, 1.0 / env.n_states)}

        def stationary_for(q_values):
            rows = greedy_rows(q_values)
            mu = _stationary_under_rows(env, rows, mu_cache["mu"], inner_tol)
            mu_cache["mu"] = mu
            return mu

        def apply_map(q_flat):
            q = q_flat.reshape(env.n_states, env.n_actions)
            mu = stationary_for(q)
            return _bellman_array(env, q, mu, gamma).ravel()

        def finish(q_flat, iterations, history, converged):
            q = q_flat.reshape(env.n_states, env.n_actions)
            mu = stationary_for(q)
            rows = greedy_rows(q)
            p_res = float(np.abs(mu @ policy_kernel_matrix(env.kernel_tensor(mu), rows)
                                 - mu).sum())
            t_res = float(np.abs(_bellman_array(env, q, mu, gamma) - q).max())
            return FixedPointSolution(
                mu=SimplexVector(mu), q=QTable(q), iterations=iterations,
                residuals={"p_residual_l1": p_res, "t_residual_sup": t_res},
                converged=converged, residual_history=tuple(history))

        x0 = np.zeros(env.n_states * env.n_actions)
        norm = lambda v: float(np.abs(v).max())

    try:
        x, _, iters, history = _damped_search(apply_map, x0, norm, tol, max_iter,
                                              eta0=0.5)
    except ConvergenceError as err:
        if err.layer is None and hasattr(err, "payload"):
            resid, best_x, _, best_k, history = err.payload
            err.best = finish(best_x, best_k + 1, history, converged=False)
        raise
    return finish(x, iters, history, converged=True)


def value_from_q(q: QTable) -> np.ndarray:
    """V(x) = min_a Q(x, a)."""
    return q.values.min(axis=1)
