"""The four iterative learners: idealized deterministic, synchronous
stochastic, asynchronous single-trajectory, and the three-timescale
extension.

Every trainer preserves the simplex by construction: each mean-field update
is the convex combination (1 - rho) mu + rho (probability vector), and the
stored iterates are asserted to be valid distributions. Identical
(environment, config, seed) produce bitwise-identical traces.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (DomainError, QTable, Rng, SimplexVector,
                   TabularMFEnvironment, ThreePopEnvironment, dirac)
from .operators import _p2_array, _p3_array, _softmin_rows, _t2_array
from .schedules import RateSchedule, TimescaleConfig, rate_at

_CHUNK = 1 << 16


class TrainerInvariantError(RuntimeError):
    """A stored iterate violated a runtime invariant (simplex mass or Q bound)."""


@dataclass(frozen=True)
class TrainerConfig:
    gamma: float
    phi: float
    n_steps: int
    timescales: TimescaleConfig
    init_q: QTable | None = None
    init_mu: SimplexVector | None = None
    trace_stride: int | None = None
    seed: int = 0
    tol_mu: float | None = None
    tol_q: float | None = None

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise DomainError(f"gamma must lie in (0, 1), got {self.gamma!r}")
        if not self.phi >= 0:
            raise DomainError("phi must be nonnegative")
        if self.n_steps < 0:
            raise DomainError("n_steps must be nonnegative")
        if self.trace_stride is not None and self.trace_stride < 1:
            raise DomainError("trace_stride must be >= 1")
        if (self.tol_mu is None) != (self.tol_q is None):
            raise DomainError("early stopping needs both tol_mu and tol_q")

    @property
    def stride(self) -> int:
        if self.trace_stride is not None:
            return self.trace_stride
        return max(1, self.n_steps // 10_000)


@dataclass
class RunTrace:
    """Time-indexed record of a run.

    Row k holds the pre-step iterate (mu_n, Q_n) at step n = ns[k] together
    with the state observed, the action chosen, and the rates used at that
    step; the final row has no action or rates. `psi_mu` / `psi_q` are the
    cumulative rate-weighted noise terms, and the `*_abs_max` fields track
    the running sup of their magnitudes along the whole run.
    """

    ns: np.ndarray
    mus: np.ndarray
    qs: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    rho_qs: np.ndarray
    rho_mus: np.ndarray
    visit_counts: np.ndarray
    psi_mu: np.ndarray
    psi_q: np.ndarray
    psi_mu_abs_max: float
    psi_q_abs_max: float
    n_steps_run: int
    mu_locs: np.ndarray | None = None
    coverage_warnings: list = field(default_factory=list)

    @property
    def final_mu(self) -> SimplexVector:
        return SimplexVector(self.mus[-1])

    @property
    def final_q(self) -> QTable:
        return QTable(self.qs[-1])

    @property
    def final_mu_loc(self) -> SimplexVector | None:
        return None if self.mu_locs is None else SimplexVector(self.mu_locs[-1])

    @property
    def psi_mu_mean_increment(self) -> float:
        steps = max(self.n_steps_run, 1)
        return float(np.abs(self.psi_mu).max()) / steps

    @property
    def psi_q_mean_increment(self) -> float:
        steps = max(self.n_steps_run, 1)
        return float(np.abs(self.psi_q).max()) / steps


def _sync_rate(s: RateSchedule, n: int) -> float:
    # With synchronous updates every pair is visited once per step, so the
    # per-pair visit count at step n is n + 1 and poly_visit coincides with
    # poly_step.
    return rate_at(s, n, visit_count=n + 1)


def _check_mu_rate(rm: float):
    if rm > 1.0:
        raise DomainError(f"mean-field rate {rm:g} > 1 would exit the simplex")


class _TraceBuilder:
    def __init__(self, stride: int, three_pop: bool = False):
        self.stride = stride
        self.three_pop = three_pop
        self.rows: list[tuple] = []

    def due(self, n: int) -> bool:
        return n % self.stride == 0

    def store(self, n, mu, q, state=-1, action=-1, rho_q=math.nan,
              rho_mu=math.nan, mu_loc=None):
        self.rows.append((n, np.array(mu, dtype=float), np.array(q, dtype=float),
                          state, action, rho_q, rho_mu,
                          None if mu_loc is None else np.array(mu_loc, dtype=float)))

    def build(self, visit_counts, psi_mu, psi_q, psi_mu_max, psi_q_max,
              n_steps_run, coverage_warnings=()):
        ns = np.array([r[0] for r in self.rows], dtype=np.int64)
        mus = np.array([r[1] for r in self.rows])
        qs = np.array([r[2] for r in self.rows])
        states = np.array([r[3] for r in self.rows], dtype=np.int64)
        actions = np.array([r[4] for r in self.rows], dtype=np.int64)
        rho_qs = np.array([r[5] for r in self.rows])
        rho_mus = np.array([r[6] for r in self.rows])
        mu_locs = np.array([r[7] for r in self.rows]) if self.three_pop else None
        return RunTrace(ns=ns, mus=mus, qs=qs, states=states, actions=actions,
                        rho_qs=rho_qs, rho_mus=rho_mus,
                        visit_counts=np.array(visit_counts, dtype=np.int64),
                        psi_mu=np.array(psi_mu, dtype=float),
                        psi_q=np.array(psi_q, dtype=float),
                        psi_mu_abs_max=float(psi_mu_max),
                        psi_q_abs_max=float(psi_q_max),
                        n_steps_run=n_steps_run, mu_locs=mu_locs,
                        coverage_warnings=list(coverage_warnings))


def _assert_iterate(mu, q, f_sup, gamma, n):
    mass = float(sum(mu))
    if abs(mass - 1.0) > 1e-9 or min(mu) < -1e-12:
        raise TrainerInvariantError(
            f"step {n}: mean field left the simplex (mass {mass!r}, min {min(mu)!r})")
    if f_sup is not None:
        bound = f_sup / (1.0 - gamma) + 1.0
        peak = max(abs(v) for row in q for v in row) if isinstance(q, list) \
            else float(np.abs(q).max())
        if peak > bound:
            raise TrainerInvariantError(
                f"step {n}: |Q| = {peak:g} exceeds the {bound:g} bound")


def _init_arrays(env, cfg):
    nx, na = env.n_states, env.n_actions
    mu = cfg.init_mu.probs.copy() if cfg.init_mu is not None else np.full(nx, 1.0 / nx)
    if mu.shape != (nx,):
        raise DomainError("init_mu size does not match the environment")
    q = cfg.init_q.values.copy() if cfg.init_q is not None else np.zeros((nx, na))
    if q.shape != (nx, na):
        raise DomainError("init_q shape does not match the environment")
    return mu, q


def run_idealized(env: TabularMFEnvironment, cfg: TrainerConfig) -> RunTrace:
    """Deterministic coupled iteration on the exact drift fields.

    mu_{n+1} = mu_n + rho^mu_n P2(Q_n, mu_n),
    Q_{n+1}  = Q_n  + rho^Q_n  T2(Q_n, mu_n).

    The seed is unused; the trace is a pure function of (env, cfg).
    """
    ts = cfg.timescales
    if ts.regime not in ("MFG", "MFC"):
        raise DomainError("idealized trainer handles the MFG and MFC regimes")
    mu, q = _init_arrays(env, cfg)
    trace = _TraceBuilder(cfg.stride)
    steps_run = cfg.n_steps
    for n in range(cfg.n_steps):
        rq = _sync_rate(ts.q_schedule, n)
        rm = _sync_rate(ts.mu_schedule, n)
        _check_mu_rate(rm)
        if trace.due(n):
            _assert_iterate(mu, q, env.f_sup, cfg.gamma, n)
            trace.store(n, mu, q, rho_q=rq, rho_mu=rm)
        drift_mu = _p2_array(env, q, mu, cfg.phi)
        drift_q = _t2_array(env, q, mu, cfg.gamma)
        mu = mu + rm * drift_mu
        q = q + rq * drift_q
        if cfg.tol_mu is not None:
            if (rm * np.abs(drift_mu).sum() <= cfg.tol_mu
                    and rq * np.abs(drift_q).max() <= cfg.tol_q):
                steps_run = n + 1
                break
    _assert_iterate(mu, q, env.f_sup, cfg.gamma, steps_run)
    trace.store(steps_run, mu, q)
    nx, na = env.n_states, env.n_actions
    return trace.build(np.zeros((nx, na)), np.zeros(nx), np.zeros((nx, na)),
                       0.0, 0.0, steps_run)


def sample_p_check(env: TabularMFEnvironment, q: QTable, mu: SimplexVector,
                   phi: float, rng: Rng) -> np.ndarray:
    """One draw of the population-drift estimator: draw X ~ mu, an action
    from the softmin row at X, a transition X', and return delta(X') - mu."""
    u = rng.generator.random(3)
    x = int(np.searchsorted(np.cumsum(mu.probs), u[0], side="right"))
    x = min(x, env.n_states - 1)
    rows = _softmin_rows(q.values[x:x + 1], phi)[0]
    a = min(int(np.searchsorted(np.cumsum(rows), u[1], side="right")), env.n_actions - 1)
    kern = env.kernel_array(x, a, mu.probs)
    xp = min(int(np.searchsorted(np.cumsum(kern), u[2], side="right")), env.n_states - 1)
    out = -mu.probs.copy()
    out[xp] += 1.0
    return out


def sample_t_check(env: TabularMFEnvironment, q: QTable, mu: SimplexVector,
                   gamma: float, rng: Rng) -> np.ndarray:
    """One draw of the Bellman-residual estimator at every pair: an
    independent next state per (x, a), then cost + gamma min Q(X') - Q."""
    nx, na = env.n_states, env.n_actions
    u = rng.generator.random((nx, na))
    cum = env.kernel_tensor(mu.probs).cumsum(axis=2)
    next_states = np.minimum((cum < u[:, :, None]).sum(axis=2), nx - 1)
    vmin = q.values.min(axis=1)
    return env.cost_table(mu.probs) + gamma * vmin[next_states] - q.values


def run_synchronous_stochastic(env: TabularMFEnvironment,
                               cfg: TrainerConfig) -> RunTrace:
    """Sample-based synchronous updates: the exact drifts are replaced by
    their single-draw estimators, every pair refreshed each step."""
    ts = cfg.timescales
    if ts.regime not in ("MFG", "MFC"):
        raise DomainError("synchronous trainer handles the MFG and MFC regimes")
    nx, na = env.n_states, env.n_actions
    mu, q = _init_arrays(env, cfg)
    rng = Rng(cfg.seed)
    need = 3 + nx * na
    block = rng.generator.random((_CHUNK, need))
    bi = 0
    psi_mu = np.zeros(nx)
    psi_q = np.zeros((nx, na))
    psi_mu_max = 0.0
    psi_q_max = 0.0
    trace = _TraceBuilder(cfg.stride)
    mu_free = env.mu_free_kernel
    cum_cache = env.kernel_tensor(mu).cumsum(axis=2) if mu_free else None
    steps_run = cfg.n_steps
    for n in range(cfg.n_steps):
        rq = _sync_rate(ts.q_schedule, n)
        rm = _sync_rate(ts.mu_schedule, n)
        _check_mu_rate(rm)
        if bi == _CHUNK:
            block = rng.generator.random((_CHUNK, need))
            bi = 0
        u = block[bi]
        bi += 1
        cum = cum_cache if mu_free else env.kernel_tensor(mu).cumsum(axis=2)
        x = min(int(np.searchsorted(np.cumsum(mu), u[0], side="right")), nx - 1)
        pol = _softmin_rows(q[x:x + 1], cfg.phi)[0]
        a = min(int(np.searchsorted(np.cumsum(pol), u[1], side="right")), na - 1)
        xp = min(int(np.searchsorted(cum[x, a], u[2], side="right")), nx - 1)
        if trace.due(n):
            _assert_iterate(mu, q, env.f_sup, cfg.gamma, n)
            trace.store(n, mu, q, state=x, action=a, rho_q=rq, rho_mu=rm)
        # population estimator and its realized noise
        pcheck = -mu.copy()
        pcheck[xp] += 1.0
        noise_mu = pcheck - _p2_array(env, q, mu, cfg.phi)
        psi_mu += rm * noise_mu
        psi_mu_max = max(psi_mu_max, float(np.abs(psi_mu).max()))
        # per-pair Bellman estimator
        draws = u[3:].reshape(nx, na)
        next_states = np.minimum((cum < draws[:, :, None]).sum(axis=2), nx - 1)
        vmin = q.min(axis=1)
        tcheck = env.cost_table(mu) + cfg.gamma * vmin[next_states] - q
        noise_q = tcheck - _t2_array(env, q, mu, cfg.gamma)
        psi_q += rq * noise_q
        psi_q_max = max(psi_q_max, float(np.abs(psi_q).max()))
        mu = mu + rm * pcheck
        q = q + rq * tcheck
        if cfg.tol_mu is not None:
            if (rm * np.abs(pcheck).sum() <= cfg.tol_mu
                    and rq * np.abs(tcheck).max() <= cfg.tol_q):
                steps_run = n + 1
                break
    _assert_iterate(mu, q, env.f_sup, cfg.gamma, steps_run)
    trace.store(steps_run, mu, q)
    visits = np.full((nx, na), steps_run, dtype=np.int64)
    return trace.build(visits, psi_mu, psi_q, psi_mu_max, psi_q_max, steps_run)


def _prepare_fast_kernel(tensor: np.ndarray):
    """Plain-list kernel rows and cumulative rows for the trajectory loops."""
    nx, na, _ = tensor.shape
    rows = [[tensor[x, a].tolist() for a in range(na)] for x in range(nx)]
    cums = [[np.cumsum(tensor[x, a]).tolist() for a in range(na)] for x in range(nx)]
    return rows, cums


def run_asynchronous(env: TabularMFEnvironment, cfg: TrainerConfig,
                     x0: int | None = None) -> RunTrace:
    """Single-trajectory learner with per-pair value rates.

    Per step: choose the action from the softmin row at the current state,
    observe the cost and the next state, update only the visited Q entry at
    rate 1/(1 + visits)^omega (or the constant rate), then pull the mean
    field toward the point mass at the next state.

    The mean field starts at the point mass of the initial state. Costs are
    evaluated with the mean field passed as a plain sequence, which every
    built-in environment accepts.
    """
    ts = cfg.timescales
    if ts.regime not in ("MFG", "MFC"):
        raise DomainError("asynchronous trainer handles the MFG and MFC regimes")
    if ts.q_schedule.kind not in ("poly_visit", "constant"):
        raise DomainError("asynchronous trainer needs per-pair value rates "
                          "(poly_visit or constant)")
    nx, na = env.n_states, env.n_actions
    gamma, phi = cfg.gamma, cfg.phi
    exp = math.exp

    q_kind = ts.q_schedule.kind
    wq = ts.q_schedule.omega
    q_const = ts.q_schedule.value
    mu_kind = ts.mu_schedule.kind
    wm = ts.mu_schedule.omega
    mu_const = ts.mu_schedule.value

    rng = Rng(cfg.seed)
    buf = rng.generator.random(_CHUNK).tolist()
    bi = 0

    def draw():
        nonlocal bi, buf
        if bi == _CHUNK:
            buf = rng.generator.random(_CHUNK).tolist()
            bi = 0
        v = buf[bi]
        bi += 1
        return v

    if x0 is None:
        x = min(int(draw() * nx), nx - 1)
    else:
        if not 0 <= x0 < nx:
            raise DomainError(f"x0 = {x0} out of range")
        x = x0
    # Algorithm order: the uniform initialization is immediately overwritten
    # by the point mass at the observed initial state.
    mu = [0.0] * nx
    mu[x] = 1.0
    if cfg.init_q is not None:
        q = [list(map(float, row)) for row in cfg.init_q.values]
    else:
        q = [[0.0] * na for _ in range(nx)]
    minq = [min(row) for row in q]
    visits = [[0] * na for _ in range(nx)]
    cost_fn = env.cost

    mu_free = env.mu_free_kernel
    if mu_free:
        kern_rows, kern_cums = _prepare_fast_kernel(env.kernel_tensor(np.full(nx, 1.0 / nx)))

    # Per-state softmin weights, refreshed only for the row the step updates.
    pol = [None] * nx
    for s in range(nx):
        m0 = minq[s]
        ws = [exp(-phi * (v - m0)) for v in q[s]]
        pol[s] = (ws, sum(ws))

    psi_mu = [0.0] * nx
    psi_q = [[0.0] * na for _ in range(nx)]
    psi_mu_max = 0.0
    psi_q_max = 0.0
    trace = _TraceBuilder(cfg.stride)
    steps_run = cfg.n_steps

    for n in range(cfg.n_steps):
        row = q[x]
        weights, total = pol[x]
        r = draw() * total
        acc = 0.0
        a = na - 1
        for i, w in enumerate(weights):
            acc += w
            if r < acc:
                a = i
                break
        if mu_free:
            kern_row = kern_rows[x][a]
            cum = kern_cums[x][a]
        else:
            arr = env.kernel_array(x, a, np.asarray(mu))
            kern_row = arr.tolist()
            cum = np.cumsum(arr).tolist()
        r2 = draw()
        xn = 0
        while cum[xn] < r2 and xn < nx - 1:
            xn += 1
        f = cost_fn(x, a, mu)
        visits[x][a] += 1
        if q_kind == "poly_visit":
            rq = (1.0 + visits[x][a]) ** -wq
        else:
            rq = q_const
        if mu_kind == "poly_step":
            rm = (n + 2.0) ** -wm
        elif mu_kind == "constant":
            rm = mu_const
        else:
            rm = (2.0 + n) ** -wm  # poly_visit on mu counts its n+1 updates
        _check_mu_rate(rm)
        if trace.due(n):
            _assert_iterate(mu, q, env.f_sup, gamma, n)
            trace.store(n, mu, q, state=x, action=a, rho_q=rq, rho_mu=rm)
        # Realized noise at the visited pair: gamma (V(X') - E[V(X')]).
        expected_v = 0.0
        for j in range(nx):
            expected_v += kern_row[j] * minq[j]
        tn = gamma * (minq[xn] - expected_v)
        psi_q[x][a] += rq * tn
        if abs(psi_q[x][a]) > psi_q_max:
            psi_q_max = abs(psi_q[x][a])
        # Population noise: (delta(X_{n+1}) - mu) minus the exact drift.
        if mu_free:
            drift = _p2_cached(mu, pol, kern_rows, nx, na)
        else:
            drift = _p2_array(env, np.asarray(q), np.asarray(mu), phi).tolist()
        for j in range(nx):
            pn = -mu[j] - drift[j] + (1.0 if j == xn else 0.0)
            psi_mu[j] += rm * pn
            if abs(psi_mu[j]) > psi_mu_max:
                psi_mu_max = abs(psi_mu[j])
        # Value and mean-field updates.
        delta_q = rq * (f + gamma * minq[xn] - row[a])
        row[a] += delta_q
        minq[x] = min(row)
        m0 = minq[x]
        ws = [exp(-phi * (v - m0)) for v in row]
        pol[x] = (ws, sum(ws))
        delta_mu = 2.0 * rm * (1.0 - mu[xn])
        one_minus = 1.0 - rm
        for j in range(nx):
            mu[j] *= one_minus
        mu[xn] += rm
        x = xn
        if cfg.tol_mu is not None:
            if delta_mu <= cfg.tol_mu and abs(delta_q) <= cfg.tol_q:
                steps_run = n + 1
                break
    _assert_iterate(mu, q, env.f_sup, gamma, steps_run)
    trace.store(steps_run, mu, q, state=x)
    warnings = [f"pair (x={i}, a={j}) never visited in {steps_run} steps; "
                "per-pair rate never engaged"
                for i in range(nx) for j in range(na) if visits[i][j] == 0]
    return trace.build(visits, psi_mu, psi_q, psi_mu_max, psi_q_max,
                       steps_run, warnings)


def _p2_cached(mu, pol, kern_rows, nx, na):
    """Pure-python population drift from cached softmin weights (mu-free kernel)."""
    out = [0.0] * nx
    for src in range(nx):
        mass = mu[src]
        if mass == 0.0:
            continue
        weights, total = pol[src]
        scale = mass / total
        for a in range(na):
            w = scale * weights[a]
            if w == 0.0:
                continue
            krow = kern_rows[src][a]
            for dst in range(nx):
                out[dst] += w * krow[dst]
    for dst in range(nx):
        out[dst] -= mu[dst]
    return out


def run_three_timescale(env3: ThreePopEnvironment, cfg: TrainerConfig,
                        x0: int | None = None, *,
                        idealized: bool = False) -> RunTrace:
    """Three-timescale learner on a two-measure environment.

    The asynchronous form follows the single-trajectory recipe with both the
    global (slow) and local (fast) distributions pulled toward the point
    mass at the next state. With `idealized=True` the exact drift fields are
    iterated deterministically instead.
    """
    ts = cfg.timescales
    if ts.regime != "MFCG" or ts.mu_loc_schedule is None:
        raise DomainError("three-timescale trainer needs the MFCG regime")
    if idealized:
        return _run_three_idealized(env3, cfg)
    return _run_three_async(env3, cfg, x0)


def _run_three_idealized(env3, cfg) -> RunTrace:
    ts = cfg.timescales
    nx, na = env3.n_states, env3.n_actions
    mu = cfg.init_mu.probs.copy() if cfg.init_mu is not None else np.full(nx, 1.0 / nx)
    mu_loc = mu.copy()
    q = cfg.init_q.values.copy() if cfg.init_q is not None else np.zeros((nx, na))
    trace = _TraceBuilder(cfg.stride, three_pop=True)
    mu_free = env3.mu_free_kernel
    tensor = env3.kernel_tensor(mu, mu_loc) if mu_free else None
    steps_run = cfg.n_steps
    for n in range(cfg.n_steps):
        rq = _sync_rate(ts.q_schedule, n)
        rm = _sync_rate(ts.mu_schedule, n)
        rl = _sync_rate(ts.mu_loc_schedule, n)
        _check_mu_rate(rm)
        _check_mu_rate(rl)
        if trace.due(n):
            _assert_iterate(mu, q, env3.f_sup, cfg.gamma, n)
            trace.store(n, mu, q, rho_q=rq, rho_mu=rm, mu_loc=mu_loc)
        kt = tensor if mu_free else env3.kernel_tensor(mu, mu_loc)
        rows = _softmin_rows(q, cfg.phi)
        matrix = np.einsum("xa,xay->xy", rows, kt)
        drift_mu = mu @ matrix - mu
        drift_loc = mu_loc @ matrix - mu_loc
        target = env3.cost_table(mu, mu_loc) + cfg.gamma * kt @ q.min(axis=1)
        drift_q = target - q
        mu = mu + rm * drift_mu
        mu_loc = mu_loc + rl * drift_loc
        q = q + rq * drift_q
        if cfg.tol_mu is not None:
            if (rm * np.abs(drift_mu).sum() <= cfg.tol_mu
                    and rl * np.abs(drift_loc).sum() <= cfg.tol_mu
                    and rq * np.abs(drift_q).max() <= cfg.tol_q):
                steps_run = n + 1
                break
    _assert_iterate(mu, q, env3.f_sup, cfg.gamma, steps_run)
    trace.store(steps_run, mu, q, mu_loc=mu_loc)
    return trace.build(np.zeros((nx, na)), np.zeros(nx), np.zeros((nx, na)),
                       0.0, 0.0, steps_run)


def _run_three_async(env3, cfg, x0) -> RunTrace:
    ts = cfg.timescales
    nx, na = env3.n_states, env3.n_actions
    gamma, phi = cfg.gamma, cfg.phi
    exp = math.exp
    if ts.q_schedule.kind not in ("poly_visit", "constant"):
        raise DomainError("asynchronous trainer needs per-pair value rates "
                          "(poly_visit or constant)")
    wq = ts.q_schedule.omega
    q_const = ts.q_schedule.value
    rng = Rng(cfg.seed)
    buf = rng.generator.random(_CHUNK).tolist()
    bi = 0

    def draw():
        nonlocal bi, buf
        if bi == _CHUNK:
            buf = rng.generator.random(_CHUNK).tolist()
            bi = 0
        v = buf[bi]
        bi += 1
        return v

    def mu_rate(s, n):
        if s.kind == "constant":
            return s.value
        return (n + 2.0) ** -s.omega

    if x0 is None:
        x = min(int(draw() * nx), nx - 1)
    else:
        if not 0 <= x0 < nx:
            raise DomainError(f"x0 = {x0} out of range")
        x = x0
    mu = [0.0] * nx
    mu[x] = 1.0
    mu_loc = list(mu)
    q = [[0.0] * na for _ in range(nx)] if cfg.init_q is None \
        else [list(map(float, row)) for row in cfg.init_q.values]
    minq = [min(row) for row in q]
    visits = [[0] * na for _ in range(nx)]
    mu_free = env3.mu_free_kernel
    if mu_free:
        kern_rows, kern_cums = _prepare_fast_kernel(
            env3.kernel_tensor(np.full(nx, 1.0 / nx), np.full(nx, 1.0 / nx)))
    pol = [None] * nx
    for s in range(nx):
        m0 = minq[s]
        ws = [exp(-phi * (v - m0)) for v in q[s]]
        pol[s] = (ws, sum(ws))
    psi_mu = [0.0] * nx
    psi_q = [[0.0] * na for _ in range(nx)]
    psi_mu_max = 0.0
    psi_q_max = 0.0
    trace = _TraceBuilder(cfg.stride, three_pop=True)
    steps_run = cfg.n_steps

    for n in range(cfg.n_steps):
        row = q[x]
        weights, total = pol[x]
        r = draw() * total
        acc = 0.0
        a = na - 1
        for i, w in enumerate(weights):
            acc += w
            if r < acc:
                a = i
                break
        if mu_free:
            kern_row = kern_rows[x][a]
            cum = kern_cums[x][a]
        else:
            arr = env3.kernel_array(x, a, np.asarray(mu), np.asarray(mu_loc))
            kern_row = arr.tolist()
            cum = np.cumsum(arr).tolist()
        r2 = draw()
        xn = 0
        while cum[xn] < r2 and xn < nx - 1:
            xn += 1
        f = env3.cost3(x, a, mu, mu_loc)
        visits[x][a] += 1
        rq = (1.0 + visits[x][a]) ** -wq if q_const is None else q_const
        rm = mu_rate(ts.mu_schedule, n)
        rl = mu_rate(ts.mu_loc_schedule, n)
        _check_mu_rate(rm)
        _check_mu_rate(rl)
        if trace.due(n):
            _assert_iterate(mu, q, env3.f_sup, gamma, n)
            trace.store(n, mu, q, state=x, action=a, rho_q=rq, rho_mu=rm,
                        mu_loc=mu_loc)
        expected_v = 0.0
        for j in range(nx):
            expected_v += kern_row[j] * minq[j]
        psi_q[x][a] += rq * gamma * (minq[xn] - expected_v)
        if abs(psi_q[x][a]) > psi_q_max:
            psi_q_max = abs(psi_q[x][a])
        if mu_free:
            drift = _p2_cached(mu, pol, kern_rows, nx, na)
        else:
            drift = _p3_array(env3, np.asarray(q), np.asarray(mu),
                              np.asarray(mu_loc), phi, local=False).tolist()
        for j in range(nx):
            pn = -mu[j] - drift[j] + (1.0 if j == xn else 0.0)
            psi_mu[j] += rm * pn
        peak = max(abs(v) for v in psi_mu)
        if peak > psi_mu_max:
            psi_mu_max = peak
        row[a] += rq * (f + gamma * minq[xn] - row[a])
        minq[x] = min(row)
        m0 = minq[x]
        ws = [exp(-phi * (v - m0)) for v in row]
        pol[x] = (ws, sum(ws))
        for j in range(nx):
            mu[j] *= 1.0 - rm
            mu_loc[j] *= 1.0 - rl
        mu[xn] += rm
        mu_loc[xn] += rl
        x = xn
    _assert_iterate(mu, q, env3.f_sup, gamma, steps_run)
    trace.store(steps_run, mu, q, state=x, mu_loc=mu_loc)
    warnings = [f"pair (x={i}, a={j}) never visited in {steps_run} steps; "
                "per-pair rate never engaged"
                for i in range(nx) for j in range(na) if visits[i][j] == 0]
    return trace.build(visits, psi_mu, psi_q, psi_mu_max, psi_q_max,
                       steps_run, warnings)
