"""Command-line harness: strict config parsing, experiment execution,
oracle solving, comparison reports, diagnostics, and CSV traces.

Exit codes: 0 success, 2 config parse error, 3 runtime or convergence
error. Output files carry no timestamps and floats are written with 17
significant digits, so reruns with identical configs and seeds are
byte-identical.
"""
from __future__ import annotations

import argparse
import configparser
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import DomainError
from .envs import TableEnvSpec, TorusSpec, table_env, torus3_env, torus_env
from .operators import estimate_constants
from .oracles import (ConvergenceError, action_gap, error_bounds, phi_max,
                      solve_mfc_fixed_point, solve_mfcg_fixed_point,
                      solve_mfg_fixed_point, solve_sharp_equilibrium)
from .schedules import RateSchedule, TimescaleConfig, validate_timescales
from .trainers import (RunTrace, TrainerConfig, run_asynchronous,
                       run_idealized, run_synchronous_stochastic,
                       run_three_timescale)

TIERS = ("idealized", "synchronous", "asynchronous", "three_timescale")


class ConfigError(ValueError):
    """The experiment config failed strict validation."""


@dataclass
class ExperimentConfig:
    env_kind: str
    tier: str
    gamma: float
    phi: float
    n_steps: int
    seeds: tuple[int, ...]
    timescales: TimescaleConfig
    out_dir: str
    prefix: str
    n_states: int = 2
    p_zeta: float = 0.01
    local_coeff: float = 0.0
    global_coeff: float = 1.0
    table_path: str | None = None
    trace_stride: int | None = None
    x0: int | None = None
    oracle_tol: float = 1e-8
    oracle_max_iter: int = 5000
    diagnose_grid: int = 5
    diagnose_samples: int = 200
    diagnose_trace: str | None = None
    config_dir: str = "."


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return f"{value:.17g}"
    return str(value)


def _section(cp: configparser.ConfigParser, name: str, required: bool,
             known: dict, path: str) -> dict:
    if not cp.has_section(name):
        if required:
            raise ConfigError(f"{path}: missing [{name}] section")
        return {}
    raw = dict(cp.items(name))
    for key in raw:
        if key not in known:
            raise ConfigError(f"{path}: unknown key {key!r} in [{name}]")
    out = {}
    for key, conv in known.items():
        if key in raw:
            try:
                out[key] = conv(raw[key])
            except ConfigError:
                raise
            except Exception as exc:
                raise ConfigError(f"{path}: bad value for {key!r} in [{name}]: {exc}")
    return out


def _parse_bool(text: str) -> bool:
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    raise ConfigError(f"expected true/false, got {text!r}")


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(part.strip()) for part in text.split(",") if part.strip())


def _read_ini(path: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None,
                                   inline_comment_prefixes=("#",))
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}")
    return cp


def _schedule_from(keys: dict, stem: str, path: str) -> RateSchedule | None:
    kind = keys.get(f"{stem}_kind")
    if kind is None:
        return None
    try:
        if kind == "constant":
            if f"{stem}_omega" in keys:
                raise ConfigError(f"{path}: constant {stem} schedule takes no omega")
            return RateSchedule.constant(keys[f"{stem}_value"])
        if f"{stem}_value" in keys:
            raise ConfigError(f"{path}: polynomial {stem} schedule takes no value")
        return RateSchedule(kind, omega=keys[f"{stem}_omega"])
    except KeyError as exc:
        raise ConfigError(f"{path}: {stem} schedule is missing {exc}")
    except DomainError as exc:
        raise ConfigError(f"{path}: {exc}")


def parse_config(path: str) -> ExperimentConfig:
    cp = _read_ini(path)
    known_sections = {"environment", "trainer", "timescales", "output",
                      "oracle", "diagnose"}
    for name in cp.sections():
        if name not in known_sections:
            raise ConfigError(f"{path}: unknown section [{name}]")

    env = _section(cp, "environment", True, {
        "kind": str, "n_states": int, "p_zeta": float, "local_coeff": float,
        "global_coeff": float, "table_path": str}, path)
    kind = env.get("kind")
    if kind not in ("torus", "torus3", "table"):
        raise ConfigError(f"{path}: environment kind must be torus, torus3, or table")
    if kind == "table" and "table_path" not in env:
        raise ConfigError(f"{path}: table environment needs table_path")
    if kind != "table" and "table_path" in env:
        raise ConfigError(f"{path}: table_path only applies to table environments")
    if kind != "torus3" and ("local_coeff" in env or "global_coeff" in env):
        raise ConfigError(f"{path}: coefficient keys only apply to torus3")

    trainer = _section(cp, "trainer", True, {
        "tier": str, "gamma": float, "phi": float, "n_steps": int,
        "seeds": _parse_int_list, "trace_stride": int, "x0": int}, path)
    for req in ("tier", "gamma", "phi", "n_steps", "seeds"):
        if req not in trainer:
            raise ConfigError(f"{path}: [trainer] is missing {req!r}")
    if trainer["tier"] not in TIERS:
        raise ConfigError(f"{path}: tier must be one of {', '.join(TIERS)}")

    ts_keys = _section(cp, "timescales", True, {
        "regime": str, "q_kind": str, "q_omega": float, "q_value": float,
        "mu_kind": str, "mu_omega": float, "mu_value": float,
        "mu_loc_kind": str, "mu_loc_omega": float, "mu_loc_value": float}, path)
    q_sched = _schedule_from(ts_keys, "q", path)
    mu_sched = _schedule_from(ts_keys, "mu", path)
    loc_sched = _schedule_from(ts_keys, "mu_loc", path)
    if q_sched is None or mu_sched is None or "regime" not in ts_keys:
        raise ConfigError(f"{path}: [timescales] needs regime and q/mu schedules")
    try:
        timescales = TimescaleConfig(q_schedule=q_sched, mu_schedule=mu_sched,
                                     mu_loc_schedule=loc_sched,
                                     regime=ts_keys["regime"])
    except DomainError as exc:
        raise ConfigError(f"{path}: {exc}")

    output = _section(cp, "output", True, {"directory": str, "prefix": str}, path)
    for req in ("directory", "prefix"):
        if req not in output:
            raise ConfigError(f"{path}: [output] is missing {req!r}")

    oracle = _section(cp, "oracle", False, {"tol": float, "max_iter": int}, path)
    diagnose = _section(cp, "diagnose", False, {
        "grid_resolution": int, "samples": int, "trace": str}, path)

    return ExperimentConfig(
        env_kind=kind,
        n_states=env.get("n_states", 2),
        p_zeta=env.get("p_zeta", 0.01),
        local_coeff=env.get("local_coeff", 0.0),
        global_coeff=env.get("global_coeff", 1.0),
        table_path=env.get("table_path"),
        tier=trainer["tier"],
        gamma=trainer["gamma"],
        phi=trainer["phi"],
        n_steps=trainer["n_steps"],
        seeds=trainer["seeds"],
        trace_stride=trainer.get("trace_stride"),
        x0=trainer.get("x0"),
        timescales=timescales,
        out_dir=output["directory"],
        prefix=output["prefix"],
        oracle_tol=oracle.get("tol", 1e-8),
        oracle_max_iter=oracle.get("max_iter", 5000),
        diagnose_grid=diagnose.get("grid_resolution", 5),
        diagnose_samples=diagnose.get("samples", 200),
        diagnose_trace=diagnose.get("trace"),
        config_dir=str(Path(path).resolve().parent),
    )


def parse_table_file(path: str) -> TableEnvSpec:
    cp = _read_ini(path)
    for name in cp.sections():
        if name not in ("spec", "kernel", "cost_base", "cost_mf_coeff"):
            raise ConfigError(f"{path}: unknown section [{name}]")
    spec = _section(cp, "spec", True, {
        "n_states": int, "n_actions": int, "mf_power": int}, path)
    for req in ("n_states", "n_actions"):
        if req not in spec:
            raise ConfigError(f"{path}: [spec] is missing {req!r}")
    nx, na = spec["n_states"], spec["n_actions"]

    def parse_floats(text):
        return [float(p.strip()) for p in text.split(",")]

    kernel = np.zeros((nx, na, nx))
    if not cp.has_section("kernel"):
        raise ConfigError(f"{path}: missing [kernel] section")
    seen = set()
    for key, text in cp.items("kernel"):
        try:
            xs, ats = key.split("_")
            x, a = int(xs.lstrip("x")), int(ats.lstrip("a"))
        except ValueError:
            raise ConfigError(f"{path}: kernel key {key!r} is not x<i>_a<j>")
        if not (0 <= x < nx and 0 <= a < na):
            raise ConfigError(f"{path}: kernel key {key!r} out of range")
        row = parse_floats(text)
        if len(row) != nx:
            raise ConfigError(f"{path}: kernel row {key!r} needs {nx} entries")
        kernel[x, a] = row
        seen.add((x, a))
    if len(seen) != nx * na:
        raise ConfigError(f"{path}: kernel table is missing rows")

    def parse_matrix(section):
        matrix = np.zeros((nx, na))
        if not cp.has_section(section):
            raise ConfigError(f"{path}: missing [{section}] section")
        rows = set()
        for key, text in cp.items(section):
            try:
                x = int(key.lstrip("x"))
            except ValueError:
                raise ConfigError(f"{path}: {section} key {key!r} is not x<i>")
            if not 0 <= x < nx:
                raise ConfigError(f"{path}: {section} key {key!r} out of range")
            vals = parse_floats(text)
            if len(vals) != na:
                raise ConfigError(f"{path}: {section} row {key!r} needs {na} entries")
            matrix[x] = vals
            rows.add(x)
        if len(rows) != nx:
            raise ConfigError(f"{path}: {section} is missing rows")
        return matrix

    base = parse_matrix("cost_base")
    coeff = parse_matrix("cost_mf_coeff")
    try:
        return TableEnvSpec(kernel_table=kernel, cost_base=base,
                            cost_mf_coeff=coeff,
                            cost_mf_power=spec.get("mf_power", 2))
    except DomainError as exc:
        raise ConfigError(f"{path}: {exc}")


def build_environment(cfg: ExperimentConfig):
    if cfg.env_kind == "torus":
        return torus_env(TorusSpec(cfg.n_states, cfg.p_zeta))
    if cfg.env_kind == "torus3":
        return torus3_env(TorusSpec(cfg.n_states, cfg.p_zeta),
                          local_coeff=cfg.local_coeff,
                          global_coeff=cfg.global_coeff)
    table_path = Path(cfg.table_path)
    if not table_path.is_absolute():
        table_path = Path(cfg.config_dir) / table_path
    return table_env(parse_table_file(str(table_path)))


def trainer_config(cfg: ExperimentConfig, seed: int) -> TrainerConfig:
    return TrainerConfig(gamma=cfg.gamma, phi=cfg.phi, n_steps=cfg.n_steps,
                         timescales=cfg.timescales,
                         trace_stride=cfg.trace_stride, seed=seed)


def run_tier(cfg: ExperimentConfig, seed: int) -> RunTrace:
    env = build_environment(cfg)
    tc = trainer_config(cfg, seed)
    if cfg.tier == "idealized":
        return run_idealized(env, tc)
    if cfg.tier == "synchronous":
        return run_synchronous_stochastic(env, tc)
    if cfg.tier == "asynchronous":
        return run_asynchronous(env, tc, x0=cfg.x0)
    return run_three_timescale(env, tc, x0=cfg.x0)


def trace_csv_path(cfg: ExperimentConfig, out_dir: Path, seed: int) -> Path:
    return out_dir / f"{cfg.prefix}_seed{seed}.csv"


def write_trace_csv(trace: RunTrace, path: Path):
    nx = trace.mus.shape[1]
    na = trace.qs.shape[2]
    cols = (["step"] + [f"mu_{x}" for x in range(nx)]
            + [f"q_{x}_{a}" for x in range(nx) for a in range(na)]
            + ["state", "action", "rho_q", "rho_mu"])
    if trace.mu_locs is not None:
        cols += [f"mu_loc_{x}" for x in range(nx)]
    lines = [",".join(cols)]
    for k in range(len(trace.ns)):
        row = [str(int(trace.ns[k]))]
        row += [_fmt(v) for v in trace.mus[k]]
        row += [_fmt(v) for v in trace.qs[k].ravel()]
        row.append("" if trace.states[k] < 0 else str(int(trace.states[k])))
        row.append("" if trace.actions[k] < 0 else str(int(trace.actions[k])))
        row.append(_fmt(float(trace.rho_qs[k])))
        row.append(_fmt(float(trace.rho_mus[k])))
        if trace.mu_locs is not None:
            row += [_fmt(v) for v in trace.mu_locs[k]]
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")


def read_trace_csv(path: Path) -> dict:
    lines = path.read_text().strip().split("\n")
    header = lines[0].split(",")
    rows = [line.split(",") for line in lines[1:] if not line.startswith("#")]
    cols = {name: [row[i] for row in rows] for i, name in enumerate(header)}
    return cols


def _run_seed_worker(args: tuple) -> tuple:
    cfg, seed, out_dir = args
    trace = run_tier(cfg, seed)
    write_trace_csv(trace, trace_csv_path(cfg, Path(out_dir), seed))
    summary = {
        "seed": seed,
        "n_steps_run": trace.n_steps_run,
        "mu": trace.mus[-1].tolist(),
        "q": trace.qs[-1].ravel().tolist(),
        "mu_loc": None if trace.mu_locs is None else trace.mu_locs[-1].tolist(),
        "psi_mu_abs_max": trace.psi_mu_abs_max,
        "psi_q_abs_max": trace.psi_q_abs_max,
        "unvisited_pairs": len(trace.coverage_warnings),
    }
    return seed, summary


def _thread_cap() -> int:
    raw = os.environ.get("MFTQ_THREADS", "")
    if raw.strip():
        cap = int(raw)
        if cap < 1:
            raise ConfigError("MFTQ_THREADS must be a positive integer")
        return cap
    return os.cpu_count() or 1


def _comment_block(scalars: dict) -> list[str]:
    return [f"# {key}: {_fmt(value)}" for key, value in scalars.items()]


def cmd_run(cfg: ExperimentConfig, quiet: bool) -> int:
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, seed, str(out_dir)) for seed in cfg.seeds]
    workers = min(_thread_cap(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(_run_seed_worker, jobs))
    else:
        results = dict(map(_run_seed_worker, jobs))

    env = build_environment(cfg)
    nx, na = env.n_states, env.n_actions
    cols = (["seed", "n_steps_run"] + [f"mu_{x}" for x in range(nx)]
            + [f"q_{x}_{a}" for x in range(nx) for a in range(na)]
            + ["psi_mu_abs_max", "psi_q_abs_max", "unvisited_pairs"])
    if cfg.tier == "three_timescale":
        cols += [f"mu_loc_{x}" for x in range(nx)]
    lines = [",".join(cols)]
    for seed in sorted(results):
        s = results[seed]
        row = [str(seed), str(s["n_steps_run"])]
        row += [_fmt(v) for v in s["mu"]]
        row += [_fmt(v) for v in s["q"]]
        row += [_fmt(s["psi_mu_abs_max"]), _fmt(s["psi_q_abs_max"]),
                str(s["unvisited_pairs"])]
        if cfg.tier == "three_timescale":
            row += [_fmt(v) for v in s["mu_loc"]]
        lines.append(",".join(row))
    scalars = {"tier": cfg.tier, "regime": cfg.timescales.regime,
               "gamma": cfg.gamma, "phi": cfg.phi, "n_steps": cfg.n_steps}
    for check in validate_timescales(cfg.timescales):
        scalars[f"check_{check.name}"] = f"{check.status} ({check.detail})"
    lines += _comment_block(scalars)
    summary_path = out_dir / f"{cfg.prefix}_summary.csv"
    summary_path.write_text("\n".join(lines) + "\n")
    if not quiet:
        print(f"wrote {len(cfg.seeds)} trace file(s) and {summary_path}")
    return 0


def _solve_for_regime(cfg: ExperimentConfig):
    env = build_environment(cfg)
    regime = cfg.timescales.regime
    if regime == "MFG":
        return env, solve_mfg_fixed_point(env, cfg.gamma, cfg.phi,
                                          tol=cfg.oracle_tol,
                                          max_iter=cfg.oracle_max_iter)
    if regime == "MFC":
        return env, solve_mfc_fixed_point(env, cfg.gamma, cfg.phi,
                                          tol=cfg.oracle_tol,
                                          max_iter=cfg.oracle_max_iter)
    return env, solve_mfcg_fixed_point(env, cfg.gamma, cfg.phi,
                                       tol=cfg.oracle_tol,
                                       max_iter=cfg.oracle_max_iter)


def _write_solution_report(cfg: ExperimentConfig, solution, path: Path):
    nx = solution.mu.size
    na = solution.q.n_actions
    cols = ([f"mu_{x}" for x in range(nx)]
            + [f"q_{x}_{a}" for x in range(nx) for a in range(na)]
            + ["iterations", "converged"])
    if solution.mu_loc is not None:
        cols += [f"mu_loc_{x}" for x in range(nx)]
    row = [_fmt(v) for v in solution.mu.probs]
    row += [_fmt(v) for v in solution.q.values.ravel()]
    row += [str(solution.iterations), str(solution.converged).lower()]
    if solution.mu_loc is not None:
        row += [_fmt(v) for v in solution.mu_loc.probs]
    scalars = {"regime": cfg.timescales.regime, "gamma": cfg.gamma,
               "phi": cfg.phi, "tol": cfg.oracle_tol}
    scalars.update({k: v for k, v in sorted(solution.residuals.items())})
    lines = [",".join(cols), ",".join(row)] + _comment_block(scalars)
    path.write_text("\n".join(lines) + "\n")


def cmd_solve(cfg: ExperimentConfig, quiet: bool) -> int:
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{cfg.prefix}_solution.csv"
    try:
        env, solution = _solve_for_regime(cfg)
    except ConvergenceError as err:
        if err.best is not None:
            _write_solution_report(cfg, err.best, path)
            if not quiet:
                print(f"solver did not converge ({err}); best iterate written "
                      f"to {path}", file=sys.stderr)
        else:
            print(f"solver failed: {err}", file=sys.stderr)
        return 3
    _write_solution_report(cfg, solution, path)
    if not quiet:
        print(f"wrote {path}")
    return 0


def cmd_compare(cfg: ExperimentConfig, quiet: bool) -> int:
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    env = build_environment(cfg)
    if cfg.timescales.regime == "MFCG":
        raise ConfigError("compare supports the MFG and MFC regimes")
    try:
        _, oracle = _solve_for_regime(cfg)
        oracle_converged = True
    except ConvergenceError as err:
        if err.best is None:
            raise
        oracle = err.best
        oracle_converged = False

    rows = []
    for seed in cfg.seeds:
        trace = run_tier(cfg, seed)
        mu_gap = float(np.abs(trace.mus[-1] - oracle.mu.probs).sum())
        q_gap = float(np.abs(trace.qs[-1] - oracle.q.values).max())
        rows.append((seed, mu_gap, q_gap))

    delta = action_gap(oracle.q)
    consts = estimate_constants(env, grid_resolution=cfg.diagnose_grid,
                                samples=cfg.diagnose_samples)
    scalars = {"oracle_converged": str(oracle_converged).lower(),
               "delta": delta}
    try:
        ceiling = phi_max(consts.c_min, consts.l_p, consts.l_f, cfg.gamma,
                          env.n_states, env.n_actions,
                          env.f_sup if env.f_sup is not None else math.nan)
        scalars["phi_max"] = ceiling
    except DomainError:
        ceiling = None
        scalars["phi_max"] = "inapplicable"
    if ceiling is not None and delta > 0:
        report = error_bounds(cfg.timescales.regime, cfg.phi, ceiling, delta,
                              consts.l_f, consts.l_p,
                              env.f_sup if env.f_sup is not None else math.nan,
                              cfg.gamma, env.n_actions)
        scalars["mu_bound"] = report.mu_bound if report.applicable else "n/a"
        scalars["q_bound"] = report.q_bound if report.applicable else "n/a"
        if report.applicable:
            try:
                sharp = solve_sharp_equilibrium(env, cfg.gamma,
                                                tol=cfg.oracle_tol,
                                                max_iter=cfg.oracle_max_iter,
                                                kind=cfg.timescales.regime)
            except ConvergenceError as err:
                sharp = err.best
            if sharp is not None:
                actual_mu = float(np.abs(oracle.mu.probs - sharp.mu.probs).sum())
                actual_q = float(np.abs(oracle.q.values - sharp.q.values).max())
                scalars["actual_mu_error"] = actual_mu
                scalars["actual_q_error"] = actual_q
                scalars["mu_bound_satisfied"] = str(actual_mu <= report.mu_bound).lower()
                scalars["q_bound_satisfied"] = str(actual_q <= report.q_bound).lower()
            else:
                scalars["mu_bound_satisfied"] = "n/a"
                scalars["q_bound_satisfied"] = "n/a"
        else:
            scalars["mu_bound_satisfied"] = "n/a"
            scalars["q_bound_satisfied"] = "n/a"
    else:
        scalars["mu_bound"] = "n/a"
        scalars["q_bound"] = "n/a"
        scalars["mu_bound_satisfied"] = "n/a"
        scalars["q_bound_satisfied"] = "n/a"

    lines = ["seed,l1_mu_gap,sup_q_gap"]
    for seed, mu_gap, q_gap in rows:
        lines.append(f"{seed},{_fmt(mu_gap)},{_fmt(q_gap)}")
    lines += _comment_block(scalars)
    path = out_dir / f"{cfg.prefix}_compare.csv"
    path.write_text("\n".join(lines) + "\n")
    if not quiet:
        print(f"wrote {path}")
    return 0


def cmd_diagnose(cfg: ExperimentConfig, quiet: bool) -> int:
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    env = build_environment(cfg)
    if cfg.env_kind == "torus3":
        scalars = {"environment": cfg.env_kind,
                   "l_f_glob": env.l_f_glob, "l_f_loc": env.l_f_loc,
                   "l_p_glob": env.l_p_glob, "l_p_loc": env.l_p_loc}
        consts = None
    else:
        consts = estimate_constants(env, grid_resolution=cfg.diagnose_grid,
                                    samples=cfg.diagnose_samples)
        scalars = {"environment": cfg.env_kind, "c_min": consts.c_min,
                   "c_max": consts.c_max, "l_f": consts.l_f,
                   "l_p": consts.l_p, "l_f_hat": consts.l_f_hat,
                   "l_p_hat": consts.l_p_hat}
    if consts is not None:
        try:
            ceiling = phi_max(consts.c_min, consts.l_p, consts.l_f, cfg.gamma,
                              env.n_states, env.n_actions,
                              env.f_sup if env.f_sup is not None else math.nan)
            scalars["phi_max"] = ceiling
            if cfg.phi >= ceiling:
                scalars["phi_note"] = (
                    f"phi = {_fmt(cfg.phi)} exceeds phi_max; permitted when a "
                    "unique stable equilibrium exists anyway")
        except DomainError as exc:
            scalars["phi_max"] = f"inapplicable ({exc})"
    for check in validate_timescales(cfg.timescales):
        scalars[f"check_{check.name}"] = f"{check.status} ({check.detail})"

    lines = []
    if cfg.diagnose_trace is not None:
        trace_path = Path(cfg.diagnose_trace)
        if not trace_path.is_absolute():
            trace_path = Path(cfg.config_dir) / trace_path
        cols = read_trace_csv(trace_path)
        states = [int(s) for s in cols.get("state", []) if s not in ("", "-1")]
        actions = [int(a) for a in cols.get("action", []) if a not in ("", "-1")]
        counts = np.zeros((env.n_states, env.n_actions), dtype=int)
        for s, a in zip(states, actions):
            counts[s, a] += 1
        total = max(counts.sum(), 1)
        lines.append("state,action,visit_fraction")
        min_frac = math.inf
        for x in range(env.n_states):
            for a in range(env.n_actions):
                frac = counts[x, a] / total
                min_frac = min(min_frac, frac)
                lines.append(f"{x},{a},{_fmt(frac)}")
                if counts[x, a] == 0:
                    scalars[f"coverage_warning_x{x}_a{a}"] = \
                        "pair unvisited in sampled trace rows"
        scalars["min_visit_fraction"] = min_frac
    lines += _comment_block(scalars)
    path = out_dir / f"{cfg.prefix}_diagnostics.csv"
    path.write_text("\n".join(lines) + "\n")
    if not quiet:
        print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mftq",
        description="Mean-field Q-learning experiments, oracles, and diagnostics")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "solve", "compare", "diagnose"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None,
                       help="override the output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the seed list with a single seed")
        p.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)

    try:
        cfg = parse_config(args.config)
        if args.out is not None:
            cfg.out_dir = args.out
        if args.seed is not None:
            cfg.seeds = (args.seed,)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        if args.command == "run":
            return cmd_run(cfg, args.quiet)
        if args.command == "solve":
            return cmd_solve(cfg, args.quiet)
        if args.command == "compare":
            return cmd_compare(cfg, args.quiet)
        return cmd_diagnose(cfg, args.quiet)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ConvergenceError, DomainError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
