"""Learning-rate families and timescale admissibility diagnostics."""
from __future__ import annotations

from dataclasses import dataclass

from .core import DomainError

KINDS = ("poly_step", "poly_visit", "constant")
REGIMES = ("MFG", "MFC", "MFCG")


@dataclass(frozen=True)
class RateSchedule:
    """Learning-rate family: polynomial in the step index, polynomial in the
    per-pair visit count, or constant.

    The polynomial forms are 1/(n+2)^omega and 1/(1+visits)^omega; the +2 /
    +1 offsets fix the off-by-one convention once for the whole artifact.
    """

    kind: str
    omega: float | None = None
    value: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "constant":
            if self.value is None or not 0 < self.value <= 1:
                raise DomainError("constant schedule needs value in (0, 1]")
            if self.omega is not None:
                raise DomainError("constant schedule takes no omega")
        else:
            if self.omega is None or self.omega <= 0:
                raise DomainError("polynomial schedule needs omega > 0")
            if self.value is not None:
                raise DomainError("polynomial schedule takes no value")

    @staticmethod
    def poly_step(omega: float) -> "RateSchedule":
        return RateSchedule("poly_step", omega=omega)

    @staticmethod
    def poly_visit(omega: float) -> "RateSchedule":
        return RateSchedule("poly_visit", omega=omega)

    @staticmethod
    def constant(value: float) -> "RateSchedule":
        return RateSchedule("constant", value=value)


@dataclass(frozen=True)
class TimescaleConfig:
    q_schedule: RateSchedule
    mu_schedule: RateSchedule
    mu_loc_schedule: RateSchedule | None = None
    regime: str = "MFG"

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise DomainError(f"unknown regime {self.regime!r}")
        if (self.regime == "MFCG") != (self.mu_loc_schedule is not None):
            raise DomainError("mu_loc schedule present iff regime is MFCG")


def rate_at(s: RateSchedule, n: int, visit_count: int | None = None) -> float:
    """Rate used at step n; poly_visit reads the supplied visit count."""
    if n < 0:
        raise DomainError("step index must be nonnegative")
    if s.kind == "constant":
        return s.value
    if s.kind == "poly_step":
        return (n + 2.0) ** -s.omega
    if visit_count is None or visit_count < 0:
        raise DomainError("poly_visit schedule needs a nonnegative visit count")
    return (1.0 + visit_count) ** -s.omega


@dataclass(frozen=True)
class ScheduleCheck:
    name: str
    status: str  # "pass" | "warn" | "fail"
    detail: str


def _poly_omega(s: RateSchedule) -> float | None:
    return s.omega if s.kind in ("poly_step", "poly_visit") else None


def validate_timescales(cfg: TimescaleConfig) -> list[ScheduleCheck]:
    """Advisory admissibility report; diagnostics never block a run."""
    checks: list[ScheduleCheck] = []
    named = [("q", cfg.q_schedule), ("mu", cfg.mu_schedule)]
    if cfg.mu_loc_schedule is not None:
        named.append(("mu_loc", cfg.mu_loc_schedule))

    for name, s in named:
        w = _poly_omega(s)
        if w is None:
            checks.append(ScheduleCheck(
                f"{name}_divergent_sum", "warn",
                "constant rate: outside proved assumptions (works empirically)"))
            checks.append(ScheduleCheck(
                f"{name}_square_summable", "warn",
                "constant rate: not square-summable"))
            continue
        if w <= 1.0:
            checks.append(ScheduleCheck(f"{name}_divergent_sum", "pass",
                                        f"omega={w:g} <= 1"))
        else:
            checks.append(ScheduleCheck(f"{name}_divergent_sum", "fail",
                                        f"omega={w:g} > 1: rate sum converges"))
        if w > 0.5:
            checks.append(ScheduleCheck(f"{name}_square_summable", "pass",
                                        f"omega={w:g} > 0.5"))
        else:
            checks.append(ScheduleCheck(f"{name}_square_summable", "fail",
                                        f"omega={w:g} <= 0.5: squares not summable"))

    wq = _poly_omega(cfg.q_schedule)
    wm = _poly_omega(cfg.mu_schedule)
    wl = _poly_omega(cfg.mu_loc_schedule) if cfg.mu_loc_schedule is not None else None
    if cfg.regime == "MFG":
        ordering, ok = "mu slower than q (omega_mu > omega_q)", (
            wq is not None and wm is not None and wm > wq)
    elif cfg.regime == "MFC":
        ordering, ok = "q slower than mu (omega_q > omega_mu)", (
            wq is not None and wm is not None and wq > wm)
    else:
        ordering, ok = "omega_mu > omega_q > omega_mu_loc", (
            wq is not None and wm is not None and wl is not None and wm > wq > wl)
    if wq is None or wm is None or (cfg.regime == "MFCG" and wl is None):
        checks.append(ScheduleCheck("ratio_ordering", "warn",
                                    f"{cfg.regime} needs {ordering}; constant rates "
                                    "are checked by value, not proved"))
        consts = {name: s.value for name, s in named if s.kind == "constant"}
        detail = ", ".join(f"{k}={v:g}" for k, v in sorted(consts.items()))
        checks.append(ScheduleCheck("constant_rates", "warn",
                                    f"outside proved assumptions ({detail})"))
    elif ok:
        checks.append(ScheduleCheck("ratio_ordering", "pass", f"{cfg.regime}: {ordering}"))
    else:
        checks.append(ScheduleCheck("ratio_ordering", "fail",
                                    f"{cfg.regime} needs {ordering}"))

    # Ideal-tapering items (ii)-(v) hold analytically for poly_visit with
    # omega in (0.5, 1]; anything else gets a warning, not a verification.
    q = cfg.q_schedule
    if q.kind == "poly_visit" and 0.5 < q.omega <= 1.0:
        checks.append(ScheduleCheck("ideal_tapering", "pass",
                                    f"poly_visit omega={q.omega:g} in (0.5, 1]"))
    else:
        checks.append(ScheduleCheck("ideal_tapering", "warn",
                                    "ideal-tapering conditions not established for "
                                    f"q schedule kind={q.kind}"))
    return checks
