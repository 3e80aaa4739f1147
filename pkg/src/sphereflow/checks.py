"""Executable invariant checks on recorded trajectories.

Each check returns a :class:`CheckResult`; a :class:`CheckReport` is the
list written at the end of a run and by ``sphereflow verify``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .flow import FlowKind, TerminationKind, TrajectoryRecord
from .functionals import gn_ratio

TOL_MASS_PROJECTED = 1e-12
TOL_F_MONOTONE = 1e-9
TOL_LYAPUNOV = 1e-2
TOL_HOLDER = 1e-10
TOL_EPS_MASS = 5e-3


class Status(str, enum.Enum):
    PASS = "pass"
    FAIL = "fail"
    SKIPPED = "skipped"


@dataclass(frozen=True)
class CheckResult:
    check_name: str
    status: Status
    measured: float
    tolerance: float
    detail: str = ""

    @classmethod
    def upper(cls, name: str, measured: float, tolerance: float, detail: str = "") -> "CheckResult":
        """Pass when ``measured <= tolerance`` (NaN fails)."""
        ok = measured <= tolerance
        return cls(name, Status.PASS if ok else Status.FAIL, float(measured), float(tolerance), detail)

    @classmethod
    def lower(cls, name: str, measured: float, tolerance: float, detail: str = "") -> "CheckResult":
        """Pass when ``measured >= tolerance`` (NaN fails)."""
        ok = measured >= tolerance
        return cls(name, Status.PASS if ok else Status.FAIL, float(measured), float(tolerance), detail)

    @classmethod
    def skipped(cls, name: str, detail: str, measured: float = math.nan,
                tolerance: float = math.nan) -> "CheckResult":
        return cls(name, Status.SKIPPED, float(measured), float(tolerance), detail)

    @property
    def passed(self) -> bool:
        return self.status is Status.PASS

    def to_dict(self) -> dict:
        def num(x):
            return x if math.isfinite(x) else None
        return {
            "check_name": self.check_name,
            "status": self.status.value,
            "measured": num(self.measured),
            "tolerance": num(self.tolerance),
            "detail": self.detail,
        }

    def line(self) -> str:
        return (f"{self.status.value.upper():7s} {self.check_name:40s} "
                f"measured={self.measured:.6g} tol={self.tolerance:.3g}  {self.detail}")


@dataclass
class CheckReport:
    entries: list = field(default_factory=list)

    def add(self, result: CheckResult) -> None:
        if any(e.check_name == result.check_name for e in self.entries):
            raise ValueError(f"duplicate check {result.check_name!r}")
        self.entries.append(result)

    def extend(self, results) -> None:
        for r in results:
            self.add(r)

    @property
    def failures(self) -> list:
        return [e for e in self.entries if e.status is Status.FAIL]

    @property
    def ok(self) -> bool:
        return not self.failures

    def __getitem__(self, name: str) -> CheckResult:
        for e in self.entries:
            if e.check_name == name:
                return e
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "n_pass": sum(e.status is Status.PASS for e in self.entries),
            "n_fail": len(self.failures),
            "n_skipped": sum(e.status is Status.SKIPPED for e in self.entries),
            "checks": [e.to_dict() for e in self.entries],
        }


# ---------------------------------------------------------------------------
# measurements on recorded rows


def trapezoid(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Cumulative trapezoid integral, starting at 0."""
    out = np.zeros_like(y, dtype=float)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))
    return out


def mass_deviation(traj: TrajectoryRecord) -> float:
    """``max_n |m_n / m_0 - 1|``."""
    m = traj.mass
    return float(np.max(np.abs(m / m[0] - 1.0)))


def f_increase(traj: TrajectoryRecord) -> float:
    """Largest relative step-to-step increase of F (<= 0 for a monotone run)."""
    F = traj.F
    if len(F) < 2:
        return 0.0
    return float(np.max((F[1:] - F[:-1]) / np.abs(F[:-1])))


def lyapunov_defect(traj: TrajectoryRecord) -> tuple[float, float]:
    """``(defect, scale)`` of ``log F(T)/F(0) + 2 int |u_t|^2 / K ds``.

    ``K = ||grad u||^2 + omega ||u||^2``. The integral is the per-step
    trapezoid accumulated by the run when available, else a trapezoid over
    recorded rows. ``scale`` is ``|log F(T)/F(0)|``, the size of the terms
    being balanced; the relative error is ``defect / scale``.
    """
    acc = traj.lyapunov_integral
    if acc is not None and len(acc) == len(traj.rows):
        integral = float(acc[-1])
    else:
        K = traj.grad_sq + traj.params.omega * traj.mass
        integral = trapezoid(traj.dudt_l2**2 / K, traj.t)[-1]
    logF = math.log(traj.F[-1] / traj.F[0])
    return abs(logF + 2.0 * integral), abs(logF)


def lyapunov_relative_error(traj: TrajectoryRecord) -> float:
    defect, scale = lyapunov_defect(traj)
    return defect / scale if scale > 0 else math.inf


def holder_slacks(traj: TrajectoryRecord, volume: float) -> np.ndarray:
    """``||u||_p - ||u||_2 / Vol^{s/(2s+2)}`` per recorded row."""
    s = traj.params.sigma
    return traj.lp_norm - np.sqrt(traj.mass) / volume ** (s / (2 * s + 2))


def eps_mass_defect(traj: TrajectoryRecord) -> np.ndarray:
    """``|m(t) - m0 + 2 eps int mu_eps|`` per row, relative to ``m0``."""
    eps = traj.params.epsilon
    m = traj.mass
    return np.abs(m - m[0] + 2.0 * eps * trapezoid(traj.mu, traj.t)) / m[0]


def kinetic_sign(traj: TrajectoryRecord) -> np.ndarray:
    """``||grad u||^2 + omega ||u0||^2`` per row (sign separates the sets G and H)."""
    return traj.grad_sq + traj.params.omega * traj.mass[0]


def sign_flips(K: np.ndarray) -> int:
    """Number of transitions between ``K <= 0`` (G) and ``K > 0`` (H)."""
    inG = K <= 0
    return int(np.count_nonzero(inG[1:] != inG[:-1]))


def set_exits(K: np.ndarray) -> tuple[int, int]:
    """``(G -> H, H -> G)`` transition counts along ``K``."""
    inG = K <= 0
    g_to_h = int(np.count_nonzero(inG[:-1] & ~inG[1:]))
    h_to_g = int(np.count_nonzero(~inG[:-1] & inG[1:]))
    return g_to_h, h_to_g


# ---------------------------------------------------------------------------
# per-run report


def trajectory_checks(traj: TrajectoryRecord) -> CheckReport:
    """The invariants a single recorded run can be held to.

    The check names are the same for every run; checks that do not apply
    to the run's law, scheme or domain are reported as skipped.
    """
    rep = CheckReport()
    which = traj.which
    grid = traj.final_field.grid
    params = traj.params
    main = which is FlowKind.MAIN

    # mass
    dev = mass_deviation(traj)
    if main and traj.scheme.renormalize:
        rep.add(CheckResult.upper("mass_conservation", dev, TOL_MASS_PROJECTED,
                                  "projected scheme, max relative deviation"))
    else:
        rep.add(CheckResult.skipped("mass_conservation",
                                    "drift is first order in dt without projection; see the dt-halving test",
                                    measured=dev))

    if which is FlowKind.EPS:
        rep.add(CheckResult.upper("eps_mass_identity", float(np.max(eps_mass_defect(traj))),
                                  TOL_EPS_MASS, "max over rows, relative to ||u0||^2"))
    else:
        rep.add(CheckResult.skipped("eps_mass_identity", "only for the regularized law"))

    K = traj.grad_sq + params.omega * traj.mass
    if main:
        rep.add(CheckResult.upper("F_monotone", f_increase(traj), TOL_F_MONOTONE,
                                  "max relative increase of F between recorded rows"))
        if np.all(K > 0) or np.all(K < 0):
            defect, scale = lyapunov_defect(traj)
            if scale > 1e-6:
                rep.add(CheckResult.upper("lyapunov_identity", defect / scale, TOL_LYAPUNOV,
                                          f"|log F(T)/F(0)| = {scale:.4g}"))
            else:
                rep.add(CheckResult.skipped("lyapunov_identity", "F essentially constant",
                                            measured=defect))
        else:
            rep.add(CheckResult.skipped("lyapunov_identity",
                                        "||grad u||^2 + omega ||u||^2 changes sign"))
    else:
        rep.add(CheckResult.skipped("F_monotone", f"not a Lyapunov functional for the {which.value} law"))
        rep.add(CheckResult.skipped("lyapunov_identity", f"not derived for the {which.value} law"))

    if grid.spec.is_bounded:
        rep.add(CheckResult.lower("holder_lower_bound", float(np.min(holder_slacks(traj, grid.volume))),
                                  -TOL_HOLDER, "min slack over rows"))
    else:
        rep.add(CheckResult.skipped("holder_lower_bound", "domain of infinite volume"))

    ratios = [gn_ratio(lp, m, gs, params.d, params.sigma)
              for lp, m, gs in zip(traj.lp_norm, traj.mass, traj.grad_sq)]
    gmax = max(ratios)
    rep.add(CheckResult("gn_ratio_monitor", Status.PASS if math.isfinite(gmax) else Status.FAIL,
                        gmax, math.inf, "max Gagliardo-Nirenberg quotient (monitored)"))

    if main and params.omega < 0:
        # G = {K <= 0} is invariant because F decreases; H is not (a
        # sign-changing field can enter G), so H -> G crossings are reported only
        Ks = kinetic_sign(traj)
        start = "G" if Ks[0] <= 0 else "H"
        g_to_h, h_to_g = set_exits(Ks)
        rep.add(CheckResult.upper("invariant_sets", g_to_h, 0,
                                  f"starts in {start}; G->H exits of ||grad u||^2 + omega ||u0||^2 <= 0, "
                                  f"H->G crossings {h_to_g}"))
    else:
        rep.add(CheckResult.skipped("invariant_sets", "only for the main law with omega < 0"))

    blew = traj.termination.kind is TerminationKind.BLOW_UP
    if main:
        rep.add(CheckResult("no_blow_up", Status.FAIL if blew else Status.PASS,
                            traj.termination.t if blew else math.nan, math.nan,
                            traj.termination.kind.value))
    else:
        rep.add(CheckResult.skipped("no_blow_up", f"blow-up is admissible for the {which.value} law",
                                    measured=traj.termination.t if blew else math.nan))
    return rep
