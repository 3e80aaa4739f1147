"""Time integration of the norm-preserving flow and its two relatives.

Three evolution laws share one stepping machinery:

``MAIN``   du/dt = lap u - omega u + mu[u] |u|^{2s} u
``EPS``    same with the regularized multiplier mu_eps (epsilon > 0)
``RIVAL``  du/dt = lap u + omega[u] u + beta |u|^{2s} u,
           omega[u] = (||grad u||^2 - beta ||u||_p^p) / ||u||^2

The semi-implicit schemes treat the linear part with backward Euler and
freeze the multiplier and the power nonlinearity at the start of the step,
so each step is one tridiagonal solve. A fixed point of this map is a
discrete stationary state.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .domain import Field, Grid, Resolvent
from .errors import ConfigurationError, DegenerateFieldError, StabilityError
from .functionals import FlowParams, lyapunov_F

TOL_CONV = 1e-8
TOL_RES = 1e-6

COLUMNS = ("t", "mass", "grad_sq", "lp_norm", "mu", "F", "dudt_l2", "residual")


class SchemeKind(str, enum.Enum):
    SEMI_IMPLICIT_EULER = "semi_implicit_euler"
    SEMI_IMPLICIT_EULER_PROJECTED = "semi_implicit_euler_projected"
    EXPLICIT_RK4 = "explicit_rk4"


class FlowKind(str, enum.Enum):
    MAIN = "main"
    EPS = "eps"
    RIVAL = "rival"


class TerminationKind(str, enum.Enum):
    REACHED_T_END = "reached_t_end"
    CONVERGED = "converged"
    BLOW_UP = "blow_up"
    DEGENERATE = "degenerate"


@dataclass(frozen=True)
class Termination:
    kind: TerminationKind
    t: float
    residual: float | None = None
    detail: str = ""


@dataclass(frozen=True)
class SchemeSpec:
    """Time-stepping controls.

    ``renormalize`` is implied by the projected kind and may not be set for
    the others. Blow-up is declared once ``||grad u||^2`` exceeds
    ``blowup_h1_factor**2`` times its initial value.
    """

    kind: SchemeKind
    dt: float
    t_end: float
    renormalize: bool = False
    blowup_h1_factor: float = 1e3
    tol_conv: float = TOL_CONV
    tol_res: float = TOL_RES

    def __post_init__(self):
        object.__setattr__(self, "kind", SchemeKind(self.kind))
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if not (self.t_end > 0 and math.isfinite(self.t_end)):
            raise ConfigurationError(f"t_end must be positive, got {self.t_end}")
        if not self.dt < self.t_end:
            raise ConfigurationError(f"dt={self.dt} must be smaller than t_end={self.t_end}")
        if not self.blowup_h1_factor > 1:
            raise ConfigurationError("blowup_h1_factor must exceed 1")
        if self.kind is SchemeKind.SEMI_IMPLICIT_EULER_PROJECTED:
            object.__setattr__(self, "renormalize", True)
        elif self.renormalize:
            raise ConfigurationError("renormalize is only valid with the projected scheme")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t_end / self.dt)))


@dataclass(frozen=True)
class FlowState:
    """Solution at one time level.

    ``mass0`` is ``||u_0||^2``; the projected scheme rescales onto it.
    """

    t: float
    u: Field
    step_index: int = 0
    last_mu: float = math.nan
    mass0: float | None = None

    def __post_init__(self):
        if self.t < 0:
            raise ConfigurationError("time must be nonnegative")
        if self.mass0 is None:
            object.__setattr__(self, "mass0", self.u.grid.inner(self.u.values, self.u.values))

    @classmethod
    def initial(cls, u0: Field) -> "FlowState":
        return cls(0.0, u0)


def default_dt(u0: Field, params: FlowParams) -> float:
    """``1e-4 / |F(u0)|``: a conservative step for desk-scale grids."""
    F0 = abs(lyapunov_F(u0, params))
    return 1e-4 / F0 if F0 > 0 else 1e-4


class Dynamics:
    """Right-hand side pieces of one evolution law on one grid."""

    def __init__(self, grid: Grid, params: FlowParams, which: FlowKind = FlowKind.MAIN):
        self.grid = grid
        self.params = params
        self.which = FlowKind(which)
        # epsilon = 0 under EPS reduces to the main law
        self.linear_omega = 0.0 if self.which is FlowKind.RIVAL else params.omega
        self._w = grid.quad_weights
        self._p = params.p
        self._s2 = 2.0 * params.sigma

    def power_term(self, v: np.ndarray) -> np.ndarray:
        if self._s2 == 0:
            return v
        return np.abs(v) ** self._s2 * v

    def multiplier(self, v: np.ndarray) -> float:
        """mu, mu_eps or omega[u] depending on the law."""
        g, p = self.grid, self.params
        grad_sq = g.dirichlet_form(v)
        lp_pow = float(np.dot(self._w, np.abs(v) ** self._p))
        if self.which is FlowKind.RIVAL:
            m = float(np.dot(self._w, v * v))
            if not m > 0:
                raise DegenerateFieldError("||u||_{L^2} vanished")
            return (grad_sq - p.beta * lp_pow) / m
        num = grad_sq + p.omega * float(np.dot(self._w, v * v))
        if self.which is FlowKind.EPS and p.epsilon > 0:
            return num / (lp_pow + p.epsilon)
        if not lp_pow > 0:
            raise DegenerateFieldError("||u||_{L^{2 sigma+2}} vanished")
        return num / lp_pow

    def explicit_part(self, v: np.ndarray):
        """Frozen part of the right-hand side and the multiplier used in it."""
        m = self.multiplier(v)
        if self.which is FlowKind.RIVAL:
            return m * v + self.params.beta * self.power_term(v), m
        return m * self.power_term(v), m

    def rhs(self, v: np.ndarray) -> np.ndarray:
        lap_v = self.grid.apply_laplacian(v)
        ex, _ = self.explicit_part(v)
        return lap_v - self.linear_omega * v + ex


class Integrator:
    """One stepper bound to a grid, a law and a scheme; caches the LU factors."""

    def __init__(self, grid: Grid, params: FlowParams, scheme: SchemeSpec,
                 which: FlowKind = FlowKind.MAIN):
        self.grid = grid
        self.params = params
        self.scheme = scheme
        self.dyn = Dynamics(grid, params, which)
        self._resolvent = None
        if scheme.kind is not SchemeKind.EXPLICIT_RK4:
            self._resolvent = Resolvent(grid, scheme.dt, self.dyn.linear_omega)

    def step(self, state: FlowState) -> FlowState:
        dt = self.scheme.dt
        v = state.u.values
        if self.scheme.kind is SchemeKind.EXPLICIT_RK4:
            f = self.dyn.rhs
            k1 = f(v)
            k2 = f(v + 0.5 * dt * k1)
            k3 = f(v + 0.5 * dt * k2)
            k4 = f(v + dt * k3)
            new = v + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            m = self.dyn.multiplier(v)
        else:
            ex, m = self.dyn.explicit_part(v)
            new = self._resolvent.solve(v + dt * ex)
            if self.scheme.renormalize:
                cur = float(np.dot(self.grid.quad_weights, new * new))
                if not cur > 0:
                    raise DegenerateFieldError("cannot renormalize a vanished field")
                new = new * math.sqrt(state.mass0 / cur)
        if not np.all(np.isfinite(new)):
            raise StabilityError(f"non-finite values after step {state.step_index + 1}")
        return FlowState(
            t=state.t + dt,
            u=Field(self.grid, new),
            step_index=state.step_index + 1,
            last_mu=m,
            mass0=state.mass0,
        )


def _check_eps(params: FlowParams) -> None:
    if params.epsilon < 0:
        raise ConfigurationError("epsilon must be >= 0")


def step_flow(state: FlowState, params: FlowParams, scheme: SchemeSpec) -> FlowState:
    """Advance the main law by one step."""
    return Integrator(state.u.grid, params, scheme, FlowKind.MAIN).step(state)


def step_flow_eps(state: FlowState, params: FlowParams, scheme: SchemeSpec) -> FlowState:
    """Advance the epsilon-regularized law by one step (epsilon = 0 is the main law)."""
    _check_eps(params)
    return Integrator(state.u.grid, params, scheme, FlowKind.EPS).step(state)


def step_rival_flow(state: FlowState, params: FlowParams, scheme: SchemeSpec) -> FlowState:
    """Advance the Rayleigh-multiplier comparison law by one step."""
    return Integrator(state.u.grid, params, scheme, FlowKind.RIVAL).step(state)


@dataclass
class TrajectoryRecord:
    """Diagnostic time series of one run plus its termination reason.

    ``mu`` holds whichever multiplier the law uses (``omega[u]`` for the
    rival law). ``dudt_l2`` in the first row is ``||rhs(u0)||``; later rows
    use the step difference ``||(u^{n+1} - u^n) / dt||``.
    ``lyapunov_integral`` holds, per recorded row, the trapezoid over every
    step of ``||du/dt||^2 / (||grad u||^2 + omega ||u||^2)``, so it stays
    accurate when only every k-th row is recorded.
    """

    rows: np.ndarray
    termination: Termination
    params: FlowParams
    scheme: SchemeSpec
    which: FlowKind
    final_state: FlowState
    initial_state: FlowState
    snapshots: list = field(default_factory=list)
    lyapunov_integral: np.ndarray | None = None

    def __getattr__(self, name):
        if name in COLUMNS:
            return self.rows[:, COLUMNS.index(name)]
        raise AttributeError(name)

    def __len__(self):
        return len(self.rows)

    @property
    def final_field(self) -> Field:
        return self.final_state.u


def _diagnostics(dyn: Dynamics, v: np.ndarray):
    """(mass, grad_sq, lp_norm, multiplier, F, residual) of one field."""
    g, p = dyn.grid, dyn.params
    w = g.quad_weights
    lap_v = g.apply_laplacian(v)
    m = float(np.dot(w, v * v))
    grad_sq = g.dirichlet_form(v)
    lp_pow = float(np.dot(w, np.abs(v) ** p.p))
    if not lp_pow > 0:
        raise DegenerateFieldError("||u||_{L^{2 sigma+2}} vanished")
    lp = lp_pow ** (1.0 / p.p)
    F = (grad_sq + p.omega * m) / lp**2
    ex, mult = dyn.explicit_part(v)
    res_vec = lap_v - dyn.linear_omega * v + ex
    residual = math.sqrt(float(np.dot(w, res_vec * res_vec)))
    return m, grad_sq, lp, mult, F, residual


def run_flow(
    u0: Field | FlowState,
    params: FlowParams,
    scheme: SchemeSpec,
    which: FlowKind = FlowKind.MAIN,
    *,
    record_every: int = 1,
    snapshot_every: int | None = None,
    on_step=None,
    h1_reference: float | None = None,
) -> TrajectoryRecord:
    """Integrate until ``t_end``, convergence, blow-up or degeneracy.

    ``u0`` may be a :class:`FlowState` to resume from a checkpoint; then the
    remaining ``round((t_end - t) / dt)`` steps are taken. Stepper errors end
    the run with the matching termination instead of propagating.
    ``snapshot_every`` stores ``(t, values)`` pairs every that many steps
    (the initial and final fields are always stored when it is set).
    ``h1_reference`` overrides the ``||grad u||^2`` the blow-up threshold is
    measured against; a resumed run passes the value from its first segment.
    """
    if record_every < 1:
        raise ConfigurationError("record_every must be >= 1")
    state = u0 if isinstance(u0, FlowState) else FlowState.initial(u0)
    grid = state.u.grid
    params.check_domain(grid)
    which = FlowKind(which)
    if which is FlowKind.EPS:
        _check_eps(params)
    integ = Integrator(grid, params, scheme, which)
    dyn = integ.dyn
    dt = scheme.dt

    m, gs, lp, mult, F, res = _diagnostics(dyn, state.u.values)
    rows = [(state.t, m, gs, lp, mult, F, res, res)]
    kin = gs + params.omega * m
    prev_q = res * res / kin if kin != 0 else math.nan
    acc = 0.0
    integral = [0.0]
    snapshots = []
    if snapshot_every:
        snapshots.append((state.t, state.u.values.copy()))
    h1_limit = scheme.blowup_h1_factor**2 * (gs if h1_reference is None else h1_reference)
    n_steps = int(round((scheme.t_end - state.t) / dt))
    initial = state
    termination = None

    # overflow during a blow-up is detected below; silence numpy's warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, n_steps + 1):
            old = state
            try:
                state = integ.step(state)
                m, gs, lp, mult, F, res = _diagnostics(dyn, state.u.values)
            except StabilityError as exc:
                termination = Termination(TerminationKind.BLOW_UP, old.t + dt, detail=str(exc))
                state = old
                break
            except DegenerateFieldError as exc:
                termination = Termination(TerminationKind.DEGENERATE, old.t + dt, detail=str(exc))
                state = old
                break
            diff = (state.u.values - old.u.values) / dt
            dudt = math.sqrt(float(np.dot(grid.quad_weights, diff * diff)))
            row = (state.t, m, gs, lp, mult, F, dudt, res)
            kin = gs + params.omega * m
            q = dudt * dudt / kin if kin != 0 else math.nan
            acc += 0.5 * dt * (prev_q + q)
            prev_q = q
            if on_step is not None:
                on_step(state)

            if not (math.isfinite(gs) and gs <= h1_limit):
                termination = Termination(
                    TerminationKind.BLOW_UP, state.t,
                    detail=f"||grad u||^2 = {gs:.3e} exceeded {h1_limit:.3e}",
                )
            elif dudt < scheme.tol_conv and res < scheme.tol_res:
                termination = Termination(TerminationKind.CONVERGED, state.t, residual=res)
            elif k == n_steps:
                termination = Termination(TerminationKind.REACHED_T_END, state.t, residual=res)

            if termination is not None or k % record_every == 0:
                rows.append(row)
                integral.append(acc)
            if snapshot_every and (termination is not None or k % snapshot_every == 0):
                snapshots.append((state.t, state.u.values.copy()))
            if termination is not None:
                break

    if termination is None:  # zero steps requested
        termination = Termination(TerminationKind.REACHED_T_END, state.t, residual=res)
    return TrajectoryRecord(
        rows=np.array(rows, dtype=float),
        termination=termination,
        params=params,
        scheme=scheme,
        which=which,
        final_state=state,
        initial_state=initial,
        snapshots=snapshots,
        lyapunov_integral=np.array(integral),
    )


def with_dt(scheme: SchemeSpec, dt: float) -> SchemeSpec:
    return replace(scheme, dt=dt)
