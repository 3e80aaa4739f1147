"""Stationary states: residuals, a radial shooting oracle and a constrained minimizer.

The shooting oracle and the minimizer share no code with the time stepper
beyond the grid and the norms, so agreement between the three routes
(shooting, minimizing F on the L2 sphere, long-time flow limit) is a
meaningful cross-check.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .domain import DomainKind, Field, Grid, Resolvent
from .errors import ConfigurationError, OracleFailure, StepSizeFailure
from .flow import TerminationKind, TrajectoryRecord
from .functionals import FlowParams, h1_seminorm_sq, lyapunov_F, mass, mu

log = logging.getLogger(__name__)

_EPS = np.finfo(float).eps


class Provenance(str, enum.Enum):
    SHOOTING = "shooting"
    MINIMIZER = "minimizer"
    FLOW_LIMIT = "flow_limit"


def stationary_residual(Q: Field, omega: float, mu_q: float, sigma: float) -> float:
    """Weighted L2 norm of ``lap Q - omega Q + mu_q |Q|^{2 sigma} Q``."""
    g = Q.grid
    v = Q.values
    r = g.apply_laplacian(v) - omega * v + mu_q * np.abs(v) ** (2 * sigma) * v
    return math.sqrt(g.inner(r, r))


@dataclass(frozen=True)
class StationaryState:
    """A profile with its multiplier.

    ``mu_q`` is always ``mu(profile)`` on the profile's own grid and
    ``residual_l2`` is recomputed from it; route-specific numbers (for
    instance the continuum multiplier from the shooting rescale) go in
    ``extras``.
    """

    profile: Field
    mu_q: float
    omega: float
    sigma: float
    mass: float
    provenance: Provenance
    residual_l2: float
    extras: dict = field(default_factory=dict)

    @classmethod
    def build(cls, profile: Field, omega: float, sigma: float,
              provenance: Provenance, **extras) -> "StationaryState":
        params = FlowParams(d=profile.grid.d, sigma=sigma, omega=omega)
        m = mu(profile, params)
        return cls(
            profile=profile,
            mu_q=m,
            omega=omega,
            sigma=sigma,
            mass=mass(profile),
            provenance=Provenance(provenance),
            residual_l2=stationary_residual(profile, omega, m, sigma),
            extras=dict(extras),
        )

    @property
    def params(self) -> FlowParams:
        return FlowParams(d=self.profile.grid.d, sigma=self.sigma, omega=self.omega)

    @property
    def F(self) -> float:
        return lyapunov_F(self.profile, self.params)

    def to_dict(self) -> dict:
        return {
            "omega": self.omega,
            "sigma": self.sigma,
            "mass": self.mass,
            "mu_q": self.mu_q,
            "residual_l2": self.residual_l2,
            "provenance": self.provenance.value,
            "nodes": self.profile.grid.nodes.tolist(),
            "values": self.profile.values.tolist(),
        }


def relative_l2_distance(u: Field, v: Field) -> float:
    g = u.grid
    diff = u.values - v.values
    return math.sqrt(g.inner(diff, diff) / g.inner(v.values, v.values))


# ---------------------------------------------------------------------------
# shooting

_UNDER, _OVER = -1, 1


def _shoot(a: float, omega: float, sigma: float, d: int, R: float, k: float,
           n_steps: int, sample_every: int, sample_offset: int, record: bool):
    """Integrate P'' + (d-1)/r P' - omega P + P^{2 sigma+1} = 0 from P(0)=a, P'(0)=0.

    Classical RK4 with step ``k``. Returns ``(verdict, samples)`` where the
    verdict is ``_OVER`` if P crosses zero before R and ``_UNDER`` if it turns
    back up (or is still positive at R). ``samples`` holds P at steps
    ``sample_offset + j * sample_every`` when ``record`` is set.
    """
    s2 = 2.0 * sigma
    dm1 = d - 1.0

    def acc(r, p, q):
        # p^{2 sigma} with p possibly slightly negative near a crossing
        nl = abs(p) ** s2 * p if s2 else p
        if r == 0.0:
            return (omega * p - nl) / d
        return -dm1 / r * q + omega * p - nl

    p, q, r = a, 0.0, 0.0
    samples = [] if record else None
    verdict = None
    for i in range(1, n_steps + 1):
        k1p, k1q = q, acc(r, p, q)
        rh = r + 0.5 * k
        k2p, k2q = q + 0.5 * k * k1q, acc(rh, p + 0.5 * k * k1p, q + 0.5 * k * k1q)
        k3p, k3q = q + 0.5 * k * k2q, acc(rh, p + 0.5 * k * k2p, q + 0.5 * k * k2q)
        r1 = i * k
        k4p, k4q = q + k * k3q, acc(r1, p + k * k3p, q + k * k3q)
        p += k / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
        q += k / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q)
        r = r1
        if record and i >= sample_offset and (i - sample_offset) % sample_every == 0:
            samples.append(p)
        if verdict is None:
            if not math.isfinite(p) or p < 0.0:
                verdict = _OVER
            elif q > 0.0:
                verdict = _UNDER
            if verdict is not None and not record:
                return verdict, None
    if verdict is None:
        verdict = _UNDER if p > 0.0 else _OVER
    return verdict, samples



def shoot_ground_state(omega: float, sigma: float, grid: Grid,
                       target_mass: float | None = None,
                       amplitude_range: tuple[float, float] = (1e-6, 1e6)) -> StationaryState:
    """Positive radial solution vanishing at ``R``, found by bisection on P(0).

    The normalized problem ``lap P - omega P + P^{2 sigma + 1} = 0`` is solved
    first; ``Q = lam P`` then solves the equation with multiplier
    ``lam^{-2 sigma}``, and ``lam`` is fixed by ``||Q||^2 = target_mass``
    (``lam = 1`` when no target is given). RK4 runs with a quarter of the
    grid spacing so that every node is an integration point.
    """
    spec = grid.spec
    if not spec.is_radial:
        raise ConfigurationError("shooting needs a radial grid")
    if not omega > 0:
        raise ConfigurationError(f"the positive ground state needs omega > 0, got {omega}")
    if target_mass is not None and not target_mass > 0:
        raise ConfigurationError("target_mass must be positive")

    if sigma == 0:
        # linear problem: the ground state is the first Dirichlet mode
        phi = Field(grid, grid.ground_mode)
        scale = 1.0 if target_mass is None else math.sqrt(target_mass)
        return StationaryState.build(phi * scale, omega, sigma, Provenance.SHOOTING)

    d, R, n, h = spec.d, spec.R, spec.n, grid.h
    k = h / 4.0
    n_steps = 4 * n
    # node j (1-based) sits at (j - 1/2) h = (4j - 2) k

    def verdict(a):
        return _shoot(a, omega, sigma, d, R, k, n_steps, 4, 2, False)[0]

    lo_amp, hi_amp = amplitude_range
    lo = hi = None
    a = lo_amp
    prev = None
    while a <= hi_amp * (1 + 1e-12):
        if verdict(a) == _OVER:
            if prev is None:
                raise OracleFailure(f"amplitude {a:g} already overshoots; no bracket")
            lo, hi = prev, a
            break
        prev = a
        a *= 2.0
    if lo is None:
        raise OracleFailure(
            f"no overshooting amplitude found in [{lo_amp:g}, {hi_amp:g}]"
        )

    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if verdict(mid) == _OVER:
            hi = mid
        else:
            lo = mid
    if (hi - lo) > 1e-10 * hi:
        raise OracleFailure(f"bisection stalled with bracket [{lo!r}, {hi!r}]")

    _, p_lo = _shoot(lo, omega, sigma, d, R, k, n_steps, 4, 2, True)
    _, p_hi = _shoot(hi, omega, sigma, d, R, k, n_steps, 4, 2, True)
    # the two shots bracket the tail from either side; their mean cancels
    # the exponentially growing mode to leading order
    P = 0.5 * (np.asarray(p_lo) + np.asarray(p_hi))
    lam = 1.0 if target_mass is None else math.sqrt(target_mass / grid.inner(P, P))
    Q = Field(grid, lam * P)
    return StationaryState.build(
        Q, omega, sigma, Provenance.SHOOTING,
        center_amplitude=0.5 * (lo + hi),
        scale=lam,
        mu_scaling=lam ** (-2.0 * sigma),
    )


# ---------------------------------------------------------------------------
# constrained minimization


def _grad_F(grid: Grid, v: np.ndarray, params: FlowParams):
    """``F(v)`` and the L2 gradient ``(2 / ||v||_p^2)(-lap v + omega v - mu |v|^{2s} v)``."""
    w = grid.quad_weights
    lap_v = grid.apply_laplacian(v)
    m = float(np.dot(w, v * v))
    num = grid.dirichlet_form(v) + params.omega * m
    lp_pow = float(np.dot(w, np.abs(v) ** params.p))
    lp2 = lp_pow ** (2.0 / params.p)
    mu_v = num / lp_pow
    g = (2.0 / lp2) * (-lap_v + params.omega * v - mu_v * np.abs(v) ** (2 * params.sigma) * v)
    return num / lp2, g


def minimize_F_on_sphere(u0: Field, params: FlowParams, target_mass: float,
                         tol: float = 1e-8, max_iter: int = 200_000,
                         max_halvings: int = 60, precondition: bool = True) -> StationaryState:
    """Projected gradient descent for ``F`` on ``{||u||^2 = target_mass}``.

    Each iteration moves against the gradient, rescales back onto the
    sphere and halves the step (starting from ``1/|F(u)|``) until ``F``
    drops. With ``precondition`` the gradient is taken in the H^1 metric,
    i.e. multiplied by ``(I - lap)^{-1}`` and then projected onto the tangent
    space; without it the plain L2 gradient is used, which needs O(1/h^2)
    iterations. Stops when the L2 norm of the (tangential) gradient is
    below ``tol``; the gradient is automatically tangential because ``F``
    is zero-homogeneous.
    """
    grid = u0.grid
    params.check_domain(grid)
    if grid.spec.kind is DomainKind.TRUNCATED_RADIAL_LINE and not params.omega > 0:
        raise ConfigurationError("minimizing on the whole-space domain needs omega > 0")
    if not target_mass > 0:
        raise ConfigurationError("target_mass must be positive")
    w = grid.quad_weights
    v = np.array(u0.values, dtype=float)
    m0 = float(np.dot(w, v * v))
    if not m0 > 0:
        raise ConfigurationError("initial guess must be nonzero")
    v *= math.sqrt(target_mass / m0)
    precond = Resolvent(grid, 1.0, 1.0) if precondition else None

    F, g = _grad_F(grid, v, params)
    gnorm = math.sqrt(float(np.dot(w, g * g)))
    it = 0
    while gnorm >= tol:
        if it >= max_iter:
            raise StepSizeFailure(f"no convergence in {max_iter} iterations (|grad F| = {gnorm:.3e})")
        s = precond.solve(g) if precond is not None else g
        s = s - (float(np.dot(w, s * v)) / target_mass) * v
        eta = 1.0 / abs(F) if F != 0 else 1.0
        for _ in range(max_halvings):
            trial = v - eta * s
            trial *= math.sqrt(target_mass / float(np.dot(w, trial * trial)))
            F_new, g_new = _grad_F(grid, trial, params)
            if F_new < F:
                break
            # at the rounding floor of F, accept a flat step that still shrinks the gradient
            if F_new <= F + 8 * _EPS * abs(F) and float(np.dot(w, g_new * g_new)) < gnorm**2:
                break
            eta *= 0.5
        else:
            raise StepSizeFailure(
                f"F did not decrease after {max_halvings} halvings at iteration {it} "
                f"(F = {F!r}, |grad F| = {gnorm:.3e})"
            )
        v, F, g = trial, F_new, g_new
        gnorm = math.sqrt(float(np.dot(w, g * g)))
        it += 1
    if float(np.dot(w, v)) < 0:
        v = -v
    log.debug("minimizer converged in %d iterations, F = %.12g", it, F)
    return StationaryState.build(
        Field(grid, v), params.omega, params.sigma, Provenance.MINIMIZER,
        iterations=it, F=F, grad_norm=gnorm,
    )


# ---------------------------------------------------------------------------
# flow limits


def detect_omega_limit(traj: TrajectoryRecord, fields=None, params: FlowParams | None = None,
                       tol_res: float | None = None,
                       tol_conv: float | None = None) -> StationaryState | None:
    """Package the last field of a settled run as a stationary state.

    ``fields`` may be a list of sampled fields (the last one is used); by
    default the trajectory's final field. Returns None unless the run ended
    by convergence or at ``t_end`` and both the stationary residual and the
    last ``||du/dt||`` are under tolerance. ``F_inf`` (the last F value) is
    stored in ``extras``.
    """
    params = params or traj.params
    tol_res = traj.scheme.tol_res if tol_res is None else tol_res
    tol_conv = traj.scheme.tol_conv if tol_conv is None else tol_conv
    if traj.termination.kind not in (TerminationKind.CONVERGED, TerminationKind.REACHED_T_END):
        return None
    if fields:
        last = fields[-1]
        final = last if isinstance(last, Field) else Field(traj.final_field.grid, last)
    else:
        final = traj.final_field
    if h1_seminorm_sq(final) == 0 and mass(final) == 0:
        return None
    state = StationaryState.build(final, params.omega, params.sigma, Provenance.FLOW_LIMIT)
    if not (state.residual_l2 < tol_res and traj.dudt_l2[-1] < tol_conv):
        return None
    F_inf = float(traj.F[-1])
    if params.omega > 0 and not F_inf > 0:
        raise AssertionError(f"limit value of F must be positive for omega > 0, got {F_inf}")
    state.extras["F_inf"] = F_inf
    state.extras["t"] = float(traj.t[-1])
    return state
