"""Norms and nonlocal functionals of a field.

Every norm uses the grid's quadrature weights, and the squared gradient norm
is ``<-lap u, u>`` in that same inner product. With these conventions the
multiplier ``mu`` makes ``<rhs(u), u> = 0`` hold exactly at the discrete
level, which is what the mass-conservation checks rely on.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .domain import DomainKind, Field, Grid
from .errors import ConfigurationError, DegenerateFieldError

TOL_QUAD = 1e-10


@dataclass(frozen=True)
class FlowParams:
    """Model parameters of one run.

    ``epsilon = 0`` selects the unregularized multiplier. ``beta`` is only
    read by the comparison flow with the Rayleigh-type multiplier.
    """

    d: int = 1
    sigma: float = 1.0
    omega: float = 1.0
    epsilon: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ConfigurationError(f"dimension must be an integer >= 1, got {self.d}")
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise ConfigurationError(f"sigma must be finite and >= 0, got {self.sigma}")
        if self.d >= 3 and not self.sigma < 2.0 / (self.d - 2):
            raise ConfigurationError(
                f"sigma={self.sigma} is not energy-subcritical in d={self.d} "
                f"(need sigma < {2.0 / (self.d - 2):g})"
            )
        if not math.isfinite(self.omega):
            raise ConfigurationError("omega must be finite")
        if not (math.isfinite(self.epsilon) and self.epsilon >= 0):
            raise ConfigurationError(f"epsilon must be >= 0, got {self.epsilon}")
        if not math.isfinite(self.beta):
            raise ConfigurationError("beta must be finite")

    @property
    def p(self) -> float:
        """The nonlinearity's Lebesgue exponent ``2 sigma + 2``."""
        return 2.0 * self.sigma + 2.0

    def check_domain(self, grid: Grid) -> None:
        """Validate against a grid; warns on whole-space exponent gaps.

        For the truncated whole-space domain in d >= 5 the local theory needs
        ``sigma < 1/(d-2)`` or ``2/d <= sigma < 2/(d-2)``.
        """
        if grid.d != self.d:
            raise ConfigurationError(f"params.d={self.d} does not match domain d={grid.d}")
        if grid.spec.kind is DomainKind.TRUNCATED_RADIAL_LINE and self.d >= 5:
            s, d = self.sigma, self.d
            if not (s < 1.0 / (d - 2) or 2.0 / d <= s < 2.0 / (d - 2)):
                warnings.warn(
                    f"sigma={s} in d={d} lies outside the whole-space well-posedness range",
                    stacklevel=2,
                )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FunctionalReport:
    mass: float
    grad_sq: float
    lp_norm: float
    mu: float
    F: float
    holder_slack: float | None


def lp_norm(u: Field, p: float) -> float:
    """Discrete L^p norm ``(sum w_i |u_i|^p)^(1/p)``."""
    if not p >= 1:
        raise ConfigurationError(f"L^p norm needs p >= 1, got {p}")
    w = u.grid.quad_weights
    a = np.abs(u.values)
    if p == 2:
        return math.sqrt(float(np.dot(w, a * a)))
    return float(np.dot(w, a**p)) ** (1.0 / p)


def mass(u: Field) -> float:
    """Squared L2 norm."""
    return u.grid.inner(u.values, u.values)


def h1_seminorm_sq(u: Field) -> float:
    """``<-lap u, u>``; nonnegative because the Laplacian is."""
    return u.grid.dirichlet_form(u.values)


def _lp_power(grid: Grid, v: np.ndarray, p: float) -> float:
    return float(np.dot(grid.quad_weights, np.abs(v) ** p))


def _numerator(grid: Grid, v: np.ndarray, omega: float) -> float:
    """``||grad u||^2 + omega ||u||^2``."""
    return grid.dirichlet_form(v) + omega * grid.inner(v, v)


def mu(u: Field, params: FlowParams) -> float:
    """Nonlocal multiplier that keeps the L2 norm constant along the flow."""
    g = u.grid
    denom = _lp_power(g, u.values, params.p)
    if not denom > 0:
        raise DegenerateFieldError("||u||_{L^{2 sigma+2}} vanished; multiplier undefined")
    return _numerator(g, u.values, params.omega) / denom


def mu_eps(u: Field, params: FlowParams) -> float:
    """Multiplier with ``epsilon`` added to its denominator."""
    if params.epsilon == 0:
        return mu(u, params)
    g = u.grid
    denom = _lp_power(g, u.values, params.p) + params.epsilon
    return _numerator(g, u.values, params.omega) / denom


def lyapunov_F(u: Field, params: FlowParams) -> float:
    """``(||grad u||^2 + omega ||u||^2) / ||u||_{2 sigma + 2}^2``.

    Zero-homogeneous in ``u``, so rescaling onto the L2 sphere leaves it alone.
    """
    q = lp_norm(u, params.p)
    if not q > 0:
        raise DegenerateFieldError("||u||_{L^{2 sigma+2}} vanished; F undefined")
    return _numerator(u.grid, u.values, params.omega) / q**2


def holder_lower_bound_slack(u: Field, params: FlowParams) -> float:
    """``||u||_{2s+2} - ||u||_2 / Vol^{s/(2s+2)}``, nonnegative on bounded domains."""
    g = u.grid
    if not g.spec.is_bounded:
        raise ConfigurationError("the Holder lower bound needs a finite-volume domain")
    s = params.sigma
    return lp_norm(u, params.p) - lp_norm(u, 2) / g.volume ** (s / (2 * s + 2))


def gn_ratio(lp: float, mass_: float, grad_sq: float, d: int, sigma: float) -> float:
    """Gagliardo-Nirenberg quotient ``||u||_p / (||u||^{1-a} ||grad u||^a)``.

    ``a = d sigma / (2 sigma + 2)``. Only monitored; never compared with the
    (unknown) optimal constant.
    """
    a = d * sigma / (2 * sigma + 2)
    denom = math.sqrt(mass_) ** (1 - a) * math.sqrt(max(grad_sq, 0.0)) ** a
    return lp / denom if denom > 0 else math.inf


def report(u: Field, params: FlowParams) -> FunctionalReport:
    g = u.grid
    m = mass(u)
    gs = h1_seminorm_sq(u)
    lp = lp_norm(u, params.p)
    if not lp > 0:
        raise DegenerateFieldError("||u||_{L^{2 sigma+2}} vanished")
    num = gs + params.omega * m
    return FunctionalReport(
        mass=m,
        grad_sq=gs,
        lp_norm=lp,
        mu=num / lp**params.p,
        F=num / lp**2,
        holder_slack=holder_lower_bound_slack(u, params) if g.spec.is_bounded else None,
    )
