"""Spatial discretization: grids, the Dirichlet Laplacian and quadrature.

Three domain kinds are supported:

* ``Interval(a, b)``: vertex-centred grid with ``n`` interior nodes
  ``a + j h``, ``h = (b - a) / (n + 1)``, Dirichlet values at both ends.
* ``RadialBall(R, d)``: radially symmetric functions on the ball of radius
  ``R`` in R^d, on a half-shifted grid ``r_j = (j - 1/2) h``, ``h = R / n``.
* ``TruncatedRadialLine(R, d)``: same grid, but standing in for all of R^d
  with an artificial Dirichlet wall at ``r = R``.

The radial Laplacian is written in flux form on the cells
``[(j-1) h, j h]`` and weighted by the exact shell volumes, so that
``W @ laplacian`` is a symmetric matrix. Discrete integration by parts is
then exact and the norms used everywhere else share one inner product.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import eigh_tridiagonal, eigvalsh_tridiagonal
from scipy.linalg.lapack import dgttrf, dgttrs

from .errors import ConfigurationError, StabilityError


class DomainKind(str, enum.Enum):
    INTERVAL = "interval"
    RADIAL_BALL = "radial_ball"
    TRUNCATED_RADIAL_LINE = "truncated_radial_line"


@dataclass(frozen=True)
class DomainSpec:
    """Immutable description of a discretized domain.

    For ``INTERVAL`` the endpoints are ``a`` and ``b`` and ``d`` is 1.
    For the radial kinds ``R`` is the outer radius and ``d`` the dimension.
    """

    kind: DomainKind
    n: int
    a: float = 0.0
    b: float = 1.0
    R: float = 1.0
    d: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", DomainKind(self.kind))
        if int(self.n) != self.n or self.n < 3:
            raise ConfigurationError(f"need an integer n >= 3 interior nodes, got {self.n}")
        if self.kind is DomainKind.INTERVAL:
            if not self.a < self.b:
                raise ConfigurationError(f"interval needs a < b, got a={self.a}, b={self.b}")
            if self.d != 1:
                raise ConfigurationError("an interval domain is one-dimensional (d=1)")
        else:
            if not self.R > 0:
                raise ConfigurationError(f"radius must be positive, got R={self.R}")
            if int(self.d) != self.d or self.d < 1:
                raise ConfigurationError(f"dimension must be an integer >= 1, got d={self.d}")
        if not all(math.isfinite(x) for x in (self.a, self.b, self.R)):
            raise ConfigurationError("domain extents must be finite")

    @classmethod
    def interval(cls, a: float, b: float, n: int) -> "DomainSpec":
        return cls(DomainKind.INTERVAL, n, a=float(a), b=float(b))

    @classmethod
    def radial_ball(cls, R: float, d: int, n: int) -> "DomainSpec":
        return cls(DomainKind.RADIAL_BALL, n, R=float(R), d=int(d))

    @classmethod
    def truncated_radial_line(cls, R: float, d: int, n: int) -> "DomainSpec":
        return cls(DomainKind.TRUNCATED_RADIAL_LINE, n, R=float(R), d=int(d))

    @property
    def is_radial(self) -> bool:
        return self.kind is not DomainKind.INTERVAL

    @property
    def is_bounded(self) -> bool:
        """False only for the truncated stand-in for the whole space."""
        return self.kind is not DomainKind.TRUNCATED_RADIAL_LINE

    def with_n(self, n: int) -> "DomainSpec":
        return DomainSpec(self.kind, n, a=self.a, b=self.b, R=self.R, d=self.d)

    def to_dict(self) -> dict:
        if self.kind is DomainKind.INTERVAL:
            return {"kind": self.kind.value, "n": self.n, "a": self.a, "b": self.b}
        return {"kind": self.kind.value, "n": self.n, "R": self.R, "d": self.d}

    @classmethod
    def from_dict(cls, data: dict) -> "DomainSpec":
        kind = DomainKind(data["kind"])
        if kind is DomainKind.INTERVAL:
            return cls.interval(data["a"], data["b"], int(data["n"]))
        return cls(kind, int(data["n"]), R=float(data["R"]), d=int(data["d"]))


def sphere_area(d: int) -> float:
    """Surface measure of the unit sphere S^{d-1} (2 for d = 1)."""
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Grid:
    """Nodes, quadrature weights and the tridiagonal Laplacian of a domain.

    ``lap_lower``, ``lap_diag`` and ``lap_upper`` hold the three diagonals of
    the discrete Laplacian, with ``(lap u)_j = lower_j u_{j-1} + diag_j u_j
    + upper_j u_{j+1}`` (``lower_0`` and ``upper_{n-1}`` are zero).
    """

    spec: DomainSpec
    nodes: np.ndarray
    h: float
    quad_weights: np.ndarray
    lap_lower: np.ndarray
    lap_diag: np.ndarray
    lap_upper: np.ndarray

    @property
    def n(self) -> int:
        return self.spec.n

    @property
    def d(self) -> int:
        return self.spec.d

    @property
    def volume(self) -> float:
        """Closed-form measure of the domain (length or ball volume)."""
        s = self.spec
        if s.kind is DomainKind.INTERVAL:
            return s.b - s.a
        return sphere_area(s.d) * s.R ** s.d / s.d

    def field(self, values) -> "Field":
        return Field(self, values)

    def sample(self, fn) -> "Field":
        return Field(self, fn(self.nodes))

    def zeros(self) -> "Field":
        return Field(self, np.zeros(self.n))

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(np.dot(self.quad_weights, u * v))

    def apply_laplacian(self, u: np.ndarray) -> np.ndarray:
        out = self.lap_diag * u
        out[1:] += self.lap_lower[1:] * u[:-1]
        out[:-1] += self.lap_upper[:-1] * u[1:]
        return out

    @cached_property
    def _form_coefficients(self):
        # -u^T W L u = sum_j k_j (u_{j+1} - u_j)^2 + sum_j z_j u_j^2, with
        # k_j = -(W L)_{j,j+1} and z_j the negated row sums of W L
        w = self.quad_weights
        kappa = w[:-1] * self.lap_upper[:-1]
        zeta = -w * (self.lap_lower + self.lap_diag + self.lap_upper)
        zeta[np.abs(zeta) < 1e-9 * np.abs(w * self.lap_diag)] = 0.0  # rounding noise
        return _readonly(kappa), _readonly(zeta)

    def dirichlet_form(self, u: np.ndarray) -> float:
        """``<-lap u, u>`` summed as nonnegative terms (no cancellation)."""
        kappa, zeta = self._form_coefficients
        du = np.diff(u)
        return float(np.dot(kappa, du * du) + np.dot(zeta, u * u))

    def laplacian_matrix(self) -> np.ndarray:
        """Dense copy of the Laplacian, for small-grid oracles and debugging."""
        return (
            np.diag(self.lap_diag)
            + np.diag(self.lap_lower[1:], -1)
            + np.diag(self.lap_upper[:-1], 1)
        )

    @cached_property
    def laplacian_spectrum(self) -> np.ndarray:
        """Eigenvalues of the Laplacian in ascending order (all negative).

        Computed from the symmetrized form ``W^{1/2} L W^{-1/2}``, which
        has the same spectrum because ``W L`` is symmetric.
        """
        off = -np.sqrt(self.lap_upper[:-1] * self.lap_lower[1:])
        # off-diagonals of a symmetric matrix similar to L; sign is irrelevant
        return eigvalsh_tridiagonal(self.lap_diag, off)

    @cached_property
    def ground_mode(self) -> np.ndarray:
        """Lowest Dirichlet eigenvector of ``-lap``, positive, unit L2 norm."""
        s = np.sqrt(self.quad_weights)
        # W^{1/2} L W^{-1/2} is symmetric; its upper diagonal is upper_j s_j / s_{j+1}
        off = self.lap_upper[:-1] * s[:-1] / s[1:]
        _, v = eigh_tridiagonal(-self.lap_diag, -off, select="i", select_range=(0, 0))
        phi = v[:, 0] / s
        phi *= np.sign(phi[np.argmax(np.abs(phi))])
        return _readonly(phi / math.sqrt(self.inner(phi, phi)))


@dataclass(frozen=True, eq=False)
class Field:
    """Real samples of a function at the interior nodes of a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.n,):
            raise ConfigurationError(
                f"field has shape {v.shape}, grid expects ({self.grid.n},)"
            )
        if not np.all(np.isfinite(v)):
            raise StabilityError("field contains non-finite values")
        object.__setattr__(self, "values", _readonly(v))

    def __mul__(self, c: float) -> "Field":
        return Field(self.grid, self.values * c)

    __rmul__ = __mul__

    def __len__(self):
        return self.grid.n


def build_grid(spec: DomainSpec) -> Grid:
    """Build the nodes, weights and Laplacian stencil for ``spec``."""
    n = spec.n
    if spec.kind is DomainKind.INTERVAL:
        h = (spec.b - spec.a) / (n + 1)
        nodes = spec.a + h * np.arange(1, n + 1)
        weights = np.full(n, h)
        lower = np.full(n, 1.0 / h**2)
        upper = np.full(n, 1.0 / h**2)
        diag = np.full(n, -2.0 / h**2)
    else:
        d = spec.d
        h = spec.R / n
        j = np.arange(1, n + 1, dtype=float)
        nodes = (j - 0.5) * h
        # cell j spans [(j-1)h, jh]; shell_j = (|r_+|^d - |r_-|^d) / (d h)
        shell = h ** (d - 1) * (j**d - (j - 1) ** d) / d
        weights = sphere_area(d) * h * shell
        face = (j * h) ** (d - 1)  # area factor at r = jh (outer face of cell j)
        face_in = np.concatenate(([0.0], face[:-1]))  # zero flux through the origin
        upper = face / (h**2 * shell)
        lower = face_in / (h**2 * shell)
        diag = -(face + face_in) / (h**2 * shell)
        # ghost u_{n+1} = -u_n puts the zero of the linear interpolant at r = R
        diag[-1] -= upper[-1]
    lower[0] = 0.0
    upper[-1] = 0.0
    return Grid(
        spec=spec,
        nodes=_readonly(nodes),
        h=float(h),
        quad_weights=_readonly(weights),
        lap_lower=_readonly(lower),
        lap_diag=_readonly(diag),
        lap_upper=_readonly(upper),
    )


def laplacian(u: Field) -> Field:
    """Discrete Dirichlet Laplacian of ``u`` on its own grid."""
    return Field(u.grid, u.grid.apply_laplacian(u.values))


class Resolvent:
    """Factorized backward-Euler operator ``I - dt (lap - omega I)``.

    The factorization is reused across calls, which is what the time
    steppers want: one LU per run, one tridiagonal back-substitution per step.
    """

    def __init__(self, grid: Grid, dt: float, omega: float):
        if not dt > 0:
            raise ConfigurationError(f"dt must be positive, got {dt}")
        self.grid = grid
        self.dt = float(dt)
        self.omega = float(omega)
        lam_min = -grid.laplacian_spectrum[-1]
        if 1.0 + dt * omega + dt * lam_min <= 0.0:
            raise StabilityError(
                f"backward-Euler operator is singular or indefinite: "
                f"1 + dt*omega + dt*lambda_min = {1.0 + dt * omega + dt * lam_min:.3e}"
            )
        dl = -dt * grid.lap_lower[1:]
        du = -dt * grid.lap_upper[:-1]
        dd = 1.0 + dt * omega - dt * grid.lap_diag
        self._lu = dgttrf(dl, dd, du)
        if self._lu[-1] != 0:
            raise StabilityError("tridiagonal factorization failed")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        dl, d, du, du2, ipiv, _ = self._lu
        x, info = dgttrs(dl, d, du, du2, ipiv, rhs)
        if info != 0:
            raise StabilityError(f"tridiagonal solve failed (info={info})")
        return x


def apply_semi_implicit_resolvent(u: Field, dt: float, omega: float) -> Field:
    """Return ``v`` solving ``(I - dt (lap - omega)) v = u``."""
    return Field(u.grid, Resolvent(u.grid, dt, omega).solve(u.values))
