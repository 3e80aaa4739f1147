"""Run configuration: a flat ``key = value`` text file with dotted keys.

Example::

    # sech ground state on the half line
    domain.kind = truncated_radial_line
    domain.R = 20
    domain.d = 1
    domain.n = 2048
    params.sigma = 1
    params.omega = 1
    scheme.kind = semi_implicit_euler_projected
    scheme.dt = 1e-3
    scheme.t_end = 40
    initial.name = gaussian
    target_mass = 2
    outputs.csv = out/series.csv

Blank lines and text after ``#`` are ignored. Unknown keys are an error so
that typos do not silently fall back to defaults.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .domain import DomainKind, DomainSpec, Field, Grid
from .errors import ConfigurationError
from .flow import FlowKind, SchemeKind, SchemeSpec, default_dt
from .functionals import FlowParams, mass

PROFILES = ("gaussian", "sine", "parabola", "plateau", "sech")

_KNOWN = {
    "domain.kind", "domain.n", "domain.a", "domain.b", "domain.R", "domain.d",
    "params.d", "params.sigma", "params.omega", "params.epsilon", "params.beta",
    "scheme.kind", "scheme.dt", "scheme.t_end", "scheme.blowup_h1_factor",
    "scheme.tol_conv", "scheme.tol_res",
    "flow.which",
    "initial.name", "initial.amplitude", "initial.width", "initial.path", "initial.noise",
    "target_mass", "record_every", "seed",
    "outputs.csv", "outputs.snapshots", "outputs.snapshot_every", "outputs.report",
    "outputs.checkpoint", "outputs.checkpoint_every", "outputs.ground_state",
}


def _norm_enum(text: str) -> str:
    """``TruncatedRadialLine``, ``truncated-radial-line`` -> ``truncated_radial_line``."""
    out = []
    for i, ch in enumerate(text.strip()):
        if ch.isupper() and i > 0 and text[i - 1].islower():
            out.append("_")
        out.append(ch.lower())
    return "".join(out).replace("-", "_").replace(" ", "_")


@dataclass(frozen=True)
class NamedProfile:
    name: str
    amplitude: float = 1.0
    width: float | None = None

    def __post_init__(self):
        if self.name not in PROFILES:
            raise ConfigurationError(f"unknown profile {self.name!r}; choose from {', '.join(PROFILES)}")
        if not self.amplitude > 0:
            raise ConfigurationError("profile amplitude must be positive")
        if self.width is not None and not self.width > 0:
            raise ConfigurationError("profile width must be positive")


@dataclass(frozen=True)
class FromFile:
    path: str


@dataclass(frozen=True)
class Outputs:
    csv: str | None = None
    snapshots: str | None = None
    snapshot_every: int | None = None
    report: str | None = None
    checkpoint: str | None = None
    checkpoint_every: int | None = None
    ground_state: str | None = None

    def paths(self):
        return [p for p in (self.csv, self.snapshots, self.report, self.checkpoint,
                            self.ground_state) if p]


@dataclass(frozen=True)
class RunConfig:
    domain: DomainSpec
    params: FlowParams
    scheme: SchemeSpec | None  # None: dt not given yet, see resolve_scheme
    initial: NamedProfile | FromFile
    which: FlowKind = FlowKind.MAIN
    target_mass: float | None = None
    outputs: Outputs = field(default_factory=Outputs)
    record_every: int = 1
    seed: int = 0
    noise: float = 0.0
    scheme_fields: dict = field(default_factory=dict, repr=False)

    def resolve_scheme(self, u0: Field) -> SchemeSpec:
        """The scheme, filling in the default step from ``F(u0)`` when dt is absent."""
        if self.scheme is not None:
            return self.scheme
        return SchemeSpec(dt=default_dt(u0, self.params), **self.scheme_fields)


def parse_text(text: str) -> dict[str, str]:
    """Raw ``key -> value`` strings; later keys override earlier ones."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KNOWN:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        if not value:
            raise ConfigurationError(f"line {lineno}: empty value for {key!r}")
        out[key] = value
    return out


def _num(raw: dict, key: str, default=None, kind=float):
    if key not in raw:
        if default is None:
            raise ConfigurationError(f"missing required key {key!r}")
        return default
    text = raw[key]
    try:
        if kind is int:
            f = float(text)
            if f != int(f):
                raise ValueError
            return int(f)
        value = float(text)
    except ValueError:
        raise ConfigurationError(f"{key}: cannot parse {text!r} as {kind.__name__}") from None
    if not math.isfinite(value):
        raise ConfigurationError(f"{key}: value must be finite")
    return value


def from_mapping(raw: dict[str, str]) -> RunConfig:
    """Build and validate a RunConfig from parsed key/value strings."""
    try:
        kind = DomainKind(_norm_enum(raw.get("domain.kind", "")))
    except ValueError:
        raise ConfigurationError(
            f"domain.kind must be one of {[k.value for k in DomainKind]}"
        ) from None
    n = _num(raw, "domain.n", kind=int)
    if kind is DomainKind.INTERVAL:
        domain = DomainSpec.interval(_num(raw, "domain.a", 0.0), _num(raw, "domain.b", 1.0), n)
    else:
        d = _num(raw, "domain.d", 1, kind=int)
        R = _num(raw, "domain.R")
        domain = (DomainSpec.radial_ball(R, d, n) if kind is DomainKind.RADIAL_BALL
                  else DomainSpec.truncated_radial_line(R, d, n))
    if "params.d" in raw and _num(raw, "params.d", kind=int) != domain.d:
        raise ConfigurationError("params.d does not match domain.d")
    params = FlowParams(
        d=domain.d,
        sigma=_num(raw, "params.sigma", 1.0),
        omega=_num(raw, "params.omega", 0.0),
        epsilon=_num(raw, "params.epsilon", 0.0),
        beta=_num(raw, "params.beta", 0.0),
    )

    try:
        scheme_kind = SchemeKind(_norm_enum(raw.get("scheme.kind", "semi_implicit_euler")))
    except ValueError:
        raise ConfigurationError(
            f"scheme.kind must be one of {[k.value for k in SchemeKind]}"
        ) from None
    scheme_fields = dict(
        kind=scheme_kind,
        t_end=_num(raw, "scheme.t_end"),
        blowup_h1_factor=_num(raw, "scheme.blowup_h1_factor", 1e3),
    )
    if "scheme.tol_conv" in raw:
        scheme_fields["tol_conv"] = _num(raw, "scheme.tol_conv")
    if "scheme.tol_res" in raw:
        scheme_fields["tol_res"] = _num(raw, "scheme.tol_res")
    scheme = SchemeSpec(dt=_num(raw, "scheme.dt"), **scheme_fields) if "scheme.dt" in raw else None
    if scheme is None:
        # validate everything except dt now
        SchemeSpec(dt=scheme_fields["t_end"] / 2, **scheme_fields)

    try:
        which = FlowKind(_norm_enum(raw.get("flow.which", "main")))
    except ValueError:
        raise ConfigurationError(f"flow.which must be one of {[k.value for k in FlowKind]}") from None
    if which is FlowKind.EPS and not params.epsilon > 0:
        raise ConfigurationError("flow.which = eps needs params.epsilon > 0")

    if "initial.path" in raw:
        if "initial.name" in raw:
            raise ConfigurationError("give either initial.name or initial.path, not both")
        initial = FromFile(raw["initial.path"])
    else:
        initial = NamedProfile(
            name=_norm_enum(raw.get("initial.name", "gaussian")),
            amplitude=_num(raw, "initial.amplitude", 1.0),
            width=_num(raw, "initial.width") if "initial.width" in raw else None,
        )
    target_mass = _num(raw, "target_mass") if "target_mass" in raw else None
    if target_mass is not None and not target_mass > 0:
        raise ConfigurationError("target_mass must be positive")
    noise = _num(raw, "initial.noise", 0.0)
    if not 0 <= noise < 1:
        raise ConfigurationError("initial.noise must lie in [0, 1)")

    record_every = _num(raw, "record_every", 1, kind=int)
    if record_every < 1:
        raise ConfigurationError("record_every must be >= 1")
    outputs = Outputs(
        csv=raw.get("outputs.csv"),
        snapshots=raw.get("outputs.snapshots"),
        snapshot_every=_num(raw, "outputs.snapshot_every", kind=int) if "outputs.snapshot_every" in raw else None,
        report=raw.get("outputs.report"),
        checkpoint=raw.get("outputs.checkpoint"),
        checkpoint_every=_num(raw, "outputs.checkpoint_every", kind=int) if "outputs.checkpoint_every" in raw else None,
        ground_state=raw.get("outputs.ground_state"),
    )
    for k in ("snapshot_every", "checkpoint_every"):
        v = getattr(outputs, k)
        if v is not None and v < 1:
            raise ConfigurationError(f"outputs.{k} must be >= 1")
    return RunConfig(
        domain=domain,
        params=params,
        scheme=scheme,
        initial=initial,
        which=which,
        target_mass=target_mass,
        outputs=outputs,
        record_every=record_every,
        seed=_num(raw, "seed", 0, kind=int),
        noise=noise,
        scheme_fields=scheme_fields,
    )


def load_config(path: str | os.PathLike, base_dir: str | os.PathLike | None = None) -> RunConfig:
    """Read and validate a config file.

    Relative output and input paths are resolved against the config file's
    directory unless ``base_dir`` is given.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    cfg = from_mapping(parse_text(text))
    base = Path(base_dir) if base_dir is not None else path.parent
    return _resolve_paths(cfg, base)


def _resolve_paths(cfg: RunConfig, base: Path) -> RunConfig:
    def fix(p):
        return None if p is None else str(p if Path(p).is_absolute() else base / p)

    o = cfg.outputs
    outputs = Outputs(fix(o.csv), fix(o.snapshots), o.snapshot_every, fix(o.report),
                      fix(o.checkpoint), o.checkpoint_every, fix(o.ground_state))
    initial = FromFile(fix(cfg.initial.path)) if isinstance(cfg.initial, FromFile) else cfg.initial
    return replace(cfg, outputs=outputs, initial=initial)


def check_writable(paths) -> None:
    """Create parent directories and confirm each output path can be written."""
    for p in paths:
        parent = Path(p).parent
        try:
            parent.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigurationError(f"cannot create directory {parent}: {exc.strerror}") from None
        if Path(p).is_dir():
            raise ConfigurationError(f"output path {p} is a directory")
        if not os.access(parent, os.W_OK) or (Path(p).exists() and not os.access(p, os.W_OK)):
            raise ConfigurationError(f"output path {p} is not writable")


# ---------------------------------------------------------------------------
# initial data


def profile_values(grid: Grid, profile: NamedProfile) -> np.ndarray:
    """Sample a named profile on the grid's nodes.

    Interval profiles are centred at the midpoint; radial ones at the origin.
    ``width`` defaults to 1 on radial domains and to a quarter of the length
    on an interval.
    """
    spec = grid.spec
    x = grid.nodes
    A = profile.amplitude
    if spec.kind is DomainKind.INTERVAL:
        a, b = spec.a, spec.b
        L = b - a
        c = 0.5 * (a + b)
        s = (x - c) / (profile.width or 0.25 * L)
        table = {
            "gaussian": lambda: np.exp(-0.5 * s * s),
            "sine": lambda: np.sin(np.pi * (x - a) / L),
            "parabola": lambda: 4.0 * (x - a) * (b - x) / (L * L),
            "plateau": lambda: np.tanh(10.0 * (x - a) / L) * np.tanh(10.0 * (b - x) / L),
            "sech": lambda: 1.0 / np.cosh(s),
        }
    else:
        R = spec.R
        s = x / (profile.width or 1.0)
        table = {
            "gaussian": lambda: np.exp(-0.5 * s * s),
            "sine": lambda: np.cos(0.5 * np.pi * x / R),
            "parabola": lambda: 1.0 - (x / R) ** 2,
            "plateau": lambda: np.tanh(10.0 * (1.0 - x / R)),
            "sech": lambda: 1.0 / np.cosh(s),
        }
    return A * table[profile.name]()


def smooth_perturbation(grid: Grid, rng: np.random.Generator, n_modes: int = 4) -> np.ndarray:
    """A random combination of the first few smooth modes, bounded by 1 in sup norm."""
    spec = grid.spec
    x = grid.nodes
    c = np.clip(rng.standard_normal(n_modes), -3.0, 3.0) / (3.0 * n_modes)
    if spec.kind is DomainKind.INTERVAL:
        t = (x - spec.a) / (spec.b - spec.a)
    else:
        t = x / spec.R
    return sum(c[k] * np.cos((k + 1) * np.pi * t) for k in range(n_modes))


def load_field_file(path: str, grid: Grid) -> np.ndarray:
    """Values from a JSON object with a ``values`` list (snapshot or ground-state file)."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read initial data {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}") from None
    if isinstance(data, list):  # snapshot file: take the last record
        data = data[-1] if data else {}
    values = data.get("values") if isinstance(data, dict) else None
    if values is None:
        raise ConfigurationError(f"{path}: no 'values' entry")
    v = np.asarray(values, dtype=float)
    if v.shape != (grid.n,):
        raise ConfigurationError(f"{path}: {v.size} values for a grid of {grid.n} nodes")
    return v


def initial_field(cfg: RunConfig, grid: Grid) -> Field:
    """u0 from the config: profile or file, seeded multiplicative noise, mass rescale."""
    if isinstance(cfg.initial, FromFile):
        v = load_field_file(cfg.initial.path, grid)
    else:
        v = profile_values(grid, cfg.initial)
    if cfg.noise > 0:
        rng = np.random.default_rng(cfg.seed)
        v = v * (1.0 + cfg.noise * smooth_perturbation(grid, rng))
    u = Field(grid, v)
    if cfg.target_mass is not None:
        m = mass(u)
        if not m > 0:
            raise ConfigurationError("initial field is zero; cannot rescale to target_mass")
        u = u * math.sqrt(cfg.target_mass / m)
    return u
