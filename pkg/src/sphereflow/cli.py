"""Command line entry point: ``sphereflow flow|ground-state|verify|resume``.

Exit codes:

0  run reached t_end or converged; ground state found; all checks passed
1  configuration, input or output error; ``verify`` with failing checks
2  blow-up
3  degenerate field (the multiplier's denominator vanished)
4  ground-state search found no stationary state
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from dataclasses import replace

import numpy as np

from . import __version__
from .acceptance import CRITERIA, LEVELS, Suite, criterion_verdicts
from .checks import trajectory_checks
from .config import RunConfig, check_writable, initial_field, load_config
from .domain import build_grid
from .errors import CheckpointError, ConfigurationError, OracleFailure, StepSizeFailure
from .flow import TerminationKind, run_flow
from .functionals import mass
from .persist import (
    load_checkpoint_with_header,
    save_checkpoint,
    write_csv,
    write_json,
    write_snapshots,
)
from .stationary import detect_omega_limit, minimize_F_on_sphere, shoot_ground_state

log = logging.getLogger("sphereflow")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_BLOW_UP = 2
EXIT_DEGENERATE = 3
EXIT_NOT_FOUND = 4

_EXIT_FOR = {
    TerminationKind.REACHED_T_END: EXIT_OK,
    TerminationKind.CONVERGED: EXIT_OK,
    TerminationKind.BLOW_UP: EXIT_BLOW_UP,
    TerminationKind.DEGENERATE: EXIT_DEGENERATE,
}


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    cfg.params.check_domain(build_grid(cfg.domain))
    check_writable(cfg.outputs.paths())
    return cfg


def _run_and_write(cfg: RunConfig, start, scheme, h1_reference=None) -> int:
    """Run the flow from ``start`` (field or state) and write every configured artifact."""
    out = cfg.outputs
    snapshot_every = out.snapshot_every
    if out.snapshots and snapshot_every is None:
        snapshot_every = scheme.n_steps + 1  # initial and final only
    on_step = None
    h1_ref = h1_reference
    if out.checkpoint and out.checkpoint_every:
        def on_step(state):
            if state.step_index % out.checkpoint_every == 0:
                save_checkpoint(state, out.checkpoint, dt=scheme.dt, h1_reference=h1_ref)

    traj = run_flow(start, cfg.params, scheme, cfg.which, record_every=cfg.record_every,
                    snapshot_every=snapshot_every, on_step=on_step, h1_reference=h1_reference)
    if h1_ref is None:
        h1_ref = float(traj.grad_sq[0])

    report = trajectory_checks(traj)
    if out.csv:
        write_csv(traj, out.csv)
    if out.snapshots:
        write_snapshots(traj, out.snapshots)
    if out.checkpoint:
        save_checkpoint(traj.final_state, out.checkpoint, dt=scheme.dt, h1_reference=h1_ref)
    term = traj.termination
    if out.report:
        doc = {
            "termination": {
                "kind": term.kind.value,
                "t": term.t,
                "residual": term.residual,
                "detail": term.detail,
            },
            "steps": traj.final_state.step_index,
            **report.to_dict(),
        }
        write_json(_finite(doc), out.report)

    last = traj.rows[-1]
    print(f"termination: {term.kind.value} at t={term.t:.6g}"
          + (f" ({term.detail})" if term.detail else ""))
    print("final: " + "  ".join(f"{k}={v:.10g}" for k, v in
                                zip(("t", "mass", "grad_sq", "lp_norm", "mu", "F", "dudt_l2", "residual"), last)))
    for e in report.entries:
        log.info(e.line())
    return _EXIT_FOR[term.kind]


def _finite(obj):
    """Replace non-finite floats by None so the JSON stays standard."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite(v) for v in obj]
    return obj


def cmd_flow(args) -> int:
    cfg = _load(args)
    grid = build_grid(cfg.domain)
    u0 = initial_field(cfg, grid)
    return _run_and_write(cfg, u0, cfg.resolve_scheme(u0))


def cmd_resume(args) -> int:
    cfg = _load(args)
    if not cfg.outputs.checkpoint:
        raise ConfigurationError("resume needs outputs.checkpoint in the config")
    state, header = load_checkpoint_with_header(cfg.outputs.checkpoint)
    if state.u.grid.spec != cfg.domain:
        raise ConfigurationError(
            f"checkpoint grid {state.u.grid.spec.to_dict()} does not match the config domain"
        )
    scheme = cfg.scheme
    if scheme is None:
        if "dt" not in header:
            raise ConfigurationError("no scheme.dt in the config and none stored in the checkpoint")
        scheme = replace(cfg.resolve_scheme(state.u), dt=float(header["dt"]))
    if not state.t < scheme.t_end:
        raise ConfigurationError(f"checkpoint time {state.t:g} is not before t_end={scheme.t_end:g}")
    print(f"resuming from t={state.t:.6g} (step {state.step_index})")
    return _run_and_write(cfg, state, scheme, h1_reference=header.get("h1_reference"))


def cmd_ground_state(args) -> int:
    cfg = _load(args)
    grid = build_grid(cfg.domain)
    p = cfg.params
    method = args.method
    try:
        if method == "shoot":
            st = shoot_ground_state(p.omega, p.sigma, grid, target_mass=cfg.target_mass)
        else:
            u0 = initial_field(cfg, grid)
            if method == "minimize":
                st = minimize_F_on_sphere(u0, p, mass(u0), tol=args.tol)
            else:
                traj = run_flow(u0, p, cfg.resolve_scheme(u0), record_every=cfg.record_every)
                if cfg.outputs.csv:
                    write_csv(traj, cfg.outputs.csv)
                st = detect_omega_limit(traj)
                if st is None:
                    print(f"no stationary limit: flow ended {traj.termination.kind.value} at "
                          f"t={traj.termination.t:.6g} with residual {traj.residual[-1]:.3e}",
                          file=sys.stderr)
                    return EXIT_NOT_FOUND
    except (OracleFailure, StepSizeFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_FOUND
    doc = st.to_dict()
    doc["F"] = st.F
    doc.update({k: v for k, v in st.extras.items() if isinstance(v, (int, float))})
    if cfg.outputs.ground_state:
        write_json(_finite(doc), cfg.outputs.ground_state)
    print(f"{st.provenance.value}: mass={st.mass:.10g} mu_q={st.mu_q:.10g} "
          f"F={st.F:.10g} residual_l2={st.residual_l2:.3e}")
    return EXIT_OK


def cmd_verify(args) -> int:
    only = None
    if args.only:
        only = [k.strip() for k in args.only.split(",") if k.strip()]
        unknown = [k for k in only if k not in CRITERIA]
        if unknown:
            raise ConfigurationError(f"unknown criteria {unknown}; choose from {list(CRITERIA)}")
    suite = Suite(args.suite, args.seed if args.seed is not None else 0)
    t0 = time.perf_counter()

    def progress(key, results, seconds):
        for r in results:
            print(r.line())
        sys.stdout.flush()

    report = suite.run(only=only, progress=progress)
    verdicts = criterion_verdicts(report)
    print()
    for key, ok in verdicts.items():
        print(f"{'PASS' if ok else 'FAIL'} {key:4s} {CRITERIA[key]} ({suite.timings[key]:.1f} s)")
    print(f"{sum(verdicts.values())}/{len(verdicts)} criteria passed "
          f"in {time.perf_counter() - t0:.1f} s (suite={args.suite}, seed={suite.seed})")
    if args.report:
        doc = {"suite": args.suite, "seed": suite.seed,
               "criteria": verdicts, **report.to_dict()}
        write_json(_finite(doc), args.report)
    return EXIT_OK if report.ok else EXIT_ERROR


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="sphereflow",
        description="Norm-preserving nonlocal heat flow: runs, ground states and checks.",
    )
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log every check of a run")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="key = value run file")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")

    p = sub.add_parser("flow", help="integrate the flow and write the series")
    common(p)
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("resume", help="continue a run from its checkpoint")
    common(p)
    p.set_defaults(func=cmd_resume)

    p = sub.add_parser("ground-state", help="compute a stationary state")
    common(p)
    p.add_argument("--method", choices=("shoot", "minimize", "flow"), default="shoot")
    p.add_argument("--tol", type=float, default=1e-8, help="gradient tolerance for minimize")
    p.set_defaults(func=cmd_ground_state)

    p = sub.add_parser("verify", help="run the acceptance matrix")
    p.add_argument("--suite", choices=LEVELS, default="fast")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--only", default=None, help="comma-separated criteria, e.g. c1,c4")
    p.add_argument("--report", default=None, help="write the CheckReport JSON here")
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            return args.func(args)
    except (ConfigurationError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
