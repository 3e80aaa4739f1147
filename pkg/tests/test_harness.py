import json
import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from sphereflow import (
    CheckpointError,
    ConfigurationError,
    DegenerateFieldError,
    DomainSpec,
    FlowParams,
    FlowState,
    SchemeKind,
    SchemeSpec,
    build_grid,
    mass,
    run_flow,
)
from sphereflow.acceptance import Suite, criterion_verdicts
from sphereflow.checks import CheckReport, CheckResult, Status
from sphereflow.cli import main
from sphereflow.config import (
    FromFile,
    NamedProfile,
    from_mapping,
    initial_field,
    load_config,
    parse_text,
)
from sphereflow.flow import Dynamics, FlowKind, Integrator
from sphereflow.persist import (
    CSV_HEADER,
    checkpoint_roundtrip,
    checkpoint_text,
    csv_text,
    load_checkpoint,
    load_checkpoint_with_header,
    parse_checkpoint,
    read_csv,
    save_checkpoint,
)

ROOT = Path(__file__).resolve().parent.parent
GOLDEN = Path(__file__).resolve().parent / "golden"

SMALL = """\
# tiny interval run used by the golden-file test
domain.kind = interval
domain.n = 16
params.sigma = 1
params.omega = 1
scheme.kind = semi_implicit_euler
scheme.dt = 1e-3
scheme.t_end = 0.02
initial.name = parabola
target_mass = 1
outputs.csv = out/series.csv
"""

SECH = """\
domain.kind = truncated_radial_line
domain.R = 20
domain.d = 1
domain.n = 512
params.sigma = 1
params.omega = 1
scheme.kind = semi_implicit_euler_projected
scheme.dt = 1e-3
scheme.t_end = 60
initial.name = gaussian
target_mass = 2
record_every = 100
outputs.csv = out/series.csv
outputs.report = out/report.json
outputs.snapshots = out/snapshots.json
outputs.snapshot_every = 20000
outputs.checkpoint = out/checkpoint.json
outputs.ground_state = out/ground_state.json
"""


def write_cfg(tmp_path, text, name="run.cfg", **overrides):
    lines = [ln for ln in text.splitlines() if ln.split("=")[0].strip() not in overrides]
    lines += [f"{k.replace('__', '.')} = {v}" for k, v in overrides.items()]
    path = tmp_path / name
    path.write_text("\n".join(lines) + "\n")
    return path


# ---------------------------------------------------------------------------
# configuration


def test_parse_text_basics():
    raw = parse_text("# c\n\ndomain.n = 8  # trailing\nseed=3\nseed = 4\n")
    assert raw == {"domain.n": "8", "seed": "4"}


@pytest.mark.parametrize("text,match", [
    ("domain.n 8", "line 1: expected"),
    ("\ndomain.size = 8", "line 2: unknown key 'domain.size'"),
    ("domain.n =", "empty value"),
])
def test_parse_text_errors(text, match):
    with pytest.raises(ConfigurationError, match=match):
        parse_text(text)


def test_shipped_configs_load():
    for cfg in sorted((ROOT / "configs").glob("*.cfg")):
        if cfg.stem == "supercritical":
            with pytest.raises(ConfigurationError, match="subcritical"):
                load_config(cfg)
        else:
            c = load_config(cfg)
            assert all(Path(p).is_absolute() for p in c.outputs.paths())


def _base():
    return parse_text(SMALL)


@pytest.mark.parametrize("change,match", [
    ({"domain.kind": "torus"}, "domain.kind"),
    ({"domain.n": "8.5"}, "domain.n"),
    ({"params.sigma": "abc"}, "params.sigma"),
    ({"params.sigma": "inf"}, "finite"),
    ({"scheme.kind": "leapfrog"}, "scheme.kind"),
    ({"scheme.dt": "1"}, "smaller than t_end"),
    ({"flow.which": "eps"}, "epsilon"),
    ({"flow.which": "sideways"}, "flow.which"),
    ({"initial.name": "triangle"}, "unknown profile"),
    ({"initial.amplitude": "-1"}, "amplitude"),
    ({"initial.path": "u.json"}, "either"),
    ({"initial.noise": "1.5"}, "noise"),
    ({"target_mass": "0"}, "target_mass"),
    ({"record_every": "0"}, "record_every"),
    ({"outputs.snapshot_every": "0"}, "snapshot_every"),
    ({"params.d": "2"}, "params.d"),
])
def test_config_validation(change, match):
    raw = _base()
    raw.update(change)
    with pytest.raises(ConfigurationError, match=match):
        from_mapping(raw)


def test_config_missing_required_keys():
    for k in ("domain.n", "scheme.t_end"):
        raw = _base()
        del raw[k]
        with pytest.raises(ConfigurationError, match=k):
            from_mapping(raw)


def test_config_accepts_camel_case_enums():
    raw = _base()
    raw.update({"scheme.kind": "SemiImplicitEulerProjected", "domain.kind": "Interval"})
    cfg = from_mapping(raw)
    assert cfg.scheme.kind is SchemeKind.SEMI_IMPLICIT_EULER_PROJECTED


def test_config_default_dt_from_initial_field():
    raw = _base()
    del raw["scheme.dt"]
    cfg = from_mapping(raw)
    assert cfg.scheme is None
    u0 = initial_field(cfg, build_grid(cfg.domain))
    s = cfg.resolve_scheme(u0)
    assert s.dt < 1e-4 and s.t_end == 0.02


def test_relative_paths_follow_config_dir(tmp_path):
    (tmp_path / "sub").mkdir()
    cfg = load_config(write_cfg(tmp_path / "sub", SMALL))
    assert cfg.outputs.csv == str(tmp_path / "sub" / "out" / "series.csv")


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigurationError, match="cannot read"):
        load_config(tmp_path / "nope.cfg")


def test_named_profiles_are_positive_and_scaled():
    for spec in (DomainSpec.interval(-1, 2, 40), DomainSpec.radial_ball(3.0, 2, 40)):
        g = build_grid(spec)
        for name in ("gaussian", "sine", "parabola", "plateau", "sech"):
            raw = _base()
            raw.update({"initial.name": name, "initial.amplitude": "3"})
            del raw["target_mass"]
            cfg = replace(from_mapping(raw), domain=spec, params=FlowParams(d=spec.d))
            v = initial_field(cfg, g).values
            assert np.all(v > 0), name
            assert np.max(v) <= 3.0 + 1e-12


def test_noise_is_seeded_and_mass_rescaled():
    raw = _base()
    raw["initial.noise"] = "0.2"
    g = build_grid(from_mapping(raw).domain)
    fields = {}
    for seed in (1, 1, 2):
        raw["seed"] = str(seed)
        u = initial_field(from_mapping(raw), g)
        assert mass(u) == pytest.approx(1.0, rel=1e-14)
        fields.setdefault(seed, []).append(u.values)
    assert np.array_equal(fields[1][0], fields[1][1])
    assert not np.array_equal(fields[1][0], fields[2][0])
    raw.pop("initial.noise")
    clean = initial_field(from_mapping(raw), g).values
    rel = np.abs(fields[1][0] / clean - 1)
    assert rel.max() < 0.5


def test_initial_field_from_file(tmp_path):
    raw = _base()
    g = build_grid(from_mapping(raw).domain)
    vals = np.linspace(1, 2, g.n)
    (tmp_path / "u.json").write_text(json.dumps({"values": vals.tolist()}))
    (tmp_path / "snaps.json").write_text(json.dumps([{"t": 0, "values": [0] * g.n},
                                                     {"t": 1, "values": vals.tolist()}]))
    (tmp_path / "short.json").write_text(json.dumps({"values": [1, 2]}))
    (tmp_path / "bad.json").write_text("{")
    del raw["initial.name"], raw["target_mass"]
    for name in ("u.json", "snaps.json"):
        raw["initial.path"] = str(tmp_path / name)
        cfg = from_mapping(raw)
        assert isinstance(cfg.initial, FromFile)
        np.testing.assert_array_equal(initial_field(cfg, g).values, vals)
    for name, match in (("short.json", "2 values"), ("bad.json", "invalid JSON"), ("none.json", "cannot read")):
        raw["initial.path"] = str(tmp_path / name)
        with pytest.raises(ConfigurationError, match=match):
            initial_field(from_mapping(raw), g)


def test_named_profile_validation():
    with pytest.raises(ConfigurationError):
        NamedProfile("gaussian", width=0.0)
    assert NamedProfile("sech", 2.0).amplitude == 2.0


# ---------------------------------------------------------------------------
# CSV and snapshots


def _small_traj():
    cfg = from_mapping(parse_text(SMALL))
    u0 = initial_field(cfg, build_grid(cfg.domain))
    return run_flow(u0, cfg.params, cfg.scheme)


def test_csv_header_is_fixed():
    assert CSV_HEADER == "t,mass,grad_sq,lp_norm,mu,F,dudt_l2,residual"


def test_csv_matches_golden_file():
    text = csv_text(_small_traj())
    golden = (GOLDEN / "interval_small.csv").read_text()
    assert text.splitlines()[0] == golden.splitlines()[0]
    got = np.array([[float(x) for x in ln.split(",")] for ln in text.splitlines()[1:]])
    ref = np.array([[float(x) for x in ln.split(",")] for ln in golden.splitlines()[1:]])
    assert got.shape == ref.shape == (21, 8)
    np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-15)


def test_csv_roundtrips_floats_exactly(tmp_path):
    traj = _small_traj()
    (tmp_path / "s.csv").write_text(csv_text(traj))
    np.testing.assert_array_equal(read_csv(tmp_path / "s.csv"), traj.rows)
    (tmp_path / "bad.csv").write_text("time,mass\n1,2\n")
    with pytest.raises(ValueError, match="header"):
        read_csv(tmp_path / "bad.csv")


def test_identical_config_and_seed_give_identical_bytes(tmp_path):
    paths = []
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        cfg = write_cfg(d, SMALL, initial__noise="0.1", seed="5")
        assert main(["flow", "--config", str(cfg)]) == 0
        paths.append(d / "out" / "series.csv")
    assert paths[0].read_bytes() == paths[1].read_bytes()
    # the command line seed overrides the file
    d = tmp_path / "c"
    d.mkdir()
    assert main(["flow", "--config", str(write_cfg(d, SMALL, initial__noise="0.1", seed="5")),
                 "--seed", "6"]) == 0
    assert (d / "out" / "series.csv").read_bytes() != paths[0].read_bytes()


# ---------------------------------------------------------------------------
# CLI exit codes and artifacts


def test_cli_sech_run(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SECH)
    assert main(["flow", "--config", str(cfg)]) == 0
    out = tmp_path / "out"
    rows = read_csv(out / "series.csv")
    assert abs(rows[-1, 4] - 2) <= 1e-2
    report = json.loads((out / "report.json").read_text())
    assert report["ok"] and report["termination"]["kind"] == "converged"
    assert [c["check_name"] for c in report["checks"]] == [
        "mass_conservation", "eps_mass_identity", "F_monotone", "lyapunov_identity",
        "holder_lower_bound", "gn_ratio_monitor", "invariant_sets", "no_blow_up"]
    assert {c["status"] for c in report["checks"]} <= {"pass", "skipped"}
    snaps = json.loads((out / "snapshots.json").read_text())
    assert snaps[0]["t"] == 0 and len(snaps[0]["nodes"]) == len(snaps[0]["values"]) == 512
    assert snaps[-1]["t"] == pytest.approx(rows[-1, 0])
    state = load_checkpoint(out / "checkpoint.json")
    assert state.t == pytest.approx(rows[-1, 0])
    assert "termination: converged" in capsys.readouterr().out


def test_cli_rival_blow_up(tmp_path):
    text = (ROOT / "configs" / "rival_blowup.cfg").read_text()
    assert main(["flow", "--config", str(write_cfg(tmp_path, text))]) == 2
    report = json.loads((tmp_path / "out" / "rival" / "report.json").read_text())
    assert report["termination"]["kind"] == "blow_up"


def test_cli_supercritical_rejected(capsys):
    assert main(["flow", "--config", str(ROOT / "configs" / "supercritical.cfg")]) == 1
    assert "subcritical" in capsys.readouterr().err


def test_cli_config_errors(tmp_path, capsys):
    assert main(["flow", "--config", str(tmp_path / "missing.cfg")]) == 1
    assert main(["flow", "--config", str(write_cfg(tmp_path, SMALL + "bogus.key = 1\n"))]) == 1
    err = capsys.readouterr().err
    assert "cannot read" in err and "unknown key" in err


def test_cli_unwritable_output(tmp_path, capsys):
    (tmp_path / "blocker").write_text("a file, not a directory")
    cfg = write_cfg(tmp_path, SMALL, outputs__csv=str(tmp_path / "blocker" / "series.csv"))
    assert main(["flow", "--config", str(cfg)]) == 1
    assert "error" in capsys.readouterr().err


def test_cli_degenerate_exit(tmp_path, monkeypatch):
    real = Integrator.step

    def vanishing(self, state):
        if state.step_index == 5:
            raise DegenerateFieldError("vanished")
        return real(self, state)

    monkeypatch.setattr(Integrator, "step", vanishing)
    assert main(["flow", "--config", str(write_cfg(tmp_path, SMALL))]) == 3


def test_cli_ground_state_shoot(tmp_path):
    cfg = write_cfg(tmp_path, SECH, domain__n="2048")
    assert main(["ground-state", "--config", str(cfg), "--method", "shoot"]) == 0
    doc = json.loads((tmp_path / "out" / "ground_state.json").read_text())
    assert abs(doc["mu_q"] - 2) <= 1e-3
    assert doc["provenance"] == "shooting"
    for k in ("omega", "sigma", "mass", "mu_q", "residual_l2", "provenance", "nodes", "values"):
        assert k in doc


def test_cli_ground_state_minimize_eigenvalue(tmp_path):
    text = (ROOT / "configs" / "eigen.cfg").read_text()
    cfg = write_cfg(tmp_path, text, domain__n="127")
    assert main(["ground-state", "--config", str(cfg), "--method", "minimize"]) == 0
    doc = json.loads((tmp_path / "out" / "eigen" / "ground_state.json").read_text())
    assert abs(doc["F"] / math.pi**2 - 1) < 1e-3


def test_cli_ground_state_flow_matches_shoot_d3(tmp_path):
    text = (ROOT / "configs" / "ball_d3.cfg").read_text()
    profiles = {}
    for method in ("shoot", "flow"):
        cfg = write_cfg(tmp_path, text, domain__n="512", outputs__ground_state=f"gs_{method}.json")
        assert main(["ground-state", "--config", str(cfg), "--method", method]) == 0
        profiles[method] = np.array(json.loads((tmp_path / f"gs_{method}.json").read_text())["values"])
    g = build_grid(DomainSpec.radial_ball(10.0, 3, 512))
    a, b = profiles["flow"], profiles["shoot"]
    assert math.sqrt(g.inner(a - b, a - b) / g.inner(b, b)) <= 1e-2


def test_cli_ground_state_not_found(tmp_path):
    cfg = write_cfg(tmp_path, SECH, scheme__t_end="1")
    assert main(["ground-state", "--config", str(cfg), "--method", "flow"]) == 4
    cfg = write_cfg(tmp_path, SECH, params__omega="-1", name="neg.cfg")
    assert main(["ground-state", "--config", str(cfg), "--method", "shoot"]) == 1


# ---------------------------------------------------------------------------
# checkpoints


def _state(rng):
    g = build_grid(DomainSpec.radial_ball(2.0, 3, 33))
    return FlowState(t=0.1 + 1e-17, u=g.field(rng.normal(size=33) / 3), step_index=7,
                     last_mu=math.pi, mass0=1 / 3)


def test_checkpoint_roundtrip_is_bit_identical(tmp_path, rng):
    s = _state(rng)
    back = checkpoint_roundtrip(s, tmp_path / "c.json")
    assert np.array_equal(back.u.values, s.u.values)
    assert (back.t, back.step_index, back.last_mu, back.mass0) == (s.t, s.step_index, s.last_mu, s.mass0)
    assert back.u.grid.spec == s.u.grid.spec


def test_checkpoint_header_extras(tmp_path, rng):
    save_checkpoint(_state(rng), tmp_path / "c.json", dt=1e-3, h1_reference=2.5)
    _, head = load_checkpoint_with_header(tmp_path / "c.json")
    assert head["dt"] == 1e-3 and head["h1_reference"] == 2.5
    assert head["format"] == "sphereflow-checkpoint" and head["version"] == "1"


def test_checkpoint_errors(tmp_path, rng):
    good = checkpoint_text(_state(rng))
    cases = {
        "empty": ("", "empty"),
        "blank": ("  \n", "empty"),
        "corrupt": (good[:200], r"line \d+ column \d+ \(char \d+\)"),
        "version": (good.replace('"version": "1"', '"version": "7b"'), "version '7b'"),
        "format": (good.replace("sphereflow-checkpoint", "other"), "format tag 'other'"),
        "missing": (json.dumps({"format": "sphereflow-checkpoint", "version": "1"}), "missing fields"),
        "contents": (good.replace('"n": 33', '"n": 34'), "invalid checkpoint contents"),
        "array": ("[1, 2]", "JSON object"),
    }
    for name, (text, match) in cases.items():
        with pytest.raises(CheckpointError, match=match):
            parse_checkpoint(text, name)
    with pytest.raises(CheckpointError, match="cannot read"):
        load_checkpoint(tmp_path / "absent.json")


def test_sech_checkpoint_continuation_is_identical(tmp_path):
    g = build_grid(DomainSpec.truncated_radial_line(20.0, 1, 256))
    u0 = g.sample(lambda r: 1.2 / np.cosh(r))
    p = FlowParams(sigma=1, omega=1)
    scheme = SchemeSpec(SchemeKind.SEMI_IMPLICIT_EULER_PROJECTED, 1e-3, 0.4)
    full = run_flow(u0, p, scheme)
    half = run_flow(u0, p, SchemeSpec(scheme.kind, 1e-3, 0.2))
    resumed = checkpoint_roundtrip(half.final_state, tmp_path / "c.json")
    rest = run_flow(resumed, p, scheme, h1_reference=half.grad_sq[0])
    tail = full.rows[len(half.rows):]
    assert rest.rows[1:].shape == tail.shape
    assert np.max(np.abs(rest.rows[1:] - tail)) <= 1e-12
    assert np.max(np.abs(rest.final_field.values - full.final_field.values)) <= 1e-12


def test_cli_resume_matches_uninterrupted(tmp_path):
    common = dict(outputs__checkpoint="out/ck.json", outputs__checkpoint_every="50")
    (tmp_path / "full").mkdir()
    (tmp_path / "split").mkdir()
    assert main(["flow", "--config", str(write_cfg(tmp_path / "full", SMALL, scheme__t_end="0.2", **common))]) == 0
    assert main(["flow", "--config", str(write_cfg(tmp_path / "split", SMALL, scheme__t_end="0.1", **common))]) == 0
    cfg = write_cfg(tmp_path / "split", SMALL, scheme__t_end="0.2", name="resume.cfg", **common)
    assert main(["resume", "--config", str(cfg)]) == 0
    a = load_checkpoint(tmp_path / "full" / "out" / "ck.json")
    b = load_checkpoint(tmp_path / "split" / "out" / "ck.json")
    assert a.step_index == b.step_index == 200
    assert np.max(np.abs(a.u.values - b.u.values)) <= 1e-12
    full_rows = read_csv(tmp_path / "full" / "out" / "series.csv")
    seg_rows = read_csv(tmp_path / "split" / "out" / "series.csv")
    assert np.max(np.abs(seg_rows[1:] - full_rows[101:])) <= 1e-12


def test_cli_resume_errors(tmp_path):
    assert main(["resume", "--config", str(write_cfg(tmp_path, SMALL))]) == 1  # no checkpoint key
    cfg = write_cfg(tmp_path, SMALL, outputs__checkpoint="out/ck.json", name="a.cfg")
    (tmp_path / "out").mkdir(exist_ok=True)
    (tmp_path / "out" / "ck.json").write_text("")
    assert main(["resume", "--config", str(cfg)]) == 1
    assert main(["flow", "--config", str(cfg)]) == 0   # t_end reached: nothing left to resume
    assert main(["resume", "--config", str(cfg)]) == 1
    other = write_cfg(tmp_path, SMALL, outputs__checkpoint="out/ck.json", domain__n="17", name="b.cfg")
    assert main(["resume", "--config", str(other)]) == 1


# ---------------------------------------------------------------------------
# reports and the verify command


def test_check_report_contract():
    rep = CheckReport()
    rep.add(CheckResult.upper("a", 1.0, 2.0))
    rep.add(CheckResult.lower("b", 1.0, 2.0))
    rep.add(CheckResult.skipped("c", "n/a"))
    rep.add(CheckResult.upper("d", math.nan, 1.0))
    with pytest.raises(ValueError, match="duplicate"):
        rep.add(CheckResult.upper("a", 0.0, 1.0))
    assert [e.status for e in rep.entries] == [Status.PASS, Status.FAIL, Status.SKIPPED, Status.FAIL]
    d = rep.to_dict()
    assert (d["ok"], d["n_pass"], d["n_fail"], d["n_skipped"]) == (False, 1, 2, 1)
    assert d["checks"][3]["measured"] is None
    json.dumps(d, allow_nan=False)
    assert rep["b"].check_name == "b"


def test_verify_is_seed_independent(tmp_path, capsys):
    reports = []
    for seed in (0, 11):
        path = tmp_path / f"r{seed}.json"
        assert main(["verify", "--suite", "fast", "--only", "c1,c7,c10", "--seed", str(seed),
                     "--report", str(path)]) == 0
        reports.append(json.loads(path.read_text()))
    a, b = reports
    assert a["criteria"] == b["criteria"] == {"c1": True, "c7": True, "c10": True}
    assert [(c["check_name"], c["status"]) for c in a["checks"]] == \
           [(c["check_name"], c["status"]) for c in b["checks"]]
    out = capsys.readouterr().out
    assert "PASS c1" in out and "3/3 criteria passed" in out


def test_verify_failing_criterion_exits_nonzero(capsys):
    assert main(["verify", "--suite", "fast", "--only", "c6"]) == 1
    assert "FAIL c6" in capsys.readouterr().out


def test_verify_rejects_unknown_criterion(capsys):
    assert main(["verify", "--only", "c99"]) == 1


def test_mutated_multiplier_is_caught(monkeypatch):
    real = Dynamics.multiplier

    def flipped(self, v):
        m = real(self, v)
        return -m if self.which is FlowKind.MAIN else m

    monkeypatch.setattr(Dynamics, "multiplier", flipped)
    rep = Suite("fast", 0).run(only=["c3", "c4"])
    verdicts = criterion_verdicts(rep)
    assert verdicts == {"c3": False, "c4": False}
    failed = {e.check_name for e in rep.failures}
    assert any("lyapunov" in n for n in failed)
    assert any(n.startswith("c3_unprojected") for n in failed)   # mass drift no longer shrinks with dt
