import csv
import io
import json
import math
import subprocess
import sys
from contextlib import redirect_stdout

import numpy as np
import pytest

from pgsolve.cli import main
from pgsolve.config import parse_config, scenario_from_dict
from pgsolve.errors import FormatError, ParseError, SnapshotIOError, UnknownKey, UnknownPreset, ValidationError
from pgsolve.estimates import COLUMNS, EstimateLedger
from pgsolve.grid import BC, Grid, ScalarField, norm_l2
from pgsolve.params import ModelParams
from pgsolve.presets import ic_preset
from pgsolve.runner import run, sha256
from pgsolve.snapshot import read_header, read_snapshot, write_snapshot

P = ModelParams()

SMALL = """
[grid]
nx = 8
[time]
dt = 0.05
t_end = {t_end}
[initial]
preset = "gaussian-blob"
width = 0.15
"""


def write(tmp_path, text, name="case.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def cli(*argv):
    out = io.StringIO()
    with redirect_stdout(out):
        code = main([str(a) for a in argv])
    return code, out.getvalue()


# ---------------------------------------------------------------- config


def test_minimal_config_defaults(tmp_path):
    s = parse_config(write(tmp_path, ""))
    assert s.solver.tol == 1e-10
    assert s.stepper.scheme == "BE" and s.stepper.cfl_safety == 0.5
    assert s.grid.shape == (32, 32, 32) and s.stepper.dt == 0.01 and s.t_end == 1.0
    assert s.params == ModelParams()
    assert s.engine == "grid" and s.initial.preset == "zero"


def test_alpha_zero_rejected(tmp_path):
    with pytest.raises(ValidationError) as info:
        parse_config(write(tmp_path, "[physics]\nalpha = 0.0\n"))
    assert info.value.field == "alpha"


def test_misspelled_key(tmp_path):
    with pytest.raises(UnknownKey) as info:
        parse_config(write(tmp_path, "[physics]\nkapa_h = 1.0\n"))
    assert "kapa_h" in str(info.value)
    with pytest.raises(UnknownKey):
        parse_config(write(tmp_path, "[physic]\nalpha = 1.0\n"))


def test_syntax_error_reports_line(tmp_path):
    with pytest.raises(ParseError) as info:
        parse_config(write(tmp_path, "[grid]\nnx = 8\n[time\n"))
    assert info.value.line == 3


@pytest.mark.parametrize(
    "data,field",
    [
        ({"time": {"dt": 0.03, "t_end": 1.0}}, "t_end"),
        ({"time": {"dt": 0.1}, "output": {"snapshot_every": 0.25}}, "snapshot_every"),
        ({"time": {"dt": 0.1}, "output": {"diagnostics_every": -1.0}}, "diagnostics_every"),
        ({"time": {"t_end": -1.0}}, "t_end"),
        ({"time": {"engine": "fft"}}, "engine"),
        ({"solver": {"preconditioner": "amg"}}, "preconditioner"),
        ({"initial": {"preset": "file:missing.spgf"}}, "preset"),
    ],
)
def test_scenario_validation(tmp_path, data, field):
    with pytest.raises(ValidationError) as info:
        scenario_from_dict(data, tmp_path)
    assert info.value.field == field


def test_snapshot_reference_must_match_grid(tmp_path):
    write_snapshot(ScalarField(Grid(4, 4, 4, 1, 1, 1), np.zeros((4, 4, 4))), tmp_path / "T0.spgf")
    with pytest.raises(ValidationError):
        scenario_from_dict({"grid": {"nx": 8}, "initial": {"preset": "file:T0.spgf"}}, tmp_path)
    s = scenario_from_dict({"grid": {"nx": 4}, "initial": {"preset": "file:T0.spgf"}}, tmp_path)
    assert s.initial.preset == f"file:{tmp_path / 'T0.spgf'}"


# ---------------------------------------------------------------- presets


def test_zero_and_unknown_presets():
    g = Grid.for_params(P, 6)
    f = ic_preset("zero", g, P)
    assert f.bc is BC.TEMPERATURE and not np.any(f.values)
    for bad in ("swirl", "gaussian-blob(1,2)", "mode:(a,b,c)"):
        with pytest.raises(UnknownPreset):
            ic_preset(bad, g, P)


def test_first_mode_preset_unit_norm():
    g = Grid.for_params(P, 16)
    f = ic_preset("mode:(0,0,1)", g, P)
    assert norm_l2(f) == pytest.approx(1.0, abs=1e-8)
    assert np.all(f.values > 0)
    assert np.allclose(f.values[0, 0], f.values[3, 5])  # horizontally uniform


def test_gaussian_blob_pointwise():
    g = Grid.for_params(P, 12)
    f = ic_preset("gaussian-blob(0.3,0.6,-0.4,0.2,1.7)", g, P)
    named = ic_preset("gaussian-blob", g, P, center=(0.3, 0.6, -0.4), width=0.2, amplitude=1.7)
    assert np.array_equal(f.values, named.values)
    rng = np.random.default_rng(0)
    for _ in range(10):
        i, j, k = rng.integers(0, 12, 3)
        x, y, z = g.x[i], g.y[j], g.z[k]
        r2 = (x - 0.3) ** 2 + (y - 0.6) ** 2 + (z + 0.4) ** 2
        assert f.values[i, j, k] == pytest.approx(1.7 * math.exp(-r2 / (2 * 0.2**2)), rel=1e-14)


def test_other_presets():
    g = Grid.for_params(P, 10)
    a = ic_preset("random-smooth", g, P, seed=4)
    assert np.array_equal(a.values, ic_preset("random-smooth", g, P, seed=4).values)
    assert not np.array_equal(a.values, ic_preset("random-smooth", g, P, seed=5).values)
    cone = ic_preset("rough", g, P, amplitude=2.0)
    assert 0 < cone.values.max() <= 2.0 and cone.values.min() == 0.0
    with pytest.raises(ValidationError):
        ic_preset("mixture", g, P)


# ---------------------------------------------------------------- snapshots


def test_snapshot_round_trip_bit_exact(tmp_path, rng):
    g = Grid(5, 6, 7, 1.0, 1.0, 1.0)
    f = ScalarField(g, rng.standard_normal(g.shape))
    path = tmp_path / "f.spgf"
    write_snapshot(f, path)
    assert read_header(path) == (5, 6, 7)
    back = read_snapshot(path, g)
    assert back.values.tobytes() == f.values.tobytes()
    assert path.stat().st_size == 20 + 8 * g.size
    assert path.read_bytes()[:4] == b"SPGF"


def test_snapshot_errors(tmp_path):
    g = Grid(4, 4, 4, 1.0, 1.0, 1.0)
    path = tmp_path / "f.spgf"
    write_snapshot(ScalarField(g, np.ones(g.shape)), path)
    raw = path.read_bytes()
    (tmp_path / "short.spgf").write_bytes(raw[:-8])
    with pytest.raises(FormatError):
        read_snapshot(tmp_path / "short.spgf", g)
    (tmp_path / "head.spgf").write_bytes(raw[:10])
    with pytest.raises(FormatError):
        read_snapshot(tmp_path / "head.spgf", g)
    (tmp_path / "magic.spgf").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        read_snapshot(tmp_path / "magic.spgf", g)
    with pytest.raises(FormatError) as info:
        read_snapshot(path, Grid(4, 4, 5, 1.0, 1.0, 1.0))
    assert "(4, 4, 4)" in str(info.value) and "(4, 4, 5)" in str(info.value)
    with pytest.raises(SnapshotIOError):
        read_snapshot(tmp_path / "nope.spgf", g)
    with pytest.raises(SnapshotIOError):
        write_snapshot(ScalarField(g, np.ones(g.shape)), tmp_path / "no" / "dir.spgf")


# ---------------------------------------------------------------- runs and outputs


def test_run_t_end_zero(tmp_path):
    cfg = write(tmp_path, SMALL.format(t_end=0.0))
    code, _ = cli("run", cfg, "--out", tmp_path / "out")
    assert code == 0
    led = EstimateLedger.from_csv(tmp_path / "out" / "ledger.csv")
    assert len(led) == 1 and led.times[0] == 0.0


def test_zero_scenario_ledger_is_zero():
    s = scenario_from_dict({"grid": {"nx": 6}, "time": {"dt": 0.1, "t_end": 0.5}})
    led = run(s).ledger
    for name in COLUMNS:
        if name != "t":
            assert not np.any(led.column(name)), name


def test_manifest_lists_every_file_with_checksum(tmp_path):
    cfg = write(tmp_path, SMALL.format(t_end=0.2) + "[output]\nsnapshot_every = 0.1\n")
    out = tmp_path / "out"
    assert cli("run", cfg, "--out", out)[0] == 0
    manifest = json.loads((out / "manifest.json").read_text())
    files = {p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file()} - {"manifest.json"}
    assert set(manifest["files"]) == files
    for name, digest in manifest["files"].items():
        assert sha256(out / name) == digest
    assert {"snapshots/T_00000000.spgf", "snapshots/T_00000002.spgf", "snapshots/T_00000004.spgf"} <= files
    assert manifest["config"]["grid"]["nx"] == 8 and manifest["code_version"]


def test_runs_are_deterministic(tmp_path):
    cfg = write(tmp_path, SMALL.format(t_end=0.2))
    for d in ("a", "b"):
        assert cli("run", cfg, "--out", tmp_path / d)[0] == 0
    for name in ("ledger.csv", "snapshots/T_00000004.spgf"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_failed_run_keeps_partial_ledger(tmp_path):
    # the fourth step raises: rows already recorded must survive with a truncation marker
    s = scenario_from_dict(
        {"grid": {"nx": 8}, "time": {"dt": 0.05, "t_end": 1.0}, "initial": {"preset": "gaussian-blob", "width": 0.2}}
    )
    from pgsolve.stepper import ThermoStepper

    class Boom(Exception):
        pass

    calls = {"n": 0}
    original = ThermoStepper.step

    def flaky(self, state, Q=None, dt=None):
        calls["n"] += 1
        if calls["n"] > 3:
            raise Boom("solver gave up")
        return original(self, state, Q, dt)

    ThermoStepper.step = flaky
    try:
        with pytest.raises(Boom):
            run(s, out_dir=tmp_path / "out")
    finally:
        ThermoStepper.step = original
    text = (tmp_path / "out" / "ledger.csv").read_text().splitlines()
    assert text[-1].startswith("# truncated: Boom")
    assert EstimateLedger.from_csv(tmp_path / "out" / "ledger.csv").truncated.startswith("Boom")
    assert json.loads((tmp_path / "out" / "manifest.json").read_text())["error"].startswith("Boom")


# ---------------------------------------------------------------- subcommands


def test_eigens_csv(tmp_path):
    code, out = cli("eigens", write(tmp_path, ""), "-m", 3)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert [r["kx"] + r["ky"] + r["n"] for r in rows] == ["001", "011", "101"]
    assert float(rows[0]["mu_n"]) == pytest.approx(0.860334, abs=1e-6)
    assert float(rows[0]["lambda"]) == pytest.approx(0.860334**2, rel=1e-5)


def test_verify_decay_scenario_exit_zero(tmp_path):
    cfg = write(tmp_path, SMALL.format(t_end=1.0))
    code, out = cli("verify", cfg, "--out", tmp_path / "v")
    assert code == 0
    summary = json.loads((tmp_path / "v" / "verify.json").read_text())
    assert summary["passed"] and all(c["passed"] for c in summary["checks"].values())
    assert json.loads(out)["passed"]


def test_verify_reports_estimate_failure(tmp_path, monkeypatch):
    import pgsolve.estimates as est

    cfg = write(tmp_path, SMALL.format(t_end=0.2))
    # shrink the envelope constant so the decay check must fail
    monkeypatch.setattr(est, "decay_constant", lambda params: 1e-3)
    code, _ = cli("verify", cfg, "--out", tmp_path / "v")
    assert code == 4


def test_pressure_solve_command(tmp_path):
    cfg = write(tmp_path, SMALL.format(t_end=0.0))
    g = Grid.for_params(P, 8)
    write_snapshot(ic_preset("random-smooth", g, P, seed=1), tmp_path / "T.spgf")
    code, _ = cli("pressure-solve", cfg, "--temp", tmp_path / "T.spgf", "--out", tmp_path / "p.spgf")
    assert code == 0
    p = read_snapshot(tmp_path / "p.spgf", g, BC.PRESSURE)
    assert np.all(np.isfinite(p.values)) and np.any(p.values)
    lines = [json.loads(x) for x in (tmp_path / "p.residuals.jsonl").read_text().splitlines()]
    assert lines[-1]["final"] and lines[-1]["residual"] <= 1e-10
    code, _ = cli("pressure-solve", cfg, "--temp", tmp_path / "missing.spgf")
    assert code == 2


def test_mms_command(tmp_path):
    code, out = cli("mms", write(tmp_path, ""), "--levels", "8,16")
    assert code == 0
    order = [line for line in out.splitlines() if line.startswith("# order pressure_error")][0]
    assert float(order.split(":")[1]) >= 1.8


def test_perturb_command(tmp_path):
    cfg = write(tmp_path, SMALL.format(t_end=0.2))
    code, out = cli("perturb", cfg, "--eta", "0,1e-3,1e-4")
    assert code == 0
    rep = json.loads(out)
    assert rep["zero_eta_max"] == 0.0 and rep["collapse_ok"]


@pytest.mark.parametrize(
    "text,code",
    [
        ("[physics]\nalpha = 0.0\n", 2),
        ("[physics]\nkapa_h = 1.0\n", 2),
        ("[grid\n", 2),
        ('[initial]\npreset = "swirl"\n[grid]\nnx = 6\n[time]\nt_end = 0.0\n', 2),
    ],
)
def test_invalid_input_exit_codes(tmp_path, text, code):
    assert cli("run", write(tmp_path, text), "--out", tmp_path / "o")[0] == code


def test_usage_errors(tmp_path, capsys):
    assert main(["bogus"]) == 1
    assert main([]) == 1
    assert main(["eigens", str(write(tmp_path, "")), "-m", "0"]) == 1
    assert main(["perturb", str(write(tmp_path, "")), "--eta", "x"]) == 1
    assert "pgsolve" in capsys.readouterr().err


def test_numerical_failure_exit_code(tmp_path):
    text = '[grid]\nnx = 6\n[time]\ndt = 0.5\nt_end = 1.0\ncfl_safety = 0.5\n[initial]\npreset = "random-smooth"\namplitude = 1e6\n'
    # substepping keeps explicit advection within its limit, so force a solver failure instead
    text += "[solver]\nmaxiter = 1\ntol = 1e-15\npreconditioner = \"jacobi\"\n"
    assert cli("run", write(tmp_path, text), "--out", tmp_path / "o")[0] == 3


def test_console_script_and_thread_cap(tmp_path):
    cfg = write(tmp_path, "")
    env = {"SPG_THREADS": "1", "PATH": "/usr/bin:/bin:/usr/local/bin"}
    res = subprocess.run(
        [sys.executable, "-m", "pgsolve", "eigens", str(cfg), "-m", "2"], capture_output=True, text=True, env=env
    )
    assert res.returncode == 0 and res.stdout.startswith("kx,ky,n,mu_n,lambda")
    env["SPG_THREADS"] = "many"
    res = subprocess.run([sys.executable, "-m", "pgsolve", "eigens", str(cfg)], capture_output=True, text=True, env=env)
    assert res.returncode == 2 and "SPG_THREADS" in res.stderr
