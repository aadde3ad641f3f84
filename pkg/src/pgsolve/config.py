"""TOML scenario files.

Sections and keys (everything optional; defaults shown)::

    [domain]   lx = 1.0, ly = 1.0, h = 1.0
    [grid]     nx = 32, ny = nx, nz = nx
    [physics]  epsilon = 1, delta = 1, kappa_h = 1, kappa_v = 1, alpha = 1, f0 = 1, beta = 0.1
    [time]     dt = 0.01, t_end = 1.0, scheme = "BE", cfl_safety = 0.5, advect = true,
               diffusion = "spectral", engine = "grid", modes = 64
    [initial]  preset = "zero", plus preset options (width, amplitude, center, modes, seed, ...)
    [forcing]  preset = "zero", plus preset options
    [output]   directory, snapshot_every, diagnostics_every
    [solver]   tol = 1e-10, restart = 50, maxiter = 10000, preconditioner = "separable"

Relative ``file:`` preset paths and the output directory are resolved
against the config file's directory.
"""
from __future__ import annotations

import re
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ParseError, UnknownKey, ValidationError
from .grid import Grid
from .params import validate_params
from .scenario import FieldSpec, OutputSpec, Scenario, SolverSpec
from .stepper import StepperConfig

PRESET_OPTIONS = {"width", "amplitude", "center", "modes", "seed", "kmax", "nmax", "radius", "noise"}

SECTIONS = {
    "domain": {"lx", "ly", "h"},
    "grid": {"nx", "ny", "nz"},
    "physics": {"epsilon", "delta", "kappa_h", "kappa_v", "alpha", "f0", "beta"},
    "time": {"dt", "t_end", "scheme", "cfl_safety", "advect", "diffusion", "engine", "modes"},
    "initial": {"preset"} | PRESET_OPTIONS,
    "forcing": {"preset"} | PRESET_OPTIONS,
    "output": {"directory", "snapshot_every", "diagnostics_every"},
    "solver": {"tol", "restart", "maxiter", "preconditioner"},
}


def _line_of(exc) -> int | None:
    line = getattr(exc, "lineno", None)
    if line is None:
        m = re.search(r"line (\d+)", str(exc))
        line = int(m.group(1)) if m else None
    return line


def _check_keys(data: dict):
    for section, body in data.items():
        if section not in SECTIONS:
            raise UnknownKey(section)
        if not isinstance(body, dict):
            raise ValidationError(section, f"[{section}] must be a table")
        for key in body:
            if key not in SECTIONS[section]:
                raise UnknownKey(f"{section}.{key}")


def _field_spec(body: dict, base: Path) -> FieldSpec:
    body = dict(body)
    preset = str(body.pop("preset", "zero"))
    if preset.startswith("file:"):
        path = Path(preset[5:])
        if not path.is_absolute():
            path = base / path
        if not path.exists():
            raise ValidationError("preset", f"snapshot file {path} does not exist")
        preset = f"file:{path}"
    return FieldSpec(preset, body)


def scenario_from_dict(data: dict, base: Path | str = ".") -> Scenario:
    """Build a validated Scenario from already-parsed TOML data."""
    base = Path(base)
    _check_keys(data)
    dom, grd, phy = data.get("domain", {}), data.get("grid", {}), data.get("physics", {})
    tim, out, sol = data.get("time", {}), data.get("output", {}), data.get("solver", {})
    params = validate_params({**phy, **dom})
    nx = grd.get("nx", 32)
    grid = Grid.for_params(params, nx, grd.get("ny", nx), grd.get("nz", nx))
    try:
        stepper = StepperConfig(
            dt=float(tim.get("dt", 0.01)),
            scheme=str(tim.get("scheme", "BE")),
            cfl_safety=float(tim.get("cfl_safety", 0.5)),
            advect=bool(tim.get("advect", True)),
            diffusion=str(tim.get("diffusion", "spectral")),
        )
    except ValueError as exc:
        field = next((k for k in ("dt", "scheme", "cfl_safety") if k in str(exc)), "time")
        raise ValidationError(field, str(exc)) from exc
    if stepper.diffusion not in ("spectral", "cg"):
        raise ValidationError("diffusion", "diffusion must be 'spectral' or 'cg'")
    directory = out.get("directory")
    if directory is not None and not Path(directory).is_absolute():
        directory = str(base / directory)
    return Scenario(
        params=params,
        grid=grid,
        stepper=stepper,
        t_end=float(tim.get("t_end", 1.0)),
        initial=_field_spec(data.get("initial", {}), base),
        forcing=_field_spec(data.get("forcing", {}), base),
        engine=str(tim.get("engine", "grid")),
        modes=int(tim.get("modes", 64)),
        output=OutputSpec(directory, out.get("snapshot_every"), out.get("diagnostics_every")),
        solver=SolverSpec(
            tol=float(sol.get("tol", 1e-10)),
            restart=int(sol.get("restart", 50)),
            maxiter=int(sol.get("maxiter", 10000)),
            preconditioner=str(sol.get("preconditioner", "separable")),
        ),
    )


def parse_config(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(None, f"cannot read {path}: {exc}") from exc
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(_line_of(exc), str(exc)) from exc
    return scenario_from_dict(data, path.parent)
