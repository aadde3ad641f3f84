"""Validated description of one simulation: physics, grid, fields, timing, output."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

from .errors import ValidationError
from .grid import Grid
from .params import ModelParams
from .stepper import StepperConfig

ENGINES = ("grid", "galerkin")
PRECONDITIONERS = ("separable", "ilu", "jacobi")


@dataclass(frozen=True)
class FieldSpec:
    preset: str = "zero"
    options: dict = field(default_factory=dict)

    def build(self, grid, params):
        from .presets import ic_preset

        return ic_preset(self.preset, grid, params, **self.options)


@dataclass(frozen=True)
class OutputSpec:
    directory: str | None = None
    snapshot_every: float | None = None  # None: initial and final snapshots only
    diagnostics_every: float | None = None  # None: a ledger row every step


@dataclass(frozen=True)
class SolverSpec:
    tol: float = 1e-10
    restart: int = 50
    maxiter: int = 10000
    preconditioner: str = "separable"

    def __post_init__(self):
        if not 0 < self.tol < 1:
            raise ValidationError("tol", "solver tolerance must lie in (0, 1)")
        if self.restart < 1 or self.maxiter < 1:
            raise ValidationError("restart", "restart and maxiter must be positive")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValidationError("preconditioner", f"preconditioner must be one of {PRECONDITIONERS}")

    def options(self) -> dict:
        return asdict(self)


def cadence_steps(every: float | None, dt: float, name: str) -> int | None:
    """Convert a time cadence to a step count; it must be a positive multiple of dt."""
    if every is None:
        return None
    if not every > 0:
        raise ValidationError(name, f"{name} must be positive")
    k = round(every / dt)
    if k < 1 or abs(k * dt - every) > 1e-9 * every:
        raise ValidationError(name, f"{name}={every} is not a multiple of dt={dt}")
    return int(k)


def step_count(t_end: float, dt: float) -> int:
    if t_end == 0:
        return 0
    k = round(t_end / dt)
    if abs(k * dt - t_end) > 1e-9 * max(t_end, 1.0):
        raise ValidationError("t_end", f"t_end={t_end} is not a multiple of dt={dt}")
    return int(k)


@dataclass(frozen=True)
class Scenario:
    params: ModelParams
    grid: Grid
    stepper: StepperConfig
    t_end: float = 1.0
    initial: FieldSpec = field(default_factory=FieldSpec)
    forcing: FieldSpec = field(default_factory=FieldSpec)
    engine: str = "grid"
    modes: int = 64
    output: OutputSpec = field(default_factory=OutputSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)

    def __post_init__(self):
        if not (math.isfinite(self.t_end) and self.t_end >= 0):
            raise ValidationError("t_end", "t_end must be finite and non-negative")
        if self.engine not in ENGINES:
            raise ValidationError("engine", f"engine must be one of {ENGINES}")
        if self.modes < 1:
            raise ValidationError("modes", "modes must be >= 1")
        if not self.grid.matches(self.params):
            raise ValidationError("grid", "grid extents differ from the domain in params")
        dt = self.stepper.dt
        step_count(self.t_end, dt)
        cadence_steps(self.output.snapshot_every, dt, "snapshot_every")
        cadence_steps(self.output.diagnostics_every, dt, "diagnostics_every")
        for spec in (self.initial, self.forcing):
            if spec.preset.startswith("file:"):
                from .snapshot import read_header

                dims = read_header(spec.preset[5:])
                if dims != self.grid.shape:
                    raise ValidationError("preset", f"{spec.preset}: dims {dims} differ from grid {self.grid.shape}")

    @property
    def n_steps(self) -> int:
        return step_count(self.t_end, self.stepper.dt)

    def replace(self, **changes) -> "Scenario":
        from dataclasses import replace

        return replace(self, **changes)

    def echo(self) -> dict:
        """Plain-data copy of the resolved configuration."""
        return {
            "domain": {"lx": self.params.lx, "ly": self.params.ly, "h": self.params.h},
            "grid": {"nx": self.grid.nx, "ny": self.grid.ny, "nz": self.grid.nz},
            "physics": {k: v for k, v in self.params.as_dict().items() if k not in ("lx", "ly", "h")},
            "time": {
                "dt": self.stepper.dt,
                "t_end": self.t_end,
                "scheme": self.stepper.scheme,
                "cfl_safety": self.stepper.cfl_safety,
                "advect": self.stepper.advect,
                "diffusion": self.stepper.diffusion,
                "engine": self.engine,
                "modes": self.modes,
            },
            "initial": {"preset": self.initial.preset, **self.initial.options},
            "forcing": {"preset": self.forcing.preset, **self.forcing.options},
            "output": asdict(self.output),
            "solver": self.solver.options(),
        }
