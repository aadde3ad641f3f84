"""Drive a scenario to t_end with either engine, filling the estimate ledger.

Outputs (when an output directory is given):

    ledger.csv      fixed-column estimate ledger
    summary.json    run statistics, cumulative dissipation, per-check inputs
    snapshots/      SPGF temperature snapshots
    manifest.json   config echo, code version, timings, sha256 of every file above

If the run fails the partial ledger is still written, ending in a
``# truncated: ...`` line, and the manifest records the failure.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .estimates import EstimateLedger, advection_cancellation_ratio, ledger_row
from .grid import BC, ScalarField, norm_l2, norm_v
from .scenario import Scenario, cadence_steps
from .snapshot import write_snapshot
from .spectral import GalerkinModel, build_basis, galerkin_integrate, modal_decay_bound, project_values
from .stepper import ThermoStepper, advection, diffusion_operator

__version__ = "0.1.0"


@dataclass
class RunResult:
    ledger: EstimateLedger
    final_T: ScalarField | None
    stats: dict
    field_times: list = field(default_factory=list)
    fields: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    manifest: dict | None = None
    out_dir: Path | None = None
    modal: object = None  # GalerkinTrajectory for the galerkin engine


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class _Recorder:
    """Collects ledger rows, the running integrals and optional snapshots."""

    def __init__(self, scenario, T0, Q, out_dir, keep_fields):
        self.s = scenario
        self.params = scenario.params
        self.q_norm = norm_l2(Q)
        self.t0_norm2 = norm_l2(T0) ** 2
        self.ledger = EstimateLedger(meta={"q_norm": self.q_norm, "t0_norm2": self.t0_norm2})
        self.out_dir = out_dir
        self.keep = keep_fields
        self.field_times, self.fields, self.snapshots = [], [], []
        self.diffusion = diffusion_operator(scenario.params, scenario.grid)
        self.dissipation = 0.0
        self.h1 = 0.0
        self.adv_ratio_max = 0.0
        self._last = None  # (|T|_V^2, |L T|^2) at the previous integration point
        if out_dir is not None:
            (out_dir / "snapshots").mkdir(parents=True, exist_ok=True)

    def integrate(self, T: ScalarField, dt: float, rule: str = "trapezoid", previous=None):
        """Advance int |T|_V^2 and int |L T|^2 to the current state.

        The quadrature follows the time scheme so that the discrete energy
        identity closes: backward Euler dissipates at the new level
        (``rule="right"``), Crank-Nicolson at the mean of the two levels
        (``rule="midpoint"``, needs ``previous``).  The smooth modal runs use
        the trapezoid rule.
        """
        vn2 = norm_v(T, self.params) ** 2
        lt2 = norm_l2(self.diffusion.apply(T), T.grid) ** 2
        if dt > 0:
            if rule == "right":
                dv, dl = vn2, lt2
            elif rule == "midpoint":
                mid = ScalarField(T.grid, 0.5 * (T.values + previous.values), BC.TEMPERATURE)
                dv = norm_v(mid, self.params) ** 2
                dl = norm_l2(self.diffusion.apply(mid), T.grid) ** 2
            else:
                dv = 0.5 * (vn2 + self._last[0])
                dl = 0.5 * (lt2 + self._last[1])
            self.dissipation += dt * dv
            self.h1 += dt * dl
        self._last = (vn2, lt2)

    def advection_sample(self, adv, T, vel):
        self.adv_ratio_max = max(self.adv_ratio_max, advection_cancellation_ratio(adv, T, vel))

    def row(self, t, T, pressure, vel, adv, system):
        r = ledger_row(t, T, pressure, vel, adv, self.params, system, self.t0_norm2, self.q_norm, self.h1)
        self.ledger.append(r, self.dissipation)
        if self.keep:
            self.field_times.append(t)
            self.fields.append(T.values.copy())

    def snapshot(self, step, T):
        if self.out_dir is None:
            return
        path = self.out_dir / "snapshots" / f"T_{step:08d}.spgf"
        write_snapshot(T, path)
        self.snapshots.append(path)


def _run_grid(s: Scenario, rec: _Recorder, T0, Q, stats):
    cfg = s.stepper
    stepper = ThermoStepper(s.params, s.grid, cfg, **s.solver.options())
    state = stepper.initial_state(T0)
    n = s.n_steps
    diag = cadence_steps(s.output.diagnostics_every, cfg.dt, "diagnostics_every") or 1
    snap = cadence_steps(s.output.snapshot_every, cfg.dt, "snapshot_every")
    rule = "right" if cfg.scheme == "BE" else "midpoint"
    rec.integrate(state.T, 0.0)
    rec.advection_sample(state.adv, state.T, state.vel)
    rec.row(0.0, state.T, state.pressure, state.vel, state.adv, stepper.system)
    rec.snapshot(0, state.T)
    stats["pressure_iterations_max"] = state.pressure.iterations
    for i in range(1, n + 1):
        limit = stepper.cfl_max_dt(state) if cfg.advect else math.inf
        sub = 1 if cfg.dt <= limit else int(math.ceil(cfg.dt / limit * (1 + 1e-12)))
        h = cfg.dt / sub
        for _ in range(sub):
            previous = state.T
            state = stepper.step(state, Q, h)
            rec.integrate(state.T, h, rule, previous)
            rec.advection_sample(state.adv, state.T, state.vel)
            stats["pressure_iterations_max"] = max(stats["pressure_iterations_max"], state.pressure.iterations)
        stats["steps"] = i
        stats["substeps"] += sub
        if not np.all(np.isfinite(state.T.values)):
            raise FloatingPointError(f"non-finite temperature at t={i * cfg.dt}")
        if i % diag == 0 or i == n:
            rec.row(i * cfg.dt, state.T, state.pressure, state.vel, state.adv, stepper.system)
        if (snap and i % snap == 0) or i == n:
            rec.snapshot(i, state.T)
    return state.T, None


def _run_galerkin(s: Scenario, rec: _Recorder, T0, Q, stats):
    cfg = s.stepper
    basis = build_basis(s.params, s.modes, limits=s.grid.shape)
    model = GalerkinModel(s.params, basis, s.grid, advect=cfg.advect, **s.solver.options())
    a0 = project_values(basis, T0.values, s.grid)
    q = project_values(basis, Q.values, s.grid)
    diag = cadence_steps(s.output.diagnostics_every, cfg.dt, "diagnostics_every") or 1
    snap = cadence_steps(s.output.snapshot_every, cfg.dt, "snapshot_every")
    last_t = [0.0]

    def on_record(t, a):
        T, sol, vel = model.fields(a)
        adv = advection(T, vel, s.params) if cfg.advect else np.zeros(s.grid.shape)
        rec.integrate(T, t - last_t[0])
        rec.advection_sample(adv, T, vel)
        rec.row(t, T, sol, vel, adv, model.system)
        step = int(round(t / cfg.dt))
        if step == 0 or (snap and step % snap == 0) or step == s.n_steps:
            rec.snapshot(step, T)
        last_t[0] = t
        stats["steps"] = step

    traj = galerkin_integrate(model, a0, q, t_end=s.t_end, dt=cfg.dt, record_every=diag, on_record=on_record)
    stats["modes"] = basis.size
    stats["lambda1"] = basis.lambda1
    stats["modal_bound_failures"] = int(np.count_nonzero(~traj.bound_holds))
    stats["modal_energy_final"] = float(traj.energy[-1])
    stats["modal_bound_final"] = float(modal_decay_bound(traj.times[-1], traj.energy[0], float(np.linalg.norm(q)), basis.lambda1))
    final = ScalarField(s.grid, model.fields(traj.coeffs[-1])[0].values, BC.TEMPERATURE)
    return final, traj


def _write_outputs(out_dir: Path, s: Scenario, rec: _Recorder, stats, error=None):
    ledger_path = out_dir / "ledger.csv"
    rec.ledger.to_csv(ledger_path)
    summary = {
        "stats": stats,
        "dissipation": rec.ledger.dissipation,
        "q_norm": rec.q_norm,
        "t0_norm2": rec.t0_norm2,
        "truncated": rec.ledger.truncated,
    }
    summary_path = out_dir / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    files = [ledger_path, summary_path, *rec.snapshots]
    manifest = {
        "config": s.echo(),
        "code_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "wall_seconds": stats.get("wall_seconds"),
        "error": error,
        "files": {str(p.relative_to(out_dir)): sha256(p) for p in files},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def run(scenario: Scenario, out_dir=None, keep_fields: bool = False, initial_offset=None) -> RunResult:
    """Run ``scenario``; ``initial_offset`` (an array) is added to the initial field."""
    s = scenario
    out_dir = Path(out_dir) if out_dir is not None else (Path(s.output.directory) if s.output.directory else None)
    T0 = s.initial.build(s.grid, s.params)
    if initial_offset is not None:
        T0 = ScalarField(s.grid, T0.values + np.asarray(initial_offset).reshape(s.grid.shape), BC.TEMPERATURE)
    Q = s.forcing.build(s.grid, s.params)
    rec = _Recorder(s, T0, Q, out_dir, keep_fields)
    stats = {"engine": s.engine, "steps": 0, "substeps": 0, "threads": os.environ.get("SPG_THREADS")}
    start = time.perf_counter()
    final, modal = None, None
    try:
        if s.engine == "grid":
            final, modal = _run_grid(s, rec, T0, Q, stats)
        else:
            final, modal = _run_galerkin(s, rec, T0, Q, stats)
    except Exception as exc:
        stats["wall_seconds"] = time.perf_counter() - start
        stats["adv_cancel_max_ratio"] = rec.adv_ratio_max
        rec.ledger.truncated = f"{type(exc).__name__}: {exc}"
        if out_dir is not None:
            _write_outputs(out_dir, s, rec, stats, error=rec.ledger.truncated)
        raise
    stats["wall_seconds"] = time.perf_counter() - start
    stats["adv_cancel_max_ratio"] = rec.adv_ratio_max
    stats["dissipation_final"] = rec.dissipation
    manifest = _write_outputs(out_dir, s, rec, stats) if out_dir is not None else None
    return RunResult(rec.ledger, final, stats, rec.field_times, rec.fields, rec.snapshots, manifest, out_dir, modal)
