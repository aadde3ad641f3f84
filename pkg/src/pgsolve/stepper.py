"""Temperature time stepping: explicit skew-symmetric advection, implicit diffusion.

Each step re-solves the pressure problem for the new temperature and
re-diagnoses the velocity, so a State is always internally consistent.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
import scipy.sparse.linalg as spla

from .errors import CFLViolation, NoConvergence
from .grid import BC, Grid, ScalarField, VelocityField, centred_diff, robin_factor, second_diff
from .params import ModelParams
from .pressure import (
    PressureSolution,
    PressureSystem,
    assemble_pressure_system,
    diagnose_velocity,
    solve_pressure,
)

SCHEMES = ("BE", "CN-AB2")


def _values(T):
    return T.values if isinstance(T, ScalarField) else np.asarray(T)


# ----------------------------------------------------------------------------
# spatial operators


def advection(T, vel: VelocityField, params: ModelParams) -> np.ndarray:
    """Skew-symmetric transport term 1/2 [u.grad T + div(u T)].

    T uses its own ghosts (mirror on walls and bottom, Robin at the surface);
    the products uT, vT, wT use the adjoint ghosts (sign-flipped), which put
    a zero normal flux on the boundary faces.  Together they make
    <advection(T, vel), T> vanish to roundoff for any velocity field.
    """
    g = vel.grid
    t = _values(T)
    r = robin_factor(params.alpha, g.dz)
    out = 0.5 * (vel.u * centred_diff(t, 0, g.dx, 1.0, 1.0) + centred_diff(vel.u * t, 0, g.dx, -1.0, -1.0))
    out += 0.5 * (vel.v * centred_diff(t, 1, g.dy, 1.0, 1.0) + centred_diff(vel.v * t, 1, g.dy, -1.0, -1.0))
    out += 0.5 * (vel.w * centred_diff(t, 2, g.dz, 1.0, r) + centred_diff(vel.w * t, 2, g.dz, -1.0, -r))
    return out


def _robin_tridiagonal(n, d, top):
    """1D positive second-difference matrix with a mirror ghost below and ``top`` above."""
    m = np.diag(np.full(n, 2.0)) - np.diag(np.ones(n - 1), 1) - np.diag(np.ones(n - 1), -1)
    m[0, 0] = 1.0
    m[-1, -1] = 2.0 - top
    return m / (d * d)


class DiffusionOperator:
    """L T = -kappa_h (T_xx + T_yy) - kappa_v T_zz with the temperature ghosts.

    L is symmetric positive definite in the midpoint inner product (the
    surface relaxation removes the constant null space).  Because it is a
    Kronecker sum of 1D matrices, (I + dt L)^-1 can be applied exactly with
    three small eigendecompositions.
    """

    def __init__(self, params: ModelParams, grid: Grid):
        self.params = params
        self.grid = grid
        self.robin = robin_factor(params.alpha, grid.dz)
        lx = _robin_tridiagonal(grid.nx, grid.dx, 1.0)
        ly = _robin_tridiagonal(grid.ny, grid.dy, 1.0)
        lz = _robin_tridiagonal(grid.nz, grid.dz, self.robin)
        self.lam_x, self.vx = np.linalg.eigh(lx)
        self.lam_y, self.vy = np.linalg.eigh(ly)
        self.lam_z, self.vz = np.linalg.eigh(lz)
        self.eigenvalues = (
            params.kappa_h * (self.lam_x[:, None, None] + self.lam_y[None, :, None])
            + params.kappa_v * self.lam_z[None, None, :]
        )

    def apply(self, T) -> np.ndarray:
        g, p = self.grid, self.params
        t = _values(T)
        lap_h = second_diff(t, 0, g.dx) + second_diff(t, 1, g.dy)
        lap_z = second_diff(t, 2, g.dz, 1.0, self.robin)
        return -(p.kappa_h * lap_h + p.kappa_v * lap_z)

    def _to_modes(self, t):
        g = self.grid
        a = (self.vx.T @ t.reshape(g.nx, -1)).reshape(g.shape)
        a = np.matmul(self.vy.T, a)
        return a @ self.vz

    def _from_modes(self, a):
        g = self.grid
        t = a @ self.vz.T
        t = np.matmul(self.vy, t)
        return (self.vx @ t.reshape(g.nx, -1)).reshape(g.shape)

    def solve(self, rhs, dt: float, method: str = "spectral", tol: float = 1e-12) -> np.ndarray:
        """Return (I + dt L)^-1 rhs."""
        b = np.asarray(_values(rhs), dtype=float)
        if method == "spectral":
            return self._from_modes(self._to_modes(b) / (1.0 + dt * self.eigenvalues))
        if method == "cg":
            n = b.size
            shape = self.grid.shape
            op = spla.LinearOperator(
                (n, n), matvec=lambda v: v + dt * self.apply(v.reshape(shape)).ravel(), dtype=float
            )
            if not np.any(b):
                return np.zeros_like(b)
            count = [0]

            def _count(_):
                count[0] += 1

            x, info = spla.cg(op, b.ravel(), rtol=tol, atol=0.0, maxiter=10 * n, callback=_count)
            if info != 0:
                res = np.linalg.norm(op.matvec(x) - b.ravel()) / np.linalg.norm(b)
                raise NoConvergence(count[0], float(res), "diffusion CG")
            return x.reshape(shape)
        raise ValueError(f"unknown diffusion solver {method!r}")


@lru_cache(maxsize=16)
def diffusion_operator(params: ModelParams, grid: Grid) -> DiffusionOperator:
    return DiffusionOperator(params, grid)


def diffusion_apply(params: ModelParams, T, grid: Grid | None = None) -> np.ndarray:
    grid = T.grid if isinstance(T, ScalarField) else grid
    return diffusion_operator(params, grid).apply(T)


def diffusion_solve(params: ModelParams, T_rhs, dt: float, grid: Grid | None = None, method="spectral"):
    grid = T_rhs.grid if isinstance(T_rhs, ScalarField) else grid
    return diffusion_operator(params, grid).solve(T_rhs, dt, method=method)


# ----------------------------------------------------------------------------
# state and stepping


@dataclass(frozen=True)
class StepperConfig:
    """Time-step settings.

    ``advect=False`` zeroes the velocity (pure diffusion), which is what the
    modal-decay checks need.  ``diffusion`` picks the implicit solver.
    """

    dt: float
    scheme: str = "BE"
    cfl_safety: float = 0.5
    advect: bool = True
    diffusion: str = "spectral"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")


@dataclass(frozen=True)
class State:
    t: float
    T: ScalarField
    pressure: PressureSolution
    vel: VelocityField
    adv: np.ndarray  # advection term evaluated at this state
    adv_prev: np.ndarray | None = None  # previous level, for AB2
    step: int = 0

    @property
    def p(self) -> ScalarField:
        return self.pressure.p


class ThermoStepper:
    """Owns the assembled operators for one (params, grid) pair."""

    def __init__(
        self,
        params: ModelParams,
        grid: Grid,
        config: StepperConfig,
        pressure_system: PressureSystem | None = None,
        **solver_options,
    ):
        self.params = params
        self.grid = grid
        self.config = config
        self.system = pressure_system or assemble_pressure_system(params, grid, **solver_options)
        self.diffusion = diffusion_operator(params, grid)

    # -- diagnosis -------------------------------------------------------

    def diagnose(self, T, guess=None):
        g = self.grid
        if not self.config.advect:
            zero = PressureSolution(self.system.to_field(np.zeros(self.system.node_shape)), 0, 0.0)
            return zero, VelocityField.zeros(g)
        sol = solve_pressure(self.system, T, x0=guess)
        return sol, diagnose_velocity(self.params, sol.p, T)

    def make_state(self, T, t=0.0, step=0, guess=None, adv_prev=None) -> State:
        field = T if isinstance(T, ScalarField) else ScalarField(self.grid, T, BC.TEMPERATURE)
        sol, vel = self.diagnose(field, guess)
        adv = advection(field, vel, self.params) if self.config.advect else np.zeros(self.grid.shape)
        return State(t, field, sol, vel, adv, adv_prev, step)

    def initial_state(self, T0, t=0.0) -> State:
        return self.make_state(T0, t)

    # -- stepping --------------------------------------------------------

    def cfl_max_dt(self, state: State) -> float:
        return cfl_max_dt(state, self.config)

    def step(self, state: State, Q=None, dt: float | None = None) -> State:
        dt = self.config.dt if dt is None else dt
        if self.config.advect:
            limit = self.cfl_max_dt(state)
            if dt > limit * (1.0 + 1e-12):
                raise CFLViolation(dt, limit)
        t = state.T.values
        q = 0.0 if Q is None else _values(Q)
        method = self.config.diffusion
        if self.config.scheme == "CN-AB2" and state.adv_prev is not None:
            adv = 1.5 * state.adv - 0.5 * state.adv_prev
            rhs = t - 0.5 * dt * self.diffusion.apply(t) + dt * (q - adv)
            new = self.diffusion.solve(rhs, 0.5 * dt, method)
        elif self.config.scheme == "CN-AB2":
            # first step: Crank-Nicolson diffusion with forward-Euler advection
            rhs = t - 0.5 * dt * self.diffusion.apply(t) + dt * (q - state.adv)
            new = self.diffusion.solve(rhs, 0.5 * dt, method)
        else:
            new = self.diffusion.solve(t + dt * (q - state.adv), dt, method)
        return self.make_state(new, state.t + dt, state.step + 1, guess=state.pressure.p, adv_prev=state.adv)


def cfl_max_dt(state: State, config: StepperConfig) -> float:
    """cfl_safety / max(|u|/dx + |v|/dy + |w|/dz); infinite at rest."""
    g = state.vel.grid
    rate = np.abs(state.vel.u) / g.dx + np.abs(state.vel.v) / g.dy + np.abs(state.vel.w) / g.dz
    peak = float(rate.max())
    if peak == 0.0:
        return float("inf")
    return config.cfl_safety / peak


@lru_cache(maxsize=8)
def _cached_stepper(params, grid, config):
    return ThermoStepper(params, grid, config)


def step(state: State, params: ModelParams, config: StepperConfig, Q=None) -> State:
    """Functional form of ThermoStepper.step with cached operators."""
    return _cached_stepper(params, state.T.grid, config).step(state, Q)


def with_dt(config: StepperConfig, dt: float) -> StepperConfig:
    return replace(config, dt=dt)
