"""Manufactured pressure/temperature pair for convergence studies.

The horizontal shape

    P(x, y) = q(y) + r(y) * lx/(2 pi) * sin(2 pi x / lx),
    q = cos(pi y/ly) - cos(3 pi y/ly)/9,   r = -f q' / eps,

satisfies the oblique side-wall condition on all four walls while having
nonzero tangential derivatives there.  With p = P cos(pi z/h), the vertical
velocity w = (h/pi) sin(pi z/h) L(P) (L the horizontal part of the elliptic
operator) makes the velocity exactly divergence free, and T = p_z + delta w
is the temperature that drives it.  No source term is needed.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import sympy as sy

from .grid import BC, Grid, ScalarField, norm_l2
from .params import ModelParams
from .pressure import assemble_pressure_system, diagnose_velocity, discrete_divergence, solve_pressure


@lru_cache(maxsize=8)
def manufactured_solution(params: ModelParams):
    """Return numpy callables (p, T, u, v, w) of (x, y, z)."""
    x, y, z = sy.symbols("x y z", real=True)
    eps, dl = params.epsilon, params.delta
    lx, ly, h = params.lx, params.ly, params.h
    f = params.f0 + params.beta * y
    q = sy.cos(sy.pi * y / ly) - sy.cos(3 * sy.pi * y / ly) / 9
    r = -f * sy.diff(q, y) / eps
    P = q + r * lx / (2 * sy.pi) * sy.sin(2 * sy.pi * x / lx)
    A = eps / (eps**2 + f**2)
    B = f / (eps**2 + f**2)
    LP = sy.diff(A * sy.diff(P, x) + B * sy.diff(P, y), x) + sy.diff(-B * sy.diff(P, x) + A * sy.diff(P, y), y)
    p = P * sy.cos(sy.pi * z / h)
    w = h / sy.pi * sy.sin(sy.pi * z / h) * LP
    T = sy.diff(p, z) + dl * w
    u = -(eps * sy.diff(p, x) + f * sy.diff(p, y)) / (eps**2 + f**2)
    v = (f * sy.diff(p, x) - eps * sy.diff(p, y)) / (eps**2 + f**2)
    fn = lambda e: sy.lambdify((x, y, z), e, "numpy")  # noqa: E731
    return fn(p), fn(T), fn(u), fn(v), fn(w)


def _sample(fun, grid):
    X, Y, Z = grid.mesh()
    return np.broadcast_to(fun(X, Y, Z), grid.shape).astype(float)


@dataclass
class MMSLevel:
    n: int
    pressure_error: float
    velocity_error: float
    divergence_norm: float
    iterations: int
    residual: float
    seconds: float


@dataclass
class MMSStudy:
    levels: list

    def orders(self, attr="pressure_error"):
        e = np.array([getattr(lv, attr) for lv in self.levels])
        n = np.array([lv.n for lv in self.levels], dtype=float)
        return np.log(e[:-1] / e[1:]) / np.log(n[1:] / n[:-1])


def mms_study(params: ModelParams, levels=(16, 32, 64), **solver_options) -> MMSStudy:
    """Solve the manufactured problem on n^3 grids and record the L2 errors."""
    p_fn, t_fn, u_fn, v_fn, w_fn = manufactured_solution(params)
    out = []
    for n in levels:
        grid = Grid.for_params(params, n)
        start = time.perf_counter()
        system = assemble_pressure_system(params, grid, **solver_options)
        # the manufactured T has nonzero normal derivative on the walls
        T = ScalarField(grid, _sample(t_fn, grid), BC.FREE)
        sol = solve_pressure(system, T)
        seconds = time.perf_counter() - start
        exact = _sample(p_fn, grid)
        exact -= exact.mean()
        vel = diagnose_velocity(params, sol.p, T)
        du = np.sqrt(
            norm_l2(vel.u - _sample(u_fn, grid), grid) ** 2
            + norm_l2(vel.v - _sample(v_fn, grid), grid) ** 2
            + norm_l2(vel.w - _sample(w_fn, grid), grid) ** 2
        )
        out.append(
            MMSLevel(
                n=n,
                pressure_error=norm_l2(sol.p.values - exact, grid),
                velocity_error=float(du),
                divergence_norm=norm_l2(discrete_divergence(vel), grid),
                iterations=sol.iterations,
                residual=sol.residual,
                seconds=seconds,
            )
        )
    return MMSStudy(out)
