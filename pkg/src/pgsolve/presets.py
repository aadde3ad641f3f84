"""Named initial-condition and forcing fields.

Names accepted by :func:`ic_preset`:

* ``zero``
* ``mode:(kx,ky,n)``: one eigenmode of the diffusion operator, unit L2 norm on the grid
* ``gaussian-blob`` or ``gaussian-blob(cx,cy,cz,width,amplitude)``:
  amplitude * exp(-|x - c|^2 / (2 width^2))
* ``mixture``: sum of amplitude * mode over ``modes = [[kx, ky, n, amplitude], ...]``,
  sampled from the analytic eigenfunctions so that it means the same thing on every grid
* ``random-smooth``: seeded random combination of the low modes, amplitudes decaying as 1/(1+lambda)
* ``rough``: a cone amplitude * max(0, 1 - |x - c|/radius), Lipschitz but not smoother, plus
  optional seeded small-scale noise
* ``file:<path>``: an SPGF snapshot
"""
from __future__ import annotations

import re

import numpy as np

from .errors import UnknownPreset, ValidationError
from .grid import BC, Grid, ScalarField
from .params import ModelParams

_MODE = re.compile(r"^mode:\(?\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*\)?$")
_CALL = re.compile(r"^([a-z-]+)\((.*)\)$")


def _numbers(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UnknownPreset(text) from exc


def _mode_basis(params, modes):
    from .spectral import SpectralBasis, solve_z_eigenvalues

    modes = np.asarray(modes, dtype=int).reshape(-1, 3)
    if np.any(modes[:, 2] < 1) or np.any(modes[:, :2] < 0):
        raise ValidationError("mode", "mode indices must be kx, ky >= 0 and n >= 1")
    mu = solve_z_eigenvalues(params.alpha, params.h, int(modes[:, 2].max())).astype(float)
    p = params
    lam = p.kappa_h * np.pi**2 * ((modes[:, 0] / p.lx) ** 2 + (modes[:, 1] / p.ly) ** 2) + p.kappa_v * mu[modes[:, 2] - 1] ** 2
    return SpectralBasis(params, modes, mu, lam)


def mode_field(params: ModelParams, grid: Grid, kx: int, ky: int, n: int) -> np.ndarray:
    """Eigenmode (kx, ky, n) orthonormalised on ``grid`` (unit discrete L2 norm)."""
    return _mode_basis(params, [(kx, ky, n)]).sample(0, grid)


def analytic_mixture(params: ModelParams, grid: Grid, modes) -> np.ndarray:
    """Sum of amplitude * analytic eigenfunction for rows (kx, ky, n, amplitude)."""
    rows = np.asarray(modes, dtype=float).reshape(-1, 4)
    basis = _mode_basis(params, rows[:, :3].astype(int))
    X, Y, Z = grid.mesh()
    out = np.zeros(grid.shape)
    for k, amp in enumerate(rows[:, 3]):
        out += amp * basis.evaluate(k, X, Y, Z)
    return out


def gaussian_blob(grid: Grid, center=None, width=0.1, amplitude=1.0) -> np.ndarray:
    if center is None:
        center = (0.5 * grid.lx, 0.5 * grid.ly, -0.5 * grid.h)
    if not width > 0:
        raise ValidationError("width", "gaussian width must be positive")
    X, Y, Z = grid.mesh()
    r2 = (X - center[0]) ** 2 + (Y - center[1]) ** 2 + (Z - center[2]) ** 2
    return amplitude * np.exp(-r2 / (2.0 * width**2))


def random_smooth(params: ModelParams, grid: Grid, seed=0, kmax=3, nmax=3, amplitude=1.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    rows = []
    for kx in range(min(kmax, grid.nx - 1) + 1):
        for ky in range(min(kmax, grid.ny - 1) + 1):
            for n in range(1, min(nmax, grid.nz) + 1):
                rows.append([kx, ky, n, 0.0])
    rows = np.array(rows)
    basis = _mode_basis(params, rows[:, :3].astype(int))
    rows[:, 3] = amplitude * rng.standard_normal(len(rows)) / (1.0 + basis.eigenvalues)
    return analytic_mixture(params, grid, rows)


def rough_field(grid: Grid, center=None, radius=0.35, amplitude=1.0, noise=0.0, seed=0) -> np.ndarray:
    if center is None:
        center = (0.5 * grid.lx, 0.5 * grid.ly, -0.5 * grid.h)
    X, Y, Z = grid.mesh()
    r = np.sqrt((X - center[0]) ** 2 + (Y - center[1]) ** 2 + (Z - center[2]) ** 2)
    out = amplitude * np.maximum(0.0, 1.0 - r / radius)
    if noise:
        out = out + noise * amplitude * np.random.default_rng(seed).standard_normal(grid.shape)
    return out


def ic_preset(name: str, grid: Grid, params: ModelParams, **options) -> ScalarField:
    """Build the named field on ``grid``, tagged as temperature-type."""
    name = name.strip()
    if name == "zero":
        values = grid.zeros()
    elif name.startswith("file:"):
        from .snapshot import read_snapshot

        return read_snapshot(name[5:], grid)
    elif (m := _MODE.match(name)) is not None:
        values = options.get("amplitude", 1.0) * mode_field(params, grid, *(int(g) for g in m.groups()))
    elif name == "mixture":
        if "modes" not in options:
            raise ValidationError("modes", "the mixture preset needs a modes list")
        values = analytic_mixture(params, grid, options["modes"])
    elif name == "random-smooth":
        values = random_smooth(
            params,
            grid,
            seed=int(options.get("seed", 0)),
            kmax=int(options.get("kmax", 3)),
            nmax=int(options.get("nmax", 3)),
            amplitude=float(options.get("amplitude", 1.0)),
        )
    else:
        call = _CALL.match(name)
        base = call.group(1) if call else name
        args = _numbers(call.group(2)) if call else []
        if base == "gaussian-blob":
            if args and len(args) != 5:
                raise UnknownPreset(name)
            center = tuple(args[:3]) if args else options.get("center")
            width = args[3] if args else float(options.get("width", 0.1))
            amp = args[4] if args else float(options.get("amplitude", 1.0))
            values = gaussian_blob(grid, center, width, amp)
        elif base == "rough":
            values = rough_field(
                grid,
                center=options.get("center"),
                radius=float(options.get("radius", 0.35)),
                amplitude=float(options.get("amplitude", 1.0)),
                noise=float(options.get("noise", 0.0)),
                seed=int(options.get("seed", 0)),
            )
        else:
            raise UnknownPreset(name)
    return ScalarField(grid, values, BC.TEMPERATURE)
