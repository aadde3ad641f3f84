"""Run the same mode mixture through both engines and compare at t_end.

    python demos/compare_engines.py [grid_n] [t_end]

The grid engine uses the resolution given on the command line (default 32);
the modal engine uses demos/galerkin.toml.
"""
import sys
from dataclasses import replace
from pathlib import Path

from pgsolve.config import parse_config
from pgsolve.grid import Grid, norm_l2
from pgsolve.runner import run
from pgsolve.spectral import reconstruct_values
from pgsolve.stepper import StepperConfig

here = Path(__file__).parent
n = int(sys.argv[1]) if len(sys.argv) > 1 else 32
t_end = float(sys.argv[2]) if len(sys.argv) > 2 else 0.5

modal = replace(parse_config(here / "galerkin.toml"), t_end=t_end)
grid = replace(
    modal,
    grid=Grid.for_params(modal.params, n),
    engine="grid",
    stepper=StepperConfig(modal.stepper.dt),
)

rm = run(modal)
rg = run(grid)
T0 = grid.initial.build(grid.grid, grid.params)
Tm = reconstruct_values(rm.modal.basis, rm.modal.coeffs[-1], grid.grid)
diff = norm_l2(Tm - rg.final_T.values, grid.grid) / norm_l2(T0)

print(f"modal engine: {rm.stats['modes']} modes, {rm.stats['wall_seconds']:.1f} s")
print(f"grid engine:  {n}^3, {rg.stats['wall_seconds']:.1f} s")
print(f"|T0| = {norm_l2(T0):.4f}, |T(t_end)| = {norm_l2(rg.final_T):.4f}")
print(f"relative difference at t = {t_end}: {diff:.2e}")
