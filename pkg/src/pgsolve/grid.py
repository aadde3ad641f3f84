"""Cell-centred grid on the box, boundary-aware differences, quadrature and norms.

Arrays are shaped (nx, ny, nz) in C order, so z is the fastest index.  Index
k = 0 is the bottom cell and k = nz-1 the cell next to the surface z = 0.

Boundary conditions enter through ghost values.  A ghost on either end of an
axis is either a multiple ``s`` of the adjacent cell value (mirror: s = 1,
odd reflection: s = -1, Robin: s = (1 - a dz/2)/(1 + a dz/2)) or the string
``"extrap"`` for one-sided polynomial extrapolation.  With multiplicative
ghosts the centred difference D(s) satisfies D(s)^T = -D(-s) in the
midpoint inner product, which is what makes the skew advection form exact.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import UntaggedField, ValidationError
from .params import ModelParams


class BC(str, enum.Enum):
    """Boundary-condition families attached to a scalar field."""

    TEMPERATURE = "temperature"  # no flux on walls and bottom, Robin at the surface
    PRESSURE = "pressure"  # natural condition of the pressure problem
    FREE = "free"  # no condition; one-sided extrapolation


@dataclass(frozen=True)
class Grid:
    nx: int
    ny: int
    nz: int
    lx: float = 1.0
    ly: float = 1.0
    h: float = 1.0

    def __post_init__(self):
        for name in ("nx", "ny", "nz"):
            n = getattr(self, name)
            if int(n) != n or n < 2:
                raise ValidationError(name, f"{name} must be an integer >= 2 (got {n!r})")
            object.__setattr__(self, name, int(n))
        for name in ("lx", "ly", "h"):
            if not float(getattr(self, name)) > 0:
                raise ValidationError(name, f"{name} must be positive")
            object.__setattr__(self, name, float(getattr(self, name)))

    @classmethod
    def for_params(cls, params: ModelParams, nx: int, ny: int | None = None, nz: int | None = None):
        ny = nx if ny is None else ny
        nz = nx if nz is None else nz
        return cls(nx, ny, nz, params.lx, params.ly, params.h)

    @property
    def shape(self):
        return (self.nx, self.ny, self.nz)

    @property
    def size(self):
        return self.nx * self.ny * self.nz

    @property
    def dx(self):
        return self.lx / self.nx

    @property
    def dy(self):
        return self.ly / self.ny

    @property
    def dz(self):
        return self.h / self.nz

    @property
    def cell_volume(self):
        return self.dx * self.dy * self.dz

    @property
    def x(self):
        return (np.arange(self.nx) + 0.5) * self.dx

    @property
    def y(self):
        return (np.arange(self.ny) + 0.5) * self.dy

    @property
    def z(self):
        return -self.h + (np.arange(self.nz) + 0.5) * self.dz

    def mesh(self):
        """Broadcastable coordinate arrays (x[:,None,None], y[None,:,None], z[None,None,:])."""
        return self.x[:, None, None], self.y[None, :, None], self.z[None, None, :]

    def zeros(self):
        return np.zeros(self.shape)

    def matches(self, params: ModelParams) -> bool:
        return np.allclose((self.lx, self.ly, self.h), (params.lx, params.ly, params.h))


@dataclass
class ScalarField:
    """Cell-centred values plus the boundary-condition family they obey."""

    grid: Grid
    values: np.ndarray
    bc: BC | None = BC.TEMPERATURE
    # pressure fields also carry values on the side-wall nodes, shape (nx+2, ny+2, nz)
    nodes: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.size != self.grid.size:
            raise ValidationError("values", f"expected {self.grid.size} values, got {v.size}")
        self.values = np.ascontiguousarray(v.reshape(self.grid.shape))
        if self.bc is not None:
            self.bc = BC(self.bc)

    def copy(self):
        nodes = None if self.nodes is None else self.nodes.copy()
        return ScalarField(self.grid, self.values.copy(), self.bc, nodes)


@dataclass
class VelocityField:
    grid: Grid
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray

    @classmethod
    def zeros(cls, grid: Grid):
        return cls(grid, grid.zeros(), grid.zeros(), grid.zeros())

    def max_abs(self) -> float:
        return float(max(np.abs(self.u).max(), np.abs(self.v).max(), np.abs(self.w).max()))


def robin_factor(alpha: float, dz: float) -> float:
    """Ghost/inner ratio that makes the face value satisfy dT/dz + alpha T = 0."""
    return (1.0 - 0.5 * alpha * dz) / (1.0 + 0.5 * alpha * dz)


# ----------------------------------------------------------------------------
# low-level differences on raw arrays


def _ghosts(a, lo, hi):
    """Ghost slabs below index 0 and above index n-1 along axis 0."""
    n = a.shape[0]
    if isinstance(lo, str):
        g_lo = 3.0 * a[0] - 3.0 * a[1] + a[2] if n >= 3 else 2.0 * a[0] - a[1]
    else:
        g_lo = lo * a[0]
    if isinstance(hi, str):
        g_hi = 3.0 * a[-1] - 3.0 * a[-2] + a[-3] if n >= 3 else 2.0 * a[-1] - a[-2]
    else:
        g_hi = hi * a[-1]
    return g_lo, g_hi


def centred_diff(a, axis, d, lo=1.0, hi=1.0):
    """Second-order centred first derivative of ``a`` along ``axis``."""
    a = np.moveaxis(np.asarray(a), axis, 0)
    out = np.empty_like(a)
    g_lo, g_hi = _ghosts(a, lo, hi)
    inv = 0.5 / d
    out[1:-1] = (a[2:] - a[:-2]) * inv
    out[0] = (a[1] - g_lo) * inv
    out[-1] = (g_hi - a[-2]) * inv
    return np.moveaxis(out, 0, axis)


def second_diff(a, axis, d, lo=1.0, hi=1.0):
    """Three-point second derivative with multiplicative ghosts."""
    a = np.moveaxis(np.asarray(a), axis, 0)
    out = np.empty_like(a)
    inv = 1.0 / (d * d)
    out[1:-1] = (a[2:] - 2.0 * a[1:-1] + a[:-2]) * inv
    out[0] = (a[1] - (2.0 - lo) * a[0]) * inv
    out[-1] = (a[-2] - (2.0 - hi) * a[-1]) * inv
    return np.moveaxis(out, 0, axis)


def wall_node_diff(nodes, axis, d):
    """Cell-centre derivative from an array that includes wall nodes along ``axis``.

    ``nodes`` has n+2 entries along ``axis``: the wall at 0, the n cell
    centres, the wall at L.  The first and last cells see a neighbour at
    distance d/2, which the nonuniform three-point formula accounts for.
    """
    a = np.moveaxis(np.asarray(nodes), axis, 0)
    out = np.empty((a.shape[0] - 2,) + a.shape[1:])
    out[1:-1] = (a[3:-1] - a[1:-3]) * (0.5 / d)
    out[0] = (-4.0 / 3.0 * a[0] + a[1] + a[2] / 3.0) / d
    out[-1] = (4.0 / 3.0 * a[-1] - a[-2] - a[-3] / 3.0) / d
    return np.moveaxis(out, 0, axis)


def face_diff(a, axis, d):
    """Differences across the interior faces normal to ``axis``."""
    return np.diff(a, axis=axis) / d


def ghost_factors(bc: BC, params: ModelParams | None, grid: Grid):
    """Per-axis (lo, hi) ghost specifications for a tagged field."""
    if bc is None:
        raise UntaggedField("field has no boundary-condition tag")
    bc = BC(bc)
    if bc is BC.TEMPERATURE:
        if params is None:
            raise ValueError("temperature-type ghosts need the Robin coefficient")
        r = robin_factor(params.alpha, grid.dz)
        return ((1.0, 1.0), (1.0, 1.0), (1.0, r))
    return (("extrap", "extrap"),) * 3


def surface_trace(values: np.ndarray) -> np.ndarray:
    """Value at z = 0 by linear extrapolation from the two top cell layers."""
    return 1.5 * values[..., -1] - 0.5 * values[..., -2]


# ----------------------------------------------------------------------------
# public field operations


def _vals(f):
    return f.values if isinstance(f, ScalarField) else np.asarray(f)


def integrate(field: ScalarField, grid: Grid | None = None) -> float:
    grid = field.grid if isinstance(field, ScalarField) else grid
    return float(np.sum(_vals(field)) * grid.cell_volume)


def inner(a, b, grid: Grid) -> float:
    return float(np.vdot(_vals(a), _vals(b)) * grid.cell_volume)


def norm_l2(field, grid: Grid | None = None) -> float:
    grid = field.grid if isinstance(field, ScalarField) else grid
    v = _vals(field)
    return float(np.sqrt(np.vdot(v, v) * grid.cell_volume))


def norm_lp(field, p: float, grid: Grid | None = None) -> float:
    grid = field.grid if isinstance(field, ScalarField) else grid
    v = np.abs(_vals(field))
    if p == 2:
        return norm_l2(v, grid)
    scale = v.max() if v.size else 0.0
    if scale == 0.0:
        return 0.0
    # scale first so that |v|^6 cannot overflow for large fields
    return float(scale * (np.sum((v / scale) ** p) * grid.cell_volume) ** (1.0 / p))


def surface_norm_l2(field, grid: Grid | None = None) -> float:
    grid = field.grid if isinstance(field, ScalarField) else grid
    tr = surface_trace(_vals(field))
    return float(np.sqrt(np.vdot(tr, tr) * grid.dx * grid.dy))


def gradient(field: ScalarField, params: ModelParams | None = None):
    """Cell-centred (d/dx, d/dy, d/dz) honouring the field's boundary tag.

    For temperature-type fields the surface layer's z-derivative is the mean
    of the Robin face derivative and the first interior face derivative.
    """
    if field.bc is None:
        raise UntaggedField("gradient needs a boundary-condition tag")
    g = field.grid
    (xl, xh), (yl, yh), (zl, zh) = ghost_factors(field.bc, params, g)
    v = field.values
    if field.bc is BC.PRESSURE and field.nodes is not None:
        comps = (
            wall_node_diff(field.nodes[:, 1:-1, :], 0, g.dx),
            wall_node_diff(field.nodes[1:-1, :, :], 1, g.dy),
            centred_diff(v, 2, g.dz, zl, zh),
        )
        return tuple(ScalarField(g, c, BC.FREE) for c in comps)
    comps = (
        centred_diff(v, 0, g.dx, xl, xh),
        centred_diff(v, 1, g.dy, yl, yh),
        centred_diff(v, 2, g.dz, zl, zh),
    )
    return tuple(ScalarField(g, c, BC.FREE) for c in comps)


def gradient_energy(values: np.ndarray, grid: Grid):
    """Face-based squared gradient norms (|d_x|^2, |d_y|^2, |d_z|^2) over interior faces."""
    vol = grid.cell_volume
    ex = np.sum(face_diff(values, 0, grid.dx) ** 2) * vol
    ey = np.sum(face_diff(values, 1, grid.dy) ** 2) * vol
    ez = np.sum(face_diff(values, 2, grid.dz) ** 2) * vol
    return float(ex), float(ey), float(ez)


def norm_v(field, params: ModelParams, grid: Grid | None = None) -> float:
    """Energy norm built from the diffusivities and the surface relaxation term."""
    if isinstance(field, ScalarField):
        if field.bc is not BC.TEMPERATURE:
            raise UntaggedField("norm_v is defined for temperature-type fields")
        grid = field.grid
    v = _vals(field)
    ex, ey, ez = gradient_energy(v, grid)
    tr = surface_trace(v)
    surf = float(np.vdot(tr, tr) * grid.dx * grid.dy)
    total = params.kappa_h * (ex + ey) + params.kappa_v * (ez + params.alpha * surf)
    return float(np.sqrt(max(total, 0.0)))


@dataclass
class PoincareCheck:
    """Both sides of the depth Poincare inequality in L2 and its cubic (L6) form."""

    lhs: float
    rhs: float
    lhs6: float
    rhs6: float
    slack: float = 0.02
    holds: bool = field(init=False)
    holds6: bool = field(init=False)

    def __post_init__(self):
        self.holds = self.lhs <= (1.0 + self.slack) * self.rhs
        self.holds6 = self.lhs6 <= (1.0 + self.slack) * self.rhs6


def _poincare_sides(v, grid):
    h = grid.h
    lhs = float(np.vdot(v, v) * grid.cell_volume)
    tr = surface_trace(v)
    surf = float(np.vdot(tr, tr) * grid.dx * grid.dy)
    dz = face_diff(v, 2, grid.dz)
    rhs = 2.0 * h * surf + h * h * float(np.sum(dz * dz) * grid.cell_volume)
    return lhs, rhs


def check_poincare(field, grid: Grid | None = None, slack: float = 0.02) -> PoincareCheck:
    """||psi||^2 <= 2h ||psi(0)||^2_M + h^2 ||psi_z||^2, and the same applied to psi^3.

    The cubic form bounds ||psi||_6^6 by 2h ||psi^3(0)||^2_M + h^2 ||(psi^3)_z||^2,
    where ||(psi^3)_z||^2 = 9 ||psi^2 psi_z||^2.
    """
    if isinstance(field, ScalarField):
        if field.bc is None:
            raise UntaggedField("check_poincare needs a tagged field")
        grid = field.grid
    v = _vals(field)
    lhs, rhs = _poincare_sides(v, grid)
    scale = np.abs(v).max() if v.size else 0.0
    if scale > 0:
        c = (v / scale) ** 3
        l6, r6 = _poincare_sides(c, grid)
        l6, r6 = l6 * scale**6, r6 * scale**6
    else:
        l6 = r6 = 0.0
    return PoincareCheck(lhs, rhs, l6, r6, slack)
