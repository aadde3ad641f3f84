"""Diagnostic pressure problem, velocity reconstruction and the coercivity checks.

Momentum balance with Rayleigh friction,

    eps*u - f*v + p_x = 0,   eps*v + f*u + p_y = 0,   delta*w + p_z = T,

is solved for (u, v, w) in terms of p, and continuity then gives an elliptic
problem for p.  Its weak form is

    a(p, q) = int A (p_x q_x + p_y q_y) + B (p_y q_x - p_x q_y) + p_z q_z / delta
            = int T q_z / delta,

with A = eps/(eps^2+f^2) and B = f/(eps^2+f^2).  The oblique side-wall
condition and p_z = T on top and bottom are natural boundary conditions.

Discretisation
--------------
Horizontally the form is discretised with bilinear elements on an extended
tensor mesh whose nodes are the cell centres plus nodes on the side walls
(element widths d/2, d, ..., d, d/2).  Wall nodes are genuine unknowns, so
the method is a standard Galerkin scheme and the natural boundary condition
is honoured without extrapolation.  Nodal (trapezoidal) quadrature makes the
symmetric part a five-point stencil, and assembling the Coriolis term from
corner pairs of each element makes its matrix exactly antisymmetric.
Vertically the form is a finite-volume Laplacian on interior faces, weighted
by the nodal dual areas, with T averaged onto the faces.  Temperature enters
the wall nodes by mirroring when it is temperature-type (zero normal
derivative) and by linear extrapolation otherwise.

The operator is a Kronecker sum of a horizontal matrix and the vertical
Neumann Laplacian.  Diagonalising the latter with a DCT-II decouples the
problem into one sparse 2D system per vertical mode.  Factoring those gives an
exact inverse (up to the constant null space), used as the preconditioner of
GMRES ("separable").  Incomplete-LU of the symmetric part ("ilu") and Jacobi
("jacobi") are also available.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import fft

from .errors import NoConvergence, ZeroTemperatureNorm
from .grid import (
    BC,
    Grid,
    ScalarField,
    VelocityField,
    centred_diff,
    norm_l2,
    wall_node_diff,
)
from .params import ModelParams, coriolis_at, coriolis_bounds


# ----------------------------------------------------------------------------
# assembly helpers


def _extension(n: int, mirror: bool) -> sp.csr_matrix:
    """Map n cell values to n+2 node values (wall, cells..., wall)."""
    if mirror:
        rows = [0, n + 1] + list(range(1, n + 1))
        cols = [0, n - 1] + list(range(n))
        vals = [1.0, 1.0] + [1.0] * n
    else:
        rows = [0, 0, n + 1, n + 1] + list(range(1, n + 1))
        cols = [0, 1, n - 1, n - 2] + list(range(n))
        vals = [1.5, -0.5, 1.5, -0.5] + [1.0] * n
    return sp.csr_matrix((vals, (rows, cols)), shape=(n + 2, n))


def _node_diff(widths: np.ndarray) -> sp.csr_matrix:
    m = widths.size + 1
    inv = 1.0 / widths
    return sp.diags([-inv, inv], [0, 1], shape=(m - 1, m), format="csr")


def _widths(n: int, d: float) -> np.ndarray:
    return np.r_[0.5 * d, np.full(n - 1, d), 0.5 * d]


def _dual(widths: np.ndarray) -> np.ndarray:
    return 0.5 * (np.r_[0.0, widths] + np.r_[widths, 0.0])


def horizontal_matrices(params: ModelParams, grid: Grid):
    """Return (S, K, E, W) on the (nx+2)*(ny+2) horizontal nodes.

    S is the symmetric A-weighted stiffness, K the antisymmetric Coriolis part,
    E the plain gradient energy (A = 1), and W the nodal dual areas.
    """
    nx, ny = grid.nx, grid.ny
    mx, my = nx + 2, ny + 2
    hx, hy = _widths(nx, grid.dx), _widths(ny, grid.dy)
    y_nodes = np.r_[0.0, grid.y, grid.ly]
    f = coriolis_at(params, y_nodes)
    denom = params.epsilon**2 + f**2
    a_node = params.epsilon / denom
    b_node = f / denom

    gx = sp.kron(_node_diff(hx), sp.identity(my), format="csr")
    gy = sp.kron(sp.identity(mx), _node_diff(hy), format="csr")
    area_x = (hx[:, None] * _dual(hy)[None, :]).ravel()
    area_y = (_dual(hx)[:, None] * hy[None, :]).ravel()
    ax = np.broadcast_to(a_node[None, :], (mx - 1, my)).ravel()
    ay = np.broadcast_to((0.5 * (a_node[1:] + a_node[:-1]))[None, :], (mx, my - 1)).ravel()

    s = gx.T @ sp.diags(area_x * ax) @ gx + gy.T @ sp.diags(area_y * ay) @ gy
    e = gx.T @ sp.diags(area_x) @ gx + gy.T @ sp.diags(area_y) @ gy

    # Coriolis coupling: at each of the four corners of element (a, b) one
    # x-edge derivative meets one y-edge derivative, weighted by B there.
    ea, eb = np.meshgrid(np.arange(mx - 1), np.arange(my - 1), indexing="ij")
    ea, eb = ea.ravel(), eb.ravel()
    w = 0.25 * hx[ea] * hy[eb]
    xe0, xe1 = ea * my + eb, ea * my + eb + 1
    ye0, ye1 = ea * (my - 1) + eb, (ea + 1) * (my - 1) + eb
    rows = np.concatenate([xe0, xe0, xe1, xe1])
    cols = np.concatenate([ye0, ye1, ye0, ye1])
    vals = np.concatenate([w * b_node[eb], w * b_node[eb], w * b_node[eb + 1], w * b_node[eb + 1]])
    c = sp.csr_matrix((vals, (rows, cols)), shape=((mx - 1) * my, mx * (my - 1)))
    k = gx.T @ c @ gy - gy.T @ c.T @ gx

    weights = (_dual(hx)[:, None] * _dual(hy)[None, :]).ravel()
    return s.tocsr(), k.tocsr(), e.tocsr(), weights


def _vertical_matrices(grid: Grid):
    nz, dz = grid.nz, grid.dz
    gz = sp.diags([-1.0 / dz, 1.0 / dz], [0, 1], shape=(nz - 1, nz), format="csr")
    az = sp.diags([0.5, 0.5], [0, 1], shape=(nz - 1, nz), format="csr")
    return gz, az


def extend_to_nodes(values: np.ndarray, grid: Grid, mirror: bool) -> np.ndarray:
    """Cell array (nx, ny, nz) -> node array (nx+2, ny+2, nz)."""
    v = np.asarray(values).reshape(grid.shape)
    if mirror:
        return np.pad(v, ((1, 1), (1, 1), (0, 0)), mode="edge")
    out = np.empty((grid.nx + 2, grid.ny + 2, grid.nz))
    out[1:-1, 1:-1] = v
    out[0, 1:-1] = 1.5 * v[0] - 0.5 * v[1]
    out[-1, 1:-1] = 1.5 * v[-1] - 0.5 * v[-2]
    out[:, 0] = 1.5 * out[:, 1] - 0.5 * out[:, 2]
    out[:, -1] = 1.5 * out[:, -2] - 0.5 * out[:, -3]
    return out


# ----------------------------------------------------------------------------
# system and solution types


@dataclass
class PressureSolution:
    p: ScalarField
    iterations: int
    residual: float
    history: list = field(default_factory=list)


@dataclass
class PressureSystem:
    """Assembled pressure operator, right-hand-side builder and solver settings.

    ``matrix`` acts on node values shaped (nx+2, ny+2, nz) in C order: the
    cell centres plus the side-wall nodes.  Constants span its null space; the
    gauge is fixed by removing the cell-volume mean.
    """

    params: ModelParams
    grid: Grid
    matrix: sp.csr_matrix
    rhs_matrix: sp.csr_matrix
    horizontal: sp.csr_matrix
    horizontal_energy: sp.csr_matrix
    node_weights: np.ndarray
    tol: float = 1e-10
    restart: int = 50
    maxiter: int = 10_000
    preconditioner: str = "separable"
    gauge: str = "zero-mean"
    _precond: object = field(default=None, repr=False)

    @property
    def node_shape(self):
        g = self.grid
        return (g.nx + 2, g.ny + 2, g.nz)

    def temperature_nodes(self, T) -> np.ndarray:
        if isinstance(T, ScalarField):
            return extend_to_nodes(T.values, self.grid, mirror=T.bc is BC.TEMPERATURE)
        return extend_to_nodes(T, self.grid, mirror=True)

    def rhs(self, T) -> np.ndarray:
        return self.rhs_matrix @ self.temperature_nodes(T).ravel()

    def symmetric_part(self) -> sp.csr_matrix:
        return ((self.matrix + self.matrix.T) * 0.5).tocsr()

    def _node_values(self, p) -> np.ndarray:
        if isinstance(p, ScalarField):
            if p.nodes is not None:
                return p.nodes
            return extend_to_nodes(p.values, self.grid, mirror=False)
        return np.asarray(p).reshape(self.node_shape)

    def gradient_energy(self, p) -> float:
        """Discrete integral of |grad_h p|^2 in the quadrature of the operator."""
        v = self._node_values(p).reshape(-1, self.grid.nz)
        return float(np.sum(v * (self.horizontal_energy @ v)) * self.grid.dz)

    def vertical_energy(self, p) -> float:
        """Discrete integral of p_z^2 over interior faces, dual-area weighted."""
        g = self.grid
        v = self._node_values(p).reshape(-1, g.nz)
        dz2 = (np.diff(v, axis=1) / g.dz) ** 2
        return float(np.sum(self.node_weights[:, None] * dz2) * g.dz)

    def to_field(self, nodes: np.ndarray) -> ScalarField:
        nodes = np.asarray(nodes).reshape(self.node_shape)
        return ScalarField(self.grid, nodes[1:-1, 1:-1, :], BC.PRESSURE, nodes)

    # -- preconditioners -------------------------------------------------

    def preconditioner_operator(self) -> spla.LinearOperator:
        if self._precond is None:
            kind = self.preconditioner
            if kind == "separable":
                self._precond = _SeparableInverse(self)
            elif kind == "ilu":
                n = self.matrix.shape[0]
                sym = self.symmetric_part() + 1e-12 * sp.identity(n)
                self._precond = spla.spilu(sym.tocsc(), drop_tol=1e-4, fill_factor=10)
            elif kind == "jacobi":
                d = self.matrix.diagonal()
                self._precond = _Jacobi(np.where(d != 0, 1.0 / d, 1.0))
            else:
                raise ValueError(f"unknown preconditioner {kind!r}")
        n = self.matrix.shape[0]
        return spla.LinearOperator((n, n), matvec=self._precond.solve, dtype=float)


class _Jacobi:
    def __init__(self, inv_diag):
        self.inv_diag = inv_diag

    def solve(self, r):
        return self.inv_diag * r


class _SeparableInverse:
    """Exact inverse of the pressure matrix on the complement of constants.

    The DCT-II diagonalises the vertical Neumann Laplacian; mode k then
    solves (H + sigma_k W) x_k = r_k with H the horizontal matrix and W the
    dual areas.  Mode 0 is singular and is bordered with the constant vector.
    """

    def __init__(self, system: PressureSystem):
        g = system.grid
        self.nz, self.dz = g.nz, g.dz
        h2 = system.horizontal.tocsc()
        self.nh = h2.shape[0]
        k = np.arange(g.nz)
        sigma = (4.0 / g.dz**2) * np.sin(np.pi * k / (2 * g.nz)) ** 2 / system.params.delta
        wdiag = sp.diags(system.node_weights, format="csc")
        ones = sp.csc_matrix(np.ones((self.nh, 1)))
        self.mode0 = spla.splu(sp.bmat([[h2, ones], [ones.T, None]], format="csc"))
        self.modes = [spla.splu((h2 + s * wdiag).tocsc()) for s in sigma[1:]]

    def solve(self, r):
        rhat = fft.dct(np.asarray(r).reshape(self.nh, self.nz), type=2, norm="ortho", axis=1) / self.dz
        xhat = np.empty_like(rhat)
        xhat[:, 0] = self.mode0.solve(np.r_[rhat[:, 0], 0.0])[: self.nh]
        for k, lu in enumerate(self.modes, start=1):
            xhat[:, k] = lu.solve(rhat[:, k])
        return fft.idct(xhat, type=2, norm="ortho", axis=1).ravel()


def assemble_pressure_system(
    params: ModelParams,
    grid: Grid,
    tol: float = 1e-10,
    restart: int = 50,
    maxiter: int = 10_000,
    preconditioner: str = "separable",
) -> PressureSystem:
    """Assemble the discrete weak form on ``grid``.

    matrix = kron(S + K, dz I) + kron(W, dz Gz^T Gz / delta) and
    rhs    = kron(W, dz Gz^T Az / delta) @ T_nodes.
    """
    s2, k2, e2, weights = horizontal_matrices(params, grid)
    gz, az = _vertical_matrices(grid)
    dz = grid.dz
    h2 = (s2 + k2).tocsr()
    wdiag = sp.diags(weights)
    vert = (dz / params.delta) * (gz.T @ gz)
    matrix = sp.kron(h2, dz * sp.identity(grid.nz)) + sp.kron(wdiag, vert)
    rhs = sp.kron(wdiag, (dz / params.delta) * (gz.T @ az))
    return PressureSystem(
        params=params,
        grid=grid,
        matrix=matrix.tocsr(),
        rhs_matrix=rhs.tocsr(),
        horizontal=h2,
        horizontal_energy=e2,
        node_weights=weights,
        tol=tol,
        restart=restart,
        maxiter=maxiter,
        preconditioner=preconditioner,
    )


def _gmres(system, b, x0, history, rtol, atol):
    return spla.gmres(
        system.matrix,
        b,
        x0=x0,
        rtol=rtol,
        atol=atol,
        restart=system.restart,
        maxiter=max(1, system.maxiter // system.restart),
        M=system.preconditioner_operator(),
        callback=history.append,
        callback_type="pr_norm",
    )


def solve_pressure(system: PressureSystem, T, x0=None) -> PressureSolution:
    """Solve for the zero-mean pressure driven by temperature ``T``."""
    b = system.rhs(T)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return PressureSolution(system.to_field(np.zeros(system.node_shape)), 0, 0.0, [])
    guess = None if x0 is None else system._node_values(x0).ravel()
    history: list = []
    residual = np.inf
    if system.preconditioner == "separable":
        # the separable preconditioner is an exact inverse: try it as a direct
        # solve and only hand over to GMRES if roundoff leaves it above tol
        sol = system.preconditioner_operator().matvec(b)
        residual = float(np.linalg.norm(system.matrix @ sol - b) / bnorm)
        history.append(residual)
        if not residual <= system.tol:
            guess = sol
    if not residual <= system.tol:
        sol, _ = _gmres(system, b, guess, history, system.tol, 0.0)
        residual = float(np.linalg.norm(system.matrix @ sol - b) / bnorm)
    if not np.isfinite(residual) or residual > system.tol:
        # a restart can stall just above the tolerance; refine once from here
        corr, _ = _gmres(system, b - system.matrix @ sol, None, history, 0.1, 0.5 * system.tol * bnorm)
        sol = sol + corr
        residual = float(np.linalg.norm(system.matrix @ sol - b) / bnorm)
        if not np.isfinite(residual) or residual > system.tol:
            raise NoConvergence(len(history), residual, "pressure GMRES")
    nodes = sol.reshape(system.node_shape)
    nodes = nodes - nodes[1:-1, 1:-1, :].mean()
    return PressureSolution(system.to_field(nodes), len(history), residual, [float(h) for h in history])


# ----------------------------------------------------------------------------
# velocity and divergence


def pressure_gradient(p, grid: Grid | None = None):
    """Cell-centred pressure gradient.

    With wall values available the horizontal derivatives use them (the wall
    node sits half a cell away); otherwise, and always in z, the boundary
    cells use quadratic one-sided extrapolation.
    """
    if isinstance(p, ScalarField):
        grid = p.grid
        v, nodes = p.values, p.nodes
    else:
        v, nodes = np.asarray(p).reshape(grid.shape), None
    if nodes is not None:
        px = wall_node_diff(nodes[:, 1:-1, :], 0, grid.dx)
        py = wall_node_diff(nodes[1:-1, :, :], 1, grid.dy)
    else:
        px = centred_diff(v, 0, grid.dx, "extrap", "extrap")
        py = centred_diff(v, 1, grid.dy, "extrap", "extrap")
    pz = centred_diff(v, 2, grid.dz, "extrap", "extrap")
    return px, py, pz


def diagnose_velocity(params: ModelParams, p, T) -> VelocityField:
    """Velocity from the friction/Coriolis/hydrostatic balance."""
    grid = p.grid if isinstance(p, ScalarField) else T.grid
    tv = T.values if isinstance(T, ScalarField) else np.asarray(T).reshape(grid.shape)
    px, py, pz = pressure_gradient(p, grid)
    f = coriolis_at(params, grid.y)[None, :, None]
    eps = params.epsilon
    denom = eps**2 + f**2
    u = -(eps * px + f * py) / denom
    v = (f * px - eps * py) / denom
    w = (tv - pz) / params.delta
    return VelocityField(grid, u, v, w)


def discrete_divergence(vel: VelocityField) -> ScalarField:
    """Centred divergence with one-sided extrapolation at the walls."""
    g = vel.grid
    div = (
        centred_diff(vel.u, 0, g.dx, "extrap", "extrap")
        + centred_diff(vel.v, 1, g.dy, "extrap", "extrap")
        + centred_diff(vel.w, 2, g.dz, "extrap", "extrap")
    )
    return ScalarField(g, div, BC.FREE)


# ----------------------------------------------------------------------------
# estimate checks


@dataclass
class CoercivityCheck:
    lhs: float
    rhs: float
    slack: float = 0.02

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs * (1.0 + self.slack)


def check_coercivity_estimate(system: PressureSystem, p, T, slack: float = 0.02) -> CoercivityCheck:
    """Compare eps/(eps^2+F1^2)|grad_h p|^2 + |p_z|^2/(2 delta) with |T|^2/(2 delta).

    The gradient terms use the operator's own quadrature, so for an exact
    discrete solution and a temperature-type T the inequality holds exactly.
    """
    params = system.params
    f1 = coriolis_bounds(params).f_max
    a_min = params.epsilon / (params.epsilon**2 + f1**2)
    lhs = a_min * system.gradient_energy(p) + system.vertical_energy(p) / (2.0 * params.delta)
    rhs = norm_l2(T, system.grid) ** 2 / (2.0 * params.delta)
    return CoercivityCheck(lhs, rhs, slack)


@dataclass
class VelocityRatio:
    ratio: float
    u_norm: float
    v_norm: float
    w_norm: float
    t_norm: float


def check_velocity_bound(params: ModelParams, vel: VelocityField, T) -> VelocityRatio:
    """Monitor (|eps u| + |eps v| + |delta w|) / |T| in L2; no threshold."""
    g = vel.grid
    tn = norm_l2(T, g)
    if tn == 0.0:
        raise ZeroTemperatureNorm("velocity ratio needs a nonzero temperature field")
    un, vn, wn = (norm_l2(c, g) for c in (vel.u, vel.v, vel.w))
    ratio = (params.epsilon * (un + vn) + params.delta * wn) / tn
    return VelocityRatio(ratio, un, vn, wn, tn)
