"""Eigenbasis of the diffusion operator on the box and the modal Galerkin engine.

The eigenfunctions are products cos(kx pi x/lx) cos(ky pi y/ly) cos(mu_n (z+h))
where mu_n are the positive roots of mu tan(mu h) = alpha (surface Robin
condition, no flux at the bottom).  Eigenvalues are
kappa_h pi^2 (kx^2/lx^2 + ky^2/ly^2) + kappa_v mu_n^2.

On a cell-centred grid the horizontal cosines are exactly orthonormal under
midpoint quadrature (they are DCT-II vectors).  The Robin cosines are not:
their discrete Gram matrix differs from the identity by O(dz^2).  Sampling
therefore applies a symmetric (Loewdin) orthonormalisation to the vertical
factors.  That is the smallest change that makes the sampled basis exactly
orthonormal, so projection and reconstruction are exact inverses on the span.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BlowUp, ValidationError
from .grid import BC, Grid, ScalarField
from .params import ModelParams
from .pressure import PressureSystem, assemble_pressure_system, diagnose_velocity, solve_pressure
from .stepper import advection

BLOWUP_LIMIT = 1e12


# ----------------------------------------------------------------------------
# vertical Robin roots


def solve_z_eigenvalues(alpha: float, h: float, count: int) -> np.ndarray:
    """First ``count`` positive roots of mu tan(mu h) = alpha, as ``np.longdouble``.

    Root n is written mu = ((n-1) pi + theta)/h with theta in (0, pi/2), and
    g(theta) = ((n-1) pi + theta) sin(theta) - alpha h cos(theta) is solved
    instead.  g has no pole and increases monotonically from -alpha h to
    (n - 1/2) pi, so bisection is safe.  A few Newton steps then polish the
    result.

    The arithmetic is extended precision.  In float64 one ulp of mu moves
    the residual by about ulp(mu) * mu * h, which is already ~1e-11 for the
    50th root at h = 0.5, so float64 roots cannot be accurate to 1e-12 in
    the residual.  Callers that only need float64 can cast.
    """
    if not alpha > 0 or not h > 0:
        raise ValidationError("alpha" if not alpha > 0 else "h", "alpha and h must be positive")
    if count < 1:
        raise ValueError("count must be >= 1")
    ld = np.longdouble
    pi = ld(4) * np.arctan(ld(1))
    base = np.arange(count, dtype=ld) * pi
    ah = ld(alpha) * ld(h)

    def g(theta):
        return (base + theta) * np.sin(theta) - ah * np.cos(theta)

    lo = np.zeros(count, dtype=ld)
    hi = np.full(count, pi / 2, dtype=ld)
    eps = np.finfo(ld).eps
    for _ in range(200):
        mid = (lo + hi) / 2
        neg = g(mid) < 0
        lo = np.where(neg, mid, lo)
        hi = np.where(neg, hi, mid)
        if np.all(hi - lo <= 4 * eps * hi):
            break
    theta = (lo + hi) / 2
    for _ in range(3):
        dg = np.sin(theta) + (base + theta + ah) * np.cos(theta)
        theta = np.clip(theta - g(theta) / dg, lo, hi)
    return (base + theta) / ld(h)


def robin_residual(mu, alpha: float, h: float) -> np.ndarray:
    """|mu tan(mu h) - alpha| in the precision of ``mu``."""
    mu = np.asarray(mu)
    return np.abs(mu * np.tan(mu * mu.dtype.type(h)) - mu.dtype.type(alpha))


# ----------------------------------------------------------------------------
# basis


def _orthonormal_rows(samples: np.ndarray, d: float) -> np.ndarray:
    """Symmetric orthonormalisation of sampled 1D functions (rows) under sum(.)*d."""
    gram = samples @ samples.T * d
    vals, vecs = np.linalg.eigh(gram)
    if vals.min() <= 1e-10 * vals.max():
        raise ValidationError("grid", "basis functions are not resolvable on this grid")
    inv_sqrt = (vecs / np.sqrt(vals)) @ vecs.T
    return inv_sqrt @ samples


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """The m lowest eigenmodes, ordered by eigenvalue then by (kx, ky, n)."""

    params: ModelParams
    modes: np.ndarray  # (m, 3) integer (kx, ky, n), n starting at 1
    mu: np.ndarray  # mu_n for n = 1..n_max
    eigenvalues: np.ndarray
    _samples: dict = field(default_factory=dict, repr=False)

    @property
    def size(self) -> int:
        return int(self.modes.shape[0])

    @property
    def lambda1(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def max_indices(self):
        return int(self.modes[:, 0].max()), int(self.modes[:, 1].max()), int(self.modes[:, 2].max())

    def normalisation(self, k: int) -> float:
        """Analytic L2 normalisation constant of mode k."""
        kx, ky, n = self.modes[k]
        p = self.params
        cx = (2.0 - (kx == 0)) / p.lx
        cy = (2.0 - (ky == 0)) / p.ly
        mu = self.mu[n - 1]
        cz = 1.0 / (0.5 * p.h + math.sin(2 * mu * p.h) / (4 * mu))
        return math.sqrt(cx * cy * cz)

    def evaluate(self, k: int, x, y, z):
        """Analytic value of mode k at points (x, y, z)."""
        kx, ky, n = self.modes[k]
        p = self.params
        return (
            self.normalisation(k)
            * np.cos(kx * np.pi * np.asarray(x) / p.lx)
            * np.cos(ky * np.pi * np.asarray(y) / p.ly)
            * np.cos(self.mu[n - 1] * (np.asarray(z) + p.h))
        )

    def min_grid(self, factor: float = 1.5):
        """Smallest grid counts that resolve the modes with the given dealiasing factor."""
        kx, ky, n = self.max_indices
        return tuple(max(4, int(math.ceil(factor * (k + 1)))) for k in (kx, ky, n))

    def factors(self, grid: Grid):
        """Orthonormal sampled 1D factors (X, Y, Z) on ``grid``."""
        key = grid
        if key not in self._samples:
            kx, ky, nmax = self.max_indices
            if kx >= grid.nx or ky >= grid.ny or nmax > grid.nz:
                raise ValidationError("grid", f"grid {grid.shape} cannot resolve modes up to {(kx, ky, nmax)}")
            p = self.params
            xs = np.array([math.sqrt((2.0 - (k == 0)) / p.lx) * np.cos(k * np.pi * grid.x / p.lx) for k in range(kx + 1)])
            ys = np.array([math.sqrt((2.0 - (k == 0)) / p.ly) * np.cos(k * np.pi * grid.y / p.ly) for k in range(ky + 1)])
            zs = np.array([np.cos(self.mu[n] * (grid.z + p.h)) for n in range(nmax)])
            self._samples[key] = (
                _orthonormal_rows(xs, grid.dx),
                _orthonormal_rows(ys, grid.dy),
                _orthonormal_rows(zs, grid.dz),
            )
        return self._samples[key]

    def sample(self, k: int, grid: Grid) -> np.ndarray:
        """Mode k as sampled (and orthonormalised) on ``grid``."""
        a = np.zeros(self.size)
        a[k] = 1.0
        return reconstruct_values(self, a, grid)


def build_basis(params: ModelParams, m: int, limits: tuple | None = None) -> SpectralBasis:
    """The ``m`` smallest eigenmodes; ``limits`` = (nx, ny, nz) caps kx < nx, ky < ny, n <= nz."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if limits is not None and m > limits[0] * limits[1] * limits[2]:
        raise ValueError("more modes requested than the limits allow")
    p = params
    ext = max(2, int(math.ceil(m ** (1 / 3))) + 2)
    while True:
        kxm = ext if limits is None else min(ext, limits[0] - 1)
        kym = ext if limits is None else min(ext, limits[1] - 1)
        nm = ext if limits is None else min(ext, limits[2])
        mu = solve_z_eigenvalues(p.alpha, p.h, nm + 1).astype(float)
        kx, ky, n = np.meshgrid(np.arange(kxm + 1), np.arange(kym + 1), np.arange(1, nm + 1), indexing="ij")
        kx, ky, n = kx.ravel(), ky.ravel(), n.ravel()
        lam = p.kappa_h * np.pi**2 * ((kx / p.lx) ** 2 + (ky / p.ly) ** 2) + p.kappa_v * mu[n - 1] ** 2
        if lam.size >= m:
            # round the sort key so that mathematically equal eigenvalues tie
            key = np.round(lam, 10)
            order = np.lexsort((n, ky, kx, key))[:m]
            cutoff = lam[order].max()
            # next candidates outside the box must not beat the cutoff
            out_x = p.kappa_h * (np.pi * (kxm + 1) / p.lx) ** 2 + p.kappa_v * mu[0] ** 2
            out_y = p.kappa_h * (np.pi * (kym + 1) / p.ly) ** 2 + p.kappa_v * mu[0] ** 2
            out_z = p.kappa_v * mu[nm] ** 2
            capped_x = limits is not None and kxm == limits[0] - 1
            capped_y = limits is not None and kym == limits[1] - 1
            capped_z = limits is not None and nm == limits[2]
            if (capped_x or out_x > cutoff) and (capped_y or out_y > cutoff) and (capped_z or out_z > cutoff):
                break
        ext *= 2
    modes = np.stack([kx[order], ky[order], n[order]], axis=1)
    nmax = int(modes[:, 2].max())
    return SpectralBasis(params, modes, mu[:nmax].copy(), lam[order].copy())


# ----------------------------------------------------------------------------
# projection


@dataclass
class ModalState:
    coeffs: np.ndarray
    t: float
    basis: SpectralBasis


def _coefficient_tensor(basis, a):
    kx, ky, nmax = basis.max_indices
    c = np.zeros((kx + 1, ky + 1, nmax))
    c[basis.modes[:, 0], basis.modes[:, 1], basis.modes[:, 2] - 1] = a
    return c


def project_values(basis: SpectralBasis, values: np.ndarray, grid: Grid) -> np.ndarray:
    X, Y, Z = basis.factors(grid)
    v = np.asarray(values).reshape(grid.shape)
    a = (X @ v.reshape(grid.nx, -1)).reshape(X.shape[0], grid.ny, grid.nz)
    a = np.matmul(Y, a)
    a = a @ Z.T
    a *= grid.cell_volume
    m = basis.modes
    return a[m[:, 0], m[:, 1], m[:, 2] - 1]


def reconstruct_values(basis: SpectralBasis, coeffs: np.ndarray, grid: Grid) -> np.ndarray:
    X, Y, Z = basis.factors(grid)
    c = _coefficient_tensor(basis, np.asarray(coeffs, dtype=float))
    t = c @ Z
    t = np.matmul(Y.T, t)
    return (X.T @ t.reshape(X.shape[0], -1)).reshape(grid.shape)


def project(field, basis: SpectralBasis, t: float = 0.0) -> ModalState:
    """Coefficients a_k = <field, phi_k> by midpoint quadrature."""
    return ModalState(project_values(basis, field.values, field.grid), t, basis)


def reconstruct(modal: ModalState, grid: Grid) -> ScalarField:
    return ScalarField(grid, reconstruct_values(modal.basis, modal.coeffs, grid), BC.TEMPERATURE)


# ----------------------------------------------------------------------------
# Galerkin system


class GalerkinModel:
    """Modal ODE da/dt = -lambda a - P[u.grad T_m] + P Q, nonlinear term on a grid.

    The working grid must resolve the modes with the 3/2 rule.  Advection is
    the same skew-symmetric grid operator the stepper uses, and projection is
    the same midpoint quadrature, so <P[Adv], a> = <Adv, T_m> = 0 exactly.
    """

    def __init__(
        self,
        params: ModelParams,
        basis: SpectralBasis,
        grid: Grid | None = None,
        advect: bool = True,
        pressure_system: PressureSystem | None = None,
        **solver_options,
    ):
        self.params = params
        self.basis = basis
        if grid is None:
            grid = Grid(*basis.min_grid(), params.lx, params.ly, params.h)
        need = basis.min_grid()
        if grid.nx < need[0] or grid.ny < need[1] or grid.nz < need[2]:
            raise ValidationError("grid", f"working grid {grid.shape} is below the 3/2 rule minimum {need}")
        self.grid = grid
        self.advect = advect
        self.system = pressure_system or assemble_pressure_system(params, grid, **solver_options)
        self._guess = None

    def fields(self, a):
        """Temperature, pressure solution and velocity of modal state ``a`` on the work grid."""
        T = ScalarField(self.grid, reconstruct_values(self.basis, a, self.grid), BC.TEMPERATURE)
        sol = solve_pressure(self.system, T, x0=self._guess)
        self._guess = sol.p
        return T, sol, diagnose_velocity(self.params, sol.p, T)

    def nonlinear(self, a) -> np.ndarray:
        if not self.advect or not np.any(a):
            return np.zeros(self.basis.size)
        T, _, vel = self.fields(a)
        return project_values(self.basis, advection(T, vel, self.params), self.grid)

    def rhs(self, a, q_modal=None) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        out = -self.basis.eigenvalues * a - self.nonlinear(a)
        if q_modal is not None:
            out = out + q_modal
        return out

    def project_forcing(self, Q) -> np.ndarray:
        if Q is None:
            return np.zeros(self.basis.size)
        if isinstance(Q, ScalarField):
            if Q.grid != self.grid:
                return project_values(self.basis, Q.values, Q.grid)
            Q = Q.values
        return project_values(self.basis, Q, self.grid)

    def energy_rates(self, a, q_modal=None):
        """(d/dt sum a^2 from the ODE, -2 sum lambda a^2)."""
        a = np.asarray(a, dtype=float)
        return float(2.0 * a @ self.rhs(a, q_modal)), float(-2.0 * np.sum(self.basis.eigenvalues * a * a))


def galerkin_rhs(modal: ModalState, params: ModelParams, Q=None, model: GalerkinModel | None = None) -> np.ndarray:
    model = model or GalerkinModel(params, modal.basis)
    return model.rhs(modal.coeffs, model.project_forcing(Q))


@dataclass
class GalerkinTrajectory:
    times: np.ndarray
    coeffs: np.ndarray  # (records, m)
    energy: np.ndarray  # sum a^2 at record times
    bound: np.ndarray  # decay envelope at record times
    slack: float
    basis: SpectralBasis
    ledger: object = None

    @property
    def bound_holds(self) -> np.ndarray:
        return self.energy <= (1.0 + self.slack) * self.bound

    @property
    def final(self) -> ModalState:
        return ModalState(self.coeffs[-1].copy(), float(self.times[-1]), self.basis)


def modal_decay_bound(t, e0: float, q_norm: float, lambda1: float):
    """|T0|^2 exp(-lambda1 t) + |Q|^2 / lambda1^2."""
    return e0 * np.exp(-lambda1 * np.asarray(t)) + q_norm**2 / lambda1**2


def galerkin_integrate(
    model: GalerkinModel,
    a0,
    Q=None,
    t_end: float = 1.0,
    dt: float = 1e-3,
    record_every: int = 1,
    slack: float = 0.02,
    on_record=None,
) -> GalerkinTrajectory:
    """Classical RK4 on the modal system.

    ``on_record(t, a)`` is called at every recorded time, which is how the
    runner builds its estimate ledger.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    a = np.array(a0.coeffs if isinstance(a0, ModalState) else a0, dtype=float)
    q = Q if isinstance(Q, np.ndarray) and Q.shape == a.shape else model.project_forcing(Q)
    nsteps = int(round(t_end / dt)) if t_end > 0 else 0
    if nsteps and abs(nsteps * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ValidationError("t_end", "t_end must be a multiple of dt")
    times, rec = [0.0], [a.copy()]
    if on_record:
        on_record(0.0, a)
    for i in range(1, nsteps + 1):
        k1 = model.rhs(a, q)
        k2 = model.rhs(a + 0.5 * dt * k1, q)
        k3 = model.rhs(a + 0.5 * dt * k2, q)
        k4 = model.rhs(a + dt * k3, q)
        a = a + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        peak = float(np.max(np.abs(a))) if a.size else 0.0
        if not np.isfinite(peak) or peak > BLOWUP_LIMIT:
            raise BlowUp(i * dt, peak)
        if i % record_every == 0 or i == nsteps:
            times.append(i * dt)
            rec.append(a.copy())
            if on_record:
                on_record(i * dt, a)
    times = np.array(times)
    coeffs = np.array(rec)
    energy = np.sum(coeffs**2, axis=1)
    bound = modal_decay_bound(times, energy[0], float(np.linalg.norm(q)), model.basis.lambda1)
    return GalerkinTrajectory(times, coeffs, energy, bound, slack, model.basis)


def short_time_horizon(t0_l2: float, t0_v: float, q_l2: float, C: float) -> float:
    """1 / (4 C (|T0|^4 + |Q|^2) |T0|_V^2) for a user-supplied constant C."""
    if not C > 0:
        raise ValueError("C must be positive")
    denom = 4.0 * C * (t0_l2**4 + q_l2**2) * t0_v**2
    return math.inf if denom == 0.0 else 1.0 / denom
