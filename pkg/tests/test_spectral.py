import math

import mpmath
import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given
from hypothesis import strategies as st

from pgsolve.errors import BlowUp, ValidationError
from pgsolve.grid import BC, Grid, ScalarField, norm_l2
from pgsolve.params import ModelParams
from pgsolve.pressure import assemble_pressure_system, diagnose_velocity, solve_pressure
from pgsolve.spectral import (
    GalerkinModel,
    ModalState,
    build_basis,
    galerkin_integrate,
    galerkin_rhs,
    project,
    project_values,
    reconstruct,
    robin_residual,
    short_time_horizon,
    solve_z_eigenvalues,
)
from pgsolve.stepper import advection, diffusion_operator

P = ModelParams()

# 30-digit roots of mu tan(mu h) = alpha for alpha = h = 1, from mpmath.findroot
MU1 = "0.860333589019379762483893424138"
MU2 = "3.42561845948172814647771386219"


def mp_root(alpha, h, n):
    """Independent high-precision root n of mu sin(mu h) - alpha cos(mu h)."""
    with mpmath.workdps(40):
        lo = (n - 1) * mpmath.pi / h
        hi = (2 * n - 1) * mpmath.pi / (2 * h)
        f = lambda mu: mu * mpmath.sin(mu * h) - alpha * mpmath.cos(mu * h)
        return mpmath.findroot(f, (lo + mpmath.mpf(10) ** -30, hi), solver="anderson")


def mp_value(x):
    """Exact mpf value of a (possibly extended precision) float."""
    m, e = np.frexp(x)
    return mpmath.ldexp(mpmath.mpf(int(np.ldexp(m, 64))), int(e) - 64)


# ---------------------------------------------------------------- Robin roots


def test_first_roots_match_oracle():
    mu = solve_z_eigenvalues(1.0, 1.0, 2)
    with mpmath.workdps(30):
        assert abs(mp_value(mu[0]) - mpmath.mpf(MU1)) < 1e-17
        assert abs(mp_value(mu[1]) - mpmath.mpf(MU2)) < 1e-17
    assert float(mu[0]) == pytest.approx(0.860334, abs=1e-6)
    assert float(mu[1]) == pytest.approx(3.425618, abs=1e-6)


def test_small_alpha_limit():
    mu1 = float(solve_z_eigenvalues(1e-6, 1.0, 1)[0])
    assert mu1**2 / 1e-6 == pytest.approx(1.0, abs=1e-3)


@pytest.mark.parametrize("alpha", [1e-3, 0.1, 1.0, 10.0])
@pytest.mark.parametrize("h", [0.5, 1.0, 2.0])
def test_fifty_roots_residual_and_brackets(alpha, h):
    mu = solve_z_eigenvalues(alpha, h, 50)
    assert mu.dtype == np.longdouble
    assert np.abs(robin_residual(mu, alpha, h)).max() <= 1e-12
    n = np.arange(1, 51)
    assert np.all(mu > (n - 1) * np.pi / h) and np.all(mu < (2 * n - 1) * np.pi / (2 * h))
    # the residual re-evaluated in 40-digit arithmetic, and the distance to the oracle root
    with mpmath.workdps(40):
        for k in (0, 9, 49):
            x = mp_value(mu[k])
            assert abs(x * mpmath.tan(x * h) - alpha) <= 1e-12
            assert abs(x - mp_root(alpha, h, k + 1)) <= 1e-15 * abs(x)


def test_float64_cast_is_correctly_rounded():
    mu = solve_z_eigenvalues(1.0, 0.5, 50)
    with mpmath.workdps(40):
        for k in (0, 49):
            exact = mp_root(1.0, 0.5, k + 1)
            assert abs(mp_value(np.float64(mu[k])) - exact) <= 0.5 * np.spacing(float(mu[k]))


@given(alpha=st.floats(1e-4, 1e4), h=st.floats(0.1, 10.0), count=st.integers(1, 60))
def test_roots_bracketed_and_increasing(alpha, h, count):
    mu = solve_z_eigenvalues(alpha, h, count)
    n = np.arange(1, count + 1)
    assert np.all(mu > (n - 1) * np.pi / h) and np.all(mu < (2 * n - 1) * np.pi / (2 * h))
    assert np.all(np.diff(mu) > 0)
    assert np.abs(robin_residual(mu, alpha, h)).max() <= 1e-12 * max(1.0, alpha)


def test_roots_reject_bad_input():
    with pytest.raises(ValidationError):
        solve_z_eigenvalues(0.0, 1.0, 3)
    with pytest.raises(ValidationError):
        solve_z_eigenvalues(1.0, -1.0, 3)
    with pytest.raises(ValueError):
        solve_z_eigenvalues(1.0, 1.0, 0)


# ---------------------------------------------------------------- basis


def test_single_mode_basis():
    b = build_basis(P, 1)
    assert b.modes.tolist() == [[0, 0, 1]]
    assert b.lambda1 == pytest.approx(float(mpmath.mpf(MU1) ** 2), rel=1e-14)
    assert b.lambda1 == pytest.approx(0.7402, abs=1e-4)


def test_ordering_and_ties():
    b = build_basis(P, 40)
    assert np.all(np.diff(b.eigenvalues) >= 0)
    # (0,1,1) and (1,0,1) are degenerate on the unit square: lexicographic order
    i01 = b.modes.tolist().index([0, 1, 1])
    i10 = b.modes.tolist().index([1, 0, 1])
    assert i01 < i10 and abs(b.eigenvalues[i01] - b.eigenvalues[i10]) < 1e-12
    # the basis is the m lowest modes: nothing left out is smaller
    big = build_basis(P, 200)
    assert np.allclose(big.eigenvalues[:40], b.eigenvalues)


@given(
    kappa_h=st.floats(0.1, 10.0),
    kappa_v=st.floats(0.1, 10.0),
    alpha=st.floats(0.01, 100.0),
    lx=st.floats(0.5, 3.0),
    m=st.integers(1, 60),
)
def test_basis_is_the_lowest_part_of_a_larger_basis(kappa_h, kappa_v, alpha, lx, m):
    p = ModelParams(kappa_h=kappa_h, kappa_v=kappa_v, alpha=alpha, lx=lx)
    b = build_basis(p, m)
    assert b.size == m and b.lambda1 > 0
    assert np.all(np.diff(b.eigenvalues) >= 0)
    assert np.allclose(build_basis(p, m + 20).eigenvalues[:m], b.eigenvalues, rtol=1e-13)


def test_normalisation_on_fine_grid():
    b = build_basis(P, 12)
    g = Grid.for_params(P, 64)
    X, Y, Z = (a * np.ones(g.shape) for a in g.mesh())
    for k in range(b.size):
        assert norm_l2(b.sample(k, g), g) == pytest.approx(1.0, abs=1e-8)
        # the analytic eigenfunction, sampled, is normalised to quadrature accuracy
        assert norm_l2(b.evaluate(k, X, Y, Z), g) == pytest.approx(1.0, abs=1e-3)


def test_discrete_orthonormality_at_working_grid():
    b = build_basis(P, 64)
    g = Grid(*b.min_grid(), P.lx, P.ly, P.h)
    S = np.array([b.sample(k, g).ravel() for k in range(b.size)])
    gram = S @ S.T * g.cell_volume
    assert np.abs(gram - np.eye(b.size)).max() <= 1e-8


def test_eigenvalues_match_dense_discrete_operator():
    g = Grid.for_params(P, 16)
    op = diffusion_operator(P, g)
    eye = np.eye(g.size)
    m = np.array([op.apply(eye[i].reshape(g.shape)).ravel() for i in range(g.size)]).T
    dense = sla.eigh(0.5 * (m + m.T), eigvals_only=True, subset_by_index=[0, 9])
    b = build_basis(P, 10)
    assert np.allclose(dense, b.eigenvalues, rtol=0.02)


def test_sampling_requires_resolving_grid():
    b = build_basis(P, 30)
    with pytest.raises(ValidationError):
        b.factors(Grid(2, 2, 2, 1.0, 1.0, 1.0))


# ---------------------------------------------------------------- projection


def test_project_mode_and_zero():
    b = build_basis(P, 10)
    g = Grid.for_params(P, 12)
    a = project(ScalarField(g, b.sample(2, g), BC.TEMPERATURE), b).coeffs
    assert np.abs(a - np.eye(10)[2]).max() <= 1e-8
    assert not np.any(project(ScalarField(g, g.zeros()), b).coeffs)


@given(seed=st.integers(0, 2**31), m=st.integers(1, 80))
def test_round_trip_on_span(seed, m):
    b = build_basis(P, m)
    g = Grid.for_params(P, 10)
    a = np.random.default_rng(seed).standard_normal(m)
    field = reconstruct(ModalState(a, 0.0, b), g)
    assert np.abs(project(field, b).coeffs - a).max() <= 1e-8 * max(1.0, np.abs(a).max())


def test_parseval_full_rank():
    g = Grid.for_params(P, 8)
    b = build_basis(P, g.size, limits=g.shape)
    f = np.random.default_rng(1).standard_normal(g.shape)
    a = project_values(b, f, g)
    assert np.sum(a**2) == pytest.approx(norm_l2(f, g) ** 2, rel=1e-10)
    # dense oracle: least-squares coefficients against the sampled basis
    S = np.array([b.sample(k, g).ravel() for k in range(b.size)]).T
    coef, *_ = np.linalg.lstsq(S, f.ravel(), rcond=None)
    assert np.allclose(coef, a, atol=1e-10)
    # Bessel inequality for a truncated basis
    small = build_basis(P, 50, limits=g.shape)
    assert np.sum(project_values(small, f, g) ** 2) <= norm_l2(f, g) ** 2


# ---------------------------------------------------------------- Galerkin system


def test_rhs_linear_decay_without_velocity():
    b = build_basis(P, 1)
    model = GalerkinModel(P, b, advect=False)
    d = galerkin_rhs(ModalState(np.array([0.8]), 0.0, b), P, model=model)
    assert d == pytest.approx([-b.lambda1 * 0.8], rel=1e-15)


def test_rhs_forcing_projection():
    b = build_basis(P, 8)
    model = GalerkinModel(P, b)
    Q = ScalarField(model.grid, b.sample(1, model.grid), BC.TEMPERATURE)
    d = galerkin_rhs(ModalState(np.zeros(8), 0.0, b), P, Q, model=model)
    assert np.abs(d - np.eye(8)[1]).max() <= 1e-8


def _integrand_by_quadrature(b, a, g):
    """The nonlinear term computed mode by mode with explicit sums."""
    T = sum(a[k] * b.sample(k, g) for k in range(b.size))
    T = ScalarField(g, T, BC.TEMPERATURE)
    sol = solve_pressure(assemble_pressure_system(P, g), T)
    adv = advection(T, diagnose_velocity(P, sol.p, T), P)
    return np.array([np.sum(adv * b.sample(k, g)) * g.cell_volume for k in range(b.size)])


def test_rhs_nonlinear_term_by_independent_quadrature():
    b = build_basis(P, 5)
    a = np.random.default_rng(0).standard_normal(5)
    g = Grid.for_params(P, 12)
    model = GalerkinModel(P, b, g)
    ref = _integrand_by_quadrature(b, a, g)
    assert np.linalg.norm(model.nonlinear(a) - ref) <= 1e-9 * np.linalg.norm(ref)


def _nonlinear_at(n, a, b):
    return GalerkinModel(P, b, Grid.for_params(P, n)).nonlinear(a)


def test_rhs_nonlinear_term_converges_second_order():
    b = build_basis(P, 5)
    a = np.random.default_rng(0).standard_normal(5)
    r8, r16, r32 = (_nonlinear_at(n, a, b) for n in (8, 16, 32))
    ratio = np.linalg.norm(r8 - r16) / np.linalg.norm(r16 - r32)
    assert ratio >= 3.5, ratio


@pytest.mark.xfail(
    strict=True,
    reason="the grid pressure solve inside the nonlinear term carries an O(dx^2) error, "
    "so doubling the resolution moves the result by ~1e-2, not 1e-6",
)
def test_rhs_matches_doubled_resolution_to_1e6():
    b = build_basis(P, 5)
    a = np.random.default_rng(0).standard_normal(5)
    r, r2 = _nonlinear_at(16, a, b), _nonlinear_at(32, a, b)
    assert np.linalg.norm(r - r2) <= 1e-6 * np.linalg.norm(r2)


def test_working_grid_below_three_halves_rule_rejected():
    b = build_basis(P, 64)
    with pytest.raises(ValidationError):
        GalerkinModel(P, b, Grid(6, 6, 6, 1.0, 1.0, 1.0))
    assert b.min_grid() == (8, 8, 9)


@given(seed=st.integers(0, 2**31))
def test_modal_energy_identity(seed):
    b = build_basis(P, 10)
    model = GalerkinModel(P, b)
    a = np.random.default_rng(seed).standard_normal(10)
    ode, linear = model.energy_rates(a)
    assert ode == pytest.approx(linear, rel=1e-8)


# ---------------------------------------------------------------- integration


def test_zero_trajectory():
    b = build_basis(P, 6)
    traj = galerkin_integrate(GalerkinModel(P, b), np.zeros(6), None, t_end=0.5, dt=0.05)
    assert not np.any(traj.coeffs) and np.all(traj.bound_holds)


def test_linear_decay_is_rk4_accurate():
    b = build_basis(P, 3)
    model = GalerkinModel(P, b, advect=False)
    errs = []
    for dt in (0.2, 0.1):
        traj = galerkin_integrate(model, np.eye(3)[0], None, t_end=2.0, dt=dt)
        errs.append(abs(traj.coeffs[-1, 0] - math.exp(-b.lambda1 * 2.0)))
        assert not np.any(traj.coeffs[:, 1:])
    assert 14.0 <= errs[0] / errs[1] <= 18.0


def test_nonlinear_start_from_first_mode():
    # the first mode is horizontally uniform, so in the continuum it drives no flow; on the
    # working grid a small vertical velocity remains and shrinks under refinement
    b = build_basis(P, 10)
    exact = math.exp(-b.lambda1)
    dev = []
    for grid in (None, Grid.for_params(P, 16)):
        traj = galerkin_integrate(GalerkinModel(P, b, grid), np.eye(10)[0], None, t_end=1.0, dt=0.05)
        dev.append(abs(traj.coeffs[-1, 0] - exact) / exact)
    assert dev[0] <= 1e-5 and dev[1] <= dev[0] / 5, dev


def test_decay_bound_holds_for_random_start():
    b = build_basis(P, 10)
    a0 = 2.0 * np.random.default_rng(3).standard_normal(10)
    traj = galerkin_integrate(GalerkinModel(P, b), a0, None, t_end=5.0, dt=0.05, record_every=2)
    assert traj.times[-1] == pytest.approx(5.0)
    assert np.all(traj.bound_holds)


def test_blowup_detected():
    class Exploding:
        basis = build_basis(P, 2)

        def rhs(self, a, q):
            return 50.0 * a

        def project_forcing(self, Q):
            return np.zeros(2)

    with pytest.raises(BlowUp):
        galerkin_integrate(Exploding(), np.ones(2), None, t_end=2.0, dt=0.1)


def test_integrate_rejects_bad_times():
    model = GalerkinModel(P, build_basis(P, 2))
    with pytest.raises(ValueError):
        galerkin_integrate(model, np.ones(2), dt=0.0)
    with pytest.raises(ValidationError):
        galerkin_integrate(model, np.ones(2), t_end=0.25, dt=0.1)


# ---------------------------------------------------------------- short-time horizon


def test_short_time_horizon():
    assert short_time_horizon(1.0, 1.0, 1.0, 1.0) == 0.125
    assert short_time_horizon(0.0, 0.0, 0.0, 1.0) == math.inf
    assert short_time_horizon(0.3, 1.2, 0.5, 2.0) == pytest.approx(0.5 * short_time_horizon(0.3, 1.2, 0.5, 1.0))
    with pytest.raises(ValueError):
        short_time_horizon(1.0, 1.0, 1.0, 0.0)
