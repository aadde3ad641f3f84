"""The estimate ledger and the checks run over it.

Inequalities with explicit constants (the L2 decay envelope, the
time-integrated dissipation budget, the depth Poincare inequality and the
pressure coercivity estimate) are asserted with a small slack.  Bounds whose
constants are generic (the L6 and V-norm growth, the continuous-dependence
envelope) are only monitored and fitted.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .grid import (
    BC,
    ScalarField,
    check_poincare,
    inner,
    norm_l2,
    norm_lp,
    norm_v,
    surface_norm_l2,
)
from .params import ModelParams
from .pressure import check_coercivity_estimate, check_velocity_bound, discrete_divergence

COLUMNS = (
    "t",
    "l2",
    "l6",
    "v_norm",
    "surface_l2",
    "adv_cancel_resid",
    "div_resid",
    "coercivity_lhs",
    "coercivity_rhs",
    "poincare_lhs",
    "poincare_rhs",
    "decay_rhs",
    "vel_ratio",
    "h1_monitor",
)
TRUNCATION_MARKER = "# truncated:"


def decay_constant(params: ModelParams) -> float:
    """c = (h^2 + h/alpha)/kappa_v; the envelope decays like exp(-t/(2c)).

    With kappa_v = 1 this is the Poincare constant of the depth direction.
    Dividing by kappa_v keeps the envelope valid for any vertical diffusivity.
    """
    return (params.h**2 + params.h / params.alpha) / params.kappa_v


def decay_envelope(t, params: ModelParams, t0_norm2: float, q_norm: float):
    c = decay_constant(params)
    return np.exp(-np.asarray(t, dtype=float) / (2.0 * c)) * t0_norm2 + (2.0 * c) ** 2 * q_norm**2


# ----------------------------------------------------------------------------
# ledger


@dataclass
class EstimateLedger:
    """Rows in the fixed CSV column order plus in-memory running integrals.

    ``dissipation`` holds the cumulative time integral of |T|_V^2 at each row
    (it is accumulated every step, not only at output rows).  It is not a CSV
    column; runners store it in their JSON summary.
    """

    rows: list = field(default_factory=list)
    dissipation: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    truncated: str | None = None

    def __len__(self):
        return len(self.rows)

    def append(self, row: dict, dissipation: float | None = None):
        values = tuple(float(row[c]) for c in COLUMNS)
        if not all(math.isfinite(v) for v in values):
            bad = [c for c, v in zip(COLUMNS, values) if not math.isfinite(v)]
            raise ValueError(f"non-finite ledger entries: {bad}")
        if self.rows and values[0] <= self.rows[-1][0]:
            raise ValueError("ledger times must be strictly increasing")
        self.rows.append(values)
        if dissipation is not None:
            self.dissipation.append(float(dissipation))

    def column(self, name: str) -> np.ndarray:
        i = COLUMNS.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)

    @property
    def times(self) -> np.ndarray:
        return self.column("t")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COLUMNS)
            for r in self.rows:
                w.writerow([repr(v) for v in r])
            if self.truncated is not None:
                fh.write(f"{TRUNCATION_MARKER} {self.truncated}\n")

    @classmethod
    def from_csv(cls, path) -> "EstimateLedger":
        out = cls()
        with open(path, newline="") as fh:
            lines = fh.read().splitlines()
        if not lines or tuple(lines[0].split(",")) != COLUMNS:
            raise ValueError(f"{path}: not a ledger file")
        for line in lines[1:]:
            if line.startswith(TRUNCATION_MARKER):
                out.truncated = line[len(TRUNCATION_MARKER):].strip()
                continue
            if line.strip():
                out.append(dict(zip(COLUMNS, (float(x) for x in line.split(",")))))
        return out


def ledger_row(t, T: ScalarField, pressure, vel, adv, params: ModelParams, system, t0_norm2, q_norm, h1_integral=0.0):
    """All fourteen ledger quantities for one state."""
    g = T.grid
    l2 = norm_l2(T)
    vn = norm_v(T, params)
    coer = check_coercivity_estimate(system, pressure.p, T)
    poin = check_poincare(T)
    ratio = check_velocity_bound(params, vel, T).ratio if l2 > 0 else 0.0
    return {
        "t": t,
        "l2": l2,
        "l6": norm_lp(T, 6),
        "v_norm": vn,
        "surface_l2": surface_norm_l2(T),
        "adv_cancel_resid": abs(inner(adv, T, g)),
        "div_resid": norm_l2(discrete_divergence(vel)),
        "coercivity_lhs": coer.lhs,
        "coercivity_rhs": coer.rhs,
        "poincare_lhs": poin.lhs,
        "poincare_rhs": poin.rhs,
        "decay_rhs": float(decay_envelope(t, params, t0_norm2, q_norm)),
        "vel_ratio": ratio,
        "h1_monitor": vn * vn + h1_integral,
    }


def advection_cancellation_ratio(adv, T: ScalarField, vel) -> float:
    """|<Adv, T>| / (|T|^2 (1 + max|vel|)); zero for a zero field."""
    n2 = norm_l2(T) ** 2
    if n2 == 0.0:
        return 0.0
    return abs(inner(adv, T, T.grid)) / (n2 * (1.0 + vel.max_abs()))


# ----------------------------------------------------------------------------
# asserted checks


@dataclass
class DecayReport:
    times: np.ndarray
    energy: np.ndarray  # |T|^2
    envelope: np.ndarray
    holds: np.ndarray
    lambda1: float
    lambda1_bound: np.ndarray
    lambda1_holds: np.ndarray
    measured_rate: float  # fitted decay rate of |T|^2 (nan when forced)
    envelope_rate: float
    slack: float

    @property
    def failures(self) -> int:
        return int(np.count_nonzero(~self.holds))

    @property
    def lambda1_failures(self) -> int:
        return int(np.count_nonzero(~self.lambda1_holds))

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def summary(self) -> dict:
        return {
            "rows": int(self.times.size),
            "failures": self.failures,
            "lambda1_failures": self.lambda1_failures,
            "measured_rate": self.measured_rate,
            "envelope_rate": self.envelope_rate,
            "lambda1": self.lambda1,
            "max_ratio": float(np.max(self.energy / np.where(self.envelope > 0, self.envelope, np.inf), initial=0.0)),
            "passed": self.passed,
        }


def fitted_decay_rate(times, energy) -> float:
    """Least-squares rate r in |T|^2 ~ exp(-r t), ignoring zero rows."""
    times, energy = np.asarray(times), np.asarray(energy)
    keep = energy > 1e-300
    if np.count_nonzero(keep) < 2:
        return float("nan")
    slope = np.polyfit(times[keep], np.log(energy[keep]), 1)[0]
    return float(-slope)


def decay_bound_check(ledger: EstimateLedger, params: ModelParams, T0_norm=None, Q_norm=None, slack=0.05) -> DecayReport:
    """|T|^2 <= exp(-t/(2c)) |T0|^2 + (2c)^2 |Q|^2 per row, plus the sharper lambda1 route.

    The lambda1 route is |T|^2 <= exp(-lambda1 t)|T0|^2 + |Q|^2/lambda1^2,
    lambda1 the smallest eigenvalue of the diffusion operator.
    """
    from .spectral import build_basis

    l2 = ledger.column("l2")
    t = ledger.times
    energy = l2**2
    e0 = (l2[0] if T0_norm is None else T0_norm) ** 2 if l2.size else 0.0
    q = ledger.meta.get("q_norm", 0.0) if Q_norm is None else Q_norm
    env = decay_envelope(t, params, e0, q)
    lam1 = build_basis(params, 1).lambda1
    lam_bound = np.exp(-lam1 * t) * e0 + q**2 / lam1**2
    rate = fitted_decay_rate(t, energy) if q == 0.0 else float("nan")
    return DecayReport(
        t,
        energy,
        env,
        energy <= (1.0 + slack) * env,
        lam1,
        lam_bound,
        energy <= (1.0 + slack) * lam_bound,
        rate,
        1.0 / (2.0 * decay_constant(params)),
        slack,
    )


@dataclass
class DissipationReport:
    times: np.ndarray
    cumulative: np.ndarray
    bound: np.ndarray
    holds: np.ndarray
    decayed_initial_bound: np.ndarray
    slack: float

    @property
    def failures(self) -> int:
        return int(np.count_nonzero(~self.holds))

    @property
    def decayed_initial_failures(self) -> int:
        return int(np.count_nonzero(self.cumulative > (1.0 + self.slack) * self.decayed_initial_bound))

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def summary(self) -> dict:
        return {
            "rows": int(self.times.size),
            "failures": self.failures,
            "decayed_initial_failures": self.decayed_initial_failures,
            "final_cumulative": float(self.cumulative[-1]) if self.cumulative.size else 0.0,
            "passed": self.passed,
        }


def dissipation_budget_check(ledger: EstimateLedger, params: ModelParams, Q_norm=None, T0_norm=None, slack=0.05):
    """int_0^t |T|_V^2 <= |T0|^2 + 2c|Q|^2 t + (2c)^2 |Q|^2 at each row.

    Integrating d|T|^2/dt + 2|T|_V^2 = 2<Q,T> and using Young's inequality
    with the depth Poincare constant gives exactly this.  The variant with the
    initial energy multiplied by exp(-t/(2c)) is also evaluated and counted,
    but not asserted: for Q = 0 the left side tends to |T0|^2/2 while that
    variant decays to zero, so it cannot hold for long runs.
    """
    if len(ledger.dissipation) != len(ledger):
        raise ValueError("ledger has no cumulative dissipation record")
    t = ledger.times
    cum = np.asarray(ledger.dissipation, dtype=float)
    l2 = ledger.column("l2")
    e0 = (l2[0] if T0_norm is None else T0_norm) ** 2 if l2.size else 0.0
    q = ledger.meta.get("q_norm", 0.0) if Q_norm is None else Q_norm
    c = decay_constant(params)
    forced = 2.0 * c * q**2 * t + (2.0 * c) ** 2 * q**2
    bound = e0 + forced
    variant = np.exp(-t / (2.0 * c)) * e0 + forced
    return DissipationReport(t, cum, bound, cum <= (1.0 + slack) * bound, variant, slack)


def poincare_violations(ledger: EstimateLedger, slack=0.02) -> int:
    lhs, rhs = ledger.column("poincare_lhs"), ledger.column("poincare_rhs")
    return int(np.count_nonzero(lhs > (1.0 + slack) * rhs))


def coercivity_violations(ledger: EstimateLedger, slack=0.02) -> int:
    lhs, rhs = ledger.column("coercivity_lhs"), ledger.column("coercivity_rhs")
    return int(np.count_nonzero(lhs > (1.0 + slack) * rhs))


# ----------------------------------------------------------------------------
# monitors


@dataclass
class MonitorStats:
    name: str
    initial_scale: float
    maximum: float
    final: float
    finite: bool
    bounded: bool  # never above 1e6 times the initial scale
    rate_first_half: float
    rate_second_half: float
    power_exponent: float
    subexponential: bool
    monotone_after_transient: bool


@dataclass
class BoundednessReport:
    monitors: dict

    @property
    def no_blowup(self) -> bool:
        return all(m.finite and m.bounded for m in self.monitors.values())

    @property
    def subexponential(self) -> bool:
        return all(m.subexponential for m in self.monitors.values())

    def summary(self) -> dict:
        out = {"no_blowup": self.no_blowup, "subexponential": self.subexponential}
        for k, m in self.monitors.items():
            out[k] = {
                "max": m.maximum,
                "final": m.final,
                "rate_first_half": m.rate_first_half,
                "rate_second_half": m.rate_second_half,
                "power_exponent": m.power_exponent,
                "monotone_after_transient": m.monotone_after_transient,
            }
        return out


def _log_rate(t, v):
    keep = v > 1e-300
    if np.count_nonzero(keep) < 2 or np.ptp(t[keep]) == 0:
        return 0.0
    return float(np.polyfit(t[keep], np.log(v[keep]), 1)[0])


def _monitor(name, t, v, transient=0.2):
    n = v.size
    head = max(1, int(math.ceil(0.1 * n)))
    scale = float(np.max(np.abs(v[:head]))) if n else 0.0
    finite = bool(np.all(np.isfinite(v)))
    vmax = float(np.max(v)) if n else 0.0
    bounded = finite and (vmax == 0.0 or vmax <= 1e6 * scale)
    mid = t[0] + 0.5 * (t[-1] - t[0]) if n else 0.0
    first, second = t <= mid, t >= mid
    r1, r2 = _log_rate(t[first], v[first]), _log_rate(t[second], v[second])
    keep = (v > 1e-300) & (t > 0)
    p_exp = float(np.polyfit(np.log1p(t[keep]), np.log(v[keep]), 1)[0]) if np.count_nonzero(keep) >= 2 else 0.0
    span = float(t[-1] - mid) if n else 0.0
    # no faster than half the early growth rate, or less than a doubling over the late half
    subexp = r2 <= 0.5 * max(r1, 0.0) + 1e-12 or r2 * span <= math.log(2.0)
    tail = v[int(transient * n):]
    mono = bool(np.all(np.diff(tail) <= 1e-12 * np.maximum(np.abs(tail[:-1]), 1e-300)))
    return MonitorStats(name, scale, vmax, float(v[-1]) if n else 0.0, finite, bounded, r1, r2, p_exp, subexp, mono)


def boundedness_monitors(ledger: EstimateLedger, transient: float = 0.2) -> BoundednessReport:
    """L6 norm, V norm and the H1-type monitor: maxima, growth fits, blow-up verdict.

    ``subexponential`` means the late-half exponential rate is at most half
    the early-half rate (a polynomial or saturating curve decelerates) or is
    too small to double the value over the late half.
    """
    t = ledger.times
    return BoundednessReport({k: _monitor(k, t, ledger.column(k), transient) for k in ("l6", "v_norm", "h1_monitor")})


# ----------------------------------------------------------------------------
# continuous dependence


@dataclass
class PerturbationReport:
    etas: list
    times: np.ndarray
    theta_norms: dict  # eta -> |theta(t)|_2 series
    kv_integral: np.ndarray  # int_0^t |T_base|_V^2
    gronwall_constant: float
    gronwall_r2: float
    envelope_holds: bool
    collapse_error: float  # max relative gap of |theta|/eta between the two smallest etas
    direction: tuple

    @property
    def collapse_ok(self) -> bool:
        return self.collapse_error <= 0.10

    def ratios(self, eta) -> np.ndarray:
        return self.theta_norms[eta] / eta

    def summary(self) -> dict:
        return {
            "etas": list(self.etas),
            "collapse_error": self.collapse_error,
            "collapse_ok": self.collapse_ok,
            "gronwall_constant": self.gronwall_constant,
            "gronwall_r2": self.gronwall_r2,
            "envelope_holds": self.envelope_holds,
            "zero_eta_max": float(np.max(self.theta_norms[0.0])) if 0.0 in self.theta_norms else None,
            "direction": list(self.direction),
        }


def perturbation_direction(params: ModelParams, grid, index: int = 1) -> tuple[np.ndarray, tuple]:
    """The second basis mode (``index`` 1) sampled on ``grid``, unit L2 norm."""
    from .spectral import build_basis

    basis = build_basis(params, index + 1, limits=grid.shape)
    return basis.sample(index, grid), tuple(int(k) for k in basis.modes[index])


def fit_gronwall(times, theta2, kv_int):
    """Smallest C with |theta|^2 <= |theta0|^2 exp(C int K^2), and r^2 of a linear fit."""
    theta2 = np.asarray(theta2)
    keep = (np.asarray(kv_int) > 0) & (theta2 > 0)
    if theta2.size == 0 or theta2[0] == 0 or not np.any(keep):
        return 0.0, 1.0, True
    y = np.log(theta2[keep] / theta2[0])
    x = np.asarray(kv_int)[keep]
    C = max(0.0, float(np.max(y / x)))
    if x.size >= 2 and np.ptp(y) > 0:
        slope, icpt = np.polyfit(x, y, 1)
        r2 = 1.0 - np.sum((y - (slope * x + icpt)) ** 2) / np.sum((y - y.mean()) ** 2)
    else:
        r2 = 1.0
    holds = bool(np.all(theta2 <= theta2[0] * np.exp(C * np.asarray(kv_int)) * (1 + 1e-12)))
    return C, float(r2), holds


def continuous_dependence_experiment(scenario, eta_list, direction_index: int = 1) -> PerturbationReport:
    """Run the base scenario and one perturbed copy T0 + eta*phi per eta.

    The difference |theta(t)| is sampled at every diagnostic time.  Ratio
    collapse compares |theta|/eta across the two smallest positive etas.
    """
    from .runner import run

    etas = [float(e) for e in eta_list]
    if any(e < 0 for e in etas):
        raise ValueError("eta values must be non-negative")
    positive = sorted({e for e in etas if e > 0}, reverse=True)
    base = run(scenario, keep_fields=True)
    phi, mode = perturbation_direction(scenario.params, scenario.grid, direction_index)
    grid = scenario.grid
    norms = {}
    for eta in etas:
        if eta == 0.0:
            other = run(scenario, keep_fields=True)
        else:
            other = run(scenario, keep_fields=True, initial_offset=eta * phi)
        norms[eta] = np.array([norm_l2(a - b, grid) for a, b in zip(other.fields, base.fields)])
    times = np.asarray(base.field_times)
    vn = base.ledger.column("v_norm")
    # trapezoid on the ledger rows; the base ledger rows coincide with field times
    kv = np.concatenate([[0.0], np.cumsum(0.5 * (vn[1:] ** 2 + vn[:-1] ** 2) * np.diff(base.ledger.times))])
    kv_at = np.interp(times, base.ledger.times, kv)
    if len(positive) >= 2:
        a, b = positive[-2], positive[-1]
        ra, rb = norms[a] / a, norms[b] / b
        denom = np.maximum(np.abs(rb), 1e-300)
        collapse = float(np.max(np.abs(ra - rb) / denom))
    else:
        collapse = float("nan")
    if positive:
        C, r2, holds = fit_gronwall(times, norms[positive[-1]] ** 2, kv_at)
    else:
        C, r2, holds = 0.0, 1.0, True
    return PerturbationReport(etas, times, norms, kv_at, C, r2, holds, collapse, mode)


def theta_field(T1: ScalarField, T2: ScalarField) -> ScalarField:
    return ScalarField(T1.grid, T1.values - T2.values, BC.TEMPERATURE)
