"""Normalized Kähler-Ricci flow of U(n)-invariant metrics and its monitors.

The flow is integrated at the potential level on the momentum chart of
the Fubini-Study metric (see :class:`~krflow.geometry.ChartProfile`):
with psi = F - F0 the equation d phi/dt = log(omega_phi^n / omega^n)
+ phi - h_omega becomes

    d psi / dt = ell(psi) + psi - C,

where ell is the log volume ratio to Fubini-Study and C is fixed by the
normalization of h for the initial metric.  Both poles are outflow
boundaries of the degenerate diffusion, so no boundary condition is
imposed; the one-sided stencils at the ends handle them.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import simpson

from . import analysis
from .errors import ConfigurationError, CoverageError, PositivityError, StiffnessError
from .functionals import (
    Ek0_energy,
    Jk_energy,
    dEk_dt_formula,
    l2_pinching,
)
from .geometry import ChartProfile, curvature_components, volume
from .stencils import derivative_matrices

MAX_HALVINGS = 20

SERIES_COLUMNS = (
    "t",
    "E0",
    "E1",
    "dE1_formula",
    "l2_ric0",
    "l2_scalar",
    "l2_Q0",
    "ric_min",
    "riem_sup",
    "diameter",
    "lambda1",
)
MONITOR_COLUMNS = ("t", "phi_max", "ric0_max", "Q0_max", "lp_riem")


@dataclass
class FlowConfig:
    n: int = 1
    nodes: int = 257
    t_end: float = 1.0
    cadence: float = 0.05
    dt_policy: str = "adaptive"
    cfl: float = 0.8
    dt: float = None
    amplitude: float = 0.0
    shape: str = "sech"
    seed: int = None
    center: float = 0.0
    delta: float = 0.5
    Lambda: float = None
    c_n: float = 8.0
    eps_n: float = 0.1
    window: float = 0.5
    record_analysis: bool = True
    stop_on_convergence: bool = False
    convergence_floor: float = 1e-9

    def __post_init__(self):
        if self.n < 1 or int(self.n) != self.n:
            raise ConfigurationError("n must be a positive integer")
        if self.nodes < 16:
            raise ConfigurationError("grid needs at least 16 nodes")
        if self.dt_policy not in ("adaptive", "fixed"):
            raise ConfigurationError("dt_policy must be 'adaptive' or 'fixed'")
        if not 0 < self.cfl <= 1:
            raise ConfigurationError("CFL factor must lie in (0, 1]")
        if self.dt_policy == "fixed" and (self.dt is None or self.dt <= 0):
            raise ConfigurationError("fixed dt policy needs dt > 0")
        if self.t_end < 0 or self.cadence <= 0:
            raise ConfigurationError("t_end must be >= 0 and cadence > 0")

    def initial_profile(self):
        kw = {"center": self.center} if self.shape in ("sech", "sech2") else {"seed": self.seed}
        return ChartProfile.from_shape(self.n, self.nodes, self.amplitude, self.shape, **kw)


@dataclass
class FlowState:
    """Flow time and the residual potential psi = F - F0 on the chart."""

    t: float
    psi: np.ndarray
    flags: dict = field(default_factory=dict)

    def profile(self, n):
        return ChartProfile(n, np.linspace(0.0, n + 1, len(self.psi)), self.psi)


class PotentialFlow:
    """Right-hand side and RK4 stepper of the potential equation."""

    width = ChartProfile.width

    def __init__(self, n, psi_ref):
        self.n = n
        psi_ref = np.asarray(psi_ref, dtype=float)
        N = n + 1
        self.x = np.linspace(0.0, N, len(psi_ref))
        self.dx = self.x[1] - self.x[0]
        D = derivative_matrices(self.x, 2, self.width)
        self.D1, self.D2 = D[1], D[2]
        self.p0 = self.x * (N - self.x) / N
        self.p1 = (N - 2 * self.x) / N
        self.q = (N - self.x) / N
        self.psi_ref = psi_ref
        # h of the initial metric fixes the additive constant of the flow
        w = self.x ** (n - 1)
        self.C = math.log(volume(n)) - math.log(simpson(np.exp(-psi_ref) * w, x=self.x))

    def _parts(self, psi):
        d1 = self.D1 @ psi
        tau_x = 1.0 + self.p1 * d1 + self.p0 * (self.D2 @ psi)
        ratio = 1.0 + self.q * d1
        return tau_x, ratio

    def log_density(self, psi):
        tau_x, ratio = self._parts(psi)
        if np.any(tau_x <= 0) or np.any(ratio <= 0):
            raise PositivityError("metric lost positivity during the step")
        ell = np.log(tau_x)
        if self.n > 1:
            ell = ell + (self.n - 1) * np.log(ratio)
        return ell

    def rhs(self, psi):
        return self.log_density(psi) + psi - self.C

    def dt_cfl(self, psi, cfl):
        tau_x, _ = self._parts(psi)
        coef = np.max(self.p0 / np.maximum(tau_x, 1e-300))
        return cfl * 0.5 * self.dx**2 / coef

    def admissible(self, psi):
        tau_x, ratio = self._parts(psi)
        if np.any(tau_x <= 0) or np.any(ratio <= 0) or not np.all(np.isfinite(psi)):
            return False
        tau = self.x + self.p0 * (self.D1 @ psi)
        return bool(np.all(np.diff(tau) > 0))

    def rk4(self, psi, dt):
        k1 = self.rhs(psi)
        k2 = self.rhs(psi + 0.5 * dt * k1)
        k3 = self.rhs(psi + 0.5 * dt * k2)
        k4 = self.rhs(psi + dt * k3)
        return psi + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _advance(y, dt, attempt, label, t0):
    """Cover ``dt`` with steps of ``attempt``, halving after each failure."""
    remaining, h, halvings, t = dt, dt, 0, t0
    while remaining > 0:
        h = min(h, remaining)
        try:
            y = attempt(y, h)
            remaining -= h
            t += h
            if remaining <= abs(dt) * 1e-14:
                break
        except PositivityError:
            halvings += 1
            if halvings > MAX_HALVINGS:
                raise StiffnessError(
                    f"{label}: time step underflow at t = {t:.6g} (dt = {h:.3g})",
                    state={"t": t, "dt": h, "y": [np.asarray(v).tolist() for v in (y if isinstance(y, tuple) else (y,))]},
                )
            h = h / 2
    return y


def step_potential(state, dt, flow):
    """Advance ``state`` by ``dt`` with RK4, halving on positivity failure."""

    def attempt(psi, h):
        new = flow.rk4(psi, h)
        if not flow.admissible(new):
            raise PositivityError("step produced a non-positive metric")
        return new

    psi = _advance(state.psi, dt, attempt, "potential flow", state.t)
    return FlowState(state.t + dt, psi, dict(state.flags))


# --------------------------------------------------------------------------
# metric-level cross-check


@dataclass
class MetricState:
    """Coordinate-free eigenvalue profiles on the chart.

    ``a`` = d tau / dx (radial part, Jacobian included) and ``b`` = tau
    (transverse part), so that omega = (a, b) as a U(n)-invariant form.
    """

    t: float
    a: np.ndarray
    b: np.ndarray

    @classmethod
    def from_potential(cls, state, n):
        g = state.profile(n).tau_parts
        return cls(state.t, g["tau_x"].copy(), g["tau"].copy())


class MetricFlow:
    """d omega / dt = omega - Ric on the pair (a, b)."""

    width = ChartProfile.width

    def __init__(self, n, nodes):
        self.n = n
        N = n + 1
        self.x = np.linspace(0.0, N, nodes)
        D = derivative_matrices(self.x, 2, self.width)
        self.D1, self.D2 = D[1], D[2]
        self.p0 = self.x * (N - self.x) / N
        self.p1 = (N - 2 * self.x) / N

    def _ell(self, a, b):
        if np.any(a <= 0) or np.any(b[1:] <= 0):
            raise PositivityError("metric eigenvalue lost positivity")
        ell = np.log(a)
        if self.n > 1:
            ratio = np.empty_like(b)
            ratio[1:] = b[1:] / self.x[1:]
            ratio[0] = a[0]
            ell = ell + (self.n - 1) * np.log(ratio)
        return ell

    def rhs(self, a, b):
        ell = self._ell(a, b)
        lx = self.D1 @ ell
        lxx = self.D2 @ ell
        da = a - 1.0 + self.p1 * lx + self.p0 * lxx
        db = b - self.x + self.p0 * lx
        return da, db

    def geometry(self, ms):
        """Curvature components of a metric state."""
        a, b = ms.a, ms.b
        phi = self.p0 * a
        dphi = (self.D1 @ phi) / a
        d2phi = (self.D1 @ dphi) / a
        pole = np.zeros(len(a), dtype=bool)
        pole[0] = True
        return curvature_components(self.n, b, phi, dphi, d2phi, pole)


def step_metric_direct(ms, dt, mflow):
    """One RK4 step of the metric-level flow, halving on positivity failure."""

    def attempt(y, h):
        a, b = y
        k1 = mflow.rhs(a, b)
        k2 = mflow.rhs(a + 0.5 * h * k1[0], b + 0.5 * h * k1[1])
        k3 = mflow.rhs(a + 0.5 * h * k2[0], b + 0.5 * h * k2[1])
        k4 = mflow.rhs(a + h * k3[0], b + h * k3[1])
        na = a + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        nb = b + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        mflow._ell(na, nb)
        return na, nb

    a, b = _advance((ms.a, ms.b), dt, attempt, "metric flow", ms.t)
    return MetricState(ms.t + dt, a, b)


# --------------------------------------------------------------------------
# series records


def profile_row(P, t=0.0, with_analysis=True):
    """Series columns of a chart profile, except the flow-dependent dE1_formula.

    Energies use Fubini-Study as the base metric, so E_1(FS) = 0 is the
    reference value of the energy test.
    """
    n = P.n
    base = ChartProfile(n, P.x)
    g = P.geometry
    c = g.curvature
    psi = P.psi
    zero = np.zeros_like(psi)
    E0 = Ek0_energy(psi, base, 0, h=zero) - Jk_energy(psi, base, 0)
    E1 = Ek0_energy(psi, base, 1, h=zero) - Jk_energy(psi, base, 1)
    if with_analysis:
        tau, phi, dphi = g.tau, g.phi, g.dphi
        diam = analysis.diameter_from_momentum(n, tau, phi, dphi)["diameter"]
        lam = analysis.lambda1_from_momentum(n, tau, phi, dphi)["lambda1"]
    else:
        diam = lam = float("nan")
    row = {
        "t": t,
        "E0": E0,
        "E1": E1,
        "dE1_formula": float("nan"),
        **l2_pinching(g),
        "ric_min": float(np.min(c["ric_min"])),
        "riem_sup": float(np.sqrt(np.max(c["riem_sq"]))),
        "diameter": diam,
        "lambda1": lam,
    }
    return {k: float(v) for k, v in row.items()}


def record(state, n, flow, with_analysis=True):
    """One series row and one monitor row for ``state``."""
    P = state.profile(n)
    psi = state.psi
    row = profile_row(P, state.t, with_analysis)
    base = ChartProfile(n, P.x)
    row["dE1_formula"] = float(dEk_dt_formula(psi, flow.rhs(psi), base, 1)[0])
    c = P.geometry.curvature
    p = n + 2
    mon = {
        "t": state.t,
        "phi_max": float(np.max(np.abs(psi - flow.psi_ref))),
        "ric0_max": float(np.sqrt(np.max(c["ric0_sq"]))),
        "Q0_max": float(np.sqrt(np.max(c["q0_sq"]))),
        "lp_riem": float(P.geometry.mean(c["riem_sq"] ** (p / 2)) ** (1 / p)),
    }
    return row, {k: float(v) for k, v in mon.items()}


@dataclass
class FlowResult:
    series: list
    monitors: list
    state: FlowState
    stopped: str = "t_end"

    def column(self, name):
        src = self.series if name in SERIES_COLUMNS else self.monitors
        return np.array([r[name] for r in src])


def _window_substeps(flow, state, config, length):
    if config.dt_policy == "fixed":
        dt = config.dt
    else:
        dt = flow.dt_cfl(state.psi, config.cfl)
    nsub = max(1, math.ceil(length / dt - 1e-9))
    return nsub, length / nsub


def run_flow(config, state=None, psi_ref=None, callback=None):
    """Integrate the flow and record the series at every cadence tick.

    The run is split into cadence windows of equal substeps whose size is
    decided from the state at the start of the window, so resuming from a
    recorded state reproduces an unsplit run exactly.
    """
    n = config.n
    if state is None:
        state = FlowState(0.0, config.initial_profile().psi)
    if psi_ref is None:
        psi_ref = state.psi if state.t == 0 else config.initial_profile().psi
    flow = PotentialFlow(n, psi_ref)
    if not flow.admissible(state.psi):
        raise PositivityError("initial profile is not an admissible metric")
    series, monitors = [], []
    k = int(round(state.t / config.cadence))
    row, mon = record(state, n, flow, config.record_analysis)
    series.append(row)
    monitors.append(mon)
    if callback:
        callback(state, row, mon)
    stopped = "t_end"
    total = int(round(config.t_end / config.cadence))
    while k < total:
        nsub, dt = _window_substeps(flow, state, config, config.cadence)
        for _ in range(nsub):
            state = step_potential(state, dt, flow)
        k += 1
        state = FlowState(k * config.cadence, state.psi, state.flags)
        row, mon = record(state, n, flow, config.record_analysis)
        series.append(row)
        monitors.append(mon)
        if callback:
            callback(state, row, mon)
        if config.stop_on_convergence and mon["ric0_max"] < config.convergence_floor:
            stopped = "converged"
            break
    return FlowResult(series, monitors, state, stopped)


# --------------------------------------------------------------------------
# monitors


def doubling_time_monitor(t, riem, Lambda, c_fit=None):
    """Check |Riem(t)| <= 2 Lambda on [0, 1/(2 c_fit Lambda)].

    ``c_fit`` is the empirical constant of the quadratic growth bound
    d|Riem|/dt <= c |Riem|^2, estimated from the series when not given.
    """
    t = np.asarray(t, dtype=float)
    riem = np.asarray(riem, dtype=float)
    if riem[0] > Lambda * (1 + 1e-12):
        return {"ok": False, "reason": "initial |Riem| exceeds Lambda", "violation_time": float(t[0])}
    if c_fit is None:
        rate = np.diff(riem) / np.diff(t) / np.maximum(riem[:-1], 1e-300) ** 2
        c_fit = float(max(np.max(rate, initial=0.0), 1e-12))
    horizon = 1.0 / (2.0 * c_fit * Lambda)
    inside = t <= horizon
    bad = inside & (riem > 2 * Lambda)
    out = {
        "ok": not bool(np.any(bad)),
        "c_fit": c_fit,
        "horizon": float(horizon),
        "covered": float(min(t[-1], horizon)),
        "max_ratio": float(np.max(riem[inside]) / Lambda) if np.any(inside) else float("nan"),
        "violation_time": float(t[np.argmax(bad)]) if np.any(bad) else None,
    }
    return out


def _trapezoid(y, t):
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(t)))


def pinching_window_check(t, l2_ric0, ric0_max, Q0_max, E1, budget, eps_n=0.1, q0_threshold=None, E1_ref=0.0):
    """Windowed recovery of pointwise pinching from the energy budget.

    (a) average of (1/V) int |Ric - omega|^2 over [0, 6T] below eps0^2 / 2
    (tested only when E1(0) <= E1_ref + eps), (b) max |Ric - omega| over
    [2T, 6T] below ``eps_n``, (c) max |Q0| over [3T, 4T] below
    ``q0_threshold``.  The empirical Moser ratio sup u / mean u over
    [2T, 6T] with u = |Ric - omega|^2 is reported alongside.
    """
    t = np.asarray(t, dtype=float)
    T = budget.T
    if t[0] > 1e-12 or t[-1] < 6 * T * (1 - 1e-9):
        raise CoverageError(f"series covers [{t[0]:.3g}, {t[-1]:.3g}] but [0, {6 * T:.3g}] is needed")
    q0_threshold = eps_n if q0_threshold is None else q0_threshold
    l2 = np.asarray(l2_ric0, dtype=float)
    r0 = np.asarray(ric0_max, dtype=float)
    q0 = np.asarray(Q0_max, dtype=float)
    w6 = t <= 6 * T * (1 + 1e-9)
    avg = _trapezoid(l2[w6], t[w6]) / (6 * T)
    bound = budget.eps0**2 / 2
    hyp = bool(E1[0] <= E1_ref + budget.eps)
    a_ok = (avg <= bound) if hyp else None
    w26 = (t >= 2 * T * (1 - 1e-9)) & w6
    w34 = (t >= 3 * T * (1 - 1e-9)) & (t <= 4 * T * (1 + 1e-9))
    b_val = float(np.max(r0[w26]))
    c_val = float(np.max(q0[w34]))
    u = r0[w26] ** 2
    mean_u = _trapezoid(u, t[w26]) / max(t[w26][-1] - t[w26][0], 1e-300) if np.sum(w26) > 1 else float(u[0])
    failed = []
    if a_ok is False:
        failed.append("energy window [0, 6T]")
    if b_val > eps_n:
        failed.append("Ricci pinching window [2T, 6T]")
    if c_val > q0_threshold:
        failed.append("Q0 window [3T, 4T]")
    return {
        "ok": not failed,
        "failed": failed,
        "hypothesis_E1": hyp,
        "space_time_average": avg,
        "space_time_bound": bound,
        "ric0_max_2T_6T": b_val,
        "Q0_max_3T_4T": c_val,
        "eps_n": eps_n,
        "moser_ratio": float(np.max(u) / mean_u) if mean_u > 0 else 0.0,
        "T": T,
    }


def convergence_detector(t, values, rate_min=0.05, min_samples=50, floor=1e-9, r2_min=0.99):
    """Exponential-decay verdict from a log-linear fit on the series tail."""
    t = np.asarray(t, dtype=float)
    v = np.abs(np.asarray(values, dtype=float))
    if np.all(v < floor):
        return {"verdict": "positive", "degenerate": True, "rate": float("inf"), "r2": 1.0, "window": (float(t[0]), float(t[-1]))}
    keep = v >= floor
    t, v = t[keep], v[keep]
    m = max(min_samples, len(t) // 2)
    if len(t) < min_samples:
        return {"verdict": "inconclusive", "reason": f"fewer than {min_samples} samples", "rate": float("nan"), "r2": float("nan")}
    tt, yy = t[-m:], np.log(v[-m:])
    A = np.column_stack([tt, np.ones_like(tt)])
    coef, *_ = np.linalg.lstsq(A, yy, rcond=None)
    resid = yy - A @ coef
    ss_tot = np.sum((yy - yy.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 0.0
    slope = float(coef[0])
    monotone = bool(np.all(np.diff(v[-m:]) < 0))
    positive = slope < -rate_min and r2 >= r2_min
    verdict = "positive" if positive else "inconclusive"
    return {
        "verdict": verdict,
        "degenerate": False,
        "rate": -slope,
        "r2": float(r2),
        "monotone_tail": monotone,
        "window": (float(tt[0]), float(tt[-1])),
    }


def continuation_driver(config, budget, Lambda_p=None, callback=None):
    """Open-closed continuation in windows of length ``config.window``.

    A window is accepted while 1 - eps_n < Ric < 1 + eps_n holds pointwise
    and the L^p curvature norm (p = n + 2) stays below ``Lambda_p``
    (default twice its initial value).
    """
    from .constants import admissibility_certificate

    state = FlowState(0.0, config.initial_profile().psi)
    P0 = state.profile(config.n)
    cert = admissibility_certificate(P0, budget, E1_ref=0.0)
    if not cert["ok"]:
        return {"ok": False, "reason": "initial certificate failed", "certificate": cert, "series": None}
    series, monitors = [], []
    t = 0.0
    failure = None
    result = None
    limit = None
    while t < config.t_end - 1e-12:
        length = min(config.window, config.t_end - t)
        sub = replace(config, t_end=t + length)
        result = run_flow(sub, state=state, psi_ref=P0.psi, callback=callback)
        new_series = result.series if not series else result.series[1:]
        new_mon = result.monitors if not monitors else result.monitors[1:]
        series.extend(new_series)
        monitors.extend(new_mon)
        if limit is None:
            limit = Lambda_p if Lambda_p is not None else 2.0 * monitors[0]["lp_riem"]
        for row, mon in zip(new_series, new_mon):
            if mon["ric0_max"] >= config.eps_n:
                failure = {"inequality": "Ricci pinching |Ric - omega| < eps_n", "t": row["t"], "value": mon["ric0_max"]}
                break
            if mon["lp_riem"] >= limit:
                failure = {"inequality": "L^p curvature bound", "t": row["t"], "value": mon["lp_riem"]}
                break
        if failure:
            break
        state = result.state
        t = state.t
    tail = np.array([m["ric0_max"] for m in monitors])
    return {
        "ok": failure is None,
        "failure": failure,
        "certificate": cert,
        "t_reached": float(series[-1]["t"]),
        "ric0_tail_monotone": bool(np.all(np.diff(tail[len(tail) // 2:]) <= 0)),
        "series": series,
        "monitors": monitors,
    }
