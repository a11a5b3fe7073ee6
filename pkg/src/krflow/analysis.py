"""Geometric diagnostics of U(n)-invariant metrics.

Everything is computed from momentum data (tau, phi, phi') including the
two poles, interpolated by a cubic Hermite spline in tau.  In these
coordinates the Riemannian metric restricted to the radial direction is
d tau^2 / (2 phi) and for n = 1 the full metric is

    d tau^2 / (2 phi) + 2 phi d theta^2,    area element d tau d theta.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict

import numpy as np
from scipy.interpolate import CubicHermiteSpline, make_interp_spline
from scipy.linalg import eigh, eigh_tridiagonal
from scipy.optimize import brentq

from .errors import DomainError, NumericalError
from .geometry import momentum_data, volume

FEM_ELEMENTS = 2000
QUAD_NODES = 200


@dataclass
class GeometryDigest:
    diameter: float
    lambda1: float
    liyau_ok: bool
    sobolev_proxy: float
    poincare_proxy: float
    ric_min: float
    lambda1_label: str = "full spectrum"
    sobolev_label: str = "lower bound over a 32-function test family"

    def as_dict(self):
        return asdict(self)


def _spline(n, tau, phi, dphi):
    tau = np.asarray(tau, dtype=float)
    return CubicHermiteSpline(tau, np.asarray(phi, dtype=float), np.asarray(dphi, dtype=float))


def _gauss(a, b, m):
    x, w = np.polynomial.legendre.leggauss(m)
    return 0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w


# --------------------------------------------------------------------------
# diameter


def radial_length(n, tau, phi, dphi, nodes=QUAD_NODES):
    """Pole-to-pole length int d tau / sqrt(2 phi).

    The substitution tau = N sin^2(theta / 2) removes the square-root
    singularities at both poles.
    """
    N = float(tau[-1])  # n + 1 for a metric in c_1; kept general for rescaled metrics
    spl = _spline(n, tau, phi, dphi)
    th, w = _gauss(0.0, np.pi, nodes)
    t = N * np.sin(th / 2) ** 2
    jac = 0.5 * N * np.sin(th)
    return float(np.sum(w * jac / np.sqrt(2 * spl(t))))


def diameter_from_momentum(n, tau, phi, dphi):
    radial = radial_length(n, tau, phi, dphi)
    transverse = np.pi * np.sqrt(tau[-1] / 2) if n > 1 else 0.0
    return {"diameter": float(max(radial, transverse)), "radial": radial, "transverse": float(transverse), "exact": n == 1}


def diameter(P):
    """Diameter estimate with its parts (exact for n = 1).

    For n >= 2 this is max(radial pole-to-pole length, great-circle
    diameter pi sqrt(F'/2) of the divisor at infinity), a lower estimate
    of the true diameter built from explicit candidate curves.
    """
    tau, phi, dphi, _ = momentum_data(P)
    return diameter_from_momentum(P.n, tau, phi, dphi)


# --------------------------------------------------------------------------
# first eigenvalue


def _element_quadrature(n, tau, phi, dphi, elements):
    N = n + 1
    spl = _spline(n, tau, phi, dphi)
    mesh = np.linspace(0.0, N, elements + 1)
    xg, wg = np.polynomial.legendre.leggauss(4)
    h = mesh[1] - mesh[0]
    pts = 0.5 * h * (xg[None, :] + 1) + mesh[:-1, None]
    wts = 0.5 * h * wg[None, :] * np.ones_like(pts)
    return mesh, h, pts, wts, np.maximum(spl(pts), 0.0)


def _tridiagonal_lowest(stiff_diag, stiff_off, mass, count):
    s = 1.0 / np.sqrt(mass)
    d = stiff_diag * s * s
    e = stiff_off * s[:-1] * s[1:]
    try:
        return eigh_tridiagonal(d, e, select="i", select_range=(0, count - 1), eigvals_only=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"tridiagonal eigensolver failed: {exc}") from exc


def lambda1_from_momentum(n, tau, phi, dphi, elements=FEM_ELEMENTS):
    """First nonzero eigenvalue of the Laplace-Beltrami operator.

    U(n)-invariant sector: -2 (tau^{n-1} phi u')' = lambda tau^{n-1} u,
    linear finite elements with lumped mass.  For n = 1 the first
    non-invariant mode -(2 phi u')' + u / (2 phi) = lambda u (Dirichlet)
    is included; for n >= 2 the value is labelled a sector bound.
    """
    mesh, h, pts, wts, ph = _element_quadrature(n, tau, phi, dphi, elements)
    w_stiff = np.sum(2 * pts ** (n - 1) * ph * wts, axis=1) / h**2
    diag = np.zeros(elements + 1)
    diag[:-1] += w_stiff
    diag[1:] += w_stiff
    off = -w_stiff
    left = (mesh[1:, None] - pts) / h
    right = (pts - mesh[:-1, None]) / h
    mass = np.zeros(elements + 1)
    mass[:-1] += np.sum(pts ** (n - 1) * left * wts, axis=1)
    mass[1:] += np.sum(pts ** (n - 1) * right * wts, axis=1)
    ev = _tridiagonal_lowest(diag, off, mass, 2)
    invariant = float(ev[1])
    out = {"lambda1": invariant, "invariant": invariant, "label": "U(n)-invariant sector bound"}
    if n == 1:
        out["mode1"] = _mode1(tau, phi, dphi, mesh, h, pts, wts, ph, left, right)
        out["lambda1"] = float(min(invariant, out["mode1"]))
        out["label"] = "full spectrum"
    return out


def _mode1(tau, phi, dphi, mesh, h, pts, wts, ph, left, right):
    """Lowest eigenvalue of -(2 phi u')' + u / (2 phi) = lambda u on [0, 2].

    Written as u = g v with g^2 = tau (N - tau), which turns the singular
    potential into a regular one and the Dirichlet ends into natural ones:
    stiffness 2 r g^4, mass g^2, potential
    W = r (N - 2 tau)^2 / 2 + 1 / (2 r) - (r tau (N - tau)(N - 2 tau))'
    with r = phi / g^2.
    """
    N = 2.0
    dspl = _spline(1, tau, phi, dphi).derivative()
    q = pts * (N - pts)
    dq = N - 2 * pts
    r = ph / q
    dr = (dspl(pts) * q - ph * dq) / q**2
    p = q * dq / 2
    dp = (dq**2 - 2 * q) / 2
    W = r * dq**2 / 2 + 1 / (2 * r) - 2 * (dr * p + r * dp)
    k = np.sum(2 * r * q**2 * wts, axis=1) / h**2
    elements = len(k)
    diag = np.zeros(elements + 1)
    diag[:-1] += k
    diag[1:] += k
    mass = np.zeros(elements + 1)
    mass[:-1] += np.sum(q * left * wts, axis=1)
    mass[1:] += np.sum(q * right * wts, axis=1)
    pot = np.zeros(elements + 1)
    pot[:-1] += np.sum(W * left * wts, axis=1)
    pot[1:] += np.sum(W * right * wts, axis=1)
    return float(_tridiagonal_lowest(diag + pot, -k, mass, 1)[0])


def lambda1(P, elements=FEM_ELEMENTS):
    tau, phi, dphi, _ = momentum_data(P)
    return lambda1_from_momentum(P.n, tau, phi, dphi, elements)


def lambda1_oracle(n, tau, phi, dphi, degree=40, nodes=400):
    """Rayleigh-Ritz in Legendre polynomials (independent check of the FEM).

    The non-invariant n = 1 mode uses the basis sqrt(tau (N - tau)) P_k.
    """
    N = n + 1
    spl = _spline(n, tau, phi, dphi)
    th, w = _gauss(0.0, np.pi, nodes)
    t = N * np.sin(th / 2) ** 2
    w = w * 0.5 * N * np.sin(th)
    y = 2 * t / N - 1
    V = np.polynomial.legendre.legvander(y, degree)
    dV = np.zeros_like(V)
    for k in range(1, degree + 1):
        c = np.zeros(k + 1)
        c[k] = 1
        dV[:, k] = np.polynomial.legendre.legval(y, np.polynomial.legendre.legder(c)) * 2 / N
    ph = spl(t)
    weight = t ** (n - 1)
    K = dV.T @ ((2 * weight * ph * w)[:, None] * dV)
    M = V.T @ ((weight * w)[:, None] * V)
    ev = eigh(K, M, eigvals_only=True)
    best = float(ev[1])
    if n == 1:
        g = np.sqrt(t * (N - t))
        dg = (N - 2 * t) / (2 * g)
        B = g[:, None] * V
        dB = dg[:, None] * V + g[:, None] * dV
        K1 = dB.T @ ((2 * ph * w)[:, None] * dB) + B.T @ ((w / (2 * ph))[:, None] * B)
        M1 = B.T @ (w[:, None] * B)
        best = min(best, float(eigh(K1, M1, eigvals_only=True)[0]))
    return best


def liyau_bound(D):
    """Lower bound pi^2 / (4 D^2) for lambda_1 when Ric >= 0."""
    return np.pi**2 / (4 * D**2)


# --------------------------------------------------------------------------
# Sobolev proxy


def sobolev_test_family(N, count=32):
    """Fixed radial test functions on [0, N]: constants, cosines, bumps."""
    funcs = [lambda t: np.ones_like(t)]
    for k in range(1, count // 2):
        funcs.append(lambda t, k=k: np.cos(k * np.pi * t / N))
    centers = np.linspace(0.0, N, count - len(funcs))
    for c in centers:
        funcs.append(lambda t, c=c: np.exp(-(((t - c) / (0.2 * N)) ** 2)))
    return funcs[:count]


def sobolev_proxy_from_momentum(n, tau, phi, dphi, nodes=QUAD_NODES, family=None):
    """max over the test family of ||f||_p^2 / (||grad f||^2 + ||f||^2).

    p = 2n/(n-1) (sup norm when n = 1).  Integrals are against
    tau^{n-1} d tau, whose total mass is the volume V.
    """
    N = n + 1
    spl = _spline(n, tau, phi, dphi)
    th, w = _gauss(0.0, np.pi, nodes)
    t = N * np.sin(th / 2) ** 2
    w = w * 0.5 * N * np.sin(th) * t ** (n - 1)
    ph = spl(t)
    h = 1e-6
    best = 0.0
    for f in family or sobolev_test_family(N):
        v = f(t)
        dv = (f(t + h) - f(t - h)) / (2 * h)
        grad = np.sum(w * 2 * ph * dv**2)
        l2 = np.sum(w * v**2)
        if n == 1:
            lp = np.max(np.abs(f(np.linspace(0.0, N, 2001)))) ** 2
        else:
            p = 2 * n / (n - 1)
            lp = np.sum(w * np.abs(v) ** p) ** (2 / p)
        best = max(best, lp / (grad + l2))
    return float(best)


def sobolev_proxy(P):
    tau, phi, dphi, _ = momentum_data(P)
    return sobolev_proxy_from_momentum(P.n, tau, phi, dphi)


# --------------------------------------------------------------------------
# Sprouse criterion and digest


def sprouse_check(P, delta=0.5, eps=None):
    """Evaluate (1/V) int ((m-1) - Ric_-)_+ and the diameter assertion."""
    from .constants import epsilon0
    from .geometry import ricci_lower_bound

    n = P.n
    m = 2 * n
    eps = epsilon0(n) if eps is None else eps
    g = P.geometry
    ric_minus = g.curvature["ric_min"]
    value = float(g.mean(np.maximum((m - 1) - ric_minus, 0.0)))
    D = diameter(P)["diameter"]
    lower = ricci_lower_bound(P)
    if lower < -1:
        return {"verdict": "hypothesis not met", "integral": value, "eps": eps, "diameter": D, "ric_min": lower}
    if value < eps:
        ok = D < np.pi + delta
        return {"verdict": "pass" if ok else "fail", "integral": value, "eps": eps, "diameter": D, "ric_min": lower}
    return {"verdict": "integral above threshold", "integral": value, "eps": eps, "diameter": D, "ric_min": lower}


def digest(P):
    from .geometry import ricci_lower_bound

    tau, phi, dphi, _ = momentum_data(P)
    n = P.n
    D = diameter_from_momentum(n, tau, phi, dphi)["diameter"]
    lam = lambda1_from_momentum(n, tau, phi, dphi)
    rmin = ricci_lower_bound(P)
    ok = bool(lam["lambda1"] >= liyau_bound(D)) if rmin >= 0 else True
    return GeometryDigest(
        diameter=D,
        lambda1=lam["lambda1"],
        liyau_ok=ok,
        sobolev_proxy=sobolev_proxy_from_momentum(n, tau, phi, dphi),
        poincare_proxy=1.0 / lam["lambda1"],
        ric_min=rmin,
        lambda1_label=lam["label"],
    )


# --------------------------------------------------------------------------
# segment inequality on CP^1


class SurfaceOfRevolution:
    """The n = 1 metric d tau^2/(2 phi) + 2 phi d theta^2 on [0, N] x S^1."""

    def __init__(self, tau, phi, dphi, nodes=96):
        self.N = 2.0
        self.spl = _spline(1, tau, phi, dphi)
        self.v, self.w = np.polynomial.legendre.leggauss(nodes)
        th, w = _gauss(0.0, np.pi, 400)
        self._th = th
        t = self.N * np.sin(th / 2) ** 2
        integrand = w * 0.5 * self.N * np.sin(th) / np.sqrt(2 * self.spl(t))
        self._t = t
        self._rho = np.cumsum(integrand)
        self.length = float(self._rho[-1])

    def R2(self, t):
        return 2.0 * self.spl(t)

    def rho(self, t):
        """Geodesic distance from the pole tau = 0."""
        return np.interp(t, self._t, self._rho)

    def tau_at_distance(self, r, from_top=False):
        target = self.length - r if from_top else r
        return float(np.interp(target, self._rho, self._t))

    def _integral(self, a, b, c, f=None):
        """int_a^b g / sqrt(2 phi - c^2) d tau, with g = 1, c / (2 phi) and f.

        The cosine substitution absorbs inverse square-root endpoint
        singularities (turning points).
        """
        u = 0.5 * (self.v + 1.0)
        t = a + (b - a) * 0.5 * (1 - np.cos(np.pi * u))
        jac = (b - a) * 0.5 * np.pi * np.sin(np.pi * u) * 0.5
        R2 = self.R2(t)
        root = np.sqrt(np.maximum(R2 - c * c, 1e-300))
        base = self.w * jac / root
        out = [np.sum(base), np.sum(base * c / R2)]
        if f is not None:
            out.append(np.sum(base * f(t)))
        return out

    def turning_point(self, c, lo, hi):
        g = lambda t: self.R2(t) - c * c
        return brentq(g, lo, hi, xtol=1e-14)

    def connect(self, t1, t2, dtheta, f=None):
        """Shortest Clairaut geodesic from (t1, 0) to (t2, dtheta), t1 < t2.

        Returns (length, int f) or None when no candidate converges.
        """
        best = None
        r1, r2 = self.R2(t1), self.R2(t2)
        cmax = np.sqrt(min(r1, r2))
        # monotone branch: theta swept grows from 0 at c = 0
        if dtheta <= self._integral(t1, t2, cmax * (1 - 1e-12))[1]:
            c = brentq(lambda c: self._integral(t1, t2, c)[1] - dtheta, 0.0, cmax * (1 - 1e-12), xtol=1e-13)
            best = self._integral(t1, t2, c, f)
        # branches turning near either pole (sweep pi as c -> 0)
        for side in ("low", "high"):
            start = t1 if side == "low" else t2
            cs = np.sqrt(self.R2(start)) * (1 - 1e-12)

            def swept(c, side=side):
                if side == "low":
                    ts = self.turning_point(c, 1e-300, t1)
                    return self._integral(ts, t1, c)[1] + self._integral(ts, t2, c)[1], ts
                ts = self.turning_point(c, t2, self.N)
                return self._integral(t1, ts, c)[1] + self._integral(t2, ts, c)[1], ts

            try:
                lo_c = 1e-9
                if not (min(swept(lo_c)[0], swept(cs)[0]) <= dtheta <= max(swept(lo_c)[0], swept(cs)[0])):
                    continue
                c = brentq(lambda c: swept(c)[0] - dtheta, lo_c, cs, xtol=1e-13)
                ts = swept(c)[1]
            except (ValueError, RuntimeError):
                continue
            if side == "low":
                parts = [self._integral(ts, t1, c, f), self._integral(ts, t2, c, f)]
            else:
                parts = [self._integral(t1, ts, c, f), self._integral(t2, ts, c, f)]
            cand = [parts[0][i] + parts[1][i] for i in range(len(parts[0]))]
            if best is None or cand[0] < best[0]:
                best = cand
        if best is None:
            return None
        return best[0], (best[2] if f is not None else None)


def _workers():
    try:
        return max(1, int(os.environ.get("WORKERS", "1")))
    except ValueError:
        return 1


def segment_inequality_check(P, r=0.2, samples=500, seed=0, chunks=8, workers=None):
    """Monte-Carlo check of the segment inequality between two polar caps.

    f = |Ric - g| (Riemannian tensor norm, sqrt(2) |K - 1|), caps of
    geodesic radius r around both poles, C(m) = 2^{m-1} = 2, diam(cap)
    bounded by 2r.  Pairs are split into ``chunks`` independent random
    streams, so the result does not depend on the worker count.
    """
    if P.n != 1:
        raise DomainError("segment inequality check is implemented for n = 1")
    tau, phi, dphi, d2phi = momentum_data(P)
    surf = SurfaceOfRevolution(tau, phi, dphi)
    N = 2.0
    Kspl = make_interp_spline(np.asarray(tau), -np.asarray(d2phi), k=3)

    def f(t):
        return np.sqrt(2.0) * np.abs(Kspl(t) - 1.0)

    t_cap1 = surf.tau_at_distance(r)
    t_cap2 = surf.tau_at_distance(r, from_top=True)
    vol1 = 2 * np.pi * t_cap1
    vol2 = 2 * np.pi * (N - t_cap2)
    tq, wq = _gauss(0.0, N, 400)
    int_f = 2 * np.pi * float(np.sum(wq * f(tq)))
    C = 2.0
    diam1 = diam2 = 2 * r
    rhs = C * (diam2 * vol1 + diam1 * vol2) * int_f
    per_pair_bound = C * (diam2 / vol2 + diam1 / vol1) * int_f

    sizes = [samples // chunks + (1 if i < samples % chunks else 0) for i in range(chunks)]
    streams = np.random.SeedSequence(seed).spawn(chunks)

    def run(i):
        rng = np.random.default_rng(streams[i])
        vals, skipped = [], 0
        for _ in range(sizes[i]):
            t1 = rng.uniform(0, t_cap1)
            t2 = rng.uniform(t_cap2, N)
            dth = abs(rng.uniform(0, 2 * np.pi) - rng.uniform(0, 2 * np.pi))
            dth = min(dth, 2 * np.pi - dth)
            try:
                res = surf.connect(t1, t2, dth, f)
            except (ValueError, RuntimeError):
                res = None
            if res is None:
                skipped += 1
            else:
                vals.append(res[1])
        return vals, skipped

    nw = workers or _workers()
    if nw > 1:
        with ThreadPoolExecutor(max_workers=nw) as ex:
            results = list(ex.map(run, range(chunks)))
    else:
        results = [run(i) for i in range(chunks)]
    vals = np.concatenate([np.asarray(v, dtype=float) for v, _ in results]) if samples else np.zeros(0)
    skipped = sum(s for _, s in results)
    lhs = vol1 * vol2 * float(np.mean(vals)) if len(vals) else 0.0
    # absolute floor for the round-off in f = |K - 1| when the metric is round
    floor = 1e-10
    pair_ok = vals <= per_pair_bound * (1 + 1e-12) + floor
    return {
        "lhs": lhs,
        "rhs": float(rhs),
        "ratio": float(lhs / rhs) if rhs > 0 else 0.0,
        "holds": bool(lhs <= rhs * (1 + 1e-12) + floor * vol1 * vol2),
        "pairs": int(samples),
        "skipped": int(skipped),
        "flagged": bool(skipped > 0.05 * samples),
        "pair_pass_fraction": float(np.mean(pair_ok)) if len(vals) else 1.0,
        "per_pair_bound": float(per_pair_bound),
        "max_pair_integral": float(np.max(vals)) if len(vals) else 0.0,
        "r": r,
        "C_m": C,
        "seed": seed,
    }
