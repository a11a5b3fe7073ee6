"""U(n)-invariant Kähler metrics on CP^n and their curvature.

A metric in the anticanonical class is described by its Kähler potential
F(s) on C^n, s = log|z|^2.  At the reference point (e^{s/2}, 0, ..., 0)
the metric is diagonal with radial eigenvalue F'' e^{-s} and n - 1
transverse eigenvalues F' e^{-s}.  The Fubini-Study potential
F0 = (n + 1) log(1 + e^s) has Ric = omega.

Two discretizations share the curvature formulas below:

* :class:`RadialProfile` stores F on an s-grid and differentiates the
  residual F - F0 with Fornberg stencils, closing the grid ends with the
  asymptotic models c + a e^{s} (left) and c + b e^{-s} (right).
* :class:`ChartProfile` stores the residual psi = F - F0 on a uniform grid
  in x = F0'(s) in [0, n + 1], the momentum coordinate of the reference
  metric.  Both poles are grid nodes and the diffusion coefficient of the
  flow stays bounded, which is what the time stepper needs.

In the unitary frame the curvature tensor has three independent values
A = R_{1 1 1 1}, B = R_{1 1 a a}, D = R_{a a b b} (a != b transverse,
R_{a a a a} = 2D).  With tau = F' and phi(tau) = F'' they read

    A = -phi'',  B = (phi - tau phi') / tau^2,  D = (tau - phi) / tau^2.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.integrate import simpson, trapezoid
from scipy.optimize import minimize_scalar
from scipy.interpolate import CubicHermiteSpline, make_interp_spline
from scipy.special import expit

from .errors import (
    BoundaryClosureError,
    ConfigurationError,
    ConvexityError,
    DomainError,
    PositivityError,
)
from .stencils import derivative_matrices, fornberg_weights

TOL_BC = 1e-6
STENCIL_WIDTH = 13
NORM_CONVENTION = (
    "unitary-frame l2 norm summed over all index tuples (i, j, k, l); "
    "|R| <= c_norm(n) |Riem| with c_norm(n) = n"
)


def c_norm(n):
    """Constant in the trace bound |R| <= c_norm(n) * |Riem|."""
    return float(n)


def volume(n):
    """Volume of the anticanonical class per unit angular volume."""
    return (n + 1) ** n / n


# --------------------------------------------------------------------------
# Fubini-Study reference


def fs_derivatives(n, s):
    """F0 and its first four s-derivatives, F0 = (n + 1) log(1 + e^s)."""
    s = np.asarray(s, dtype=float)
    N = n + 1
    sig = expit(s)
    q = sig * (1.0 - sig)
    F0 = N * np.logaddexp(0.0, s)
    return (
        F0,
        N * sig,
        N * q,
        N * q * (1.0 - 2.0 * sig),
        N * q * (1.0 - 6.0 * sig + 6.0 * sig**2),
    )


# --------------------------------------------------------------------------
# Perturbation shapes (functions of s that stay smooth at both poles)


def sech(s):
    s = np.asarray(s, dtype=float)
    return np.exp(-np.abs(s)) * 2.0 / (1.0 + np.exp(-2.0 * np.abs(s)))


def perturbation(shape="sech", center=0.0, seed=None, terms=3):
    """Return a callable psi(s) used to build perturbed profiles.

    ``shape`` is ``"sech"``, ``"sech2"`` or ``"random"``; the random family
    is a seeded sum of shifted sech and sech^2 bumps of unit total weight.
    """
    if shape == "sech":
        return lambda s: sech(np.asarray(s) - center)
    if shape == "sech2":
        return lambda s: sech(np.asarray(s) - center) ** 2
    if shape == "random":
        rng = np.random.default_rng(seed)
        centers = rng.uniform(-1.0, 1.0, terms)
        weights = rng.uniform(-1.0, 1.0, terms)
        kinds = rng.integers(1, 3, terms)
        weights /= np.sum(np.abs(weights))

        def psi(s):
            s = np.asarray(s, dtype=float)
            out = np.zeros_like(s)
            for c, w, k in zip(centers, weights, kinds):
                out = out + w * sech(s - c) ** k
            return out

        return psi
    raise ConfigurationError(f"unknown perturbation shape {shape!r}")


# --------------------------------------------------------------------------
# Shared per-node geometry


@dataclass(frozen=True)
class Form:
    """A U(n)-invariant real (1,1)-form through its radial/transverse parts.

    ``rad`` already carries the Jacobian ds/dxi of the discretization
    variable xi, so ``mixed_volume`` densities integrate directly in xi.
    """

    rad: np.ndarray
    tra: np.ndarray

    def __add__(self, other):
        return Form(self.rad + other.rad, self.tra + other.tra)

    def __sub__(self, other):
        return Form(self.rad - other.rad, self.tra - other.tra)

    def scale(self, c):
        return Form(c * self.rad, c * self.tra)


def mixed_volume(n, *groups):
    """Density of alpha_1^{c_1} ^ ... ^ alpha_r^{c_r}, sum c = n.

    ``groups`` are ``(form, count)`` pairs.  Normalized so that
    ``mixed_volume(n, (omega, n))`` is F'' F'^{n-1} (times the Jacobian).
    """
    if sum(c for _, c in groups) != n:
        raise ValueError("form counts must add up to the complex dimension")
    total = 0.0
    for i, (form_i, c_i) in enumerate(groups):
        if c_i == 0:
            continue
        term = c_i * form_i.rad
        for j, (form_j, c_j) in enumerate(groups):
            power = c_j - 1 if j == i else c_j
            if power:
                term = term * form_j.tra**power
        total = total + term
    return total / n


@dataclass
class Geometry:
    """Curvature data of one profile at its nodes."""

    n: int
    s: np.ndarray
    tau: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    d2phi: np.ndarray
    omega: Form
    ric: Form
    ricci_potential_raw: np.ndarray  # log(F'' F'^{n-1}) - n s + F
    psi: np.ndarray  # F - F0
    integrate: object = field(repr=False)
    ds: object = field(repr=False)  # f -> f_s
    ddbar_rad: object = field(repr=False)  # f -> J f_ss
    grad_rad: object = field(repr=False)  # f -> J f_s^2
    laplacian_fn: object = field(repr=False)
    pole: np.ndarray = None

    @cached_property
    def density(self):
        return mixed_volume(self.n, (self.omega, self.n))

    @cached_property
    def volume(self):
        return self.integrate(self.density)

    def mean(self, f):
        """(1/V) * integral of f omega^n."""
        return self.integrate(f * self.density) / self.volume

    @cached_property
    def curvature(self):
        return curvature_components(
            self.n, self.tau, self.phi, self.dphi, self.d2phi, self.pole
        )

    @cached_property
    def ricci_potential_eigs(self):
        """Ricci eigenvalues from Ric = -i dd-bar log det g."""
        rad = self.ric.rad / self.omega.rad
        with np.errstate(invalid="ignore", divide="ignore"):
            tra = self.ric.tra / self.omega.tra
        tra = np.where(self.pole, rad, tra)
        return rad, tra

    def laplacian(self, f):
        """Complex Laplacian g^{i j-bar} f_{i j-bar} of a radial function."""
        return self.laplacian_fn(f)

    def ddbar(self, f):
        """The form i dd-bar f of a radial function, Jacobian included."""
        return Form(self.ddbar_rad(f), self.ds(f))

    def gradient_form(self, f):
        """The form i df ^ d-bar f of a radial function."""
        return Form(self.grad_rad(f), np.zeros(len(self.tau)))


def curvature_components(n, tau, phi, dphi, d2phi, pole=None):
    """Unitary-frame curvature values and derived scalars at each node."""
    A = -d2phi
    with np.errstate(invalid="ignore", divide="ignore"):
        B = (phi - tau * dphi) / tau**2
        D = (tau - phi) / tau**2
    if pole is not None and np.any(pole):
        B = np.where(pole, -0.5 * d2phi, B)
        D = np.where(pole, -0.5 * d2phi, D)
    rho_r = A + (n - 1) * B
    rho_t = B + n * D
    scalar = rho_r + (n - 1) * rho_t
    c = 1.0 / (n + 1)
    riem_sq = A**2 + 4 * (n - 1) * B**2 + 2 * n * (n - 1) * D**2
    q0_sq = (A - 2 * c) ** 2 + 4 * (n - 1) * (B - c) ** 2 + 2 * n * (n - 1) * (D - c) ** 2
    ric0_sq = (rho_r - 1) ** 2 + (n - 1) * (rho_t - 1) ** 2
    ric_min = rho_r if n == 1 else np.minimum(rho_r, rho_t)
    return {
        "A": A,
        "B": B,
        "D": D,
        "rho_r": rho_r,
        "rho_t": rho_t,
        "scalar": scalar,
        "riem_sq": riem_sq,
        "q0_sq": q0_sq,
        "ric0_sq": ric0_sq,
        "ric_min": ric_min,
    }


def expand_tensor(n, A, B, D):
    """Full unitary-frame table T[i, j, k, l] = R_{i j-bar k l-bar} at a node.

    Index 0 is radial, 1..n-1 transverse.
    """
    T = np.zeros((n, n, n, n))
    T[0, 0, 0, 0] = A
    for a in range(1, n):
        for idx in ((0, 0, a, a), (a, a, 0, 0), (0, a, a, 0), (a, 0, 0, a)):
            T[idx] = B
        T[a, a, a, a] = 2 * D
        for b in range(1, n):
            if b != a:
                T[a, a, b, b] = D
                T[a, b, b, a] = D
    return T


@dataclass(frozen=True)
class CurvatureFrame:
    """Pointwise curvature of a U(n)-invariant metric in a unitary frame."""

    n: int
    s: float
    metric_eigs: tuple
    R4: dict  # independent components {"A": .., "B": .., "D": ..}
    ricci_eigs: tuple
    ricci_eigs_potential: tuple
    scalar: float
    ric0_norm: float
    Q0_norm: float
    riem_norm: float

    def tensor(self):
        return expand_tensor(self.n, self.R4["A"], self.R4["B"], self.R4["D"])


# --------------------------------------------------------------------------
# s-grid profiles


@dataclass(frozen=True)
class MomentumProfile:
    """Legendre-dual description phi(tau) = F''(s(tau)) on tau in [0, n + 1]."""

    n: int
    tau_grid: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray = None
    d2phi: np.ndarray = None
    anchor: tuple = None  # (s, F) at the middle interior node
    tol_bc: float = TOL_BC

    def __post_init__(self):
        t = np.asarray(self.tau_grid, dtype=float)
        p = np.asarray(self.phi, dtype=float)
        N = self.n + 1
        if t.ndim != 1 or len(t) != len(p) or len(t) < 4:
            raise ConfigurationError("tau_grid and phi must be 1-D arrays of equal length")
        if np.any(np.diff(t) <= 0):
            raise ConvexityError("tau grid is not strictly increasing")
        if abs(t[0]) > self.tol_bc or abs(t[-1] - N) > self.tol_bc:
            raise BoundaryClosureError(f"tau grid must span [0, {N}]")
        if abs(p[0]) > self.tol_bc or abs(p[-1]) > self.tol_bc:
            raise BoundaryClosureError("phi must vanish at both ends of the momentum interval")
        if np.any(p[1:-1] <= 0):
            raise ConvexityError("phi must be positive inside the momentum interval")
        if self.dphi is not None:
            d = np.asarray(self.dphi, dtype=float)
            if abs(d[0] - 1) > self.tol_bc or abs(d[-1] + 1) > self.tol_bc:
                raise BoundaryClosureError("phi' must be +1 and -1 at the ends")

    @cached_property
    def spline(self):
        if self.dphi is None:
            return make_interp_spline(self.tau_grid, self.phi, k=3)
        return CubicHermiteSpline(self.tau_grid, self.phi, self.dphi)


class RadialProfile:
    """Kähler potential F(s) of a U(n)-invariant metric on an s-grid."""

    def __init__(self, n, grid, F, tol_bc=TOL_BC, validate=True, psi=None):
        if int(n) != n or n < 1:
            raise ConfigurationError("complex dimension must be an integer >= 1")
        grid = np.asarray(grid, dtype=float)
        F = np.asarray(F, dtype=float)
        if grid.ndim != 1 or len(grid) < 16:
            raise ConfigurationError("grid needs at least 16 nodes")
        if np.any(np.diff(grid) <= 0):
            raise ConfigurationError("grid must be strictly increasing")
        if F.shape != grid.shape:
            raise ConfigurationError("F must have the same shape as the grid")
        self.n = int(n)
        self.grid = grid
        self.F = F
        self.tol_bc = tol_bc
        if psi is not None:
            # residual supplied exactly; avoids cancellation in F - F0
            self.__dict__["psi"] = np.asarray(psi, dtype=float)
        if validate:
            self.validate()

    # ---- boundary closure -------------------------------------------------

    @cached_property
    def psi(self):
        return self.F - fs_derivatives(self.n, self.grid)[0]

    @cached_property
    def boundary_model(self):
        """Least-squares fit of the residual tails.

        Left: c + a1 e^{s} + a2 e^{2s}; right: c + b1 e^{-s} + b2 e^{-2s}
        (the first terms of the expansion of a smooth potential at the
        poles), fit on the last five nodes at each end.
        """
        s, psi = self.grid, self.psi
        k = 5
        out = {}
        residual = 0.0
        for side, idx, sign in (("left", slice(0, k), 1.0), ("right", slice(-k, None), -1.0)):
            ends = s[idx]
            origin = s[0] if sign > 0 else s[-1]
            u = np.exp(sign * (ends - origin))
            A = np.column_stack([np.ones(k), u, u**2])
            coef = np.linalg.lstsq(A, psi[idx], rcond=None)[0]
            residual = max(residual, float(np.max(np.abs(psi[idx] - A @ coef))))
            scale = np.exp(-sign * origin)
            out[side] = {
                "c": float(coef[0]),
                "a1": float(coef[1] * scale),
                "a2": float(coef[2] * scale**2),
            }
        N = self.n + 1
        # coefficient of the leading e^{+-s} term of F'' itself
        out["left"]["a"] = N + out["left"]["a1"]
        out["right"]["b"] = N + out["right"]["a1"]
        out["residual"] = residual
        out["L"] = (float(s[0]), float(s[-1]))
        return out

    def _tail(self, side, pts):
        m = self.boundary_model[side]
        e = np.exp(pts if side == "left" else -pts)
        return m["c"] + m["a1"] * e + m["a2"] * e**2

    def _extended(self):
        """Grid and residual padded with ghost nodes from the tail models."""
        s, psi = self.grid, self.psi
        g = STENCIL_WIDTH // 2
        hl, hr = s[1] - s[0], s[-1] - s[-2]
        sl = s[0] - hl * np.arange(g, 0, -1)
        sr = s[-1] + hr * np.arange(1, g + 1)
        return (
            np.concatenate([sl, s, sr]),
            np.concatenate([self._tail("left", sl), psi, self._tail("right", sr)]),
        )

    def derivatives_at(self, points):
        """F and its first four s-derivatives at arbitrary points in the span."""
        pts = np.atleast_1d(np.asarray(points, dtype=float))
        lo, hi = self.grid[0], self.grid[-1]
        if np.any(pts < lo - 1e-12) or np.any(pts > hi + 1e-12):
            raise DomainError(f"evaluation point outside grid span [{lo}, {hi}]")
        se, pe = self._extended()
        out = np.zeros((5, len(pts)))
        for i, z in enumerate(pts):
            j = np.searchsorted(se, z)
            start = min(max(j - STENCIL_WIDTH // 2, 0), len(se) - STENCIL_WIDTH)
            idx = np.arange(start, start + STENCIL_WIDTH)
            w = fornberg_weights(z, se[idx], 4)
            out[:, i] = w @ pe[idx]
        fs = fs_derivatives(self.n, pts)
        return tuple(fs[k] + out[k] for k in range(5))

    @cached_property
    def node_derivatives(self):
        se, pe = self._extended()
        D = derivative_matrices(se, 4, STENCIL_WIDTH)
        g = STENCIL_WIDTH // 2
        sl = slice(g, g + len(self.grid))
        fs = fs_derivatives(self.n, self.grid)
        out = [self.F]
        for k in range(1, 5):
            out.append(fs[k] + (D[k] @ pe)[sl])
        return tuple(out)

    def validate(self):
        F, F1, F2 = self.node_derivatives[:3]
        if np.any(F1 <= 0) or np.any(F2 <= 0):
            raise PositivityError("F' and F'' must be positive at every node")
        m = self.boundary_model
        if m["residual"] > self.tol_bc:
            raise BoundaryClosureError(
                f"grid ends are not in the asymptotic regime (fit residual {m['residual']:.2e})"
            )
        if m["left"]["a"] <= 0 or m["right"]["b"] <= 0:
            raise BoundaryClosureError("tail model has non-positive metric coefficient")
        return True

    # ---- geometry ------------------------------------------------------------

    def _ds(self, f):
        return derivative_matrices(self.grid, 2, STENCIL_WIDTH)[1] @ f

    def _dss(self, f):
        return derivative_matrices(self.grid, 2, STENCIL_WIDTH)[2] @ f

    def _laplacian(self, f):
        F1, F2 = self.node_derivatives[1:3]
        return self._dss(f) / F2 + (self.n - 1) * self._ds(f) / F1

    def _integrate(self, g):
        s = self.grid
        total = trapezoid(g, s)
        # exponential tails beyond the grid ends, plus the matching
        # Euler-Maclaurin endpoint correction of the trapezoid rule
        for a, b, h in ((g[0], g[1], s[1] - s[0]), (g[-1], g[-2], s[-1] - s[-2])):
            if a != 0 and a * b > 0 and abs(b) > abs(a):
                kappa = np.log(b / a) / h
                total += a / kappa + h**2 * kappa * a / 12
        return total

    @cached_property
    def geometry(self):
        n = self.n
        F, F1, F2, F3, F4 = self.node_derivatives
        s = self.grid
        dphi = F3 / F2
        d2phi = (F4 * F2 - F3**2) / F2**3
        omega = Form(F2, F1)
        ric = Form(
            -(F4 * F2 - F3**2) / F2**2 - (n - 1) * (F3 * F1 - F2**2) / F1**2,
            n - F3 / F2 - (n - 1) * F2 / F1,
        )
        raw = np.log(F2) + (n - 1) * np.log(F1) - n * s + F
        return Geometry(
            n=n,
            s=s,
            tau=F1,
            phi=F2,
            dphi=dphi,
            d2phi=d2phi,
            omega=omega,
            ric=ric,
            ricci_potential_raw=raw,
            psi=self.psi,
            integrate=self._integrate,
            ds=self._ds,
            ddbar_rad=self._dss,
            grad_rad=lambda f: self._ds(f) ** 2,
            laplacian_fn=self._laplacian,
            pole=np.zeros(len(s), dtype=bool),
        )

    def with_potential(self, phi):
        """Profile of omega + i dd-bar phi on the same grid."""
        return RadialProfile(self.n, self.grid, self.F + phi, self.tol_bc, psi=self.psi + phi)

    def snapshot(self):
        return {
            "kind": "radial",
            "n": self.n,
            "L": float(max(-self.grid[0], self.grid[-1])),
            "grid": self.grid.tolist(),
            "F": self.F.tolist(),
            "boundary_model": self.boundary_model,
        }


def fubini_study_profile(n, grid):
    """Fubini-Study profile F = (n + 1) log(1 + e^s) on ``grid``."""
    grid = np.asarray(grid, dtype=float)
    return RadialProfile(n, grid, fs_derivatives(n, grid)[0], psi=np.zeros_like(grid))


def perturbed_profile(n, grid, amplitude, shape="sech", **kw):
    """Fubini-Study profile plus ``amplitude * shape(s)``."""
    grid = np.asarray(grid, dtype=float)
    psi = perturbation(shape, **kw) if isinstance(shape, str) else shape
    res = amplitude * psi(grid)
    return RadialProfile(n, grid, fs_derivatives(n, grid)[0] + res, psi=res)


def uniform_grid(L=12.0, nodes=256):
    return np.linspace(-L, L, nodes)


# --------------------------------------------------------------------------
# momentum-chart profiles (the flow discretization)


class ChartProfile:
    """Residual psi = F - F0 on a uniform grid of x = F0'(s) in [0, n + 1]."""

    width = 7

    def __init__(self, n, nodes_or_x, psi=None, validate=True):
        if int(n) != n or n < 1:
            raise ConfigurationError("complex dimension must be an integer >= 1")
        self.n = int(n)
        N = self.n + 1
        if np.ndim(nodes_or_x) == 0:
            x = np.linspace(0.0, N, int(nodes_or_x))
        else:
            x = np.asarray(nodes_or_x, dtype=float)
        if len(x) < 16:
            raise ConfigurationError("grid needs at least 16 nodes")
        if abs(x[0]) > 1e-14 or abs(x[-1] - N) > 1e-12 or np.ptp(np.diff(x)) > 1e-9:
            raise ConfigurationError(f"chart grid must be uniform on [0, {N}]")
        self.x = x
        self.psi = np.zeros_like(x) if psi is None else np.asarray(psi, dtype=float)
        if self.psi.shape != x.shape:
            raise ConfigurationError("psi must match the chart grid")
        if validate:
            self.validate()

    @classmethod
    def from_shape(cls, n, nodes, amplitude=0.0, shape="sech", **kw):
        x = np.linspace(0.0, n + 1, int(nodes))
        psi_fn = perturbation(shape, **kw) if isinstance(shape, str) else shape
        return cls(n, x, amplitude * psi_fn(chart_to_s(n, x)))

    @property
    def s(self):
        return chart_to_s(self.n, self.x)

    @cached_property
    def phi0(self):
        N = self.n + 1
        x = self.x
        return x * (N - x) / N, (N - 2 * x) / N, -2.0 / N

    @property
    def D(self):
        return derivative_matrices(self.x, 4, self.width)

    @cached_property
    def tau_parts(self):
        """tau = F', tau_x and the pieces used by the flow and the curvature."""
        D = self.D
        p0, p1, p2 = self.phi0
        psi = self.psi
        d1, d2, d3, d4 = (D[k] @ psi for k in range(1, 5))
        tau = self.x + p0 * d1
        tau_x = 1.0 + p1 * d1 + p0 * d2
        tau_xx = p2 * d1 + 2 * p1 * d2 + p0 * d3
        tau_xxx = 3 * p2 * d2 + 3 * p1 * d3 + p0 * d4
        ratio = 1.0 + (self.n + 1 - self.x) * d1 / (self.n + 1)  # tau / x
        return {
            "d1": d1,
            "d2": d2,
            "tau": tau,
            "tau_x": tau_x,
            "tau_xx": tau_xx,
            "tau_xxx": tau_xxx,
            "ratio": ratio,
        }

    @cached_property
    def log_density(self):
        """ell = log(omega^n / omega_FS^n), smooth up to both poles."""
        t = self.tau_parts
        return np.log(t["tau_x"]) + (self.n - 1) * np.log(t["ratio"])

    def validate(self):
        t = self.tau_parts
        if np.any(t["tau_x"] <= 0) or np.any(t["ratio"] <= 0):
            raise PositivityError("metric lost positivity on the chart grid")
        if np.any(np.diff(t["tau"]) <= 0):
            raise PositivityError("F' is not monotone on the chart grid")
        return True

    def _integrate(self, g):
        return simpson(g, x=self.x)

    # d/ds = phi0 d/dx and the Jacobian ds/dx is 1/phi0
    def _ds(self, f):
        return self.phi0[0] * (self.D[1] @ f)

    def _ddbar_rad(self, f):
        p0, p1, _ = self.phi0
        return p1 * (self.D[1] @ f) + p0 * (self.D[2] @ f)

    def _grad_rad(self, f):
        return self.phi0[0] * (self.D[1] @ f) ** 2

    def _laplacian(self, f):
        t = self.tau_parts
        N = self.n + 1
        out = self._ddbar_rad(f) / t["tau_x"]
        if self.n > 1:
            # phi0 / tau = (N - x) / (N * tau/x), regular at the pole
            out = out + (self.n - 1) * (N - self.x) / (N * t["ratio"]) * (self.D[1] @ f)
        return out

    @cached_property
    def geometry(self):
        n = self.n
        N = n + 1
        x = self.x
        p0, p1, p2 = self.phi0
        t = self.tau_parts
        tau, tx, txx, txxx = t["tau"], t["tau_x"], t["tau_xx"], t["tau_xxx"]
        phi = p0 * tx
        dphi = p1 + p0 * txx / tx
        dphi_x = p2 + (p1 * txx + p0 * txxx) / tx - p0 * txx**2 / tx**2
        d2phi = dphi_x / tx
        ell = self.log_density
        ell_x = self.D[1] @ ell
        ell_xx = self.D[2] @ ell
        ric = Form(1.0 - (p1 * ell_x + p0 * ell_xx), x - p0 * ell_x)
        pole = np.zeros(len(x), dtype=bool)
        pole[0] = True
        raw = ell + self.psi + n * np.log(N)
        return Geometry(
            n=n,
            s=self.s,
            tau=tau,
            phi=phi,
            dphi=dphi,
            d2phi=d2phi,
            omega=Form(tx, tau),
            ric=ric,
            ricci_potential_raw=raw,
            psi=self.psi,
            integrate=self._integrate,
            ds=self._ds,
            ddbar_rad=self._ddbar_rad,
            grad_rad=self._grad_rad,
            laplacian_fn=self._laplacian,
            pole=pole,
        )

    def with_potential(self, phi):
        return ChartProfile(self.n, self.x, self.psi + phi)

    def to_radial(self, grid):
        """Sample F = F0 + psi on an s-grid through a quintic spline in x."""
        grid = np.asarray(grid, dtype=float)
        spl = make_interp_spline(self.x, self.psi, k=5)
        xs = fs_derivatives(self.n, grid)[1]
        res = spl(xs)
        return RadialProfile(self.n, grid, fs_derivatives(self.n, grid)[0] + res, psi=res)

    def snapshot(self):
        return {"kind": "chart", "n": self.n, "x": self.x.tolist(), "psi": self.psi.tolist()}


def chart_to_s(n, x):
    N = n + 1
    with np.errstate(divide="ignore"):
        return np.log(x) - np.log(N - x)


# --------------------------------------------------------------------------
# operations


def metric_at(P, s):
    """Radial and transverse coordinate-frame metric eigenvalues at s."""
    F, F1, F2 = (v[0] for v in P.derivatives_at([s])[:3])
    g = (F2 * np.exp(-s), F1 * np.exp(-s))
    if g[0] <= 0 or g[1] <= 0:
        raise PositivityError(f"non-positive metric eigenvalue at s = {s}")
    return g


def frames_from_derivatives(n, s, F1, F2, F3, F4):
    """Curvature components and both Ricci routes from F', ..., F''''."""
    dphi = F3 / F2
    d2phi = (F4 * F2 - F3**2) / F2**3
    comp = curvature_components(n, F1, F2, dphi, d2phi)
    ric_rad = -(F4 * F2 - F3**2) / F2**2 - (n - 1) * (F3 * F1 - F2**2) / F1**2
    ric_tra = n - F3 / F2 - (n - 1) * F2 / F1
    comp["rho_r_pot"] = ric_rad / F2
    comp["rho_t_pot"] = ric_tra / F1
    return comp


def curvature_at(P, s):
    """Full :class:`CurvatureFrame` of a RadialProfile at the point s."""
    n = P.n
    F, F1, F2, F3, F4 = (v[0] for v in P.derivatives_at([s]))
    if F1 <= 0 or F2 <= 0:
        raise PositivityError(f"non-positive metric eigenvalue at s = {s}")
    c = frames_from_derivatives(n, s, F1, F2, F3, F4)
    return CurvatureFrame(
        n=n,
        s=float(s),
        metric_eigs=(F2 * np.exp(-s), F1 * np.exp(-s)),
        R4={"A": float(c["A"]), "B": float(c["B"]), "D": float(c["D"])},
        ricci_eigs=(float(c["rho_r"]), float(c["rho_t"])),
        ricci_eigs_potential=(float(c["rho_r_pot"]), float(c["rho_t_pot"])),
        scalar=float(c["scalar"]),
        ric0_norm=float(np.sqrt(c["ric0_sq"])),
        Q0_norm=float(np.sqrt(c["q0_sq"])),
        riem_norm=float(np.sqrt(c["riem_sq"])),
    )


def _refine_extremum(P, values, fn, sign):
    """Polish a nodal extremum of ``fn(frame)`` between the neighbouring nodes."""
    i = int(np.argmin(sign * values))
    best = float(values[i])
    if not isinstance(P, RadialProfile):
        return best
    lo = P.grid[max(i - 1, 0)]
    hi = P.grid[min(i + 1, len(P.grid) - 1)]
    res = minimize_scalar(
        lambda z: sign * fn(curvature_at(P, z)),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-10},
    )
    if res.success and res.fun < sign * best:
        best = float(sign * res.fun)
    return best


def ricci_lower_bound(P):
    """Smallest Ricci eigenvalue relative to the metric.

    The nodal minimum is polished by a bounded 1-D search between the
    neighbouring nodes, so the result does not depend on whether a node
    happens to sit at the minimizer.
    """
    c = P.geometry.curvature
    return _refine_extremum(P, c["ric_min"], lambda f: min(f.ricci_eigs[: 1 if P.n == 1 else 2]), 1.0)


def riem_sup_norm(P):
    """Supremum of |Riem| in the convention :data:`NORM_CONVENTION`."""
    c = P.geometry.curvature
    return _refine_extremum(P, np.sqrt(c["riem_sq"]), lambda f: f.riem_norm, -1.0)


def ric0_sup_norm(P):
    return float(np.sqrt(np.max(P.geometry.curvature["ric0_sq"])))


def momentum_data(P):
    """(tau, phi, phi', phi'') including both poles, for any profile kind."""
    g = P.geometry
    N = P.n + 1
    tau, phi, dphi, d2phi = g.tau, g.phi, g.dphi, g.d2phi
    if isinstance(P, ChartProfile):
        return tau, phi, dphi, d2phi
    tau = np.concatenate([[0.0], tau, [N]])
    phi = np.concatenate([[0.0], phi, [0.0]])
    dphi = np.concatenate([[1.0], dphi, [-1.0]])
    d2phi = np.concatenate([[d2phi[0]], d2phi, [d2phi[-1]]])
    return tau, phi, dphi, d2phi


def to_momentum(P):
    """Legendre-dual momentum profile of a RadialProfile (or ChartProfile)."""
    if np.any(np.diff(P.geometry.tau) <= 0):
        raise ConvexityError("F' is not strictly increasing; Legendre transform undefined")
    tau, phi, dphi, d2phi = momentum_data(P)
    anchor = None
    if isinstance(P, RadialProfile):
        mid = len(P.grid) // 2
        anchor = (float(P.grid[mid]), float(P.F[mid]), mid + 1)
    return MomentumProfile(P.n, tau, phi, dphi, d2phi, anchor=anchor, tol_bc=P.tol_bc if hasattr(P, "tol_bc") else TOL_BC)


def from_momentum(M, tol_bc=TOL_BC):
    """Reconstruct the radial profile on the nodes s(tau_j) of the interior.

    Uses s = int d tau / phi and F = int tau ds with two-point Hermite
    rules built from phi, phi' and phi''.
    """
    if M.anchor is None:
        raise ConfigurationError("momentum profile carries no (s, F) anchor")
    s_a, F_a, j_a = M.anchor
    tau = np.asarray(M.tau_grid)[1:-1]
    phi = np.asarray(M.phi)[1:-1]
    dphi = np.asarray(M.dphi)[1:-1]
    g = 1.0 / phi
    g1 = -dphi / phi**2
    h = np.diff(tau)
    ds = h * (g[:-1] + g[1:]) / 2 + h**2 * (g1[:-1] - g1[1:]) / 12
    if M.d2phi is not None:
        d2 = np.asarray(M.d2phi)[1:-1]
        g2 = (2 * dphi**2 - phi * d2) / phi**3
        ds = h * (g[:-1] + g[1:]) / 2 + h**2 * (g1[:-1] - g1[1:]) / 10 + h**3 * (g2[:-1] + g2[1:]) / 120
    s = np.concatenate([[0.0], np.cumsum(ds)])
    j = j_a - 1
    s = s - s[j] + s_a
    # F increments in s: tau' = phi, tau'' = phi phi'
    t1 = phi
    t2 = phi * dphi
    dF = ds * (tau[:-1] + tau[1:]) / 2 + ds**2 * (t1[:-1] - t1[1:]) / 10 + ds**3 * (t2[:-1] + t2[1:]) / 120
    F = np.concatenate([[0.0], np.cumsum(dF)])
    F = F - F[j] + F_a
    return RadialProfile(M.n, s, F, tol_bc=tol_bc)
