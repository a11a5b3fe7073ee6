"""Energy functionals E_k^0, J_k, E_k and their first variation.

Every manifold integral of a top-degree wedge product of U(n)-invariant
forms reduces to a 1-D integral of :func:`~krflow.geometry.mixed_volume`
densities; the angular volume cancels against the 1/V normalization.
Potentials are nodal arrays on the grid of the reference profile.
"""

from dataclasses import dataclass, asdict

import numpy as np

from .errors import DomainError, NormalizationError, PathError, PositivityError
from .geometry import Form, mixed_volume


@dataclass(frozen=True)
class PathSpec:
    """Path t -> p(t) * phi from 0 to phi used for J_k."""

    kind: str = "linear"
    power: float = 2.0
    quadrature_nodes: int = 16

    def __post_init__(self):
        if self.kind not in ("linear", "reparam"):
            raise ValueError(f"unknown path kind {self.kind!r}")
        if self.quadrature_nodes < 4:
            raise ValueError("path quadrature needs at least 4 nodes")

    def weights(self):
        """Gauss-Legendre nodes on [0, 1] with p(t), p'(t)."""
        x, w = np.polynomial.legendre.leggauss(self.quadrature_nodes)
        t = 0.5 * (x + 1.0)
        w = 0.5 * w
        if self.kind == "linear":
            return t, w, t, np.ones_like(t)
        return t, w, t**self.power, self.power * t ** (self.power - 1)


@dataclass
class EnergyReport:
    E0: float
    E1: float
    Ek: np.ndarray
    Jk: np.ndarray
    dE1_dt_formula: float
    l2_ric0: float
    l2_scalar: float
    l2_Q0: float

    def as_dict(self):
        d = asdict(self)
        d["Ek"] = list(map(float, self.Ek))
        d["Jk"] = list(map(float, self.Jk))
        return d


def _shifted(ref, phi):
    try:
        return ref.with_potential(np.asarray(phi, dtype=float))
    except PositivityError as exc:
        raise DomainError(f"omega + i dd-bar phi is not positive: {exc}") from exc


def h_potential(ref):
    """Ricci potential h with Ric - omega = i dd-bar h, int (e^h - 1) omega^n = 0.

    h = -(log det + F) + C; the constant has the closed form
    C = log V - log int e^{-(log det + F)} omega^n.
    """
    g = ref.geometry
    raw = g.ricci_potential_raw
    shift = np.min(raw)
    denom = g.integrate(np.exp(-(raw - shift)) * g.density)
    if not np.isfinite(denom) or denom <= 0:
        raise NormalizationError("Ricci potential normalization integral is not positive")
    C = np.log(g.volume) - np.log(denom) + shift
    return C - raw


def log_volume_ratio(ref, target):
    """log(omega_phi^n / omega^n) at the nodes."""
    return (
        target.geometry.ricci_potential_raw
        - ref.geometry.ricci_potential_raw
        - (target.geometry.psi - ref.geometry.psi)
    )


def _ric_sum(n, k, ric, omega, omega_phi):
    """Density of sum_{i=0}^k Ric^i ^ omega^{k-i} ^ omega_phi^{n-k}."""
    total = 0.0
    for i in range(k + 1):
        total = total + mixed_volume(n, (ric, i), (omega, k - i), (omega_phi, n - k))
    return total


def _check_k(n, k):
    if not 0 <= k <= n:
        raise ValueError(f"k must lie in 0..{n}")


def Ek0_energy(phi, ref, k, h=None):
    """E^0_k(phi) relative to the reference metric, constant c_k included."""
    n = ref.n
    _check_k(n, k)
    target = _shifted(ref, phi)
    g, gp = ref.geometry, target.geometry
    if h is None:
        h = h_potential(ref)
    V = g.volume
    weight = _ric_sum(n, k, gp.ric, g.omega, gp.omega)
    main = g.integrate((log_volume_ratio(ref, target) - h) * weight) / V
    ck = g.integrate(h * _ric_sum(n, k, g.ric, g.omega, g.omega)) / V
    return float(main + ck)


def Jk_energy(phi, ref, k, path=None):
    """J_k(phi) by Gauss-Legendre quadrature along ``path`` (J_n = 0)."""
    n = ref.n
    _check_k(n, k)
    if k == n:
        return 0.0
    path = path or PathSpec()
    phi = np.asarray(phi, dtype=float)
    g = ref.geometry
    V = g.volume
    total = 0.0
    for t, w, p, dp in zip(*path.weights()):
        try:
            gt = ref.with_potential(p * phi).geometry
        except PositivityError as exc:
            raise PathError(
                f"metric not positive at path time t = {t:.3f}; "
                "use more quadrature nodes or another path"
            ) from exc
        dens = mixed_volume(n, (gt.omega, k + 1), (gt.omega, n - k - 1)) - mixed_volume(
            n, (g.omega, k + 1), (gt.omega, n - k - 1)
        )
        total += w * g.integrate(dp * phi * dens)
    return float(-(n - k) / V * total)


def Ek_energy(phi, ref, k, path=None):
    """E_k = E^0_k - J_k."""
    return Ek0_energy(phi, ref, k) - Jk_energy(phi, ref, k, path)


def dEk_dt_formula(phi, phidot, ref, k):
    """First variation of E_k at phi in the direction phidot.

    Returns ``(value, split)``; for k = 1 ``split`` holds the two terms
    -(2/(nV)) int (n - R)^2 and -((n-1)/V) int i d(phidot) ^ d-bar(phidot)
    ^ (Ric + omega) ^ omega^{n-2}, whose sum equals the value along the
    flow.  For other k ``split`` is None.
    """
    n = ref.n
    _check_k(n, k)
    gp = _shifted(ref, phi).geometry
    phidot = np.asarray(phidot, dtype=float)
    V = gp.volume
    lap = gp.laplacian(phidot)
    first = (k + 1) / V * gp.integrate(lap * mixed_volume(n, (gp.ric, k), (gp.omega, n - k)))
    second = 0.0
    if k < n:
        dens = mixed_volume(n, (gp.ric, k + 1), (gp.omega, n - k - 1)) - mixed_volume(
            n, (gp.omega, n)
        )
        second = -(n - k) / V * gp.integrate(phidot * dens)
    value = float(first + second)
    split = None
    if k == 1:
        R = gp.curvature["scalar"]
        term1 = -2.0 / (n * V) * gp.integrate((n - R) ** 2 * gp.density)
        term2 = 0.0
        if n >= 2:
            grad = gp.gradient_form(phidot)
            term2 = -(n - 1) / V * gp.integrate(
                mixed_volume(n, (grad, 1), (gp.ric + gp.omega, 1), (gp.omega, n - 2))
            )
        split = {"scalar_term": float(term1), "gradient_term": float(term2)}
    return value, split


def dE0_gradient_form(phi, phidot, ref):
    """-(n/V) int i d(phidot) ^ d-bar(phidot) ^ omega_phi^{n-1} (never positive)."""
    n = ref.n
    gp = _shifted(ref, phi).geometry
    grad = gp.gradient_form(phidot)
    return float(-n / gp.volume * gp.integrate(mixed_volume(n, (grad, 1), (gp.omega, n - 1))))


def flow_velocity(phi, ref, h=None):
    """Right side log(omega_phi^n / omega^n) + phi - h of the potential flow."""
    target = _shifted(ref, phi)
    if h is None:
        h = h_potential(ref)
    return log_volume_ratio(ref, target) + np.asarray(phi) - h


def l2_pinching(geometry):
    """(1/V) int |Ric - omega|^2, (R - n)^2 and |Q0|^2 against omega^n."""
    c = geometry.curvature
    n = geometry.n
    return {
        "l2_ric0": float(geometry.mean(c["ric0_sq"])),
        "l2_scalar": float(geometry.mean((c["scalar"] - n) ** 2)),
        "l2_Q0": float(geometry.mean(c["q0_sq"])),
    }


def l2_pinching_report(phi, ref, rtol=1e-6):
    """EnergyReport with E_0, E_1, all E_k and the L^2 pinching integrals.

    The flag ``identity_ok`` in the returned ``(report, flags)`` pair records
    whether l2_ric0 = l2_scalar held to ``rtol``; a failure signals a
    discretization problem, not a mathematical one.
    """
    n = ref.n
    phi = np.asarray(phi, dtype=float)
    gp = _shifted(ref, phi).geometry
    l2 = l2_pinching(gp)
    Jk = np.array([Jk_energy(phi, ref, k) for k in range(n + 1)])
    Ek = np.array([Ek0_energy(phi, ref, k) for k in range(n + 1)]) - Jk
    d1 = dEk_dt_formula(phi, flow_velocity(phi, ref), ref, 1)[0] if n >= 1 else 0.0
    report = EnergyReport(
        E0=float(Ek[0]),
        E1=float(Ek[1]),
        Ek=Ek,
        Jk=Jk,
        dE1_dt_formula=float(d1),
        **l2,
    )
    scale = max(l2["l2_ric0"], l2["l2_scalar"], 1e-300)
    ok = abs(l2["l2_ric0"] - l2["l2_scalar"]) <= rtol * scale or scale < 1e-14
    return report, {"identity_ok": bool(ok)}
