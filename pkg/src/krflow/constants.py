"""Explicit constants and certificates of the stability argument.

Every number depending on the unspecified universal constant c(n) carries
the value used in its output.
"""

from dataclasses import dataclass, field, asdict
from fractions import Fraction

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import ConfigurationError, DomainError

C_N_DEFAULT = 8.0


def sphere_ratio(m):
    """C(m) = 2^{m-1}: area ratio of Euclidean spheres of radius r and r/2."""
    return 2 ** (m - 1)


def _eps0_objective(N, m):
    return (N - 2) / (8 * sphere_ratio(m) * N**m)


def epsilon0_exact(n):
    """epsilon_0(n) as a Fraction, from the optimizer N* = 2m/(m-1), m = 2n."""
    if n < 1:
        raise DomainError("n must be >= 1")
    m = 2 * n
    N = Fraction(2 * m, m - 1)
    return (N - 2) / (8 * sphere_ratio(m) * N**m)


def epsilon0(n):
    """sup over N > 2 of (N - 2) / (8 C(m) N^m), m = 2n."""
    return float(epsilon0_exact(n))


def epsilon0_numeric(n):
    """Golden-section maximization of the same objective (cross-check)."""
    m = 2 * n
    res = minimize_scalar(lambda N: -_eps0_objective(N, m), bracket=(2.0001, 3.0, 50.0), method="golden", tol=1e-12)
    return float(-res.fun), float(res.x)


def _check_inputs(delta, Lambda, c_n=C_N_DEFAULT):
    if not (0 < delta <= 1):
        raise ConfigurationError(f"delta must lie in (0, 1], got {delta}")
    if not Lambda > 0:
        raise ConfigurationError(f"Lambda must be positive, got {Lambda}")
    if not c_n > 0:
        raise ConfigurationError(f"c(n) must be positive, got {c_n}")


def time_budget(delta, Lambda, c_n=C_N_DEFAULT, n=1):
    """(6T, 6T') and the window length T = min(6T, 6T') / 6."""
    _check_inputs(delta, Lambda, c_n)
    six_T = delta / ((delta + Lambda * c_n) * Lambda)
    six_T_alt = Lambda ** (-2 * n) * delta * epsilon0(n) ** 2
    return {"6T": six_T, "6T_alt": six_T_alt, "T": min(six_T, six_T_alt) / 6.0, "c_n": c_n}


def epsilon_budget(delta, Lambda, n=1, c_n=C_N_DEFAULT):
    """Energy slack: min of Lambda^{-2n} delta eps0^2 and eps0^2 / 2 * 6T."""
    _check_inputs(delta, Lambda, c_n)
    e0 = epsilon0(n)
    first = Lambda ** (-2 * n) * delta * e0**2
    second = 0.5 * e0**2 * delta / ((delta + Lambda * c_n) * Lambda)
    return min(first, second)


@dataclass
class StabilityBudget:
    n: int
    delta: float
    Lambda: float
    c_n: float = C_N_DEFAULT
    eps0: float = field(init=False)
    six_T: float = field(init=False)
    six_T_alt: float = field(init=False)
    T: float = field(init=False)
    eps: float = field(init=False)
    C_m: int = field(init=False)

    def __post_init__(self):
        tb = time_budget(self.delta, self.Lambda, self.c_n, self.n)
        self.eps0 = epsilon0(self.n)
        self.six_T = tb["6T"]
        self.six_T_alt = tb["6T_alt"]
        self.T = tb["T"]
        self.eps = epsilon_budget(self.delta, self.Lambda, self.n, self.c_n)
        self.C_m = sphere_ratio(2 * self.n)

    def as_dict(self):
        d = asdict(self)
        d["c_n_note"] = "c(n) is an unspecified universal constant; value is a configuration default"
        return d


def condition_star(n, c2_scale=Fraction(1)):
    """Degree-corrected Chern pairing (c1^2 - 2(n+1)/n c2) . [omega]^{n-2} on CP^n.

    [omega] = c1 = (n+1) H, c2 = n(n+1)/2 H^2 (times ``c2_scale``), H^n = 1.
    Exact rational arithmetic; 0 for every CP^n.
    """
    if n < 2:
        raise DomainError("condition (*) needs n >= 2")
    c2_scale = Fraction(c2_scale)
    c1_sq = Fraction((n + 1) ** 2)
    c2 = Fraction(n * (n + 1), 2) * c2_scale
    return (c1_sq - Fraction(2 * (n + 1), n) * c2) * Fraction(n + 1) ** (n - 2)


def admissibility_certificate(P, budget, E1_ref=0.0, E1=None):
    """Check Ric > -1 + delta, |Riem| < Lambda and E1 <= E1_ref + eps.

    ``E1`` defaults to the energy of P relative to Fubini-Study on the same
    grid (so E1(FS) = 0 = E1_ref).
    """
    from .geometry import ricci_lower_bound, riem_sup_norm

    if E1 is None:
        E1 = energy_relative_to_fs(P, 1)
    ric = ricci_lower_bound(P)
    riem = riem_sup_norm(P)
    margins = {
        "ricci": ric - (-1 + budget.delta),
        "curvature": budget.Lambda - riem,
        "energy": E1_ref + budget.eps - E1,
    }
    checks = {
        "ricci": margins["ricci"] > 0,
        "curvature": margins["curvature"] > 0,
        "energy": margins["energy"] >= 0,
    }
    return {
        "ok": all(checks.values()),
        "checks": checks,
        "margins": margins,
        "values": {"ric_min": ric, "riem_sup": riem, "E1": float(E1), "E1_ref": E1_ref},
        "budget": budget.as_dict(),
    }


def energy_relative_to_fs(P, k):
    """E_k of the profile P with Fubini-Study as base metric."""
    from .functionals import Ek0_energy, Jk_energy
    from .geometry import ChartProfile, RadialProfile, fubini_study_profile

    if isinstance(P, ChartProfile):
        base = ChartProfile(P.n, P.x)
    elif isinstance(P, RadialProfile):
        base = fubini_study_profile(P.n, P.grid)
    else:
        raise TypeError("unsupported profile type")
    psi = P.psi
    zero = np.zeros_like(psi)
    return Ek0_energy(psi, base, k, h=zero) - Jk_energy(psi, base, k)


def beta_invariant_estimate(ric0_max):
    """min over a flow series of max |Ric - omega|: an upper bound for beta."""
    v = np.asarray(ric0_max, dtype=float)
    return {"beta_upper": float(np.min(v)), "label": "upper bound on beta within the U(n)-invariant family"}


def budget_table(n, delta, Lambda, c_n=C_N_DEFAULT):
    """Rows (name, value) of the constants table printed by the CLI."""
    b = StabilityBudget(n, delta, Lambda, c_n)
    rows = [
        ("n", n),
        ("delta", delta),
        ("Lambda", Lambda),
        ("c_n", c_n),
        ("C_m", b.C_m),
        ("eps0", str(epsilon0_exact(n))),
        ("eps0_float", b.eps0),
        ("6T", b.six_T),
        ("6T_alt", b.six_T_alt),
        ("T", b.T),
        ("eps", b.eps),
    ]
    if n >= 2:
        rows.append(("condition_star", str(condition_star(n))))
    return rows
