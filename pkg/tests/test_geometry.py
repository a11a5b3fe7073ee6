import numpy as np
import pytest

from krflow.errors import BoundaryClosureError, ConfigurationError, ConvexityError, DomainError
from krflow.geometry import (
    ChartProfile,
    MomentumProfile,
    c_norm,
    curvature_at,
    fubini_study_profile,
    from_momentum,
    metric_at,
    perturbed_profile,
    ricci_lower_bound,
    riem_sup_norm,
    to_momentum,
    uniform_grid,
)
from oracles import ambient_curvature, fs_plus_sech

GRID = uniform_grid(12.0, 256)


def test_fs_potential_value():
    P = fubini_study_profile(1, uniform_grid(12.0, 257))
    assert P.F[128] == pytest.approx(2 * np.log(2), abs=1e-15)


@pytest.mark.parametrize("grid", [np.linspace(-12, 12, 10), np.r_[np.linspace(-12, 0, 20), np.linspace(-1, 12, 20)]])
def test_invalid_grid(grid):
    with pytest.raises(ConfigurationError):
        fubini_study_profile(1, grid)


def test_metric_at_fs():
    P = fubini_study_profile(1, GRID)
    g = metric_at(P, 0.0)
    assert g[0] == pytest.approx(0.5, abs=1e-10)
    assert g[1] == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(DomainError):
        metric_at(P, 20.0)


def test_metric_at_matches_difference_quotients():
    n, a, s = 2, 0.05, 0.7
    P = perturbed_profile(n, GRID, a)
    F = lambda t: (n + 1) * np.log1p(np.exp(t)) + a / np.cosh(t)
    h = 1e-4
    F1 = (F(s + h) - F(s - h)) / (2 * h)
    F2 = (F(s + h) - 2 * F(s) + F(s - h)) / h**2
    g = metric_at(P, s)
    assert g[0] == pytest.approx(F2 * np.exp(-s), rel=1e-6)
    assert g[1] == pytest.approx(F1 * np.exp(-s), rel=1e-7)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_fs_is_einstein(n):
    g = fubini_study_profile(n, GRID).geometry
    c = g.curvature
    assert np.max(np.abs(c["rho_r"] - 1)) < 1e-6
    assert np.max(np.abs(c["rho_t"] - 1)) < 1e-6
    assert np.max(np.abs(c["scalar"] - n)) < 1e-6
    assert np.max(np.sqrt(c["q0_sq"])) < 1e-6


@pytest.mark.parametrize("nodes", [128, 256, 512])
def test_fs_einstein_all_resolutions(nodes):
    c = fubini_study_profile(2, uniform_grid(12.0, nodes)).geometry.curvature
    assert np.max(np.sqrt(c["ric0_sq"])) < 1e-6


def test_fs_space_form_component():
    f = curvature_at(fubini_study_profile(1, GRID), 0.4)
    g = f.metric_eigs[0]
    T = f.tensor() * g**2  # back to coordinate components
    assert T[0, 0, 0, 0] == pytest.approx(g**2, rel=1e-8)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_curvature_matches_ambient_oracle(n):
    s = 0.3
    G, R = ambient_curvature(fs_plus_sech(n), n, s)
    f = curvature_at(perturbed_profile(n, uniform_grid(12.0, 512), 0.05), s)
    g1 = G[0, 0].real
    assert f.metric_eigs[0] == pytest.approx(g1, rel=1e-10)
    assert f.R4["A"] == pytest.approx(R[0, 0, 0, 0].real / g1**2, rel=1e-7)
    if n >= 2:
        g2 = G[1, 1].real
        assert f.metric_eigs[1] == pytest.approx(g2, rel=1e-10)
        assert f.R4["B"] == pytest.approx(R[0, 0, 1, 1].real / (g1 * g2), rel=1e-7)
        assert 2 * f.R4["D"] == pytest.approx(R[1, 1, 1, 1].real / g2**2, rel=1e-7)
        # full tensor against the oracle in the unitary frame
        scale = np.sqrt(np.real(np.diag(G)))
        U = R / np.einsum("i,j,k,l->ijkl", scale, scale, scale, scale)
        assert np.max(np.abs(f.tensor() - U.real)) < 1e-7
        assert np.max(np.abs(U.imag)) < 1e-12
    if n >= 3:
        assert f.R4["D"] == pytest.approx(R[1, 1, 2, 2].real / G[1, 1].real ** 2, rel=1e-7)


def test_ricci_two_routes_agree(admissible_profiles):
    for P in admissible_profiles:
        for s in np.linspace(-6, 6, 7):
            f = curvature_at(P, s)
            np.testing.assert_allclose(f.ricci_eigs, f.ricci_eigs_potential, rtol=1e-8, atol=1e-10)
            assert f.scalar == pytest.approx(f.ricci_eigs[0] + (P.n - 1) * f.ricci_eigs[1], rel=1e-12)


def test_tensor_symmetries():
    f = curvature_at(perturbed_profile(3, GRID, 0.05), 0.2)
    T = f.tensor()
    np.testing.assert_allclose(T, T.transpose(2, 1, 0, 3), atol=1e-14)
    np.testing.assert_allclose(T, T.transpose(0, 3, 2, 1), atol=1e-14)
    np.testing.assert_allclose(T, T.transpose(1, 0, 3, 2), atol=1e-14)
    ric = np.einsum("iikl->kl", T)
    np.testing.assert_allclose(np.diag(ric), [f.ricci_eigs[0]] + [f.ricci_eigs[1]] * 2, rtol=1e-12)


def test_pointwise_q0_identity_on_surfaces(admissible_profiles):
    for P in admissible_profiles:
        if P.n != 1:
            continue
        c = P.geometry.curvature
        assert np.allclose(c["q0_sq"], c["ric0_sq"], rtol=1e-10, atol=1e-300)


def test_ricci_lower_bound():
    assert ricci_lower_bound(fubini_study_profile(1, GRID)) == pytest.approx(1.0, abs=1e-6)
    assert ricci_lower_bound(perturbed_profile(1, GRID, 0.0)) == ricci_lower_bound(fubini_study_profile(1, GRID))
    coarse = ricci_lower_bound(perturbed_profile(1, GRID, 0.05))
    dense = perturbed_profile(1, uniform_grid(12.0, 4096), 0.05)
    assert coarse == pytest.approx(np.min(dense.geometry.curvature["ric_min"]), abs=1e-4)


def test_riem_sup_norm():
    for n in (1, 2, 3):
        # constant holomorphic sectional curvature: A = 2/N, B = D = 1/N
        assert riem_sup_norm(fubini_study_profile(n, GRID)) == pytest.approx(np.sqrt(2 * n / (n + 1)), rel=1e-8)
    P = perturbed_profile(2, GRID, 0.05)
    c = P.geometry.curvature
    assert riem_sup_norm(P) >= np.max(np.abs(c["scalar"])) / c_norm(2)
    fine = riem_sup_norm(perturbed_profile(2, uniform_grid(12.0, 1024), 0.05))
    assert riem_sup_norm(P) == pytest.approx(fine, abs=1e-4)


def test_truncation_length_does_not_pollute_interior():
    a = riem_sup_norm(fubini_study_profile(1, uniform_grid(12.0, 256)))
    b = riem_sup_norm(fubini_study_profile(1, uniform_grid(16.0, 256)))
    assert abs(a - b) < 1e-8


def test_fs_momentum_profile():
    M = to_momentum(fubini_study_profile(1, GRID))
    tau = np.asarray(M.tau_grid)
    assert np.max(np.abs(M.phi - tau * (2 - tau) / 2)) < 1e-10


def test_legendre_round_trip(admissible_profiles):
    for P in admissible_profiles:
        Q = from_momentum(to_momentum(P))
        assert np.max(np.abs(Q.geometry.tau - P.geometry.tau)) < 1e-8


def test_momentum_boundary_violation():
    tau = np.linspace(0, 2, 50)
    with pytest.raises((ConvexityError, BoundaryClosureError)):
        MomentumProfile(1, tau, tau * (2 - tau) / 2 + 0.1)


def test_chart_fs_exact():
    g = ChartProfile(2, 129).geometry
    c = g.curvature
    assert np.max(np.abs(c["rho_r"] - 1)) < 1e-12
    assert np.max(np.abs(c["rho_t"] - 1)) < 1e-12


def test_chart_and_s_engines_agree():
    P = ChartProfile.from_shape(1, 513, 0.05, "sech")
    R = perturbed_profile(1, uniform_grid(12.0, 512), 0.05)
    assert ricci_lower_bound(P) == pytest.approx(ricci_lower_bound(R), abs=1e-4)
