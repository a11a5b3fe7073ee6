import os

import numpy as np
import pytest

from krflow import analysis
from krflow.errors import DomainError
from krflow.flow import FlowConfig, run_flow
from krflow.geometry import (
    ChartProfile,
    fubini_study_profile,
    momentum_data,
    perturbed_profile,
    ricci_lower_bound,
    uniform_grid,
    volume,
)
from conftest import random_admissible

GRID = uniform_grid(12.0, 256)


def test_fs_diameter_is_pi():
    assert analysis.diameter(fubini_study_profile(1, GRID))["diameter"] == pytest.approx(np.pi, abs=1e-6)
    assert analysis.diameter(ChartProfile(1, 129))["diameter"] == pytest.approx(np.pi, abs=1e-6)


def test_diameter_scaling():
    tau, phi, dphi, _ = momentum_data(perturbed_profile(1, GRID, 0.05))
    D = analysis.diameter_from_momentum(1, tau, phi, dphi)["diameter"]
    D4 = analysis.diameter_from_momentum(1, 4 * tau, 4 * phi, dphi)["diameter"]
    assert D4 == pytest.approx(2 * D, rel=1e-10)


def test_diameter_continuity():
    D0 = analysis.diameter(fubini_study_profile(1, GRID))["diameter"]
    gaps = [abs(analysis.diameter(perturbed_profile(1, GRID, a))["diameter"] - D0) for a in (0.005, 0.01, 0.02)]
    assert gaps[0] < gaps[1] < gaps[2] < 0.2
    # first-order response: doubling the amplitude roughly doubles the change
    assert gaps[1] / gaps[0] == pytest.approx(2.0, rel=0.1)


def test_diameter_growth_along_flow():
    res = run_flow(FlowConfig(n=1, nodes=129, amplitude=0.05, t_end=0.5, cadence=0.1))
    t, D = res.column("t"), res.column("diameter")
    assert np.all(res.column("ric_min") > -1)
    for i in range(len(t) - 1):
        assert D[i + 1] <= np.exp(t[i + 1] - t[i]) * D[i]


def test_fs_first_eigenvalue():
    P = fubini_study_profile(1, GRID)
    tau, phi, dphi, _ = momentum_data(P)
    oracle = analysis.lambda1_oracle(1, tau, phi, dphi, degree=60, nodes=800)
    assert oracle == pytest.approx(2.0, abs=1e-8)
    lam = analysis.lambda1(P)
    assert lam["lambda1"] == pytest.approx(oracle, abs=1e-4)
    assert lam["label"] == "full spectrum"
    assert lam["lambda1"] >= analysis.liyau_bound(np.pi)


def test_first_eigenvalue_against_oracle():
    for P in random_admissible(1, 5, seed=5) + random_admissible(2, 5, seed=6):
        tau, phi, dphi, _ = momentum_data(P)
        lam = analysis.lambda1(P)["lambda1"]
        ref = analysis.lambda1_oracle(P.n, tau, phi, dphi, degree=60, nodes=800)
        assert lam == pytest.approx(ref, rel=1e-4)
        if ricci_lower_bound(P) >= 0:
            assert lam >= analysis.liyau_bound(analysis.diameter(P)["diameter"])


def test_sector_label_for_higher_dimensions():
    assert analysis.lambda1(fubini_study_profile(2, GRID))["label"].startswith("U(n)-invariant")


@pytest.mark.parametrize("n", [1, 2, 3])
def test_sobolev_constant_function(n):
    tau, phi, dphi, _ = momentum_data(fubini_study_profile(n, GRID))
    one = [lambda t: np.ones_like(t)]
    val = analysis.sobolev_proxy_from_momentum(n, tau, phi, dphi, family=one)
    assert val == pytest.approx(volume(n) ** (-1.0 / n), rel=1e-10)


def test_sobolev_proxy_refinement():
    a = analysis.sobolev_proxy(fubini_study_profile(2, uniform_grid(12.0, 128)))
    b = analysis.sobolev_proxy(fubini_study_profile(2, uniform_grid(12.0, 512)))
    assert a == pytest.approx(b, rel=0.01)


def test_digest_fields():
    d = analysis.digest(perturbed_profile(1, GRID, 0.03))
    assert d.lambda1 > 0 and d.diameter > 0 and d.liyau_ok
    assert d.poincare_proxy == pytest.approx(1 / d.lambda1)


def test_sprouse_check():
    fs = analysis.sprouse_check(fubini_study_profile(1, GRID))
    assert fs["verdict"] == "pass" and fs["integral"] < 1e-8
    pert = analysis.sprouse_check(perturbed_profile(1, GRID, 0.002), eps=1e-2)
    assert pert["verdict"] == "pass"
    bad = perturbed_profile(1, GRID, 0.45)
    assert ricci_lower_bound(bad) < -1
    assert analysis.sprouse_check(bad)["verdict"] == "hypothesis not met"


def test_segment_check_fs():
    rep = analysis.segment_inequality_check(fubini_study_profile(1, GRID), samples=40)
    assert rep["lhs"] == pytest.approx(0.0, abs=1e-12) and rep["holds"]


def test_segment_check_perturbed():
    P = perturbed_profile(1, GRID, 0.05)
    assert ricci_lower_bound(P) >= 0
    rep = analysis.segment_inequality_check(P, r=0.2, samples=200, seed=3)
    assert rep["holds"] and rep["ratio"] < 1 and not rep["flagged"]
    assert rep["pair_pass_fraction"] == 1.0
    small = analysis.segment_inequality_check(P, r=0.02, samples=100, seed=3)
    assert small["holds"]


def test_segment_check_worker_independence(monkeypatch):
    P = perturbed_profile(1, GRID, 0.05)
    monkeypatch.setenv("WORKERS", "1")
    a = analysis.segment_inequality_check(P, samples=64, seed=9)
    monkeypatch.setenv("WORKERS", "3")
    b = analysis.segment_inequality_check(P, samples=64, seed=9)
    assert a == b


def test_segment_check_needs_surface():
    with pytest.raises(DomainError):
        analysis.segment_inequality_check(fubini_study_profile(2, GRID))
