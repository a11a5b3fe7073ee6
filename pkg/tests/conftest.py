import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from krflow.geometry import perturbed_profile, ricci_lower_bound, uniform_grid  # noqa: E402


def random_admissible(n, count, seed=0, amplitude=0.02, nodes=256):
    """Seeded random perturbations of Fubini-Study with Ric > 0."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        s = int(rng.integers(0, 2**31))
        P = perturbed_profile(n, uniform_grid(12.0, nodes), amplitude, "random", seed=s)
        if ricci_lower_bound(P) > 0:
            out.append(P)
    return out


@pytest.fixture(scope="session")
def admissible_profiles():
    return random_admissible(1, 3, seed=1) + random_admissible(2, 3, seed=2)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "ACCEPTANCE_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
