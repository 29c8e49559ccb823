import math

import pytest
from hypothesis import settings

from ponderomotive.model import CavityParams, MechanicalMode, SystemModel, reference_model

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

TWO_PI = 2 * math.pi


@pytest.fixture
def ref_model():
    return reference_model()


@pytest.fixture
def single_mode_model():
    m = reference_model(eta_det=1.0)
    return SystemModel(m.cavity, (m.modes[0],), 1.0)


def random_model(rng, n_modes=1, g_scale=1.0, eta_det=1.0):
    """Stable random model with well-separated modes in units of kappa."""
    kappa = 10 ** rng.uniform(0, 8)
    split = rng.dirichlet([1.0, 1.0, 1.0])
    delta = rng.uniform(-2, 2) * kappa
    cav = CavityParams(kappa, split[0] * kappa, split[1] * kappa,
                       kappa - split[0] * kappa - split[1] * kappa, delta)
    modes = []
    for l in range(n_modes):
        om = (0.3 + 2.0 * l + rng.uniform(0, 1)) * kappa
        gam = om * 10 ** rng.uniform(-6, -3)
        g = g_scale * rng.uniform(0, 0.05) * kappa
        modes.append(MechanicalMode(om, gam, g, 10 ** rng.uniform(0, 5)))
    return SystemModel(cav, tuple(modes), eta_det)


GATE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if GATE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in GATE_LINES:
            terminalreporter.write_line(line)
