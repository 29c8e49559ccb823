import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ponderomotive.model import (CONSTANTS, CavityParams, CouplingPhysicalInputs,
                                 DegenerateDenominatorError, MechanicalMode, ModelError,
                                 SystemModel, ValidityWarning, bare_susceptibility,
                                 checked_denominator, coupling_from_measurement_rate,
                                 coupling_from_physical, derived_rates, desk_model,
                                 effective_mode_parameters, effective_susceptibility,
                                 measurement_rate, reference_model, thermal_occupation)

TWO_PI = 2 * math.pi


def test_cavity_closure_enforced():
    with pytest.raises(ModelError):
        CavityParams(10.0, 1.0, 8.0, 0.5, 0.0)


def test_cavity_efficiency_constructor():
    c = CavityParams.from_efficiency(TWO_PI * 7e6, TWO_PI * 2.3e6, 0.91)
    assert c.eta_cav == pytest.approx(0.91, rel=1e-14)
    assert c.kappa_in + c.kappa_out + c.kappa_ext == pytest.approx(c.kappa_total, rel=1e-14)


def test_scaled_cavity_keeps_port_fractions():
    c = reference_model().cavity
    s = c.scaled(2 * c.kappa_total)
    assert s.eta_cav == pytest.approx(c.eta_cav, rel=1e-14)
    assert s.detuning == c.detuning


@pytest.mark.parametrize("kwargs", [
    dict(omega_m=-1.0, gamma_m=1.0, g=0.1, n_th=1.0),
    dict(omega_m=1.0, gamma_m=-1.0, g=0.1, n_th=1.0),
    dict(omega_m=1.0, gamma_m=1.0, g=0.1, n_th=-1.0),
    dict(omega_m=1.0, gamma_m=math.nan, g=0.1, n_th=1.0),
])
def test_mode_rejects_unphysical(kwargs):
    with pytest.raises(ModelError):
        MechanicalMode(**kwargs)


def test_eta_det_range():
    m = reference_model()
    with pytest.raises(ModelError):
        SystemModel(m.cavity, m.modes, 1.2)


def test_mechanical_susceptibility_conjugate_symmetry():
    mode = MechanicalMode(3.0, 0.01, 0.0, 1.0)
    w = np.linspace(0, 10, 101)
    np.testing.assert_allclose(bare_susceptibility(mode, -w), np.conj(bare_susceptibility(mode, w)),
                               rtol=1e-15)


def test_susceptibility_at_resonance_is_imaginary():
    mode = MechanicalMode(3.0, 0.01, 0.0, 1.0)
    chi = bare_susceptibility(mode, 3.0)
    assert chi == pytest.approx(1j / 0.01, rel=1e-14)


def test_effective_susceptibility_reduces_to_bare_without_coupling():
    ref = reference_model()
    mode = ref.modes[0]
    bare = MechanicalMode(mode.omega_m, mode.gamma_m, 0.0, mode.n_th)
    w = np.linspace(0.9, 1.1, 11) * mode.omega_m
    np.testing.assert_allclose(effective_susceptibility(bare, ref.cavity, w),
                               bare_susceptibility(bare, w), rtol=1e-15)


@given(st.floats(0.1, 10), st.floats(-5, 5), st.floats(0.1, 10), st.floats(1e-4, 1e-1),
       st.floats(0, 0.2), st.floats(0, 20))
def test_effective_susceptibility_identity(kappa, delta, om, gam, g, w):
    """1/chi_eff - 1/chi_m equals the optical self-energy -4 g^2 Delta / D."""
    cav = CavityParams(kappa, 0.5 * kappa, 0.5 * kappa, 0.0, delta)
    mode = MechanicalMode(om, gam * om, g, 1.0)
    D = (kappa / 2 - 1j * w) ** 2 + delta**2
    lhs = 1 / effective_susceptibility(mode, cav, w) - 1 / bare_susceptibility(mode, w)
    assert abs(lhs + 4 * g**2 * delta / D) <= 1e-9 * (abs(1 / bare_susceptibility(mode, w)) + abs(lhs) + 1e-300)


def test_degenerate_denominator():
    cav = CavityParams(1e-300, 0.0, 1e-300, 0.0, 2.0)
    with pytest.raises(DegenerateDenominatorError):
        checked_denominator(cav, 2.0)


def test_thermal_occupation_high_temperature_form():
    omega = TWO_PI * 1.32e6
    expected = CONSTANTS.k_B * 11.0 / (CONSTANTS.hbar * omega)
    assert thermal_occupation(11.0, omega) == pytest.approx(expected, rel=1e-15)


def test_thermal_occupation_close_to_bose_einstein_when_hot():
    # k_B T / hbar Omega overestimates the Bose-Einstein value by ~1/2
    omega = TWO_PI * 1e6
    x = CONSTANTS.hbar * omega / (CONSTANTS.k_B * 300.0)
    assert thermal_occupation(300.0, omega) - 1 / math.expm1(x) == pytest.approx(0.5, abs=1e-6)


@given(st.floats(1e-3, 1e3), st.floats(1e3, 1e10))
def test_thermal_occupation_scaling(T, omega):
    n = thermal_occupation(T, omega)
    assert thermal_occupation(2 * T, omega) == pytest.approx(2 * n, rel=1e-14)
    assert thermal_occupation(T, 2 * omega) == pytest.approx(n / 2, rel=1e-14)


def test_thermal_occupation_rejects_negative_temperature():
    with pytest.raises(ModelError):
        thermal_occupation(-1.0, 1.0)


def test_measurement_rate_roundtrip():
    kappa = TWO_PI * 7e6
    g = coupling_from_measurement_rate(TWO_PI * 7.3e3, kappa)
    assert measurement_rate(g, kappa) == pytest.approx(TWO_PI * 7.3e3, rel=1e-14)
    # g/2pi reconstructed from a 7.3 kHz measurement rate
    assert g / TWO_PI == pytest.approx(113026.54555457315, rel=1e-12)


def test_derived_rates_cooperativity_definition():
    m = reference_model()
    r = derived_rates(m, 0)
    mode = m.modes[0]
    assert r.C_q == pytest.approx(r.gamma_meas / (mode.gamma_m * (mode.n_th + 0.5)), rel=1e-14)


def test_coupling_from_physical_inputs():
    m_eff, om = 1e-11, TWO_PI * 1.32e6
    inp = CouplingPhysicalInputs(n_ph=1e6, G=TWO_PI * 1e16, m_eff=m_eff, omega_m=om)
    x_zpf = math.sqrt(CONSTANTS.hbar / (2 * m_eff * om))
    assert coupling_from_physical(inp) == pytest.approx(TWO_PI * 1e16 * x_zpf * 1e3, rel=1e-12)


def test_overlap_flag_on_reference_model():
    # effective linewidths are far below the mode spacing but the optical
    # linewidth is not: both modes sit inside one cavity linewidth
    m = reference_model()
    assert not m.non_overlapping
    with pytest.warns(ValidityWarning):
        m.validate()


def test_reference_model_is_stable():
    assert reference_model().is_stable()
    assert desk_model().is_stable()


def test_effective_mode_parameters_match_brute_force_peak():
    # peak and FWHM of |chi_eff|^2 from a 2e6-point grid scan
    m = reference_model()
    expected = [(1317221.4355932737, 3246.2033217705016), (2425789.255945307, 12303.238416866836)]
    for mode, (f0, width) in zip(m.modes, expected):
        ep = effective_mode_parameters(mode, m.cavity)
        assert ep.omega_eff / TWO_PI == pytest.approx(f0, rel=1e-9)
        assert ep.gamma_eff / TWO_PI == pytest.approx(width, rel=1e-4)


def test_effective_mode_parameters_without_coupling():
    cav = CavityParams(10.0, 5.0, 5.0, 0.0, 3.0)
    mode = MechanicalMode(2.0, 1e-3, 0.0, 1.0)
    ep = effective_mode_parameters(mode, cav)
    assert ep.gamma_eff == pytest.approx(1e-3, rel=1e-4)


def test_blue_detuning_can_be_unstable():
    cav = CavityParams(1.0, 0.5, 0.5, 0.0, -1.0)
    mode = MechanicalMode(1.0, 1e-6, 0.1, 1.0)
    assert not SystemModel(cav, (mode,)).is_stable()


def test_snapshot_is_plain_data():
    snap = reference_model().snapshot()
    assert isinstance(snap["modes"], list)
    assert snap["eta_det"] == 0.83
