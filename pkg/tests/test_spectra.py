import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ponderomotive.model import CavityParams, MechanicalMode, SystemModel, reference_model
from ponderomotive.oracle import exact_optimal_psd, frequency_psd_exact
from ponderomotive.spectra import (Components, NegativeSpectrumWarning, QuadratureAngle,
                                   SpectrumTrace, UnassignedFrequencyError,
                                   apply_detection_efficiency, assign_modes,
                                   closed_form_components, correct_for_losses,
                                   default_windows, direct_detection_psd, mode_components,
                                   model_hash, optimal_from_components, optimal_phase,
                                   optimal_psd, output_components, phase_from_components,
                                   quadrature_psd, rotate, spectrum_trace, squeezing_level_db,
                                   to_db)

from conftest import random_model

TWO_PI = 2 * math.pi

# Exact linear-response values for mode 1 of the reference model alone
# (eta_cav = 0.91), frozen from the full matrix solve.
ORACLE_FREQS_HZ = np.array([1.30e6, 1.3176e6, 1.3237e6, 1.33e6, 1.5e6])
ORACLE_SX = np.array([0.7686256139824666, 4.2658653952110335, 0.19764847426943583,
                      0.27064083252097226, 0.4807485376100016])
ORACLE_SY = np.array([0.3923980535658116, 13.816481845670566, 1.8604503983772536,
                      1.0121924614000968, 0.5204627435048057])
ORACLE_RXY = np.array([0.19650239963759022, 7.567384421279612, 0.1790839595017555,
                       -0.032760149708717, -0.0106220857812115])


def _single(model):
    return SystemModel(model.cavity, (model.modes[0],), 1.0)


def test_closed_forms_match_frozen_oracle_values():
    m = reference_model()
    c = mode_components(m.cavity, m.modes[0], TWO_PI * ORACLE_FREQS_HZ)
    np.testing.assert_allclose(c.sx, ORACLE_SX, rtol=1e-10)
    np.testing.assert_allclose(c.sy, ORACLE_SY, rtol=1e-10)
    np.testing.assert_allclose(c.rxy, ORACLE_RXY, rtol=1e-10, atol=1e-12)


def test_single_mode_closed_forms_equal_matrix_solve():
    m = _single(reference_model())
    w = TWO_PI * np.linspace(1.0e6, 1.6e6, 5001)
    c = mode_components(m.cavity, m.modes[0], w)
    e = frequency_psd_exact(m, w)
    for a, b in zip(c, e):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_single_mode_agreement_random(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, 1)
    if not m.is_stable():
        return
    om = m.modes[0].omega_m
    w = np.linspace(0.5 * om, 1.5 * om, 257)
    c = mode_components(m.cavity, m.modes[0], w)
    e = frequency_psd_exact(m, w)
    for a, b in zip(c, e):
        np.testing.assert_allclose(a, b, rtol=1e-8, atol=1e-10 * np.max(np.abs(b)))


@given(st.floats(0.1, 1e8), st.floats(-3, 3), st.floats(0, 1), st.floats(0, 1),
       st.floats(0, 20))
def test_passivity(kappa, delta_rel, a, b, w_rel):
    cav = CavityParams(kappa, a * kappa, (1 - a) * b * kappa, kappa - a * kappa - (1 - a) * b * kappa,
                       delta_rel * kappa)
    mode = MechanicalMode(kappa, 1e-3 * kappa, 0.0, 1e5)
    c = mode_components(cav, mode, w_rel * kappa)
    assert float(c.sx) == pytest.approx(0.5, rel=1e-12)
    assert float(c.sy) == pytest.approx(0.5, rel=1e-12)
    assert abs(float(c.rxy)) <= 1e-12
    assert float(optimal_from_components(c)) == pytest.approx(0.5, rel=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_zero_detuning_amplitude_quadrature_is_shot_noise(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, 1, g_scale=5.0)
    cav = m.cavity.with_detuning(0.0)
    w = np.linspace(0, 3, 101) * m.modes[0].omega_m
    c = mode_components(cav, m.modes[0], w)
    np.testing.assert_allclose(c.sx, 0.5, rtol=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_uncertainty_bound(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, 1, g_scale=3.0)
    if not m.is_stable():
        return
    w = np.linspace(0.2, 2, 301) * m.modes[0].omega_m
    c = mode_components(m.cavity, m.modes[0], w)
    assert np.all(c.sx * c.sy - c.rxy**2 - 0.25 >= -1e-10 * (c.sx * c.sy))


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 1), st.floats(0.01, 1))
def test_loss_equivalence(seed, eta_cav, eta_det):
    rng = np.random.default_rng(seed)
    m = random_model(rng, 1)
    k = m.cavity.kappa_total
    mode = m.modes[0]
    w = np.linspace(0.5, 1.5, 65) * mode.omega_m
    lossy = closed_form_components(k, m.cavity.detuning, eta_cav, mode.omega_m, mode.gamma_m,
                                   mode.g, mode.n_th, w)
    combined = closed_form_components(k, m.cavity.detuning, eta_cav * eta_det, mode.omega_m,
                                      mode.gamma_m, mode.g, mode.n_th, w)
    for a, b in zip(lossy[:2], combined[:2]):
        np.testing.assert_allclose(apply_detection_efficiency(a, eta_det), b, rtol=1e-12)


@given(st.integers(0, 2**32 - 1), st.floats(0, math.pi))
def test_optimal_envelope_below_every_quadrature(seed, theta):
    rng = np.random.default_rng(seed)
    m = random_model(rng, 1, g_scale=3.0)
    w = np.linspace(0.5, 1.5, 101) * m.modes[0].omega_m
    c = mode_components(m.cavity, m.modes[0], w)
    opt = optimal_from_components(c)
    assert np.all(opt <= rotate(c, theta) + 1e-12 * np.abs(c.sx + c.sy))
    ph = phase_from_components(c)
    np.testing.assert_allclose(rotate(c, ph.theta), opt, rtol=1e-9, atol=1e-12)


def test_rotation_endpoints():
    c = Components(np.array([2.0]), np.array([3.0]), np.array([0.4]))
    assert rotate(c, 0.0)[0] == pytest.approx(2.0)
    assert rotate(c, math.pi / 2)[0] == pytest.approx(3.0)
    assert rotate(c, math.pi / 4)[0] == pytest.approx(2.9)


def test_optimal_is_covariance_eigenvalue():
    m = _single(reference_model())
    w = TWO_PI * np.linspace(1.30e6, 1.34e6, 2001)
    np.testing.assert_allclose(optimal_psd(m, w), exact_optimal_psd(m, w), rtol=1e-9)


def test_degenerate_phase_flagged():
    c = Components(np.array([0.5]), np.array([0.5]), np.array([0.0]))
    assert phase_from_components(c).degenerate[0]


def test_quadrature_angle_canonical():
    assert QuadratureAngle(math.pi + 0.25).theta == pytest.approx(0.25)
    assert QuadratureAngle(-0.25).theta == pytest.approx(math.pi - 0.25)


def test_windows_and_assignment():
    m = reference_model()
    wins = default_windows(m)
    gap = m.modes[1].omega_m - m.modes[0].omega_m
    assert wins[0][1] == pytest.approx(m.modes[0].omega_m + gap / 2)
    owner = assign_modes(m, [m.modes[0].omega_m, m.modes[1].omega_m, 100.0])
    assert list(owner) == [0, 1, -1]


def test_outside_windows_error_or_oracle():
    m = reference_model()
    w = np.array([TWO_PI * 10e3])
    with pytest.raises(UnassignedFrequencyError):
        output_components(m, w, outside="error")
    np.testing.assert_allclose(output_components(m, w).sx, frequency_psd_exact(m, w).sx, rtol=1e-14)


def test_detection_efficiency_inversion():
    vals = np.array([0.2, 0.5, 3.0])
    back = correct_for_losses(apply_detection_efficiency(vals, 0.83), 0.83)
    np.testing.assert_allclose(back, vals, rtol=1e-14)


def test_loss_correction_numbers():
    corrected = correct_for_losses(10 ** (-3.5 / 10), 0.83, shot_noise=1.0)
    assert to_db(corrected) == pytest.approx(-4.8, abs=0.05)


def test_loss_correction_flags_negative():
    tr = SpectrumTrace([1.0, 2.0], [0.1, 1.0], stage="detected")
    with pytest.warns(NegativeSpectrumWarning):
        out = correct_for_losses(tr, 0.5)
    assert out.metadata["negative_points"] == 1
    assert out.stage == "loss_corrected"


def test_loss_correction_rejects_zero_efficiency():
    with pytest.raises(ValueError):
        correct_for_losses(np.array([1.0]), 0.0)


@pytest.mark.parametrize("freqs, vals", [
    ([1.0], [1.0]),
    ([1.0, 1.0], [1.0, 1.0]),
    ([2.0, 1.0], [1.0, 1.0]),
    ([1.0, 2.0], [1.0, np.nan]),
    ([1.0, 2.0], [1.0, -0.1]),
])
def test_trace_invariants(freqs, vals):
    with pytest.raises(ValueError):
        SpectrumTrace(freqs, vals)


def test_cross_trace_may_be_negative():
    SpectrumTrace([1.0, 2.0], [-1.0, 1.0], quantity="cross_ReXY")


def test_squeezing_level_window_checks():
    tr = SpectrumTrace(np.arange(10.0), np.linspace(1, 0.1, 10))
    lv = squeezing_level_db(tr, (2, 9))
    assert lv.min_db == pytest.approx(-10.0)
    assert lv.freq_at_min == 9.0
    with pytest.raises(ValueError):
        squeezing_level_db(tr, (2.5, 3.5))


def test_spectrum_trace_stages():
    m = reference_model()
    f = np.linspace(1.31e6, 1.33e6, 201)
    raw = spectrum_trace(m, f, "direct_X", stage="cavity_output")
    det = spectrum_trace(m, f, "direct_X", stage="detected")
    np.testing.assert_allclose(det.values, 0.83 * raw.values + 0.17, rtol=1e-14)
    assert det.metadata["model_hash"] == model_hash(m)
    ph = spectrum_trace(m, f, "optimal_phase")
    assert np.all((ph.values >= 0) & (ph.values < math.pi))


def test_direct_detection_dip_on_red_side():
    m = reference_model(eta_det=1.0)
    f = np.linspace(1.30e6, 1.34e6, 4001)
    s = direct_detection_psd(m, TWO_PI * f)
    assert s.min() < 0.5


def test_model_hash_changes_with_parameters():
    m = reference_model()
    assert model_hash(m) == model_hash(reference_model())
    assert model_hash(m) != model_hash(reference_model(eta_det=0.5))


def test_model_level_quadrature_and_phase():
    m = reference_model()
    w = TWO_PI * np.linspace(1.30e6, 1.34e6, 501)
    np.testing.assert_allclose(quadrature_psd(m, w, 0.0), direct_detection_psd(m, w), rtol=1e-14)
    ph = optimal_phase(m, w)
    np.testing.assert_allclose(quadrature_psd(m, w, ph.theta), optimal_psd(m, w), rtol=1e-9)
