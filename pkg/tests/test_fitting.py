import math

import numpy as np
import pytest

from ponderomotive.fitting import (FitError, FitProblem, RawTraceSet, RingdownData,
                                   detected_window_model, fit, fit_per_window, get_param,
                                   normalize_trace, relative_residuals, ringdown_fit, set_params)
from ponderomotive.model import reference_model
from ponderomotive.spectra import SpectrumTrace

TWO_PI = 2 * math.pi
WIN1 = (1.30e6, 1.34e6)
WIN2 = (2.41e6, 2.45e6)


def synthetic(model, noise=0.0, seed=0, n=801):
    f1 = np.linspace(*WIN1, n)
    f2 = np.linspace(*WIN2, n)
    vals = np.concatenate([detected_window_model(model, 0, f1), detected_window_model(model, 1, f2)])
    if noise:
        vals = vals * (1 + noise * np.random.default_rng(seed).standard_normal(vals.size))
    return SpectrumTrace(np.concatenate([f1, f2]), vals, stage="detected")


def test_normalization_puts_shot_noise_at_one():
    f = np.linspace(1, 10, 10)
    raw = RawTraceSet(f, signal=3 * np.ones(10), shot=3 * np.ones(10), electronic=np.ones(10))
    np.testing.assert_allclose(normalize_trace(raw).values, 1.0)


def test_normalization_rejects_electronic_above_shot():
    f = np.linspace(1, 10, 10)
    raw = RawTraceSet(f, np.ones(10), np.ones(10), 2 * np.ones(10))
    with pytest.raises(FitError):
        normalize_trace(raw)


def test_resampled_raw_traces():
    f = np.linspace(0, 10, 11)
    raw = RawTraceSet.resampled(f, np.ones(11), [0, 10], [2, 4], [0, 10], [1, 1])
    np.testing.assert_allclose(raw.shot, np.linspace(2, 4, 11))


def test_parameter_roundtrip_keeps_efficiency():
    m = reference_model()
    m2 = set_params(m, {"kappa": 1.1 * get_param(m, "kappa"), "g2": 5.0, "omega_m1": 7.0})
    assert m2.cavity.eta_cav == pytest.approx(m.cavity.eta_cav, rel=1e-14)
    assert get_param(m2, "g2") == 5.0 and get_param(m2, "omega_m1") == 7.0
    assert m2.modes[0].gamma_m == m.modes[0].gamma_m


def test_residuals_vanish_at_truth():
    m = reference_model()
    data = synthetic(m)
    assert np.max(np.abs(relative_residuals(m, data, [WIN1, WIN2]))) < 1e-14


@pytest.mark.parametrize("windows", [[WIN1, (1.33e6, 1.35e6)], [None, None]])
def test_problem_rejects_bad_windows(windows):
    m = reference_model()
    with pytest.raises(FitError):
        FitProblem(synthetic(m), m, windows)


def test_problem_rejects_guess_outside_bounds():
    m = reference_model()
    with pytest.raises(FitError):
        FitProblem(synthetic(m), m, [WIN1, WIN2], bounds={"kappa": (1.0, 2.0)})


def test_problem_rejects_unknown_parameter():
    m = reference_model()
    with pytest.raises(FitError):
        FitProblem(synthetic(m), m, [WIN1, WIN2], free=("kappa", "eta"))


def test_single_window_recovery():
    truth = reference_model()
    data = synthetic(truth)
    guess = set_params(truth, {"kappa": 1.05 * truth.cavity.kappa_total,
                               "g1": 0.95 * truth.modes[0].g,
                               "omega_m1": truth.modes[0].omega_m + TWO_PI * 2e3})
    res = fit(FitProblem(data, guess, [WIN1, None]))
    assert set(res.params) == {"kappa", "detuning", "g1", "omega_m1"}
    for name, value in res.params.items():
        assert value == pytest.approx(get_param(truth, name), rel=1e-6)
    assert res.converged and res.cost < 1e-12


def test_uncertainties_cover_truth_with_noise():
    truth = reference_model()
    data = synthetic(truth, noise=0.01, seed=3)
    guess = set_params(truth, {"g1": 1.03 * truth.modes[0].g, "g2": 0.97 * truth.modes[1].g})
    res = fit(FitProblem(data, guess, [WIN1, WIN2]))
    for name, value in res.params.items():
        sigma = res.uncertainties[name]
        assert np.isfinite(sigma) and sigma > 0
        assert abs(value - get_param(truth, name)) < 6 * sigma
    assert res.fitted is not None and "omega_m2" in res.report()


def test_excluded_notch_ignores_corrupted_points():
    truth = reference_model()
    data = synthetic(truth)
    bad = data.values.copy()
    sel = (data.frequencies > 1.335e6) & (data.frequencies < 1.336e6)
    bad[sel] *= 3
    corrupted = SpectrumTrace(data.frequencies, bad, stage="detected")
    guess = set_params(truth, {"g1": 0.97 * truth.modes[0].g})
    res = fit(FitProblem(corrupted, guess, [WIN1, None], exclude=[(1.335e6, 1.336e6)]))
    assert res.params["g1"] == pytest.approx(truth.modes[0].g, rel=1e-6)


def test_per_window_fit_returns_one_result_per_mode():
    truth = reference_model()
    data = synthetic(truth, n=301)
    results = fit_per_window(FitProblem(data, truth, [WIN1, WIN2]))
    assert len(results) == 2
    assert "g2" in results[1].params and "g1" not in results[1].params


def test_ringdown_quality_factor():
    gamma = TWO_PI * 8.1e-3
    t = np.linspace(0, 200, 400)
    res = ringdown_fit(RingdownData(t, 2.0 * np.exp(-gamma * t / 2), 2.43e6))
    assert res.gamma_m == pytest.approx(gamma, rel=1e-10)
    assert res.Q == pytest.approx(2.43e6 / 8.1e-3, rel=1e-10)
    assert res.decaying


def test_ringdown_flags_growth():
    t = np.linspace(0, 1, 20)
    with pytest.warns(RuntimeWarning):
        res = ringdown_fit(RingdownData(t, np.exp(0.1 * t), 1e6))
    assert not res.decaying


@pytest.mark.parametrize("t, a", [
    (np.linspace(0, 1, 5), np.ones(5)),
    (np.linspace(0, 1, 20), -np.ones(20)),
    (np.linspace(1, 0, 20), np.ones(20)),
])
def test_ringdown_input_checks(t, a):
    with pytest.raises(ValueError):
        RingdownData(t, a, 1e6)
