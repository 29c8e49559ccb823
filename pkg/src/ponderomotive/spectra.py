"""Closed-form output spectra of the detection port.

Per-mode expressions are evaluated for the mode that owns the frequency
window containing omega.  Internal values use S_SN = 1/2; traces are
reported in shot-noise-normalized units (S_SN = 1).
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .model import (DENOMINATOR_FLOOR, SHOT_NOISE, CavityParams, DegenerateDenominatorError,
                    MechanicalMode, SystemModel)


class Quantity(str, enum.Enum):
    DIRECT_X = "direct_X"
    PHASE_Y = "phase_Y"
    CROSS_RE_XY = "cross_ReXY"
    QUADRATURE = "quadrature_theta"
    OPTIMAL = "optimal"
    OPTIMAL_PHASE = "optimal_phase"


class Stage(str, enum.Enum):
    CAVITY_OUTPUT = "cavity_output"
    DETECTED = "detected"
    LOSS_CORRECTED = "loss_corrected"


class UnassignedFrequencyError(ValueError):
    """A frequency lies outside every mode window and no fallback is allowed."""


class NegativeSpectrumWarning(UserWarning):
    """Loss correction produced values below zero."""


@dataclass(frozen=True)
class QuadratureAngle:
    """Homodyne angle, canonicalized to [0, pi)."""

    theta: float

    def __post_init__(self):
        t = math.fmod(float(self.theta), math.pi)
        if t < 0:
            t += math.pi
        if t >= math.pi:
            t = 0.0
        object.__setattr__(self, "theta", t)

    def __float__(self):
        return self.theta


def _angle(theta) -> float:
    return float(theta)


@dataclass(frozen=True)
class SpectrumTrace:
    """PSD samples on a strictly increasing frequency grid (Hz).

    ``values`` are shot-noise normalized except for ``optimal_phase`` traces,
    which carry the homodyne angle in radians.
    """

    frequencies: np.ndarray
    values: np.ndarray
    quantity: str = Quantity.DIRECT_X.value
    stage: str = Stage.CAVITY_OUTPUT.value
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=float)
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "frequencies", f)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "quantity", Quantity(self.quantity).value)
        object.__setattr__(self, "stage", Stage(self.stage).value)
        if f.ndim != 1 or f.shape != v.shape:
            raise ValueError("frequencies and values must be 1-D arrays of equal length")
        if f.size < 2:
            raise ValueError("a trace needs at least 2 points")
        if not np.all(np.diff(f) > 0):
            raise ValueError("frequency grid must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValueError("trace values must be finite")
        nonneg = self.quantity not in (Quantity.CROSS_RE_XY.value, Quantity.OPTIMAL_PHASE.value)
        if nonneg and self.stage != Stage.LOSS_CORRECTED.value and np.any(v < 0):
            raise ValueError(f"{self.quantity} values must be >= 0")

    def __len__(self):
        return self.frequencies.size


class Components(NamedTuple):
    """S_X, S_Y and Re S_XY of the port-2 output (internal units)."""

    sx: np.ndarray
    sy: np.ndarray
    rxy: np.ndarray


def closed_form_components(kappa, delta, eta_cav, omega_m, gamma_m, g, n_th, omega) -> Components:
    """Single-mode amplitude, phase and in-phase cross spectra.

    Every argument broadcasts, so a whole ensemble of parameter sets can be
    evaluated in one call.  Rates are angular; the result is in internal
    units (vacuum = 1/2).
    """
    kappa, delta, eta, omega_m, gamma_m, g, n_th, omega = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (kappa, delta, eta_cav, omega_m, gamma_m, g, n_th,
                                               omega)))
    a = kappa / 2 - 1j * omega
    D = a**2 + delta**2
    if np.any(np.abs(D) <= DENOMINATOR_FLOOR * (kappa**2 + delta**2)):
        raise DegenerateDenominatorError(
            "cavity denominator below floor; kappa = 0 with omega = |Delta|?")
    chi_m = omega_m / (omega_m**2 - omega**2 - 1j * gamma_m * omega)
    chi_eff = 1.0 / (1.0 / chi_m - 4 * g**2 * delta / D)
    ratio = chi_eff / chi_m
    therm = n_th + 0.5
    gamma2 = 2 * gamma_m

    vac_weight = np.abs(kappa * ratio / D) ** 2
    interference = np.real(a * kappa / D * ratio)

    sx = (eta * kappa * np.abs(2 * delta * g * chi_eff / D) ** 2 * gamma2 * therm
          + eta * vac_weight * (kappa**2 / 4 + omega**2 + delta**2) / 2
          - eta * interference + 0.5)
    sy = (eta * kappa * np.abs(2 * a * g * chi_eff / D) ** 2 * gamma2 * therm
          + eta * vac_weight * (kappa**2 / 4 + omega**2 + np.abs(4 * g**2 * chi_m - delta) ** 2) / 2
          - eta * interference + 0.5)
    rxy = (eta * np.abs(kappa * 2 * g * chi_eff / D) ** 2
           * (delta / 2 * gamma2 * therm + np.real(a / chi_m) / 2)
           - eta * np.real(kappa * 4 * g**2 * chi_eff / D) / 2)
    return Components(sx, sy, rxy)


def mode_components(cavity: CavityParams, mode: MechanicalMode, omega) -> Components:
    """Closed-form spectra of one mode coupled to ``cavity``."""
    return closed_form_components(cavity.kappa_total, cavity.detuning, cavity.eta_cav,
                                  mode.omega_m, mode.gamma_m, mode.g, mode.n_th, omega)


def default_windows(model: SystemModel):
    """Per-mode (lo, hi) in rad/s: Omega_l +/- min(5 kappa, half the gap to the nearest mode)."""
    omegas = [m.omega_m for m in model.modes]
    out = []
    for i, om in enumerate(omegas):
        half = 5 * model.cavity.kappa_total
        for j, other in enumerate(omegas):
            if j != i:
                half = min(half, 0.5 * abs(om - other))
        out.append((om - half, om + half))
    return out


def assign_modes(model: SystemModel, omega, windows=None) -> np.ndarray:
    """Index of the mode whose window contains each omega, -1 if none."""
    omega = np.asarray(omega, dtype=float)
    windows = default_windows(model) if windows is None else windows
    owner = np.full(omega.shape, -1, dtype=int)
    for i, (lo, hi) in enumerate(windows):
        hit = (omega >= lo) & (omega <= hi) & (owner < 0)
        owner[hit] = i
    return owner


def output_components(model: SystemModel, omega, windows=None, outside: str = "oracle") -> Components:
    """S_X, S_Y, Re S_XY of the cavity output at each omega.

    Parameters
    ----------
    outside : {"oracle", "error"}
        What to do for frequencies outside all mode windows: evaluate the
        exact linear-response solve, or raise ``UnassignedFrequencyError``.
    """
    omega = np.asarray(omega, dtype=float)
    scalar = omega.ndim == 0
    w = np.atleast_1d(omega)
    owner = assign_modes(model, w, windows)
    sx = np.empty(w.shape)
    sy = np.empty(w.shape)
    rxy = np.empty(w.shape)
    for i, mode in enumerate(model.modes):
        hit = owner == i
        if np.any(hit):
            c = mode_components(model.cavity, mode, w[hit])
            sx[hit], sy[hit], rxy[hit] = c
    rest = owner < 0
    if np.any(rest):
        if outside != "oracle":
            raise UnassignedFrequencyError(
                f"{int(rest.sum())} frequencies outside all mode windows")
        from .oracle import frequency_psd_exact

        c = frequency_psd_exact(model, w[rest])
        sx[rest], sy[rest], rxy[rest] = c.sx, c.sy, c.rxy
    if scalar:
        return Components(sx[0], sy[0], rxy[0])
    return Components(sx, sy, rxy)


def direct_detection_psd(model, omega, windows=None, outside="oracle"):
    """Amplitude-quadrature spectrum seen in direct detection (cavity output)."""
    return output_components(model, omega, windows, outside).sx


def phase_quadrature_psd(model, omega, windows=None, outside="oracle"):
    return output_components(model, omega, windows, outside).sy


def cross_spectrum_real(model, omega, windows=None, outside="oracle"):
    return output_components(model, omega, windows, outside).rxy


def rotate(c: Components, theta):
    """Spectrum of X cos(theta) + Y sin(theta); ``theta`` may vary per frequency."""
    t = np.asarray(theta, dtype=float)
    return (0.5 * (c.sx + c.sy) + 0.5 * np.cos(2 * t) * (c.sx - c.sy)
            + np.sin(2 * t) * c.rxy)


def quadrature_psd(model, omega, theta, windows=None, outside="oracle"):
    return rotate(output_components(model, omega, windows, outside), theta)


class OptimalPhase(NamedTuple):
    theta: np.ndarray
    degenerate: np.ndarray


def phase_from_components(c: Components) -> OptimalPhase:
    """Angle in [0, pi) minimizing the rotated spectrum.

    Solves tan(2 theta) = 2 Re S_XY / (S_X - S_Y) on the branch with
    sign(sin 2 theta) = -sign(Re S_XY).  Isotropic noise returns 0 and sets
    ``degenerate``.
    """
    b = 0.5 * (np.asarray(c.sx) - np.asarray(c.sy))
    r = np.asarray(c.rxy)
    theta = 0.5 * np.arctan2(-r, -b)
    theta = np.mod(theta, np.pi)
    theta = np.where(theta >= np.pi, 0.0, theta)
    degenerate = (b == 0) & (r == 0)
    theta = np.where(degenerate, 0.0, theta)
    return OptimalPhase(theta, degenerate)


def optimal_phase(model, omega, windows=None, outside="oracle") -> OptimalPhase:
    return phase_from_components(output_components(model, omega, windows, outside))


def optimal_from_components(c: Components):
    return 0.5 * (c.sx + c.sy) - np.sqrt(0.25 * (c.sx - c.sy) ** 2 + c.rxy**2)


def optimal_psd(model, omega, windows=None, outside="oracle"):
    """Lower envelope over homodyne angles."""
    return optimal_from_components(output_components(model, omega, windows, outside))


def _check_eta(eta_det, allow_zero=True):
    if not 0.0 <= eta_det <= 1.0:
        raise ValueError(f"eta_det must lie in [0, 1], got {eta_det!r}")
    if not allow_zero and eta_det == 0:
        raise ValueError("eta_det = 0 cannot be inverted")


def apply_detection_efficiency(spectrum, eta_det: float, shot_noise: float = SHOT_NOISE):
    """Mix in vacuum: eta S + (1 - eta) S_SN.

    For a ``SpectrumTrace`` the normalized shot-noise level 1 is used and the
    stage becomes ``detected``; plain values use ``shot_noise``.
    """
    _check_eta(eta_det)
    if isinstance(spectrum, SpectrumTrace):
        vals = eta_det * spectrum.values + (1 - eta_det) * 1.0
        meta = dict(spectrum.metadata, eta_det=eta_det)
        return replace(spectrum, values=vals, stage=Stage.DETECTED.value, metadata=meta)
    return eta_det * np.asarray(spectrum) + (1 - eta_det) * shot_noise


def correct_for_losses(spectrum, eta_det: float, shot_noise: float = SHOT_NOISE):
    """Invert ``apply_detection_efficiency``.

    Negative results are kept and reported through a
    ``NegativeSpectrumWarning`` (and ``metadata['negative_points']`` on traces).
    """
    _check_eta(eta_det, allow_zero=False)
    if isinstance(spectrum, SpectrumTrace):
        vals = (spectrum.values - (1 - eta_det) * 1.0) / eta_det
        n_neg = int(np.sum(vals < 0))
        if n_neg:
            warnings.warn(f"{n_neg} loss-corrected values are negative; eta_det too small?",
                          NegativeSpectrumWarning, stacklevel=2)
        meta = dict(spectrum.metadata, eta_det=eta_det, negative_points=n_neg)
        return replace(spectrum, values=vals, stage=Stage.LOSS_CORRECTED.value, metadata=meta)
    vals = (np.asarray(spectrum) - (1 - eta_det) * shot_noise) / eta_det
    if np.any(vals < 0):
        warnings.warn("loss-corrected values are negative; eta_det too small?",
                      NegativeSpectrumWarning, stacklevel=2)
    return vals


def to_db(normalized):
    """Power dB relative to shot noise (normalized units)."""
    return 10 * np.log10(normalized)


class SqueezingLevel(NamedTuple):
    min_db: float
    freq_at_min: float


def squeezing_level_db(trace: SpectrumTrace, window) -> SqueezingLevel:
    """Most negative 10 log10(S) inside ``window = (f_lo, f_hi)`` in Hz."""
    lo, hi = window
    sel = (trace.frequencies >= lo) & (trace.frequencies <= hi)
    if np.count_nonzero(sel) < 3:
        raise ValueError(f"window {window} holds fewer than 3 grid points")
    vals = trace.values[sel]
    if np.any(vals <= 0):
        raise ValueError("cannot take dB of non-positive spectrum values")
    k = int(np.argmin(vals))
    return SqueezingLevel(float(to_db(vals[k])), float(trace.frequencies[sel][k]))


def model_hash(model: SystemModel) -> str:
    import hashlib
    import json

    blob = json.dumps(model.snapshot(), sort_keys=True, default=repr).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def spectrum_trace(model: SystemModel, freqs_hz, quantity="direct_X", theta=None,
                   stage="detected", windows=None, outside="oracle") -> SpectrumTrace:
    """Evaluate one quantity on an ordinary-frequency grid as a normalized trace.

    ``stage='detected'`` applies the model's ``eta_det``; ``cavity_output``
    leaves it out.  ``optimal_phase`` traces hold theta_min in radians.
    """
    quantity = Quantity(quantity)
    stage = Stage(stage)
    if stage == Stage.LOSS_CORRECTED:
        raise ValueError("loss-corrected traces come from correct_for_losses")
    freqs_hz = np.asarray(freqs_hz, dtype=float)
    c = output_components(model, 2 * np.pi * freqs_hz, windows, outside)
    eta = model.eta_det if stage == Stage.DETECTED else 1.0
    meta = {"model_hash": model_hash(model), "model": model.snapshot()}
    if quantity == Quantity.OPTIMAL_PHASE:
        ph = phase_from_components(c)
        meta["degenerate_points"] = int(np.sum(ph.degenerate))
        return SpectrumTrace(freqs_hz, ph.theta, quantity.value, stage.value, meta)
    if quantity == Quantity.DIRECT_X:
        s = c.sx
    elif quantity == Quantity.PHASE_Y:
        s = c.sy
    elif quantity == Quantity.CROSS_RE_XY:
        s = c.rxy
    elif quantity == Quantity.QUADRATURE:
        if theta is None:
            raise ValueError("quadrature_theta needs theta")
        theta = QuadratureAngle(_angle(theta)).theta
        meta["theta"] = theta
        s = rotate(c, theta)
    else:
        s = optimal_from_components(c)
    if quantity == Quantity.CROSS_RE_XY:
        # Correlations scale with eta; no vacuum offset.
        vals = eta * s / SHOT_NOISE
    else:
        vals = (eta * s + (1 - eta) * SHOT_NOISE) / SHOT_NOISE
    meta["eta_det"] = eta
    return SpectrumTrace(freqs_hz, vals, quantity.value, stage.value, meta)
