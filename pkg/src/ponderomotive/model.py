"""Domain types, susceptibilities and derived rates for a multimode
membrane-in-the-middle optomechanical system.

All rates and frequencies in this module are angular (rad/s).  Quadrature
operators use hbar = 1 and the symmetrized spectral convention in which the
vacuum (shot-noise) level is 1/2.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np

SHOT_NOISE = 0.5

#: Relative floor on |(kappa/2 - i omega)^2 + Delta^2| below which the
#: closed forms refuse to evaluate.
DENOMINATOR_FLOOR = 1e-12

#: Factor in sqrt(g_l g_l') <= factor * |Omega_l - Omega_l'|.
NON_OVERLAP_FACTOR = 0.1


class ModelError(ValueError):
    """Invalid model parameters."""


class DegenerateDenominatorError(ArithmeticError):
    """The cavity denominator vanishes (only reachable with kappa = 0)."""


class ValidityWarning(UserWarning):
    """Model outside the regime where the per-mode closed forms are accurate."""


@dataclass(frozen=True)
class PhysicalConstants:
    k_B: float = 1.380649e-23
    hbar: float = 1.054571817e-34


CONSTANTS = PhysicalConstants()


@dataclass(frozen=True)
class CavityParams:
    """Optical cavity rates.

    Parameters
    ----------
    kappa_total : float
        Full linewidth (FWHM) in rad/s.
    kappa_in, kappa_out, kappa_ext : float
        Decay rates through the input mirror (port 1), the detection mirror
        (port 2) and external losses.  Must sum to ``kappa_total``.
    detuning : float
        Delta = omega_cav - omega_laser in rad/s; positive is red detuning.
    """

    kappa_total: float
    kappa_in: float
    kappa_out: float
    kappa_ext: float
    detuning: float

    def __post_init__(self):
        for name in ("kappa_total", "kappa_in", "kappa_out", "kappa_ext", "detuning"):
            if not math.isfinite(getattr(self, name)):
                raise ModelError(f"{name} must be finite")
        for name in ("kappa_in", "kappa_out", "kappa_ext"):
            if getattr(self, name) < 0:
                raise ModelError(f"{name} must be >= 0, got {getattr(self, name)!r}")
        ports = self.kappa_in + self.kappa_out + self.kappa_ext
        if abs(ports - self.kappa_total) > 1e-12 * max(abs(self.kappa_total), abs(ports)):
            raise ModelError(
                "kappa_in + kappa_out + kappa_ext must equal kappa_total "
                f"({self.kappa_in!r} + {self.kappa_out!r} + {self.kappa_ext!r} "
                f"!= {self.kappa_total!r})"
            )

    @classmethod
    def from_efficiency(cls, kappa_total, detuning, eta_cav, kappa_ext=0.0):
        """Build from the total linewidth and the output-port efficiency."""
        if not 0.0 <= eta_cav <= 1.0:
            raise ModelError(f"eta_cav must lie in [0, 1], got {eta_cav!r}")
        kappa_out = eta_cav * kappa_total
        kappa_in = kappa_total - kappa_out - kappa_ext
        if kappa_in < 0:
            raise ModelError("kappa_ext exceeds the loss budget left by eta_cav")
        return cls(kappa_total, kappa_in, kappa_out, kappa_ext, detuning)

    @property
    def eta_cav(self) -> float:
        if self.kappa_total == 0:
            return 0.0
        return self.kappa_out / self.kappa_total

    def with_detuning(self, detuning: float) -> "CavityParams":
        return replace(self, detuning=detuning)

    def scaled(self, kappa_total: float) -> "CavityParams":
        """Same port split, different total linewidth."""
        s = kappa_total / self.kappa_total
        return CavityParams(kappa_total, self.kappa_in * s, self.kappa_out * s,
                            self.kappa_ext * s, self.detuning)


@dataclass(frozen=True)
class MechanicalMode:
    """One mechanical mode: resonance, intrinsic damping, coupling, occupancy."""

    omega_m: float
    gamma_m: float
    g: float
    n_th: float
    label: str = ""

    def __post_init__(self):
        if not self.omega_m > 0:
            raise ModelError(f"omega_m must be > 0, got {self.omega_m!r}")
        if not self.gamma_m > 0:
            raise ModelError(f"gamma_m must be > 0, got {self.gamma_m!r}")
        if not self.g >= 0:
            raise ModelError(f"g must be >= 0, got {self.g!r}")
        if not self.n_th >= 0:
            raise ModelError(f"n_th must be >= 0, got {self.n_th!r}")
        if not all(math.isfinite(v) for v in (self.omega_m, self.gamma_m, self.g, self.n_th)):
            raise ModelError("mechanical parameters must be finite")

    @property
    def Q(self) -> float:
        return self.omega_m / self.gamma_m


@dataclass(frozen=True)
class SystemModel:
    """Cavity plus one or more mechanical modes and a detection efficiency."""

    cavity: CavityParams
    modes: tuple
    eta_det: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        if not self.modes:
            raise ModelError("at least one mechanical mode is required")
        if not 0.0 <= self.eta_det <= 1.0:
            raise ModelError(f"eta_det must lie in [0, 1], got {self.eta_det!r}")

    def replace_mode(self, index: int, **changes) -> "SystemModel":
        modes = list(self.modes)
        modes[index] = replace(modes[index], **changes)
        return replace(self, modes=tuple(modes))

    def with_cavity(self, **changes) -> "SystemModel":
        return replace(self, cavity=replace(self.cavity, **changes))

    def overlap_violations(self):
        """Pairs (l, l') with sqrt(g_l g_l') > factor * |Omega_l - Omega_l'|."""
        bad = []
        for i, a in enumerate(self.modes):
            for j in range(i + 1, len(self.modes)):
                b = self.modes[j]
                if math.sqrt(a.g * b.g) > NON_OVERLAP_FACTOR * abs(a.omega_m - b.omega_m):
                    bad.append((i, j))
        return bad

    @property
    def non_overlapping(self) -> bool:
        return not self.overlap_violations()

    def drift_eigenvalues(self) -> np.ndarray:
        from .oracle import build_drift_matrix

        return np.linalg.eigvals(build_drift_matrix(self).A)

    def is_stable(self) -> bool:
        return bool(np.all(self.drift_eigenvalues().real < 0))

    def validate(self, warn: bool = True) -> bool:
        """Check the non-overlap condition; emit a warning when violated."""
        bad = self.overlap_violations()
        if bad and warn:
            warnings.warn(
                f"modes {bad} violate sqrt(g1 g2) <= {NON_OVERLAP_FACTOR}|Omega1 - Omega2|; "
                "per-mode closed forms are approximate",
                ValidityWarning,
                stacklevel=2,
            )
        return not bad

    def snapshot(self) -> dict:
        """Plain-dict view (angular units) for metadata and hashing."""
        c = self.cavity
        return {
            "cavity": {
                "kappa_total": c.kappa_total,
                "kappa_in": c.kappa_in,
                "kappa_out": c.kappa_out,
                "kappa_ext": c.kappa_ext,
                "detuning": c.detuning,
            },
            "modes": [
                {"omega_m": m.omega_m, "gamma_m": m.gamma_m, "g": m.g,
                 "n_th": m.n_th, "label": m.label}
                for m in self.modes
            ],
            "eta_det": self.eta_det,
        }


@dataclass(frozen=True)
class CouplingPhysicalInputs:
    """Microscopic inputs for the drive-enhanced coupling rate.

    Either ``x_zpf`` or both ``m_eff`` and ``omega_m`` must be supplied.
    """

    n_ph: float
    G: float
    x_zpf: Optional[float] = None
    m_eff: Optional[float] = None
    omega_m: Optional[float] = None


class DerivedRates(NamedTuple):
    gamma_meas: float
    C_q: float


class EffectiveModeParameters(NamedTuple):
    omega_eff: float
    gamma_eff: float


def bare_susceptibility(mode: MechanicalMode, omega):
    """Omega_m / (Omega_m^2 - omega^2 - i Gamma_m omega)."""
    omega = np.asarray(omega, dtype=float)
    return mode.omega_m / (mode.omega_m**2 - omega**2 - 1j * mode.gamma_m * omega)


def cavity_denominator(cavity: CavityParams, omega):
    """(kappa/2 - i omega)^2 + Delta^2."""
    omega = np.asarray(omega, dtype=float)
    return (cavity.kappa_total / 2 - 1j * omega) ** 2 + cavity.detuning**2


def checked_denominator(cavity: CavityParams, omega, floor: float = DENOMINATOR_FLOOR):
    D = cavity_denominator(cavity, omega)
    scale = cavity.kappa_total**2 + cavity.detuning**2
    if np.any(np.abs(D) <= floor * scale):
        raise DegenerateDenominatorError(
            "cavity denominator below floor; kappa = 0 with omega = |Delta|?"
        )
    return D


def effective_susceptibility(mode: MechanicalMode, cavity: CavityParams, omega,
                             floor: float = DENOMINATOR_FLOOR):
    """Mechanical response dressed by dynamical back-action of the detuned cavity."""
    D = checked_denominator(cavity, omega, floor)
    chi_m = bare_susceptibility(mode, omega)
    return 1.0 / (1.0 / chi_m - 4 * mode.g**2 * cavity.detuning / D)


def thermal_occupation(T: float, omega_m: float, constants: PhysicalConstants = CONSTANTS) -> float:
    """High-temperature occupancy k_B T / (hbar Omega_m)."""
    if T < 0:
        raise ModelError("temperature must be >= 0")
    if not omega_m > 0:
        raise ModelError("omega_m must be > 0")
    return constants.k_B * T / (constants.hbar * omega_m)


def measurement_rate(g: float, kappa: float) -> float:
    return 4 * g**2 / kappa


def coupling_from_measurement_rate(gamma_meas: float, kappa: float) -> float:
    """Invert gamma_meas = 4 g^2 / kappa."""
    return math.sqrt(gamma_meas * kappa / 4)


def derived_rates(model: SystemModel, mode_index: int) -> DerivedRates:
    """Measurement rate 4g^2/kappa and quantum cooperativity of one mode."""
    mode = model.modes[mode_index]
    kappa = model.cavity.kappa_total
    if mode.g > kappa / 10:
        warnings.warn(f"g = {mode.g:.3g} exceeds kappa/10; 4g^2/kappa is only a "
                      "weak-coupling estimate", ValidityWarning, stacklevel=2)
    gm = measurement_rate(mode.g, kappa)
    return DerivedRates(gm, gm / (mode.gamma_m * (mode.n_th + 0.5)))


def zero_point_amplitude(m_eff: float, omega_m: float,
                         constants: PhysicalConstants = CONSTANTS) -> float:
    return math.sqrt(constants.hbar / (2 * m_eff * omega_m))


def coupling_from_physical(inputs: CouplingPhysicalInputs,
                           constants: PhysicalConstants = CONSTANTS) -> float:
    """g = sqrt(n_ph) x_zpf G."""
    x_zpf = inputs.x_zpf
    if x_zpf is None:
        if inputs.m_eff is None or inputs.omega_m is None:
            raise ModelError("coupling needs x_zpf, or both m_eff and omega_m")
        if not (inputs.m_eff > 0 and inputs.omega_m > 0):
            raise ModelError("m_eff and omega_m must be > 0")
        x_zpf = zero_point_amplitude(inputs.m_eff, inputs.omega_m, constants)
    for name, v in (("n_ph", inputs.n_ph), ("G", inputs.G), ("x_zpf", x_zpf)):
        if not v > 0:
            raise ModelError(f"{name} must be > 0, got {v!r}")
    return math.sqrt(inputs.n_ph) * x_zpf * inputs.G


def _backaction_kernel(mode, cavity, omega):
    return 4 * mode.g**2 * cavity.detuning / cavity_denominator(cavity, omega)


def effective_mode_parameters(mode: MechanicalMode, cavity: CavityParams,
                              n_grid: int = 4001) -> EffectiveModeParameters:
    """Peak frequency and FWHM of |chi_eff|^2, found numerically.

    The search window is centred on a first-order estimate of the spring shift
    and spans many estimated linewidths.  Frequencies are handled as offsets
    from that centre so that sub-mHz widths on MHz carriers stay resolved.
    """
    from scipy.optimize import bisect, minimize_scalar

    K = _backaction_kernel(mode, cavity, mode.omega_m)
    Om = mode.omega_m
    w2 = Om**2 - Om * K.real
    if w2 <= 0:
        raise ModelError("static instability: spring constant is negative")
    center = math.sqrt(w2)
    width_est = abs(mode.gamma_m + K.imag)
    half = 40 * max(width_est, mode.gamma_m)
    half = min(half, 0.5 * center)

    def power(delta):
        return np.abs(effective_susceptibility(mode, cavity, center + np.asarray(delta))) ** 2

    deltas = np.linspace(-half, half, n_grid)
    p = power(deltas)
    k = int(np.argmax(p))
    if k == 0 or k == n_grid - 1:
        raise ModelError("response peak touches the search window boundary")
    step = deltas[1] - deltas[0]
    res = minimize_scalar(lambda d: -power(d), bounds=(deltas[k] - step, deltas[k] + step),
                          method="bounded", options={"xatol": step * 1e-10})
    d_peak = float(res.x)
    p_peak = float(power(d_peak))
    target = 0.5 * p_peak
    if p[0] >= target or p[-1] >= target:
        raise ModelError("half-maximum not bracketed inside the search window")

    def f(d):
        return float(power(d)) - target

    lo = bisect(f, deltas[0], d_peak, xtol=step * 1e-12, maxiter=200)
    hi = bisect(f, d_peak, deltas[-1], xtol=step * 1e-12, maxiter=200)
    return EffectiveModeParameters(center + d_peak, hi - lo)


def reference_model(eta_det: float = 0.83) -> SystemModel:
    """Two-mode operating point with kappa/2pi = 7.0 MHz, Delta/2pi = 2.3 MHz.

    Couplings are reconstructed from measurement rates of 7.3 kHz and
    19.0 kHz (both /2pi).  The port-1/external split of the 9 % loss is a
    free choice; no closed form depends on it.
    """
    tp = 2 * math.pi
    kappa = tp * 7.0e6
    cavity = CavityParams(kappa, 0.06 * kappa, 0.91 * kappa, kappa - 0.06 * kappa - 0.91 * kappa,
                          tp * 2.3e6)
    modes = (
        MechanicalMode(tp * 1.32e6, tp * 2.3e-3,
                       coupling_from_measurement_rate(tp * 7.3e3, kappa), 1.72e5, "mode1"),
        MechanicalMode(tp * 2.43e6, tp * 8.1e-3,
                       coupling_from_measurement_rate(tp * 19.0e3, kappa), 9.4e4, "mode2"),
    )
    return SystemModel(cavity, modes, eta_det)


def desk_model(eta_det: float = 1.0) -> SystemModel:
    """Dimensionless two-mode model small enough to integrate in time.

    kappa = 10, Delta = 3, resonances at 1.3 and 2.4 with Q ~ 10^3, n_th = 10
    and g = 0.3.  Time is in units of 1/kappa_ref with kappa_ref = 1.
    """
    cavity = CavityParams.from_efficiency(10.0, 3.0, 0.9)
    modes = (MechanicalMode(1.3, 1e-3, 0.3, 10.0, "mode1"),
             MechanicalMode(2.4, 1e-3, 0.3, 10.0, "mode2"))
    return SystemModel(cavity, modes, eta_det)
