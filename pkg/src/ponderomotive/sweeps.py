"""Input-power and detuning sweeps of the linear model.

Couplings scale with the square root of the intracavity photon number.  At
fixed detuning that is sqrt(P/P0); a detuning sweep at fixed input power also
rescales by the driven-cavity Lorentzian (kappa^2/4) / (kappa^2/4 + Delta^2)
relative to the reference detuning.  Saturation seen in measured data at high
power or small detuning is outside this model.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from .model import ModelError, SystemModel, effective_mode_parameters
from .spectra import SpectrumTrace, SqueezingLevel, spectrum_trace, squeezing_level_db

SWEEPABLE = ("input_power", "detuning")


def scale_coupling_with_power(g, power, reference_power):
    """g(P) = g(P0) sqrt(P / P0)."""
    if not (power > 0 and reference_power > 0):
        raise ValueError("powers must be positive")
    return np.asarray(g) * math.sqrt(power / reference_power)


def intracavity_lorentzian(kappa: float, detuning: float) -> float:
    return (kappa**2 / 4) / (kappa**2 / 4 + detuning**2)


@dataclass
class SweepPlan:
    """A list of operating points derived from ``base``.

    ``values`` are mW for ``input_power`` and Hz for ``detuning``.  The base
    couplings belong to ``reference_power_mw`` at the base detuning; detuning
    sweeps run at ``input_power_mw`` (defaults to the reference power).
    ``windows_hz`` are the squeezing-summary windows; ``None`` means
    Omega_l/2pi +/- 50 kHz of the swept model.
    """

    base: SystemModel
    parameter: str
    values: Sequence[float]
    frequencies_hz: np.ndarray
    reference_power_mw: float = 1.0
    input_power_mw: Optional[float] = None
    quantity: str = "direct_X"
    stage: str = "detected"
    windows_hz: Optional[Sequence] = None
    workers: int = 1

    def __post_init__(self):
        if self.parameter not in SWEEPABLE:
            raise ValueError(f"parameter must be one of {SWEEPABLE}")
        vals = np.asarray(self.values, dtype=float)
        if vals.size == 0 or not np.all(np.isfinite(vals)):
            raise ValueError("sweep values must be a non-empty list of finite numbers")
        if self.parameter == "input_power" and np.any(vals <= 0):
            raise ValueError("input powers must be positive")
        if not self.reference_power_mw > 0:
            raise ValueError("reference power must be positive")
        self.values = [float(v) for v in vals]


@dataclass
class SweepPoint:
    value: float
    model: Optional[SystemModel]
    stable: bool
    trace: Optional[SpectrumTrace] = None
    levels: List[Optional[SqueezingLevel]] = field(default_factory=list)
    gamma_eff: List[float] = field(default_factory=list)
    error: Optional[str] = None


@dataclass
class SweepResult:
    plan: SweepPlan
    points: List[SweepPoint]


def model_at(plan: SweepPlan, value: float) -> SystemModel:
    base = plan.base
    kappa = base.cavity.kappa_total
    if plan.parameter == "input_power":
        s = math.sqrt(value / plan.reference_power_mw)
        cavity = base.cavity
    else:
        p_in = plan.input_power_mw or plan.reference_power_mw
        delta = 2 * math.pi * value
        ratio = intracavity_lorentzian(kappa, delta) / intracavity_lorentzian(kappa, base.cavity.detuning)
        s = math.sqrt(p_in / plan.reference_power_mw * ratio)
        cavity = base.cavity.with_detuning(delta)
    modes = tuple(replace(m, g=m.g * s) for m in base.modes)
    return replace(base, cavity=cavity, modes=modes)


def _run_point(plan: SweepPlan, value: float) -> SweepPoint:
    try:
        model = model_at(plan, value)
    except (ModelError, ValueError) as exc:
        return SweepPoint(value, None, False, error=str(exc))
    if not model.is_stable():
        return SweepPoint(value, model, False, error="unstable drift matrix")
    point = SweepPoint(value, model, True)
    try:
        point.trace = spectrum_trace(model, plan.frequencies_hz, plan.quantity, stage=plan.stage)
        windows = plan.windows_hz or [(m.omega_m / (2 * math.pi) - 50e3,
                                       m.omega_m / (2 * math.pi) + 50e3) for m in model.modes]
        for w in windows:
            try:
                point.levels.append(squeezing_level_db(point.trace, w))
            except ValueError:
                point.levels.append(None)
        for m in model.modes:
            try:
                point.gamma_eff.append(effective_mode_parameters(m, model.cavity).gamma_eff)
            except ModelError:
                point.gamma_eff.append(math.nan)
    except (ArithmeticError, ValueError) as exc:
        point.error = str(exc)
    return point


def run_sweep(plan: SweepPlan) -> SweepResult:
    """Evaluate every plan value; failures are recorded per point, order is kept."""
    if plan.workers > 1:
        with ThreadPoolExecutor(plan.workers) as ex:
            points = list(ex.map(lambda v: _run_point(plan, v), plan.values))
    else:
        points = [_run_point(plan, v) for v in plan.values]
    return SweepResult(plan, points)
