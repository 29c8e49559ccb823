"""Trace normalization, windowed least-squares fitting and ring-down analysis."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.optimize import least_squares, minimize

from .model import SHOT_NOISE, ModelError, SystemModel, effective_mode_parameters
from .spectra import SpectrumTrace, mode_components


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class RawTraceSet:
    """Detector-unit spectra on one frequency grid (Hz)."""

    frequencies: np.ndarray
    signal: np.ndarray
    shot: np.ndarray
    electronic: np.ndarray

    def __post_init__(self):
        arrs = [np.asarray(getattr(self, k), dtype=float)
                for k in ("frequencies", "signal", "shot", "electronic")]
        if len({a.shape for a in arrs}) != 1 or arrs[0].ndim != 1:
            raise ValueError("raw traces must share one 1-D grid")
        for k, a in zip(("frequencies", "signal", "shot", "electronic"), arrs):
            object.__setattr__(self, k, a)

    @classmethod
    def resampled(cls, frequencies, signal, shot_freqs, shot, elec_freqs, electronic):
        """Interpolate shot and electronic traces onto the signal grid."""
        f = np.asarray(frequencies, dtype=float)
        return cls(f, np.asarray(signal, dtype=float),
                   np.interp(f, shot_freqs, shot), np.interp(f, elec_freqs, electronic))


def normalize_trace(raw: RawTraceSet) -> SpectrumTrace:
    """(signal - electronic) / (shot - electronic): shot noise at exactly 1."""
    denom = raw.shot - raw.electronic
    if np.any(denom <= 0):
        bad = raw.frequencies[denom <= 0]
        raise FitError(f"shot noise does not exceed electronic noise at {bad.size} points "
                       f"(first at {bad[0]:.6g} Hz)")
    vals = (raw.signal - raw.electronic) / denom
    return SpectrumTrace(raw.frequencies, vals, "direct_X", "detected",
                         {"source": "normalized raw traces"})


def _mode_names(n_modes):
    names = ["kappa", "detuning"]
    for l in range(1, n_modes + 1):
        names += [f"g{l}", f"omega_m{l}"]
    return names


def get_param(model: SystemModel, name: str) -> float:
    if name == "kappa":
        return model.cavity.kappa_total
    if name == "detuning":
        return model.cavity.detuning
    if name.startswith("omega_m"):
        return model.modes[int(name[7:]) - 1].omega_m
    if name.startswith("g"):
        return model.modes[int(name[1:]) - 1].g
    raise KeyError(name)


def set_params(model: SystemModel, values: dict) -> SystemModel:
    """Return a copy with free parameters replaced; eta_cav is held fixed."""
    cavity = model.cavity
    if "kappa" in values:
        cavity = cavity.scaled(values["kappa"])
    if "detuning" in values:
        cavity = cavity.with_detuning(values["detuning"])
    modes = list(model.modes)
    for name, v in values.items():
        if name.startswith("omega_m"):
            i = int(name[7:]) - 1
            modes[i] = replace(modes[i], omega_m=v)
        elif name.startswith("g"):
            i = int(name[1:]) - 1
            modes[i] = replace(modes[i], g=v)
    return replace(model, cavity=cavity, modes=tuple(modes))


def detected_window_model(model: SystemModel, mode_index: int, freqs_hz) -> np.ndarray:
    """Normalized detected direct-detection spectrum from the closed form of one mode."""
    c = mode_components(model.cavity, model.modes[mode_index], 2 * np.pi * np.asarray(freqs_hz))
    eta = model.eta_det
    return (eta * c.sx + (1 - eta) * SHOT_NOISE) / SHOT_NOISE


def window_masks(freqs_hz, windows, exclude=()):
    """Boolean mask per window (None windows give None), with notches removed."""
    masks = []
    for w in windows:
        if w is None:
            masks.append(None)
            continue
        m = (freqs_hz >= w[0]) & (freqs_hz <= w[1])
        for lo, hi in exclude:
            m &= ~((freqs_hz >= lo) & (freqs_hz <= hi))
        masks.append(m)
    return masks


def relative_residuals(model: SystemModel, data: SpectrumTrace, windows, exclude=()) -> np.ndarray:
    f = data.frequencies
    parts = []
    for l, m in enumerate(window_masks(f, windows, exclude)):
        if m is None:
            continue
        d = data.values[m]
        if np.any(d == 0):
            raise FitError(f"data value is zero inside window {l + 1}")
        parts.append((detected_window_model(model, l, f[m]) - d) / d)
    if not parts or sum(p.size for p in parts) == 0:
        raise FitError("all fit windows are empty")
    return np.concatenate(parts)


def residual(model: SystemModel, data: SpectrumTrace, windows, exclude=()) -> float:
    """Sum over windows of squared relative deviations model vs data."""
    r = relative_residuals(model, data, windows, exclude)
    return float(r @ r)


@dataclass
class FitProblem:
    """Windowed fit of the detected direct-detection spectrum.

    ``model`` carries the initial guesses for the free parameters and the
    calibrated values of everything else (gamma_m, n_th, eta_cav, eta_det).
    ``windows`` holds one (f_lo, f_hi) interval in Hz per mode; ``None``
    skips a mode.  ``bounds`` maps free-parameter names to (lo, hi) in rad/s
    and defaults to +/-50 % for rates and the window edges for frequencies.
    """

    data: SpectrumTrace
    model: SystemModel
    windows: Sequence
    free: Optional[Sequence[str]] = None
    bounds: dict = field(default_factory=dict)
    exclude: Sequence = ()
    max_iter: int = 20000
    coarse_scan: bool = True

    def __post_init__(self):
        if len(self.windows) != len(self.model.modes):
            raise FitError("need one window (or None) per mechanical mode")
        active = [w for w in self.windows if w is not None]
        if not active:
            raise FitError("all fit windows are empty")
        spans = sorted(active)
        for a, b in zip(spans, spans[1:]):
            if b[0] <= a[1]:
                raise FitError("fit windows overlap")
        if self.free is None:
            names = ["kappa", "detuning"]
            for l, w in enumerate(self.windows, 1):
                if w is not None:
                    names += [f"g{l}", f"omega_m{l}"]
            self.free = tuple(names)
        else:
            self.free = tuple(self.free)
        allowed = set(_mode_names(len(self.model.modes)))
        unknown = set(self.free) - allowed
        if unknown:
            raise FitError(f"unknown free parameters {sorted(unknown)}")
        for m in self.model.modes:
            if not (m.gamma_m > 0 and m.n_th > 0):
                raise FitError("fixed gamma_m and n_th must be positive")
        if not (self.model.cavity.eta_cav > 0 and self.model.eta_det > 0):
            raise FitError("fixed eta_cav and eta_det must be positive")
        full = {}
        for name in self.free:
            p0 = get_param(self.model, name)
            if name in self.bounds:
                lo, hi = self.bounds[name]
            elif name.startswith("omega_m"):
                w = self.windows[int(name[7:]) - 1]
                lo, hi = 2 * math.pi * w[0], 2 * math.pi * w[1]
            else:
                lo, hi = 0.5 * p0, 1.5 * p0
            if not lo <= p0 <= hi:
                raise FitError(f"initial {name} = {p0:.6g} outside bounds ({lo:.6g}, {hi:.6g})")
            full[name] = (float(lo), float(hi))
        self.bounds = full


@dataclass
class FitResult:
    params: dict
    model: SystemModel
    cost: float
    initial_cost: float
    uncertainties: dict
    n_iter: int
    n_eval: int
    converged: bool
    message: str
    fitted: Optional[SpectrumTrace] = None

    def report(self) -> str:
        lines = [f"cost {self.cost:.6e} (initial {self.initial_cost:.6e})",
                 f"converged {self.converged}: {self.message}",
                 f"iterations {self.n_iter}, evaluations {self.n_eval}"]
        for k, v in self.params.items():
            s = self.uncertainties.get(k, float("nan"))
            lines.append(f"{k:>10s} = {v / (2 * math.pi):.9g} Hz +/- {s / (2 * math.pi):.3g} Hz")
        return "\n".join(lines)


def _scales(problem: FitProblem):
    """Per-parameter step scale: 5 % for rates, ~one linewidth for resonances."""
    out = []
    for name in problem.free:
        p0 = get_param(problem.model, name)
        if name.startswith("omega_m"):
            i = int(name[7:]) - 1
            try:
                width = effective_mode_parameters(problem.model.modes[i], problem.model.cavity).gamma_eff
            except ModelError:
                width = 0.0
            lo, hi = problem.bounds[name]
            out.append(min(max(width, 1e-6 * p0), 0.05 * (hi - lo)))
        else:
            out.append(0.05 * abs(p0) if p0 else 1.0)
    return np.array(out)


def _coarse_resonances(problem: FitProblem, model: SystemModel, n_scan: int = 801) -> SystemModel:
    """Grid search of each free resonance frequency over its window."""
    for name in problem.free:
        if not name.startswith("omega_m"):
            continue
        i = int(name[7:]) - 1
        lo, hi = problem.bounds[name]
        w_lo, w_hi = (2 * math.pi * f for f in problem.windows[i])
        if max(lo, w_lo) < min(hi, w_hi):
            lo, hi = max(lo, w_lo), min(hi, w_hi)
        win = [None] * len(problem.windows)
        win[i] = problem.windows[i]
        best, best_c = get_param(model, name), math.inf
        for om in np.linspace(lo, hi, n_scan):
            trial = set_params(model, {name: om})
            try:
                c = residual(trial, problem.data, win, problem.exclude)
            except (ArithmeticError, FitError):
                continue
            if c < best_c:
                best, best_c = om, c
        model = set_params(model, {name: best})
    return model


def fit(problem: FitProblem) -> FitResult:
    """Minimize the summed squared relative deviation over the fit windows.

    A coarse scan locates each narrow resonance, a bounded Nelder-Mead
    search handles the rest, and a trust-region Gauss-Newton polish refines
    the optimum.  Unstable parameter sets cost +inf.
    """
    names = problem.free
    base = problem.model
    p_init = np.array([get_param(base, n) for n in names])
    lo = np.array([problem.bounds[n][0] for n in names])
    hi = np.array([problem.bounds[n][1] for n in names])
    data, windows, exclude = problem.data, problem.windows, problem.exclude

    def model_at(p):
        return set_params(base, dict(zip(names, p)))

    def cost_p(p):
        try:
            m = model_at(p)
            if not m.is_stable():
                return math.inf
            return residual(m, data, windows, exclude)
        except (ModelError, ArithmeticError):
            return math.inf

    initial_cost = cost_p(p_init)
    start_model = _coarse_resonances(problem, base) if problem.coarse_scan else base
    p_start = np.array([get_param(start_model, n) for n in names])
    scale = _scales(problem)

    def to_x(p):
        return (p - p_start) / scale

    def to_p(x):
        return p_start + np.asarray(x) * scale

    xlo, xhi = to_x(lo), to_x(hi)
    simplex = [np.zeros(len(names))]
    for i in range(len(names)):
        v = np.zeros(len(names))
        v[i] = 1.0 if xhi[i] >= 1.0 else -1.0
        simplex.append(v)
    nm = minimize(lambda x: cost_p(to_p(x)), np.zeros(len(names)), method="Nelder-Mead",
                  bounds=list(zip(xlo, xhi)),
                  options={"initial_simplex": np.array(simplex), "maxiter": problem.max_iter,
                           "maxfev": 4 * problem.max_iter, "xatol": 1e-10, "fatol": 1e-14,
                           "adaptive": True})
    n_eval = nm.nfev
    x_best = np.clip(nm.x, xlo, xhi)

    def resid_x(x):
        m = model_at(to_p(x))
        if not m.is_stable():
            return np.full(_n_points(problem), 1e3)
        return relative_residuals(m, data, windows, exclude)

    polished = least_squares(resid_x, x_best, bounds=(xlo, xhi), method="trf",
                             x_scale=1.0, xtol=1e-15, ftol=1e-15, gtol=1e-15,
                             max_nfev=200 * len(names))
    n_eval += polished.nfev
    candidates = [(cost_p(to_p(polished.x)), polished.x), (cost_p(to_p(x_best)), x_best),
                  (cost_p(p_start), np.zeros(len(names))), (initial_cost, to_x(p_init))]
    best_cost, x_opt = min(candidates, key=lambda t: t[0])
    p_opt = to_p(x_opt)
    best_model = model_at(p_opt)

    unc = _curvature_uncertainties(resid_x, x_opt, scale, best_cost, xlo, xhi)
    converged = bool(nm.success or polished.success) and math.isfinite(best_cost)
    if not converged:
        warnings.warn("fit did not converge; returning best parameters found", RuntimeWarning,
                      stacklevel=2)
    fitted = _fitted_trace(best_model, problem)
    msg = f"simplex: {nm.message}; polish: {polished.message}"
    return FitResult(dict(zip(names, map(float, p_opt))), best_model, best_cost, initial_cost,
                     dict(zip(names, unc)), int(nm.nit), int(n_eval), converged, msg, fitted)


def _n_points(problem):
    masks = window_masks(problem.data.frequencies, problem.windows, problem.exclude)
    return int(sum(m.sum() for m in masks if m is not None))


def _curvature_uncertainties(resid_x, x, scale, cost, xlo, xhi):
    """Standard errors from the Gauss-Newton curvature J^T J of the cost."""
    n = x.size
    r0 = resid_x(x)
    J = np.empty((r0.size, n))
    for i in range(n):
        h = 1e-6
        xp, xm = x.copy(), x.copy()
        xp[i] = min(x[i] + h, xhi[i])
        xm[i] = max(x[i] - h, xlo[i])
        J[:, i] = (resid_x(xp) - resid_x(xm)) / (xp[i] - xm[i])
    dof = max(r0.size - n, 1)
    s2 = cost / dof
    try:
        cov = np.linalg.inv(J.T @ J) * s2
        var = np.clip(np.diag(cov), 0.0, None)
    except np.linalg.LinAlgError:
        var = np.full(n, np.inf)
    return list(np.sqrt(var) * scale)


def _fitted_trace(model: SystemModel, problem: FitProblem) -> Optional[SpectrumTrace]:
    f = problem.data.frequencies
    vals = np.full(f.size, np.nan)
    for l, m in enumerate(window_masks(f, problem.windows)):
        if m is not None and m.any():
            vals[m] = detected_window_model(model, l, f[m])
    keep = np.isfinite(vals)
    if keep.sum() < 2:
        return None
    return SpectrumTrace(f[keep], vals[keep], "direct_X", "detected", {"fitted": True})


def fit_per_window(problem: FitProblem) -> list:
    """Fit each window on its own, with its own (kappa, detuning)."""
    out = []
    for l, w in enumerate(problem.windows):
        if w is None:
            continue
        wins = [None] * len(problem.windows)
        wins[l] = w
        free = ("kappa", "detuning", f"g{l + 1}", f"omega_m{l + 1}")
        bounds = {k: v for k, v in problem.bounds.items() if k in free}
        sub = FitProblem(problem.data, problem.model, wins, free, bounds, problem.exclude,
                         problem.max_iter, problem.coarse_scan)
        out.append(fit(sub))
    return out


# ---------------------------------------------------------------------------
# ring-down


@dataclass(frozen=True)
class RingdownData:
    times: np.ndarray
    amplitudes: np.ndarray
    omega_m_hz: float

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        a = np.asarray(self.amplitudes, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "amplitudes", a)
        if t.shape != a.shape or t.ndim != 1:
            raise ValueError("times and amplitudes must be 1-D arrays of equal length")
        if t.size < 10:
            raise ValueError("ring-down needs at least 10 samples")
        if not np.all(np.diff(t) > 0):
            raise ValueError("times must be strictly increasing")
        if np.any(a <= 0):
            raise ValueError("amplitudes must be positive for a log-linear fit")


class RingdownResult(NamedTuple):
    gamma_m: float  # energy decay rate, rad/s
    Q: float
    decaying: bool
    slope: float
    intercept: float


def ringdown_fit(data: RingdownData) -> RingdownResult:
    """Fit ln A(t) to a line; the amplitude decays as exp(-gamma_m t / 2)."""
    slope, intercept = np.polyfit(data.times, np.log(data.amplitudes), 1)
    gamma = -2.0 * slope
    omega = 2 * math.pi * data.omega_m_hz
    if slope == 0:
        q = math.inf
    else:
        q = omega / gamma
    decaying = bool(slope < 0)
    if not decaying:
        warnings.warn("ring-down amplitude is not decaying", RuntimeWarning, stacklevel=2)
    return RingdownResult(float(gamma), float(q), decaying, float(slope), float(intercept))
