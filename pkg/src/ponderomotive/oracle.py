"""Reference evaluators that make no per-mode approximation.

``frequency_psd_exact`` solves the full linear Langevin system at every
frequency.  ``langevin_simulate`` integrates the same system in time with an
exact Ornstein-Uhlenbeck update so that Welch estimates of its output can be
compared against the frequency-domain result.

Spectral convention: a white input with correlator S delta(t - t') has PSD S
at every frequency, S(omega) = int C(tau) exp(i omega tau) dtau.  Vacuum
inputs have S = 1/2 and thermal momentum inputs n_th + 1/2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.linalg import expm
from scipy.signal import lfilter, welch

from .model import SHOT_NOISE, SystemModel
from .spectra import Components, SpectrumTrace

PORTS = ("in", "out", "ext")


class UnstableModelError(ValueError):
    """Drift matrix has an eigenvalue with non-negative real part."""


class TimeStepError(ValueError):
    """Integration step too coarse for the fastest dynamics."""


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseInputSpec:
    """White input PSDs: one value per optical port quadrature, one per mode.

    ``None`` entries fall back to vacuum (1/2) for optical ports and
    n_th + 1/2 for mechanical baths.
    """

    optical: Optional[Sequence[float]] = None
    thermal: Optional[Sequence[float]] = None
    scale: float = 1.0

    def resolve(self, model: SystemModel) -> np.ndarray:
        optical = [SHOT_NOISE] * 6 if self.optical is None else list(self.optical)
        thermal = ([m.n_th + 0.5 for m in model.modes] if self.thermal is None
                   else list(self.thermal))
        if len(optical) != 6:
            raise ValueError("optical PSDs: need X and Y for ports in, out, ext (6 values)")
        if len(thermal) != len(model.modes):
            raise ValueError(f"thermal PSDs: need {len(model.modes)} values")
        psd = np.array(optical + thermal, dtype=float) * self.scale
        if np.any(psd < 0):
            raise ValueError("input PSDs must be >= 0")
        return psd


@dataclass(frozen=True)
class DriftMatrix:
    """Linear dynamics dv/dt = A v + B xi with v = (X, Y, Q_1, P_1, ..., Q_L, P_L).

    Input channels are ordered X_in, Y_in for ports (in, out, ext), then the
    momentum baths P_in,l.
    """

    A: np.ndarray
    B: np.ndarray
    channel_psd: np.ndarray
    channel_labels: tuple
    sqrt_kappa_out: float

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    # column indices of the detection-port inputs
    X_IN_OUT = 2
    Y_IN_OUT = 3


def build_drift_matrix(model: SystemModel, noise: Optional[NoiseInputSpec] = None) -> DriftMatrix:
    c = model.cavity
    L = len(model.modes)
    n = 2 + 2 * L
    A = np.zeros((n, n))
    A[0, 0] = A[1, 1] = -c.kappa_total / 2
    A[0, 1] = c.detuning
    A[1, 0] = -c.detuning
    B = np.zeros((n, 6 + L))
    labels = []
    for j, k in enumerate((c.kappa_in, c.kappa_out, c.kappa_ext)):
        B[0, 2 * j] = math.sqrt(k)
        B[1, 2 * j + 1] = math.sqrt(k)
        labels += [f"X_{PORTS[j]}", f"Y_{PORTS[j]}"]
    for l, m in enumerate(model.modes):
        q = 2 + 2 * l
        A[q, q + 1] = m.omega_m
        A[q + 1, q] = -m.omega_m
        A[q + 1, q + 1] = -m.gamma_m
        A[q + 1, 0] = -2 * m.g
        A[1, q] = -2 * m.g
        B[q + 1, 6 + l] = math.sqrt(2 * m.gamma_m)
        labels.append(f"P_{l + 1}")
    psd = (noise or NoiseInputSpec()).resolve(model)
    return DriftMatrix(A, B, psd, tuple(labels), math.sqrt(c.kappa_out))


def output_transfer(drift: DriftMatrix, omega) -> tuple:
    """Per-channel transfer coefficients of X_out and Y_out at the detection port.

    Returns two complex arrays of shape (len(omega), n_channels).
    """
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    n = drift.dim
    # rows of (-i w - A)^{-1} for X and Y via the transposed system
    M_T = (-1j * w[:, None, None] * np.eye(n)) - drift.A.T
    rhs = np.zeros((w.size, n, 2), dtype=complex)
    rhs[:, 0, 0] = 1.0
    rhs[:, 1, 1] = 1.0
    rows = np.linalg.solve(M_T, rhs)  # (N, n, 2)
    coef = np.einsum("wnk,nc->wkc", rows, drift.B) * drift.sqrt_kappa_out
    tx = coef[:, 0, :]
    ty = coef[:, 1, :]
    tx[:, DriftMatrix.X_IN_OUT] -= 1.0
    ty[:, DriftMatrix.Y_IN_OUT] -= 1.0
    return tx, ty


def frequency_psd_exact(model: SystemModel, omega, noise: Optional[NoiseInputSpec] = None,
                        chunk: int = 20000) -> Components:
    """Symmetrized S_X, S_Y and Re S_XY of the port-2 output, all modes coupled."""
    drift = build_drift_matrix(model, noise)
    omega = np.asarray(omega, dtype=float)
    scalar = omega.ndim == 0
    w = np.atleast_1d(omega)
    S = drift.channel_psd
    sx = np.empty(w.size)
    sy = np.empty(w.size)
    rxy = np.empty(w.size)
    for s in range(0, w.size, chunk):
        tx, ty = output_transfer(drift, w[s:s + chunk])
        sx[s:s + chunk] = (np.abs(tx) ** 2 * S).sum(axis=1)
        sy[s:s + chunk] = (np.abs(ty) ** 2 * S).sum(axis=1)
        rxy[s:s + chunk] = np.real((np.conj(tx) * ty * S).sum(axis=1))
    if scalar:
        return Components(sx[0], sy[0], rxy[0])
    return Components(sx, sy, rxy)


def exact_optimal_psd(model: SystemModel, omega, noise=None):
    """Smallest eigenvalue of the 2x2 quadrature covariance [[S_X, Re S_XY], [Re S_XY, S_Y]]."""
    c = frequency_psd_exact(model, omega, noise)
    cov = np.stack([np.stack([c.sx, c.rxy], -1), np.stack([c.rxy, c.sy], -1)], -2)
    return np.linalg.eigvalsh(cov)[..., 0]


# ---------------------------------------------------------------------------
# time domain


@dataclass(frozen=True)
class TrajectoryRecord:
    """Step-averaged output quadratures and the detection-port input increments.

    ``x_out[n]`` is the average of sqrt(kappa_out) X(t) - X_in,out(t) over
    step n; ``dw_x[n]`` is the integral of X_in,out over the same step, i.e.
    the realization that also drove the cavity.
    """

    dt: float
    x_out: np.ndarray
    y_out: np.ndarray
    dw_x: np.ndarray
    dw_y: np.ndarray
    seed: Optional[int]
    states: Optional[np.ndarray] = None

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.x_out.size)


def max_time_step(model: SystemModel) -> float:
    om_max = max(m.omega_m for m in model.modes)
    return 0.05 * min(2 * math.pi / om_max, 1.0 / model.cavity.kappa_total)


def _discretize(drift: DriftMatrix, dt: float):
    """Exact one-step propagator and joint noise covariance.

    The state is augmented with integrators of X, Y and of the two
    detection-port inputs so that one Van Loan exponential yields the
    correlated increments needed for the step-averaged output.
    """
    n = drift.dim
    na = n + 4
    Aa = np.zeros((na, na))
    Aa[:n, :n] = drift.A
    Aa[n, 0] = 1.0
    Aa[n + 1, 1] = 1.0
    Ba = np.zeros((na, drift.B.shape[1]))
    Ba[:n] = drift.B
    Ba[n + 2, DriftMatrix.X_IN_OUT] = 1.0
    Ba[n + 3, DriftMatrix.Y_IN_OUT] = 1.0
    G = Ba * np.sqrt(drift.channel_psd)
    C = np.zeros((2 * na, 2 * na))
    C[:na, :na] = -Aa
    C[:na, na:] = G @ G.T
    C[na:, na:] = Aa.T
    F = expm(C * dt)
    Phi = F[na:, na:].T
    Q = Phi @ F[:na, na:]
    Q = 0.5 * (Q + Q.T)
    vals, vecs = np.linalg.eigh(Q)
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))
    return Phi, root


def _propagate(P: np.ndarray, x0: np.ndarray, w: np.ndarray) -> np.ndarray:
    """States x_1..x_m of x_{k+1} = P x_k + w_k."""
    lam, V = np.linalg.eig(P)
    if np.linalg.cond(V) < 1e8:
        Vi = np.linalg.inv(V)
        u = w @ Vi.T
        y0 = Vi @ x0
        out = np.empty(u.shape, dtype=complex)
        for i in range(lam.size):
            out[:, i], _ = lfilter([1.0], [1.0, -lam[i]], u[:, i], zi=[lam[i] * y0[i]])
        return (out @ V.T).real
    out = np.empty_like(w)
    x = x0
    for k in range(w.shape[0]):
        x = P @ x + w[k]
        out[k] = x
    return out


def langevin_simulate(model: SystemModel, dt: float, duration: float, seed: Optional[int],
                      noise: Optional[NoiseInputSpec] = None, x0=None, keep_states: bool = False,
                      chunk: int = 1 << 18) -> TrajectoryRecord:
    """Integrate the linear quantum Langevin equations as a classical Gaussian SDE.

    Each step applies the exact propagator exp(A dt) and draws the exact
    discrete noise, so there is no integrator bias.  The output quadratures
    reuse the detection-port input realization that drove the state.
    Identical arguments produce bit-identical records.
    """
    drift = build_drift_matrix(model, noise)
    if not np.all(np.linalg.eigvals(drift.A).real < 0):
        raise UnstableModelError("drift matrix is not Hurwitz; no steady state")
    limit = max_time_step(model)
    if dt > limit * (1 + 1e-12):
        raise TimeStepError(f"dt = {dt:g} exceeds 0.05 min(2 pi/Omega_max, 1/kappa) = {limit:g}")
    nsteps = int(round(duration / dt))
    if nsteps < 2:
        raise ValueError("duration must span at least two steps")
    n = drift.dim
    Phi, root = _discretize(drift, dt)
    P = Phi[:n, :n]
    rng = np.random.default_rng(seed)
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    x_out = np.empty(nsteps)
    y_out = np.empty(nsteps)
    dw_x = np.empty(nsteps)
    dw_y = np.empty(nsteps)
    states = np.empty((nsteps + 1, n)) if keep_states else None
    if keep_states:
        states[0] = x
    k_out = drift.sqrt_kappa_out
    for s in range(0, nsteps, chunk):
        m = min(chunk, nsteps - s)
        w = rng.standard_normal((m, n + 4)) @ root.T
        xs = _propagate(P, x, w[:, :n])
        prev = np.vstack([x[None, :], xs[:-1]])
        ix = prev @ Phi[n, :n] + w[:, n]
        iy = prev @ Phi[n + 1, :n] + w[:, n + 1]
        dw_x[s:s + m] = w[:, n + 2]
        dw_y[s:s + m] = w[:, n + 3]
        x_out[s:s + m] = (k_out * ix - w[:, n + 2]) / dt
        y_out[s:s + m] = (k_out * iy - w[:, n + 3]) / dt
        if keep_states:
            states[s + 1:s + m + 1] = xs
        x = xs[-1]
    return TrajectoryRecord(dt, x_out, y_out, dw_x, dw_y, seed, states)


def spawn_seeds(master_seed: int, count: int) -> list:
    """Independent child seeds for concurrent trajectories."""
    children = np.random.SeedSequence(master_seed).spawn(count)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


class WelchEstimate(NamedTuple):
    frequencies: np.ndarray  # cycles per unit time, >= 0
    psd: np.ndarray
    n_segments: int


def welch_psd(series, dt: float, segment_length: int, overlap_fraction: float = 0.5,
              window: str = "hann") -> WelchEstimate:
    """Averaged, window-corrected periodogram in the symmetrized two-sided convention.

    A white sequence whose samples have variance S/dt (the step average of
    white noise with PSD S) gives a flat estimate at S.
    """
    x = np.asarray(series, dtype=float)
    if not 0.0 <= overlap_fraction <= 0.9:
        raise ValueError("overlap_fraction must lie in [0, 0.9]")
    if segment_length < 2 or segment_length > x.size:
        raise InsufficientDataError(
            f"segment_length {segment_length} incompatible with {x.size} samples")
    noverlap = int(round(overlap_fraction * segment_length))
    f, p = welch(x, fs=1.0 / dt, window=window, nperseg=segment_length, noverlap=noverlap,
                 detrend=False, return_onesided=False, scaling="density")
    keep = f >= 0
    f, p = f[keep], p[keep]
    order = np.argsort(f)
    nseg = (x.size - noverlap) // (segment_length - noverlap)
    return WelchEstimate(f[order], p[order], nseg)


def welch_trace(record: TrajectoryRecord, segment_length: int, overlap_fraction: float = 0.5,
                window: str = "hann", quadrature: str = "X") -> SpectrumTrace:
    """Welch estimate of a simulated output quadrature as a normalized trace."""
    series = record.x_out if quadrature == "X" else record.y_out
    est = welch_psd(series, record.dt, segment_length, overlap_fraction, window)
    quantity = "direct_X" if quadrature == "X" else "phase_Y"
    meta = {"seed": record.seed, "n_segments": est.n_segments, "dt": record.dt}
    return SpectrumTrace(est.frequencies, est.psd / SHOT_NOISE, quantity, "cavity_output", meta)


class PeakComparison(NamedTuple):
    mode_index: int
    f_peak: float
    fwhm: float
    n_bins: int
    ratio: float  # band-mean Welch / band-mean exact


def _peak_and_width(model: SystemModel, mode_index: int, span: float, n: int = 20001):
    om = model.modes[mode_index].omega_m
    w = np.linspace(om - span, om + span, n)
    s = frequency_psd_exact(model, w).sx
    k = int(np.argmax(s))
    base = 0.5 * (s[0] + s[-1])
    half = s > base + 0.5 * (s[k] - base)
    return w[k] / (2 * math.pi), (w[half].max() - w[half].min()) / (2 * math.pi)


def stochastic_comparison(model: SystemModel, record: TrajectoryRecord, segment_length: int,
                          overlap_fraction: float = 0.5, n_widths: float = 3.0) -> list:
    """Compare the Welch X-output PSD with the exact PSD around every resonance.

    For each mode the exact spectrum locates the peak and its full width at
    half maximum; the band of +/- ``n_widths`` widths around the peak is
    averaged in both spectra and the ratio reported.  Band averaging keeps
    the statistical scatter of individual Welch bins out of the figure.
    """
    est = welch_psd(record.x_out, record.dt, segment_length, overlap_fraction)
    out = []
    for i, m in enumerate(model.modes):
        span = 50 * max(m.gamma_m, 1e-3 * m.omega_m)
        fp, fw = _peak_and_width(model, i, span)
        band = (est.frequencies > fp - n_widths * fw) & (est.frequencies < fp + n_widths * fw)
        nb = int(np.count_nonzero(band))
        if nb < 3:
            raise InsufficientDataError(
                f"only {nb} Welch bins inside the mode-{i + 1} band; lengthen segment_length")
        exact = frequency_psd_exact(model, 2 * math.pi * est.frequencies[band]).sx
        out.append(PeakComparison(i, fp, fw, nb, float(est.psd[band].mean() / exact.mean())))
    return out
