"""Configuration documents and CSV trace files.

Config files are TOML with every rate in Hz (ordinary frequency).  The
conversion to angular units happens here and nowhere else.
"""

from __future__ import annotations

import copy
import csv
import io as _io
import math
import sys
from pathlib import Path
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .model import (CavityParams, MechanicalMode, ModelError, SystemModel,
                    coupling_from_measurement_rate, thermal_occupation)
from .spectra import SpectrumTrace

TWO_PI = 2 * math.pi
TRACE_HEADER = ("frequency_hz", "psd_normalized")
PHASE_HEADER = ("frequency_hz", "theta_rad")


class ConfigError(ValueError):
    pass


def hz(value: float) -> float:
    """Ordinary frequency (Hz) to angular rate (rad/s)."""
    return TWO_PI * value


def to_hz(value: float) -> float:
    return value / TWO_PI


SCHEMA = {
    "cavity": {"kappa_hz", "kappa_in_hz", "kappa_out_hz", "kappa_ext_hz", "detuning_hz", "eta_cav"},
    "modes": {"label", "omega_hz", "gamma_hz", "g_hz", "gamma_meas_hz", "n_th", "temperature_k"},
    "detection": {"eta_det"},
    "grid": {"f_min_hz", "f_max_hz", "n_points"},
    "report": {"windows_hz"},
    "fit": {"windows_hz", "exclude_hz", "bounds_hz", "per_window", "max_iter"},
    "sweep": {"parameter", "values", "reference_power_mw", "input_power_mw", "quantity",
              "stage", "windows_hz"},
    "oracle": {"stochastic", "dt", "duration", "segment_length", "overlap", "seed"},
    "ringdown": {"omega_hz"},
    "output": {"quantities", "thetas_rad", "stage"},
}


def _check_keys(section: str, table: dict):
    unknown = set(table) - SCHEMA[section]
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")


def _need(table: dict, key: str, section: str):
    if key not in table:
        raise ConfigError(f"missing key '{section}.{key}'")
    return table[key]


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(doc: dict, overrides) -> dict:
    """Apply ``key=value`` strings with dotted keys (``modes.0.g_hz=1e5``)."""
    doc = copy.deepcopy(doc)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = doc
        for p in parts[:-1]:
            if isinstance(node, list):
                try:
                    node = node[int(p)]
                except (ValueError, IndexError):
                    raise ConfigError(f"override '{key}': bad list index '{p}'") from None
            else:
                node = node.setdefault(p, {})
        last = parts[-1]
        if isinstance(node, list):
            node[int(last)] = _parse_value(raw.strip())
        else:
            node[last] = _parse_value(raw.strip())
    return doc


def load_document(text: str, overrides=None) -> dict:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    doc = apply_overrides(doc, overrides)
    unknown = set(doc) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    for section, table in doc.items():
        if section == "modes":
            if not isinstance(table, list):
                raise ConfigError("'modes' must be an array of tables ([[modes]])")
            for m in table:
                _check_keys("modes", m)
        else:
            _check_keys(section, table)
    return doc


def _cavity_from(doc: dict) -> CavityParams:
    c = _need(doc, "cavity", "")
    kappa = hz(_need(c, "kappa_hz", "cavity"))
    delta = hz(_need(c, "detuning_hz", "cavity"))
    ports = [k for k in ("kappa_in_hz", "kappa_out_hz", "kappa_ext_hz") if k in c]
    if "eta_cav" in c:
        if "kappa_in_hz" in c or "kappa_out_hz" in c:
            raise ConfigError("give either cavity.eta_cav or the per-port rates, not both")
        try:
            return CavityParams.from_efficiency(kappa, delta, c["eta_cav"], hz(c.get("kappa_ext_hz", 0.0)))
        except ModelError as exc:
            raise ConfigError(f"cavity.eta_cav: {exc}") from None
    if len(ports) != 3:
        missing = sorted({"kappa_in_hz", "kappa_out_hz", "kappa_ext_hz"} - set(ports))
        raise ConfigError(f"missing key(s) {', '.join('cavity.' + m for m in missing)}")
    k_in, k_out, k_ext = (hz(c[k]) for k in ("kappa_in_hz", "kappa_out_hz", "kappa_ext_hz"))
    if abs(k_in + k_out + k_ext - kappa) > 1e-12 * kappa:
        raise ConfigError(
            "cavity.kappa_in_hz + cavity.kappa_out_hz + cavity.kappa_ext_hz must equal "
            f"cavity.kappa_hz ({c['kappa_in_hz']} + {c['kappa_out_hz']} + {c['kappa_ext_hz']} "
            f"!= {c['kappa_hz']})")
    try:
        # closure already checked above at the Hz level; absorb rounding into kappa_total
        return CavityParams(k_in + k_out + k_ext, k_in, k_out, k_ext, delta)
    except ModelError as exc:
        raise ConfigError(f"[cavity]: {exc}") from None


def _mode_from(m: dict, i: int, kappa: float) -> MechanicalMode:
    where = f"modes.{i}"
    omega = hz(_need(m, "omega_hz", where))
    gamma = hz(_need(m, "gamma_hz", where))
    if ("g_hz" in m) == ("gamma_meas_hz" in m):
        raise ConfigError(f"{where}: give exactly one of g_hz or gamma_meas_hz")
    g = hz(m["g_hz"]) if "g_hz" in m else coupling_from_measurement_rate(hz(m["gamma_meas_hz"]), kappa)
    if ("n_th" in m) and ("temperature_k" in m):
        raise ConfigError(f"{where}: n_th and temperature_k are mutually exclusive")
    if "n_th" in m:
        n_th = float(m["n_th"])
    elif "temperature_k" in m:
        try:
            n_th = thermal_occupation(float(m["temperature_k"]), omega)
        except ModelError as exc:
            raise ConfigError(f"{where}.temperature_k: {exc}") from None
    else:
        raise ConfigError(f"{where}: missing key n_th or temperature_k")
    try:
        return MechanicalMode(omega, gamma, g, n_th, str(m.get("label", f"mode{i + 1}")))
    except ModelError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def model_from_document(doc: dict) -> SystemModel:
    cavity = _cavity_from(doc)
    modes_doc = doc.get("modes")
    if not modes_doc:
        raise ConfigError("missing key 'modes' (need at least one [[modes]] table)")
    modes = [_mode_from(m, i, cavity.kappa_total) for i, m in enumerate(modes_doc)]
    eta_det = doc.get("detection", {}).get("eta_det", 1.0)
    try:
        return SystemModel(cavity, tuple(modes), float(eta_det))
    except ModelError as exc:
        raise ConfigError(f"detection.eta_det: {exc}") from None


def parse_config(text: str, overrides=None):
    """Parse TOML text into (document, SystemModel)."""
    doc = load_document(text, overrides)
    return doc, model_from_document(doc)


def load_config(path, overrides=None):
    return parse_config(Path(path).read_text(), overrides)


def grid_from_document(doc: dict, model: SystemModel) -> np.ndarray:
    g = doc.get("grid")
    if g is None:
        lo = min(m.omega_m for m in model.modes) / TWO_PI - 100e3
        hi = max(m.omega_m for m in model.modes) / TWO_PI + 100e3
        return np.linspace(max(lo, 1.0), hi, 20001)
    n = int(_need(g, "n_points", "grid"))
    lo, hi = float(_need(g, "f_min_hz", "grid")), float(_need(g, "f_max_hz", "grid"))
    if n < 2 or not hi > lo:
        raise ConfigError("grid needs n_points >= 2 and f_max_hz > f_min_hz")
    return np.linspace(lo, hi, n)


def windows_from(value, name: str):
    try:
        wins = [(float(a), float(b)) for a, b in value]
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a list of [f_lo, f_hi] pairs") from None
    for a, b in wins:
        if not b > a:
            raise ConfigError(f"{name}: window [{a}, {b}] is empty")
    return wins


# ---------------------------------------------------------------------------
# trace files


def format_trace(trace: SpectrumTrace, extra_meta: Optional[dict] = None) -> str:
    buf = _io.StringIO()
    buf.write(f"# quantity={trace.quantity}\n")
    buf.write(f"# stage={trace.stage}\n")
    for key in ("model_hash", "seed", "theta", "eta_det"):
        if key in trace.metadata:
            buf.write(f"# {key}={trace.metadata[key]}\n")
    for key, val in (extra_meta or {}).items():
        buf.write(f"# {key}={val}\n")
    header = PHASE_HEADER if trace.quantity == "optimal_phase" else TRACE_HEADER
    buf.write(",".join(header) + "\n")
    for f, v in zip(trace.frequencies, trace.values):
        buf.write(f"{f:.17g},{v:.17g}\n")
    return buf.getvalue()


def write_trace(path, trace: SpectrumTrace, extra_meta=None):
    Path(path).write_text(format_trace(trace, extra_meta))


def parse_trace(text: str) -> SpectrumTrace:
    meta = {}
    rows = []
    header = None
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            body = s[1:].strip()
            if "=" in body:
                k, v = body.split("=", 1)
                meta[k.strip()] = v.strip()
            continue
        if header is None:
            header = tuple(p.strip() for p in s.split(","))
            if header not in (TRACE_HEADER, PHASE_HEADER):
                raise ValueError(f"line {lineno}: expected header 'frequency_hz,psd_normalized'")
            continue
        parts = s.split(",")
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 2 columns")
        rows.append((float(parts[0]), float(parts[1])))
    if header is None:
        raise ValueError("trace file has no header")
    arr = np.array(rows, dtype=float).reshape(-1, 2)
    quantity = meta.pop("quantity", "optimal_phase" if header == PHASE_HEADER else "direct_X")
    stage = meta.pop("stage", "detected")
    return SpectrumTrace(arr[:, 0], arr[:, 1], quantity, stage, meta)


def read_trace(path) -> SpectrumTrace:
    return parse_trace(Path(path).read_text())


def read_table(path) -> dict:
    """Numeric CSV with a header row; '#' lines are skipped."""
    lines = [l for l in Path(path).read_text().splitlines() if l.strip() and not l.lstrip().startswith("#")]
    reader = csv.reader(lines)
    header = [h.strip() for h in next(reader)]
    data = np.array([[_cell(x) for x in row] for row in reader], dtype=float)
    data = data.reshape(-1, len(header))
    return {h: data[:, i] for i, h in enumerate(header)}


def _cell(text: str) -> float:
    t = text.strip().lower()
    if t in ("true", "false"):
        return float(t == "true")
    return float(t) if t else math.nan


def write_table(path, columns: dict, comments=()):
    buf = _io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    names = list(columns)
    buf.write(",".join(names) + "\n")
    n = len(next(iter(columns.values()))) if columns else 0
    for i in range(n):
        buf.write(",".join(_fmt(columns[k][i]) for k in names) + "\n")
    Path(path).write_text(buf.getvalue())


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, str):
        return v
    if v is None:
        return ""
    return f"{float(v):.17g}"
