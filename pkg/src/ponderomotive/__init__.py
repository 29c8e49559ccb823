"""Ponderomotive squeezing spectra of a multimode optomechanical cavity.

Closed-form quadrature spectra per mechanical mode, an exact linear-response
and time-domain reference, spectrum fitting, parameter sweeps and a CSV
command-line pipeline.  Internal rates are angular (rad/s); configuration
files and trace files use Hz.
"""

from .model import (CavityParams, MechanicalMode, ModelError, SystemModel, desk_model,
                    effective_mode_parameters, reference_model, thermal_occupation)
from .spectra import (SpectrumTrace, apply_detection_efficiency, correct_for_losses,
                      direct_detection_psd, optimal_psd, spectrum_trace, squeezing_level_db)

__version__ = "0.1.0"

__all__ = [
    "CavityParams", "MechanicalMode", "ModelError", "SystemModel", "desk_model",
    "effective_mode_parameters", "reference_model", "thermal_occupation", "SpectrumTrace",
    "apply_detection_efficiency", "correct_for_losses", "direct_detection_psd",
    "optimal_psd", "spectrum_trace", "squeezing_level_db",
]
