"""cavlock: simulator and analysis toolkit for a PDH-locked cryogenic
Fabry-Perot cavity."""

__version__ = "0.1.0"

from .errors import AnalysisError, ValidationError
from .trace import Trace
from .cavity import (
    CavityConfig,
    DerivedCavity,
    derive,
    max_lockable_finesse,
    reflection_coefficient,
)
from .pdh import PdhConfig, ScanRamp, error_signal, error_slope, scan_spectrum
from .vibration import NoiseSpec, Peak, Segment, asd_model, synthesize
from .plant import Mode, PlantConfig, PlantState, transfer_function
from .servo import (
    LockReport,
    ScanDrive,
    ServoConfig,
    bode_measure,
    loop_transfer,
    run_closed_loop,
)
from .analysis import (
    ErrorCalibration,
    FringeCalibration,
    LossBudget,
    ScanFit,
    band_rms_asd,
    band_rms_trace,
    calibrate_error_slope,
    compute_asd,
    error_to_displacement,
    fit_scan,
    interferometer_calibrate,
    interferometer_convert,
    loss_budget,
)
from . import presets

__all__ = [
    "AnalysisError", "ValidationError", "Trace",
    "CavityConfig", "DerivedCavity", "derive", "max_lockable_finesse",
    "reflection_coefficient",
    "PdhConfig", "ScanRamp", "error_signal", "error_slope", "scan_spectrum",
    "NoiseSpec", "Peak", "Segment", "asd_model", "synthesize",
    "Mode", "PlantConfig", "PlantState", "transfer_function",
    "LockReport", "ScanDrive", "ServoConfig", "bode_measure",
    "loop_transfer", "run_closed_loop",
    "ErrorCalibration", "FringeCalibration", "LossBudget", "ScanFit",
    "band_rms_asd", "band_rms_trace", "calibrate_error_slope", "compute_asd",
    "error_to_displacement", "fit_scan", "interferometer_calibrate",
    "interferometer_convert", "loss_budget", "presets",
]
