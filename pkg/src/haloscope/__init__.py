"""Photon-counting axion haloscope: click-stream simulation and the full
inference chain from clicks to coupling exclusion limits."""

from .axion import (DetectorFigures, HaloscopeConfig, axion_lineshape,
                    axion_signal_power, coupling_conversions, detection_snr,
                    g_limit_from_power, measurement_time, scan_rate,
                    signal_photon_rate, speedup, thermal_occupation)
from .analysis import (CountWindow, ExclusionPoint, ExclusionResult,
                       SignificanceResult, allan_variance, bin_counts,
                       estimate_bias, exclusion_curve, limit_power,
                       select_subinterval, significance, upper_limit_counts)
from .calibration import (DispersiveParams, RamseyObservation, fit_dispersive,
                          input_photon_flux, operational_efficiency,
                          stark_dephasing_model)
from .cavity import (CavityMode, PulseDrive, disambiguate_beta,
                     fit_cavity_spectroscopy, pulse_response, reflection_mag2)
from .config import RunConfig, load_config
from .protocol import (ProtocolSchedule, TuningPlan, build_schedule,
                       calibration_slots, cycle_timing, schedule_state)
from .smpd import (ClickRecord, ClickStream, SmpdParams, TruthParams,
                   buffer_acceptance, generate_click_stream,
                   instantaneous_rate)

__version__ = "0.1.0"

__all__ = [
    "DetectorFigures", "HaloscopeConfig", "axion_lineshape",
    "axion_signal_power", "coupling_conversions", "detection_snr",
    "g_limit_from_power", "measurement_time", "scan_rate",
    "signal_photon_rate", "speedup", "thermal_occupation",
    "CountWindow", "ExclusionPoint", "ExclusionResult", "SignificanceResult",
    "allan_variance", "bin_counts", "estimate_bias", "exclusion_curve",
    "limit_power", "select_subinterval", "significance", "upper_limit_counts",
    "DispersiveParams", "RamseyObservation", "fit_dispersive",
    "input_photon_flux", "operational_efficiency", "stark_dephasing_model",
    "CavityMode", "PulseDrive", "disambiguate_beta",
    "fit_cavity_spectroscopy", "pulse_response", "reflection_mag2",
    "RunConfig", "load_config",
    "ProtocolSchedule", "TuningPlan", "build_schedule", "calibration_slots",
    "cycle_timing", "schedule_state",
    "ClickRecord", "ClickStream", "SmpdParams", "TruthParams",
    "buffer_acceptance", "generate_click_stream", "instantaneous_rate",
]
