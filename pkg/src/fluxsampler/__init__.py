"""Simulation and estimation toolkit for a SQUID flux-to-microwave-phase transducer."""
from .circuit import (
    DESIGN, PHI0, CircuitParams, bandwidth, flux_sensitivity, josephson_inductance, peak_gain,
    reflection_angle, resonant_frequency, resonator_impedance, transducer_gain,
)
from .estimators import (
    CalibrationEstimator, CalibrationFit, SettlingCompensator, SettlingEstimator, SettlingFit,
    classify_package, fit_calibration, fit_settling, invert_calibration, select_model_order,
)
from .signalchain import (
    NoiseConfig, PhaseTrace, ReflectionScenario, RFTrace, bounce_series, digital_demodulate,
    hardware_demodulate, infer_reflection_bound, synthesize_trace, theta_err_scan,
)
from .waveforms import (
    FIG3_MODEL, ExpSettlingModel, FluxWaveform, WaveformConfig, angle_sweep_family,
    apply_settling, gaussian_lowpass, make_step, predistort,
)

__version__ = "0.1.0"
