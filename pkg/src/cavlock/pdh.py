"""Phase-modulation sidebands and the PDH error signal.

The error signal uses the standard reflection-beat form
``Im[F(d) F*(d+O) - F*(d) F(d-O)]`` scaled by the carrier/sideband
power product, so it is valid for any modulation frequency, not just
the resolved-sideband regime.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, asdict

import numpy as np
from scipy.special import j0, j1

from .cavity import C_LIGHT, CavityConfig, _fp_coefficients
from .errors import ValidationError
from .trace import Trace


@dataclass(frozen=True)
class PdhConfig:
    modulation_frequency_Omega: float = 150e6  # Hz
    modulation_depth_beta: float = 0.3         # rad
    detector_gain: float = 1.0                 # V per unit optical power
    detector_noise_rms: float = 0.0            # V

    def __post_init__(self):
        if self.modulation_frequency_Omega <= 0:
            raise ValidationError("modulation frequency must be positive")
        if self.modulation_depth_beta < 0:
            raise ValidationError("modulation depth must be >= 0")
        if self.detector_noise_rms < 0:
            raise ValidationError("detector noise must be >= 0")
        b = self.modulation_depth_beta
        if j0(b) ** 2 + 2 * j1(b) ** 2 > 1.0 + 1e-12:
            raise ValidationError("carrier + sideband power exceeds unity")

    @property
    def carrier_power(self) -> float:
        return float(j0(self.modulation_depth_beta) ** 2)

    @property
    def sideband_power(self) -> float:
        return float(j1(self.modulation_depth_beta) ** 2)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PdhConfig":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ValidationError(f"bad pdh config fields: {exc}") from exc


@dataclass(frozen=True)
class ScanRamp:
    """Triangular detuning sweep used to emulate a piezo scan."""
    amplitude_hz: float           # half span of the detuning triangle
    frequency_hz: float = 10.0    # triangle repetition rate
    center_hz: float = 0.0
    sample_rate_hz: float = 0.0   # 0 -> auto (4000 samples per period)
    n_periods: float = 1.0

    def __post_init__(self):
        if self.amplitude_hz <= 0 or self.frequency_hz <= 0 or self.n_periods <= 0:
            raise ValidationError("scan ramp parameters must be positive")

    def rate(self) -> float:
        return self.sample_rate_hz or 4000.0 * self.frequency_hz

    def detuning(self, t: np.ndarray) -> np.ndarray:
        """Triangle starting at center - A, peaking at center + A at T/2."""
        x = np.mod(t * self.frequency_hz, 1.0)
        tri = np.where(x < 0.5, 4.0 * x - 1.0, 3.0 - 4.0 * x)
        return self.center_hz + self.amplitude_hz * tri


def _error_from_f(f0, fp, fm, scale):
    return scale * np.imag(f0 * np.conj(fp) - np.conj(f0) * fm)


def error_signal(cavity: CavityConfig, pdh: PdhConfig, detuning):
    """Demodulated PDH error in volts at a carrier detuning (Hz).

    Antisymmetric in detuning for a symmetric cavity; zero at resonance.
    """
    r1, r2g, b = _fp_coefficients(cavity)
    fsr = C_LIGHT / (2.0 * cavity.optical_length)
    phi = 2.0 * np.pi * np.asarray(detuning, dtype=float) / fsr
    phi_o = 2.0 * np.pi * pdh.modulation_frequency_Omega / fsr

    def refl(p):
        z = np.exp(1j * p)
        return (-r1 + r2g * z) / (1.0 - b * z)

    beta = pdh.modulation_depth_beta
    scale = 2.0 * pdh.detector_gain * j0(beta) * j1(beta)
    out = _error_from_f(refl(phi), refl(phi + phi_o), refl(phi - phi_o), scale)
    return out if np.ndim(out) else float(out)


def error_slope(cavity: CavityConfig, pdh: PdhConfig) -> float:
    """Analytic d(error)/d(detuning) at resonance, in V/Hz.

    Closed form from the derivative of the Moebius reflection map; used
    as the discriminant gain in loop models and as the oracle for the
    finite-difference slope of `error_signal`.
    """
    r1, r2g, b = _fp_coefficients(cavity)
    fsr = C_LIGHT / (2.0 * cavity.optical_length)
    phi_o = 2.0 * np.pi * pdh.modulation_frequency_Omega / fsr
    z_o = np.exp(1j * phi_o)
    f_res = (-r1 + r2g) / (1.0 - b)                 # real
    f_o = (-r1 + r2g * z_o) / (1.0 - b * z_o)
    df_res = 1j * r2g * (1.0 - r1 ** 2) / (1.0 - b) ** 2
    df_o = 1j * z_o * r2g * (1.0 - r1 ** 2) / (1.0 - b * z_o) ** 2
    dim_dphi = 2.0 * df_res.imag * f_o.real - 2.0 * f_res * df_o.imag
    beta = pdh.modulation_depth_beta
    scale = 2.0 * pdh.detector_gain * j0(beta) * j1(beta)
    return float(scale * dim_dphi * 2.0 * np.pi / fsr)


def error_slope_per_meter(cavity: CavityConfig, pdh: PdhConfig) -> float:
    """Discriminant in V per meter of cavity-length offset."""
    return error_slope(cavity, pdh) * 2.0 * (C_LIGHT / (2.0 * cavity.optical_length)) / cavity.wavelength_lambda


def scan_spectrum(cavity: CavityConfig, pdh: PdhConfig, scan: ScanRamp,
                  seed: int | None = None):
    """Synthesize the transmission/error traces of a piezo scan.

    Returns (transmission Trace, error Trace) sharing one time base.
    The transmission shows the carrier plus the two modulation sidebands
    weighted by their Bessel powers.  A ramp that never crosses the
    carrier is flagged in the trace metadata (and warned about), but the
    traces are still returned.
    """
    from .cavity import transmission_airy

    rate = scan.rate()
    n = int(round(scan.n_periods / scan.frequency_hz * rate))
    if n < 2:
        raise ValidationError("scan too short")
    t = np.arange(n) / rate
    delta = scan.detuning(t)

    omega = pdh.modulation_frequency_Omega
    gain = pdh.detector_gain
    pc, ps = pdh.carrier_power, pdh.sideband_power
    trans = gain * (
        pc * transmission_airy(cavity, delta)
        + ps * transmission_airy(cavity, delta + omega)
        + ps * transmission_airy(cavity, delta - omega)
    )
    err = error_signal(cavity, pdh, delta)

    if pdh.detector_noise_rms > 0:
        rng = np.random.default_rng(0 if seed is None else seed)
        err = err + rng.normal(0.0, pdh.detector_noise_rms, size=n)
        trans = trans + rng.normal(0.0, pdh.detector_noise_rms, size=n)

    covers = bool(delta.min() <= 0.0 <= delta.max())
    if not covers:
        warnings.warn("scan ramp does not cross the carrier resonance")
    meta = {
        "covers_resonance": int(covers),
        "scan_amplitude_hz": scan.amplitude_hz,
        "scan_frequency_hz": scan.frequency_hz,
        "scan_center_hz": scan.center_hz,
        "modulation_frequency_hz": omega,
    }
    if seed is not None:
        meta["seed"] = seed
    return (
        Trace(trans, rate, units="V", meta=dict(meta)),
        Trace(np.asarray(err, dtype=float), rate, units="V", meta=dict(meta)),
    )


def sideband_carrier_ratio(pdh: PdhConfig) -> float:
    """Expected transmission height ratio of one sideband to the carrier."""
    beta = pdh.modulation_depth_beta
    c = j0(beta)
    if c == 0:
        return math.inf
    return float((j1(beta) / c) ** 2)
