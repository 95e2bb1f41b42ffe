"""Static optical model of a plano-concave Fabry-Perot cavity.

Supports an optional intracavity diamond plate: the optical length is
``air_gap + n * d`` while Gaussian-beam quantities use the geometric
length ``air_gap + d``.  All quantities in SI units except the decadic
absorption coefficient (cm^-1, matching the usual tabulation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .errors import ValidationError

C_LIGHT = 299792458.0


@dataclass(frozen=True)
class CavityConfig:
    wavelength_lambda: float          # m
    air_gap_length: float             # m
    diamond_thickness_d: float = 0.0  # m, 0 for a bare cavity
    refractive_index_n: float = 2.4
    mirror_reflectivity_R1: float = 0.99
    mirror_reflectivity_R2: float = 0.99
    roc_top_mirror: float = 0.25      # m
    coating_aperture_D: float = 3e-3  # m
    surface_roughness_Rq: float = 0.0  # m
    absorption_alpha: float = 0.0     # decadic, cm^-1
    ar_residual_reflectivity: float = 0.0

    def __post_init__(self):
        if self.wavelength_lambda <= 0:
            raise ValidationError("wavelength must be positive")
        for name in ("air_gap_length", "diamond_thickness_d", "roc_top_mirror",
                     "coating_aperture_D", "surface_roughness_Rq"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        for name in ("mirror_reflectivity_R1", "mirror_reflectivity_R2"):
            r = getattr(self, name)
            if not 0.0 < r < 1.0:
                raise ValidationError(f"{name} must lie in (0, 1)")
        if self.refractive_index_n < 1:
            raise ValidationError("refractive index must be >= 1")
        if self.absorption_alpha < 0 or self.ar_residual_reflectivity < 0:
            raise ValidationError("loss parameters must be >= 0")
        g = 1.0 - self.geometric_length / self.roc_top_mirror
        if not 0.0 < g <= 1.0:
            raise ValidationError(
                "unstable geometry: need 0 < 1 - L_geom/ROC <= 1 "
                f"(L_geom={self.geometric_length:.4g} m, ROC={self.roc_top_mirror:.4g} m)"
            )

    @property
    def geometric_length(self) -> float:
        return self.air_gap_length + self.diamond_thickness_d

    @property
    def optical_length(self) -> float:
        return self.air_gap_length + self.refractive_index_n * self.diamond_thickness_d

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CavityConfig":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ValidationError(f"bad cavity config fields: {exc}") from exc


@dataclass(frozen=True)
class DerivedCavity:
    optical_length: float
    geometric_length: float
    fsr: float
    finesse: float
    linewidth_fwhm: float
    quality_factor: float
    beam_waist_w0: float
    mode_volume: float
    round_trip_loss_total: float
    linewidth_in_length_DeltaL: float

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# elementary loss terms (shared with the loss-budget analysis)

def scattering_loss_single_pass(rq: float, wavelength: float, n: float) -> float:
    """Total integrated scattering off one rough surface, per pass.

    Uses the intracavity wavelength lambda/n since the rough interface
    is the coated diamond face.
    """
    if rq == 0.0:
        return 0.0
    return (4.0 * math.pi * rq / (wavelength / n)) ** 2


def absorption_loss_round_trip(alpha_per_cm: float, thickness_m: float) -> float:
    """Decadic absorption over a double pass: 1 - 10^(-2 d alpha), d in cm."""
    if alpha_per_cm == 0.0 or thickness_m == 0.0:
        return 0.0
    return 1.0 - 10.0 ** (-2.0 * (thickness_m * 100.0) * alpha_per_cm)


def clipping_loss(aperture: float, waist: float) -> float:
    """Power lost outside a hard aperture of diameter `aperture`."""
    return math.exp(-2.0 * (aperture / (2.0 * waist)) ** 2)


def mirror_loss(config: CavityConfig) -> float:
    return (1.0 - config.mirror_reflectivity_R1) + (1.0 - config.mirror_reflectivity_R2)


def intracavity_loss(config: CavityConfig) -> float:
    """Non-mirror round-trip power loss: 2x scattering + absorption + clipping.

    Scattering counts twice per round trip because the beam traverses the
    coated diamond face twice between top-mirror reflections.
    """
    s = scattering_loss_single_pass(
        config.surface_roughness_Rq, config.wavelength_lambda, config.refractive_index_n
    )
    a = absorption_loss_round_trip(config.absorption_alpha, config.diamond_thickness_d)
    w0 = beam_waist(config)
    c = clipping_loss(config.coating_aperture_D, w0)
    return 2.0 * s + a + c


def airy_finesse(round_trip_amplitude: float) -> float:
    """Exact Airy (FWHM-based) finesse from the amplitude round-trip factor."""
    a = round_trip_amplitude
    if not 0.0 < a < 1.0:
        raise ValidationError("round-trip amplitude must lie in (0, 1)")
    return math.pi * math.sqrt(a) / (1.0 - a)


def finesse_from_loss(round_trip_loss: float) -> float:
    """Small-loss approximation 2*pi / loss."""
    if round_trip_loss <= 0:
        raise ValidationError("round-trip loss must be positive")
    return 2.0 * math.pi / round_trip_loss


def beam_waist(config: CavityConfig) -> float:
    """Plano-concave waist at the flat mirror, from the geometric length."""
    lg = config.geometric_length
    w0sq = (config.wavelength_lambda / math.pi) * math.sqrt(
        lg * (config.roc_top_mirror - lg)
    )
    return math.sqrt(w0sq)


def derive(config: CavityConfig) -> DerivedCavity:
    """All Table-style derived quantities for a cavity configuration."""
    lopt = config.optical_length
    lgeo = config.geometric_length
    fsr = C_LIGHT / (2.0 * lopt)
    l_int = intracavity_loss(config)
    if l_int >= 1.0:
        raise ValidationError("intracavity loss >= 100%")
    r1 = math.sqrt(config.mirror_reflectivity_R1)
    r2 = math.sqrt(config.mirror_reflectivity_R2)
    a = r1 * r2 * math.sqrt(1.0 - l_int)
    finesse = airy_finesse(a)
    lw = fsr / finesse
    w0 = beam_waist(config)
    return DerivedCavity(
        optical_length=lopt,
        geometric_length=lgeo,
        fsr=fsr,
        finesse=finesse,
        linewidth_fwhm=lw,
        quality_factor=(C_LIGHT / config.wavelength_lambda) / lw,
        beam_waist_w0=w0,
        mode_volume=math.pi * w0 ** 2 * lgeo / 4.0,
        round_trip_loss_total=mirror_loss(config) + l_int,
        linewidth_in_length_DeltaL=config.wavelength_lambda / (2.0 * finesse),
    )


# ---------------------------------------------------------------------------
# frequency response

def _fp_coefficients(config: CavityConfig):
    """(r1, r2*g, b) with g the intracavity round-trip amplitude factor."""
    r1 = math.sqrt(config.mirror_reflectivity_R1)
    r2 = math.sqrt(config.mirror_reflectivity_R2)
    g = math.sqrt(max(0.0, 1.0 - intracavity_loss(config)))
    return r1, r2 * g, r1 * r2 * g


def reflection_coefficient(config: CavityConfig, detuning):
    """Steady-state complex amplitude reflection at a detuning from resonance.

    F(delta) = (-r1 + r2 g e^{i phi}) / (1 - r1 r2 g e^{i phi}) with
    phi = 2 pi delta / FSR the round-trip phase.  Accepts scalars or arrays.
    """
    r1, r2g, b = _fp_coefficients(config)
    fsr = C_LIGHT / (2.0 * config.optical_length)
    phi = 2.0 * np.pi * np.asarray(detuning, dtype=float) / fsr
    z = np.exp(1j * phi)
    out = (-r1 + r2g * z) / (1.0 - b * z)
    return out if out.ndim else complex(out)


def transmission_airy(config: CavityConfig, detuning):
    """Normalized Airy transmission lineshape, 1 at resonance."""
    _, _, b = _fp_coefficients(config)
    fsr = C_LIGHT / (2.0 * config.optical_length)
    phi = np.pi * np.asarray(detuning, dtype=float) / fsr
    num = (1.0 - b) ** 2
    out = num / (num + 4.0 * b * np.sin(phi) ** 2)
    return out if out.ndim else float(out)


def max_lockable_finesse(delta_l_rms: float, wavelength: float) -> float:
    """Largest finesse compatible with an rms length fluctuation."""
    if delta_l_rms <= 0:
        raise ValidationError("rms length fluctuation must be positive")
    if wavelength <= 0:
        raise ValidationError("wavelength must be positive")
    return wavelength / (2.0 * delta_l_rms)
