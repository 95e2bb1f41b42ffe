"""Displacement-noise synthesis from a parameterized one-sided ASD.

The model is a set of contiguous power-law segments plus Lorentzian
peaks on top of a white floor:

    ASD(f) = max(floor, segment(f)) + sum_k  peak_k / (1 + 4 q_k^2 ((f-f0_k)/f0_k)^2)

Synthesis is exact spectral shaping: deterministic one-sided bin
amplitudes ASD(f_k) * sqrt(2 df) with uniform random phases from a
seeded numpy PCG64 generator (`numpy.random.default_rng`).  The
generator identity is part of the file-format contract: identical
(spec, seed, duration, rate) reproduce bit-identical traces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ValidationError
from .trace import Trace


@dataclass(frozen=True)
class Segment:
    f_lo: float
    f_hi: float
    asd_at_f_lo: float   # m/sqrt(Hz) at f_lo
    exponent: float      # ASD ~ f^p within the segment

    def value(self, f):
        return self.asd_at_f_lo * (np.asarray(f, dtype=float) / self.f_lo) ** self.exponent


@dataclass(frozen=True)
class Peak:
    f0: float
    peak_asd: float      # m/sqrt(Hz) at the peak
    quality_q: float     # FWHM = f0 / q

    def value(self, f):
        x = (np.asarray(f, dtype=float) - self.f0) / self.f0
        return self.peak_asd / (1.0 + 4.0 * self.quality_q ** 2 * x ** 2)


@dataclass(frozen=True)
class NoiseSpec:
    segments: tuple = ()
    peaks: tuple = ()
    floor_asd: float = 0.0
    seed: int = 0

    def __post_init__(self):
        segs = tuple(
            s if isinstance(s, Segment) else Segment(**s) for s in self.segments
        )
        pks = tuple(p if isinstance(p, Peak) else Peak(**p) for p in self.peaks)
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "peaks", pks)
        for s in segs:
            if not (0 < s.f_lo < s.f_hi) or s.asd_at_f_lo < 0:
                raise ValidationError("bad segment bounds or amplitude")
            if not math.isfinite(s.asd_at_f_lo) or not math.isfinite(s.exponent):
                raise ValidationError("non-finite segment parameters")
        for lo, hi in zip(segs, segs[1:]):
            if abs(lo.f_hi - hi.f_lo) > 1e-9 * hi.f_lo:
                raise ValidationError("segments must be contiguous and ordered")
        for p in pks:
            if p.f0 <= 0 or p.peak_asd < 0 or p.quality_q <= 0:
                raise ValidationError("bad peak parameters")
            if not (math.isfinite(p.peak_asd) and math.isfinite(p.quality_q)):
                raise ValidationError("non-finite peak parameters")
        if self.floor_asd < 0 or not math.isfinite(self.floor_asd):
            raise ValidationError("bad floor")

    @property
    def domain_end(self) -> float:
        """Upper edge of the last segment (inf if no segments)."""
        return self.segments[-1].f_hi if self.segments else math.inf

    def to_dict(self) -> dict:
        return {
            "segments": [asdict(s) for s in self.segments],
            "peaks": [asdict(p) for p in self.peaks],
            "floor_asd": self.floor_asd,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        try:
            return cls(
                segments=tuple(Segment(**s) for s in d.get("segments", ())),
                peaks=tuple(Peak(**p) for p in d.get("peaks", ())),
                floor_asd=d.get("floor_asd", 0.0),
                seed=d.get("seed", 0),
            )
        except TypeError as exc:
            raise ValidationError(f"bad noise spec fields: {exc}") from exc

    def with_peaks(self, extra) -> "NoiseSpec":
        return NoiseSpec(self.segments, self.peaks + tuple(extra),
                         self.floor_asd, self.seed)


def asd_model(spec: NoiseSpec, f):
    """Evaluate the model ASD (m/sqrt(Hz)) at frequency f > 0."""
    f = np.asarray(f, dtype=float)
    if np.any(f <= 0):
        raise ValidationError("asd_model requires f > 0")
    base = np.zeros_like(f)
    for s in spec.segments:
        m = (f >= s.f_lo) & (f < s.f_hi)
        if m.any():
            base[m] = s.value(f[m])
    out = np.maximum(base, spec.floor_asd)
    for p in spec.peaks:
        out = out + p.value(f)
    return out if out.ndim else float(out)


def synthesize(spec: NoiseSpec, duration: float, sample_rate: float,
               seed: int | None = None, max_frequency: float | None = None) -> Trace:
    """Generate a real trace whose spectrum realizes the model ASD.

    Bin amplitudes are deterministic (ASD(f_k) * sqrt(2 df)); only the
    phases are random, so Parseval holds exactly over the synthesized
    band.  Content is truncated at `max_frequency` (default: the end of
    the segment domain) -- the floor above the last segment is a
    detection limit, not physical displacement, so it is not synthesized
    beyond the modeled band.
    """
    n = int(round(duration * sample_rate))
    if n < 2:
        raise ValidationError("need at least 2 samples")
    if seed is None:
        seed = spec.seed
    f_max = spec.domain_end if max_frequency is None else max_frequency
    f_max = min(f_max, sample_rate / 2.0)

    df = sample_rate / n
    n_bins = n // 2 + 1
    freqs = np.arange(n_bins) * df
    amp = np.zeros(n_bins)
    k_hi = int(min(n_bins - 1, math.floor(f_max / df)))
    if k_hi >= 1:
        band = slice(1, k_hi + 1)
        amp[band] = asd_model(spec, freqs[band]) * math.sqrt(2.0 * df)
    # DC and Nyquist carry no power: rms is defined about the mean and the
    # single Nyquist bin is negligible for any practical record length.
    if n % 2 == 0:
        amp[-1] = 0.0

    rng = np.random.default_rng(seed)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=n_bins)
    spectrum = (n / 2.0) * amp * np.exp(1j * phases)
    spectrum[0] = 0.0
    if n % 2 == 0:
        spectrum[-1] = spectrum[-1].real
    values = np.fft.irfft(spectrum, n=n)
    return Trace(values, sample_rate, units="m",
                 meta={"seed": seed, "noise_rng": "numpy-pcg64",
                       "synthesized_band_hz": k_hi * df})


def band_power(spec: NoiseSpec, f_lo: float, f_hi: float, n_grid: int = 200001) -> float:
    """Integral of ASD^2 over a band (m^2), by dense quadrature."""
    f = np.linspace(max(f_lo, 1e-6), f_hi, n_grid)
    a = asd_model(spec, f)
    return float(np.trapezoid(a ** 2, f))


def band_rms(spec: NoiseSpec, f_lo: float, f_hi: float) -> float:
    return math.sqrt(band_power(spec, f_lo, f_hi))
