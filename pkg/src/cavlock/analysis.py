"""Measurement and calibration mathematics: Lorentzian scan fits, the
tanh error-slope calibration and its atanh inverse, interferometer
fringe calibration, Welch spectral estimation, band rms, and the
round-trip loss budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import signal as sp_signal
from scipy.optimize import least_squares

from . import cavity as cav
from .cavity import CavityConfig
from .errors import AnalysisError, ValidationError
from .trace import Trace


# ---------------------------------------------------------------------------
# Lorentzian peak fitting

def lorentzian(x, center, fwhm, height):
    return height / (1.0 + (2.0 * (x - center) / fwhm) ** 2)


def _multi_lorentzian(x, params):
    y = np.zeros_like(x)
    for c, w, h in params.reshape(-1, 3):
        y += lorentzian(x, c, w, h)
    return y


def fit_lorentzians(x, y, initial, offset=False, max_iter=200):
    """Least-squares fit of a sum of Lorentzians.

    `initial` is a list of (center, fwhm, height) triples.  Returns
    (params array (n,3), offset, relative residual norm).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    p0 = np.asarray(initial, dtype=float).ravel()
    if offset:
        p0 = np.append(p0, float(np.min(y)))

    def resid(p):
        pk = p[:-1] if offset else p
        model = _multi_lorentzian(x, pk)
        if offset:
            model = model + p[-1]
        return model - y

    sol = least_squares(resid, p0, method="lm", ftol=1e-9, xtol=1e-9,
                        max_nfev=max_iter * (p0.size + 1))
    if not sol.success:
        raise AnalysisError(f"lorentzian fit diverged: {sol.message}")
    scale = np.linalg.norm(y) or 1.0
    rel = float(np.linalg.norm(sol.fun) / scale)
    pk = sol.x[:-1] if offset else sol.x
    off = float(sol.x[-1]) if offset else 0.0
    params = pk.reshape(-1, 3).copy()
    params[:, 1] = np.abs(params[:, 1])
    return params, off, rel


@dataclass
class ScanFit:
    fsr: float                       # Hz (nan in single-resonance mode)
    finesse: float
    linewidth: float                 # Hz
    axis_calibration: float          # Hz per second of scan time
    peaks: list = field(default_factory=list)   # per-peak dicts in time units
    residual_norm: float = 0.0
    carrier_fwhm_t: float = 0.0      # s, carrier FWHM on the time axis
    carrier_center_t: float = 0.0    # s

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScanFit":
        return cls(**d)


def _rising_segment(trace: Trace, ramp_frequency: float | None):
    """Samples of the first rising half-period of a triangular scan."""
    t = trace.times()
    y = trace.values
    if ramp_frequency:
        half = 0.5 / ramp_frequency
        m = t < half * (1 - 1e-9)
        if m.sum() >= 16:
            return t[m], y[m]
    return t, y


def _pick_triplet(t, y, prominence_frac=0.003):
    """Indices of carriers and their flanking sidebands via peak picking."""
    span = float(np.max(y) - np.min(y))
    if span <= 0:
        raise AnalysisError("scan trace is flat")
    peaks, props = sp_signal.find_peaks(y, prominence=prominence_frac * span)
    if peaks.size == 0:
        raise AnalysisError("no peaks found in scan trace")
    heights = y[peaks]
    carriers = peaks[heights >= 0.5 * heights.max()]
    sidebands = [p for p in peaks if p not in set(carriers)]
    return np.sort(carriers), np.sort(np.asarray(sidebands, dtype=int))


def fit_scan(transmission: Trace, modulation_frequency: float,
             ramp_frequency: float | None = None) -> ScanFit:
    """Fit Lorentzian triplets to a scan and calibrate the time axis.

    The sideband spacing equals the known modulation frequency, which
    converts scan time to optical frequency.  With two carriers in the
    trace the carrier spacing gives the FSR and hence the finesse.
    """
    t, y = _rising_segment(transmission, ramp_frequency)
    carriers, sidebands = _pick_triplet(t, y)
    if carriers.size < 1:
        raise AnalysisError("no carrier peak found")

    dt_med = float(np.median(np.diff(t)))
    groups = []
    for c in carriers:
        left = [s for s in sidebands if s < c]
        right = [s for s in sidebands if s > c]
        if not left or not right:
            raise AnalysisError(
                "carrier without flanking sidebands; need >= 1 carrier with 2 sidebands"
            )
        groups.append((max(left), c, min(right)))

    # initial guesses: width from half-height crossing around the carrier
    init = []
    for l, c, r in groups:
        h = y[c]
        above = y > h / 2.0
        i0 = c
        while i0 > 0 and above[i0 - 1]:
            i0 -= 1
        i1 = c
        while i1 < y.size - 1 and above[i1 + 1]:
            i1 += 1
        w0 = max((i1 - i0) * dt_med, 2 * dt_med)
        init.append((t[c], w0, h))
        init.append((t[l], w0, y[l]))
        init.append((t[r], w0, y[r]))

    params, _, rel = fit_lorentzians(t, y, init)
    params = params[np.argsort(params[:, 0])]

    # regroup fitted peaks: carriers are the tallest len(groups) peaks
    order = np.argsort(params[:, 2])[::-1]
    carrier_rows = np.sort(order[: len(groups)])
    fitted = []
    cal_list = []
    for ci in carrier_rows:
        c_t = params[ci, 0]
        others = np.delete(np.arange(params.shape[0]), carrier_rows)
        lefts = [i for i in others if params[i, 0] < c_t]
        rights = [i for i in others if params[i, 0] > c_t]
        if not lefts or not rights:
            raise AnalysisError("fit lost a sideband")
        li = max(lefts, key=lambda i: params[i, 0])
        ri = min(rights, key=lambda i: params[i, 0])
        spacing = 0.5 * (params[ri, 0] - params[li, 0])
        if spacing <= 0:
            raise AnalysisError("degenerate sideband spacing")
        cal_list.append(modulation_frequency / spacing)
        fitted.append((ci, li, ri))

    axis_cal = float(np.mean(cal_list))
    main = fitted[0][0]
    carrier_fwhm_t = float(params[main, 1])
    linewidth = carrier_fwhm_t * axis_cal

    if len(carrier_rows) >= 2:
        spac = np.diff(params[carrier_rows, 0])
        fsr = float(np.mean(spac)) * axis_cal
        finesse = fsr / linewidth
    else:
        fsr = math.nan
        finesse = math.nan

    peaks = [
        {"center_t": float(c), "fwhm_t": float(w), "height": float(h)}
        for c, w, h in params
    ]
    return ScanFit(
        fsr=fsr,
        finesse=finesse,
        linewidth=float(linewidth),
        axis_calibration=axis_cal,
        peaks=peaks,
        residual_norm=rel,
        carrier_fwhm_t=carrier_fwhm_t,
        carrier_center_t=float(params[main, 0]),
    )


# ---------------------------------------------------------------------------
# error-slope calibration and inversion

@dataclass
class ErrorCalibration:
    amplitude_v: float      # A of A*tanh((t-t0)/w) + offset
    width_t: float          # w, seconds of scan time
    center_t: float         # t0
    offset_v: float
    carrier_fwhm_t: float   # carrier linewidth on the same time axis

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ErrorCalibration":
        return cls(**d)


def calibrate_error_slope(error: Trace, scan_fit: ScanFit,
                          window_linewidths: float = 1.2) -> ErrorCalibration:
    """Fit A*tanh((t-t0)/w) + offset to the central dispersive slope.

    The window is centered on the fitted carrier and spans
    +-window_linewidths carrier FWHMs, where the PDH error is monotone.
    """
    t = error.times()
    y = error.values
    t0 = scan_fit.carrier_center_t
    half = window_linewidths * scan_fit.carrier_fwhm_t
    m = (t >= t0 - half) & (t <= t0 + half)
    if m.sum() < 8:
        raise AnalysisError("too few samples across the dispersive slope")
    tw, yw = t[m], y[m]

    # monotonicity check on the smoothed slope region
    k = max(3, tw.size // 16)
    ys = np.convolve(yw, np.ones(k) / k, mode="valid")
    d = np.diff(ys)
    dom = np.sign(np.sum(d))
    if dom == 0 or np.sum(np.sign(d) == dom) < 0.8 * d.size:
        raise AnalysisError("slope region is not monotone")

    a0 = 0.5 * (np.max(yw) - np.min(yw)) * dom
    off0 = float(np.mean(yw))
    w0 = max(half / 3.0, 2 * float(np.median(np.diff(tw))))

    def resid(p):
        a, w, tc, off = p
        return a * np.tanh((tw - tc) / w) + off - yw

    sol = least_squares(resid, [a0, w0, t0, off0], method="lm",
                        ftol=1e-12, xtol=1e-12, max_nfev=4000)
    if not sol.success:
        raise AnalysisError(f"tanh fit diverged: {sol.message}")
    a, w, tc, off = sol.x
    return ErrorCalibration(
        amplitude_v=float(a),
        width_t=float(abs(w)),
        center_t=float(tc),
        offset_v=float(off),
        carrier_fwhm_t=scan_fit.carrier_fwhm_t,
    )


def error_to_displacement(error: Trace, calibration: ErrorCalibration,
                          finesse: float, wavelength: float):
    """Convert an error trace to displacement via the inverse tanh.

    displacement = w_len * atanh((e - offset)/A) with the length scale
    w_len = width_t / carrier_fwhm_t * DeltaL and DeltaL = lambda/(2 F)
    the cavity linewidth in length.  Samples at or beyond +-A are clipped
    to the edge of the invertible range and counted.

    Returns (displacement Trace, clipped sample count).
    """
    if finesse <= 0 or wavelength <= 0:
        raise ValidationError("finesse and wavelength must be positive")
    if calibration.carrier_fwhm_t <= 0 or calibration.width_t <= 0:
        raise ValidationError("calibration widths must be positive")
    delta_l = wavelength / (2.0 * finesse)
    w_len = calibration.width_t / calibration.carrier_fwhm_t * delta_l
    x = (error.values - calibration.offset_v) / calibration.amplitude_v
    clipped = int(np.sum(np.abs(x) >= 1.0))
    x = np.clip(x, -1.0 + 1e-12, 1.0 - 1e-12)
    disp = w_len * np.arctanh(x)
    meta = dict(error.meta)
    meta["clipped_samples"] = clipped
    return Trace(disp, error.sample_rate_hz, units="m", t0=error.t0,
                 meta=meta), clipped


# ---------------------------------------------------------------------------
# interferometer fringe calibration

@dataclass
class FringeCalibration:
    amplitude: float   # A
    frequency: float   # f, Hz
    phase: float       # phi, rad
    offset: float      # D

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FringeCalibration":
        return cls(**d)


def interferometer_calibrate(scan_fringe: Trace) -> FringeCalibration:
    """Least-squares fit of y = A sin(2 pi f t + phi) + D to a fringe scan."""
    t = scan_fringe.times()
    y = scan_fringe.values
    if t.size < 8:
        raise AnalysisError("fringe trace too short")
    # frequency seed from the FFT peak
    yz = y - np.mean(y)
    spec = np.abs(np.fft.rfft(yz))
    freqs = np.fft.rfftfreq(t.size, d=scan_fringe.dt)
    k = int(np.argmax(spec[1:]) + 1)
    f0 = max(freqs[k], 0.5 / (t[-1] - t[0]))
    if (t[-1] - t[0]) * f0 < 1.0:
        raise AnalysisError("fringe trace spans less than one full fringe")
    a0 = math.sqrt(2.0) * float(np.std(yz))
    d0 = float(np.mean(y))

    def resid(p):
        a, f, ph, d = p
        return a * np.sin(2 * np.pi * f * t + ph) + d - y

    best = None
    for ph0 in (0.0, np.pi / 2, np.pi, 3 * np.pi / 2):
        sol = least_squares(resid, [a0, f0, ph0, d0], method="lm",
                            ftol=1e-12, xtol=1e-12, max_nfev=8000)
        if sol.success and (best is None or sol.cost < best.cost):
            best = sol
    if best is None:
        raise AnalysisError("sinusoid fit diverged")
    a, f, ph, d = best.x
    if a < 0:
        a, ph = -a, ph + np.pi
    ph = float(np.mod(ph + np.pi, 2 * np.pi) - np.pi)
    return FringeCalibration(float(a), float(abs(f)), ph, float(d))


def interferometer_convert(signal: Trace, cal: FringeCalibration,
                           wavelength: float):
    """arcsin fringe-to-length conversion; clips out-of-range samples.

    delta_x = arcsin((y - D)/A) * lambda / (4 pi).  Returns (Trace m,
    clipped count).  No unwrapping beyond a quarter fringe.
    """
    x = (signal.values - cal.offset) / cal.amplitude
    clipped = int(np.sum(np.abs(x) > 1.0))
    x = np.clip(x, -1.0, 1.0)
    disp = np.arcsin(x) * wavelength / (4.0 * np.pi)
    meta = dict(signal.meta)
    meta["clipped_samples"] = clipped
    return Trace(disp, signal.sample_rate_hz, units="m", t0=signal.t0,
                 meta=meta), clipped


# ---------------------------------------------------------------------------
# spectral estimation

def compute_asd(trace: Trace, window: str = "hann",
                segment_length: int | None = None, overlap: float = 0.5):
    """Welch one-sided amplitude spectral density in unit/sqrt(Hz).

    Defaults to 8 half-overlapping Hann segments.  Normalized so that
    sum(ASD^2) df equals the variance of the detrended input.
    Returns (f array, asd array, info dict).
    """
    n = trace.n
    if segment_length is None:
        segment_length = max(16, int(2 * n / 9))
    if n < segment_length:
        raise ValidationError("trace shorter than the requested segment")
    noverlap = int(round(segment_length * overlap))
    f, psd = sp_signal.welch(
        trace.values, fs=trace.sample_rate_hz, window=window,
        nperseg=segment_length, noverlap=noverlap, detrend="constant",
        scaling="density",
    )
    info = {
        "window": window,
        "segment_length": int(segment_length),
        "overlap": float(overlap),
        "n_segments": int((n - noverlap) // (segment_length - noverlap)),
        "df_hz": float(f[1] - f[0]) if f.size > 1 else 0.0,
    }
    return f, np.sqrt(psd), info


def band_rms_trace(trace: Trace, f_lo: float, f_hi: float) -> float:
    """rms of the band-limited content via the full-length rFFT (exact
    Parseval, no windowing)."""
    y = trace.values - np.mean(trace.values)
    spec = np.fft.rfft(y)
    freqs = np.fft.rfftfreq(y.size, d=trace.dt)
    m = (freqs >= f_lo) & (freqs <= f_hi)
    power = np.sum(np.abs(spec[m]) ** 2)
    if y.size % 2 == 0 and m[-1]:
        power -= 0.5 * np.abs(spec[-1]) ** 2  # Nyquist bin is not doubled
    if m[0]:
        power -= 0.5 * np.abs(spec[0]) ** 2
    return float(np.sqrt(2.0 * power) / y.size)


def band_rms_asd(f, asd, f_lo: float, f_hi: float) -> float:
    """rms over a band of a tabulated one-sided ASD (rectangle rule)."""
    f = np.asarray(f, dtype=float)
    asd = np.asarray(asd, dtype=float)
    if f.size < 2:
        raise ValidationError("need at least two ASD points")
    df = f[1] - f[0]
    m = (f >= f_lo) & (f <= f_hi)
    return float(np.sqrt(np.sum(asd[m] ** 2) * df))


# ---------------------------------------------------------------------------
# loss budget

@dataclass
class LossBudget:
    mirror_loss: float
    scattering_roundtrip: float
    clipping: float
    absorption: float
    total: float
    implied_finesse: float
    implied_alpha: float | None = None   # cm^-1, inverse mode only
    over_explained: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def loss_budget(config: CavityConfig, measured_finesse: float | None = None) -> LossBudget:
    """Forward loss budget, or inverse absorption from a measured finesse.

    Forward: scattering (4 pi Rq / (lambda/n))^2 doubled per round trip,
    decadic absorption 1 - 10^(-2 d alpha), Gaussian clipping, mirror
    transmissions; implied finesse is 2 pi / total.  Inverse: whatever
    loss 2 pi / F_meas leaves after mirrors + scattering + clipping is
    attributed to absorption and converted back to alpha.
    """
    s = cav.scattering_loss_single_pass(
        config.surface_roughness_Rq, config.wavelength_lambda,
        config.refractive_index_n)
    scattering_rt = 2.0 * s
    w0 = cav.beam_waist(config)
    clip = cav.clipping_loss(config.coating_aperture_D, w0)
    mirrors = cav.mirror_loss(config)

    if measured_finesse is None:
        absorption = cav.absorption_loss_round_trip(
            config.absorption_alpha, config.diamond_thickness_d)
        total = mirrors + scattering_rt + absorption + clip
        return LossBudget(
            mirror_loss=mirrors, scattering_roundtrip=scattering_rt,
            clipping=clip, absorption=absorption, total=total,
            implied_finesse=2.0 * math.pi / total,
        )

    if measured_finesse <= 0:
        raise ValidationError("measured finesse must be positive")
    total = 2.0 * math.pi / measured_finesse
    residual = total - mirrors - scattering_rt - clip
    if residual < 0:
        return LossBudget(
            mirror_loss=mirrors, scattering_roundtrip=scattering_rt,
            clipping=clip, absorption=0.0, total=total,
            implied_finesse=measured_finesse, over_explained=True,
        )
    if config.diamond_thickness_d <= 0:
        raise ValidationError("inverse absorption needs a diamond thickness")
    alpha = -math.log10(1.0 - residual) / (2.0 * config.diamond_thickness_d * 100.0)
    return LossBudget(
        mirror_loss=mirrors, scattering_roundtrip=scattering_rt,
        clipping=clip, absorption=residual, total=total,
        implied_finesse=measured_finesse, implied_alpha=alpha,
    )
