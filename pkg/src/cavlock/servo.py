"""Digital PID servo, lock-acquisition state machine, closed-loop engine
and in-loop Bode analyzer.

The engine advances the full nonlinear loop sample by sample at the
servo rate: triangular scan -> threshold detect -> engage (freeze ramp,
close PID) -> locked, with debounced unlock and automatic relock.  The
error signal is the full PDH curve evaluated at the instantaneous
round-trip phase, so lock loss is emergent rather than scripted.

The hot loop is compiled with numba; a 60 s run at 1 MHz takes a few
seconds.  Everything is a pure function of (configs, seed): reruns are
bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
from numba import njit

from .cavity import C_LIGHT, CavityConfig, _fp_coefficients
from .errors import AnalysisError, ValidationError
from .pdh import PdhConfig, error_slope_per_meter
from .plant import PlantConfig, discretize
from .trace import Trace
from .vibration import NoiseSpec, synthesize

# state-machine constants (samples)
ENGAGE_HOLD = 50          # transmission above threshold before LOCKED
UNLOCK_DEBOUNCE = 100     # below threshold before declaring unlock
ENGAGE_TIMEOUT_S = 0.01   # give up on a failed engage after this long

_NOISE_UPSAMPLE = 5       # disturbance synthesized at fs / this factor

STATE_SCAN, STATE_ENGAGE, STATE_LOCKED = 0, 1, 2


@dataclass(frozen=True)
class ScanDrive:
    amplitude: float = 50.0   # V
    frequency: float = 5.0    # Hz

    def __post_init__(self):
        if self.amplitude < 0 or self.frequency <= 0:
            raise ValidationError("bad scan drive parameters")


@dataclass(frozen=True)
class ServoConfig:
    sample_rate_fs: float = 1e6
    kp: float = 0.0
    ki: float = 0.0            # V / (V s)
    kd: float = 0.0            # V s / V
    output_limits: tuple = (-30.0, 30.0)
    integrator_clamp: float = 20.0
    lock_engage_threshold: float = 0.5
    unlock_threshold: float = 0.25
    scan_ramp: ScanDrive = field(default_factory=ScanDrive)
    bias_voltage: float = 75.0

    def __post_init__(self):
        if isinstance(self.scan_ramp, dict):
            object.__setattr__(self, "scan_ramp", ScanDrive(**self.scan_ramp))
        object.__setattr__(self, "output_limits", tuple(self.output_limits))
        if self.sample_rate_fs <= 0:
            raise ValidationError("sample rate must be positive")
        if not (0 < self.unlock_threshold < self.lock_engage_threshold < 1):
            raise ValidationError("need 0 < unlock < engage < 1")
        if self.integrator_clamp < 0:
            raise ValidationError("integrator clamp must be >= 0")
        lo, hi = self.output_limits
        if lo >= hi:
            raise ValidationError("output_limits must be (lo, hi)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["output_limits"] = list(self.output_limits)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ServoConfig":
        d = dict(d)
        if "scan_ramp" in d and isinstance(d["scan_ramp"], dict):
            d["scan_ramp"] = ScanDrive(**d["scan_ramp"])
        if "output_limits" in d:
            d["output_limits"] = tuple(d["output_limits"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ValidationError(f"bad servo config fields: {exc}") from exc


@dataclass
class LockReport:
    lock_acquired: bool
    time_to_lock: float
    locked_fraction: float
    rms_displacement: float
    saturation_events: int
    relocks: int
    residual_error: Trace | None = None
    residual_displacement: Trace | None = None

    def to_dict(self) -> dict:
        return {
            "lock_acquired": self.lock_acquired,
            "time_to_lock": self.time_to_lock,
            "locked_fraction": self.locked_fraction,
            "rms_displacement": self.rms_displacement,
            "saturation_events": self.saturation_events,
            "relocks": self.relocks,
        }


# ---------------------------------------------------------------------------
# numba kernel

@njit(cache=True)
def _run_kernel(n_steps, dt,
                # cavity / pdh
                r1, r2g, b, cos_o, sin_o, k_err, t_car, t_sb, omb2,
                phase_per_m, phi0,
                # controller
                kp, ki, kd, integ_clamp, out_lo, out_hi,
                engage_level, unlock_level, v_bias, scan_amp, scan_freq,
                v_lo, v_hi,
                # plant
                rigid, piezo_gain, coeffs, zst, ring,
                # noise
                noise, n_up, det_noise,
                # injection / demod
                inj_amp, inj_freq, demod_start,
                # recording
                stride, rec_x, rec_e, rec_u, rec_t, rec_state,
                # persistent state
                fst, ist, acc,
                engage_hold, unlock_debounce, engage_timeout):
    integ = fst[0]
    e_prev = fst[1]
    v_frozen = fst[2]
    state = ist[0]
    ring_idx = ist[1]
    below = ist[2]
    hold = ist[3]
    n_global = ist[4]
    locked_n = ist[5]
    first_lock = ist[6]
    sat = ist[7]
    relocks = ist[8]
    engage_t = ist[9]

    n_modes = coeffs.shape[0]
    ring_n = ring.shape[0]
    two_pi = 2.0 * np.pi
    zor = cos_o
    zoi = sin_o
    use_det = det_noise.shape[0] > 0
    use_inj = inj_amp != 0.0
    j = 0

    for n in range(n_steps):
        t_n = n_global * dt

        # actuator voltage commanded `ring_n` samples ago
        v_applied = ring[ring_idx]

        y = rigid * v_applied
        for k in range(n_modes):
            b0 = coeffs[k, 0]; b1 = coeffs[k, 1]; b2 = coeffs[k, 2]
            a1 = coeffs[k, 3]; a2 = coeffs[k, 4]
            yk = b0 * v_applied + zst[k, 0]
            zst[k, 0] = b1 * v_applied - a1 * yk + zst[k, 1]
            zst[k, 1] = b2 * v_applied - a2 * yk
            y += yk
        x_pz = piezo_gain * y

        # band-limited disturbance, linearly interpolated
        i_n = n_global // n_up
        r_n = n_global - i_n * n_up
        xn = noise[i_n] + (noise[i_n + 1] - noise[i_n]) * (r_n / n_up)
        x = x_pz + xn

        phi = phase_per_m * x + phi0
        c = math.cos(phi)
        s = math.sin(phi)
        # reflection coefficients at carrier and sidebands
        z = complex(c, s)
        zp = z * complex(zor, zoi)
        zm = z * complex(zor, -zoi)
        f0 = (-r1 + r2g * z) / (1.0 - b * z)
        fp = (-r1 + r2g * zp) / (1.0 - b * zp)
        fm = (-r1 + r2g * zm) / (1.0 - b * zm)
        e = k_err * (f0 * np.conj(fp) - np.conj(f0) * fm).imag
        if use_det:
            e += det_noise[n]

        # Airy transmissions from the same cos values
        cp = c * zor - s * zoi
        cm = c * zor + s * zoi
        trans = (t_car * omb2 / (omb2 + 2.0 * b * (1.0 - c))
                 + t_sb * omb2 / (omb2 + 2.0 * b * (1.0 - cp))
                 + t_sb * omb2 / (omb2 + 2.0 * b * (1.0 - cm)))

        # --- state machine ---
        if state == STATE_SCAN:
            frac = t_n * scan_freq - math.floor(t_n * scan_freq)
            if frac < 0.5:
                tri = 4.0 * frac - 1.0
            else:
                tri = 3.0 - 4.0 * frac
            v_base = v_bias + scan_amp * tri
            if trans >= engage_level:
                state = STATE_ENGAGE
                v_frozen = v_base
                hold = 0
                engage_t = 0
                integ = 0.0
                e_prev = e
        elif state == STATE_ENGAGE:
            engage_t += 1
            if trans >= engage_level:
                hold += 1
            else:
                hold = 0
            if hold >= engage_hold:
                state = STATE_LOCKED
                if first_lock < 0:
                    first_lock = n_global
                below = 0
            elif engage_t > engage_timeout:
                state = STATE_SCAN
        else:  # LOCKED
            locked_n += 1
            if trans < unlock_level:
                below += 1
                if below >= unlock_debounce:
                    state = STATE_SCAN
                    relocks += 1
                    integ = 0.0
            else:
                below = 0

        # --- control law ---
        if state == STATE_SCAN:
            frac = t_n * scan_freq - math.floor(t_n * scan_freq)
            if frac < 0.5:
                tri = 4.0 * frac - 1.0
            else:
                tri = 3.0 - 4.0 * frac
            v_base = v_bias + scan_amp * tri
            u = 0.0
            integ = 0.0
            e_prev = e
        else:
            # integ holds the integral contribution in volts (anti-windup)
            integ += ki * 0.5 * (e + e_prev) * dt
            if integ > integ_clamp:
                integ = integ_clamp
            elif integ < -integ_clamp:
                integ = -integ_clamp
            u = kp * e + integ + kd * (e - e_prev) / dt
            if u > out_hi:
                u = out_hi
                sat += 1
            elif u < out_lo:
                u = out_lo
                sat += 1
            e_prev = e
            v_base = v_frozen

        v_cmd = v_base + u
        if use_inj and state == STATE_LOCKED:
            v_cmd += inj_amp * math.sin(two_pi * inj_freq * t_n)
        if v_cmd > v_hi:
            v_cmd = v_hi
            sat += 1
        elif v_cmd < v_lo:
            v_cmd = v_lo
            sat += 1
        ring[ring_idx] = v_cmd
        ring_idx += 1
        if ring_idx == ring_n:
            ring_idx = 0

        # --- synchronous demodulation ---
        if use_inj and n >= demod_start:
            th = two_pi * inj_freq * t_n
            acc[0] += e * math.cos(th)
            acc[1] += e * math.sin(th)
            acc[2] += 1.0
            if state != STATE_LOCKED:
                acc[3] = 1.0
            ae = abs(e)
            if ae > acc[4]:
                acc[4] = ae

        # --- recording ---
        if stride > 0 and n_global % stride == 0:
            rec_x[j] = x
            rec_e[j] = e
            rec_u[j] = v_cmd
            rec_t[j] = trans
            rec_state[j] = state
            j += 1

        n_global += 1

    fst[0] = integ
    fst[1] = e_prev
    fst[2] = v_frozen
    ist[0] = state
    ist[1] = ring_idx
    ist[2] = below
    ist[3] = hold
    ist[4] = n_global
    ist[5] = locked_n
    ist[6] = first_lock
    ist[7] = sat
    ist[8] = relocks
    ist[9] = engage_t
    return j


# ---------------------------------------------------------------------------
# engine plumbing

class _Engine:
    """Mutable closed-loop state, advanced by successive kernel calls."""

    def __init__(self, cavity: CavityConfig, pdh: PdhConfig,
                 noise_spec: NoiseSpec | None, plant: PlantConfig,
                 servo: ServoConfig, total_duration: float, seed: int,
                 phi0: float = 1.3):
        fs = servo.sample_rate_fs
        self.fs = fs
        self.dt = 1.0 / fs
        self.cavity = cavity
        self.pdh = pdh
        self.plant = plant
        self.servo = servo
        self.seed = seed

        r1, r2g, b = _fp_coefficients(cavity)
        fsr = C_LIGHT / (2.0 * cavity.optical_length)
        phi_o = 2.0 * math.pi * pdh.modulation_frequency_Omega / fsr
        beta = pdh.modulation_depth_beta
        g = pdh.detector_gain
        from scipy.special import j0, j1
        self.par = dict(
            r1=r1, r2g=r2g, b=b,
            cos_o=math.cos(phi_o), sin_o=math.sin(phi_o),
            k_err=2.0 * g * float(j0(beta)) * float(j1(beta)),
            t_car=g * float(j0(beta)) ** 2,
            t_sb=g * float(j1(beta)) ** 2,
            omb2=(1.0 - b) ** 2,
            phase_per_m=4.0 * math.pi / cavity.wavelength_lambda,
            phi0=phi0,
        )
        self.peak_transmission = self.par["t_car"]

        rigid, coeffs, delay = discretize(plant, fs)
        self.delay_samples = max(1, delay)
        self.rigid = rigid
        self.coeffs = coeffs if coeffs.size else np.zeros((0, 5))
        self.zst = np.zeros((self.coeffs.shape[0], 2))
        v_start = servo.bias_voltage - servo.scan_ramp.amplitude
        self.ring = np.full(self.delay_samples, v_start, dtype=float)

        self.fst = np.zeros(3)
        self.fst[2] = servo.bias_voltage
        self.ist = np.zeros(10, dtype=np.int64)
        self.ist[6] = -1  # first lock sample

        n_total = int(round(total_duration * fs))
        self.n_total = n_total
        n_up = _NOISE_UPSAMPLE
        self.n_up = n_up
        n_noise = n_total // n_up + 3
        if noise_spec is None:
            self.noise = np.zeros(n_noise)
        else:
            tr = synthesize(noise_spec, n_noise / (fs / n_up), fs / n_up,
                            seed=seed)
            vals = tr.values
            if vals.size < n_noise:
                vals = np.concatenate([vals, np.zeros(n_noise - vals.size)])
            self.noise = vals
        if pdh.detector_noise_rms > 0:
            rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD37]))
            self.det_noise = rng.normal(0.0, pdh.detector_noise_rms, n_total)
        else:
            self.det_noise = np.zeros(0)
        self._det_used = 0

    def run(self, n_steps, stride=0, inj_amp=0.0, inj_freq=0.0, demod_start=0):
        sv = self.servo
        n_rec = (n_steps // stride + 2) if stride > 0 else 0
        rec_x = np.empty(n_rec)
        rec_e = np.empty(n_rec)
        rec_u = np.empty(n_rec)
        rec_t = np.empty(n_rec)
        rec_state = np.empty(n_rec, dtype=np.int64)
        acc = np.zeros(6)
        if self.det_noise.size:
            det = self.det_noise[self._det_used:self._det_used + n_steps]
            self._det_used += n_steps
        else:
            det = self.det_noise
        lo, hi = sv.output_limits
        v_lo, v_hi = self.plant.voltage_range
        p = self.par
        j = _run_kernel(
            n_steps, self.dt,
            p["r1"], p["r2g"], p["b"], p["cos_o"], p["sin_o"], p["k_err"],
            p["t_car"], p["t_sb"], p["omb2"], p["phase_per_m"], p["phi0"],
            sv.kp, sv.ki, sv.kd, sv.integrator_clamp, lo, hi,
            sv.lock_engage_threshold * self.peak_transmission,
            sv.unlock_threshold * self.peak_transmission,
            sv.bias_voltage, sv.scan_ramp.amplitude, sv.scan_ramp.frequency,
            v_lo, v_hi,
            self.rigid, self.plant.piezo_gain, self.coeffs, self.zst, self.ring,
            self.noise, self.n_up, det,
            inj_amp, inj_freq, demod_start,
            stride, rec_x, rec_e, rec_u, rec_t, rec_state,
            self.fst, self.ist, acc,
            ENGAGE_HOLD, UNLOCK_DEBOUNCE, int(ENGAGE_TIMEOUT_S * self.fs),
        )
        rec = {
            "x": rec_x[:j], "e": rec_e[:j], "u": rec_u[:j], "t": rec_t[:j],
            "state": rec_state[:j],
        }
        return rec, acc

    @property
    def state(self):
        return int(self.ist[0])


def run_closed_loop(cavity: CavityConfig, pdh: PdhConfig,
                    noise_spec: NoiseSpec | None, plant: PlantConfig,
                    servo: ServoConfig, duration: float, seed: int = 0,
                    record_rate: float = 50e3):
    """Simulate scan, lock acquisition and regulation.

    Returns (LockReport, traces) where traces maps
    {"length_m", "error_v", "control_v", "transmission"} to synchronized
    Traces recorded at `record_rate` (the loop itself runs at the servo
    rate).  Deterministic for fixed (configs, seed).
    """
    fs = servo.sample_rate_fs
    if duration < 10.0 / fs:
        raise ValidationError("duration must cover at least 10 servo samples")
    eng = _Engine(cavity, pdh, noise_spec, plant, servo, duration, seed)
    stride = max(1, int(round(fs / record_rate)))
    n_steps = eng.n_total
    rec, _ = eng.run(n_steps, stride=stride)

    rate = fs / stride
    meta = {"seed": seed, "sample_stride": stride, "loop_rate_hz": fs}
    traces = {
        "length_m": Trace(rec["x"], rate, units="m", meta=dict(meta)),
        "error_v": Trace(rec["e"], rate, units="V", meta=dict(meta)),
        "control_v": Trace(rec["u"], rate, units="V", meta=dict(meta)),
        "transmission": Trace(rec["t"], rate, units="V", meta=dict(meta)),
    }

    locked = rec["state"] == STATE_LOCKED
    first_lock = int(eng.ist[6])
    acquired = first_lock >= 0
    time_to_lock = first_lock / fs if acquired else math.nan
    locked_fraction = float(eng.ist[5]) / n_steps

    if acquired and locked.any():
        i0, i1 = _longest_true_run(locked)
        res_x = rec["x"][i0:i1]
        res_e = rec["e"][i0:i1]
        t0 = i0 / rate
        residual_displacement = Trace(res_x - np.mean(res_x), rate, units="m",
                                      t0=t0, meta=dict(meta))
        residual_error = Trace(res_e, rate, units="V", t0=t0, meta=dict(meta))
        rms = residual_displacement.rms()
    else:
        residual_displacement = None
        residual_error = None
        rms = math.nan

    report = LockReport(
        lock_acquired=acquired,
        time_to_lock=time_to_lock,
        locked_fraction=locked_fraction,
        rms_displacement=rms,
        saturation_events=int(eng.ist[7]),
        relocks=int(eng.ist[8]),
        residual_error=residual_error,
        residual_displacement=residual_displacement,
    )
    return report, traces


def _longest_true_run(mask: np.ndarray):
    """(start, stop) of the longest contiguous True stretch."""
    if not mask.any():
        return 0, 0
    padded = np.concatenate([[0], mask.astype(np.int8), [0]])
    d = np.diff(padded)
    starts = np.where(d == 1)[0]
    stops = np.where(d == -1)[0]
    k = int(np.argmax(stops - starts))
    return int(starts[k]), int(stops[k])


# ---------------------------------------------------------------------------
# analytic loop model

def controller_z(servo: ServoConfig, f):
    """PID response of the discrete controller (trapezoidal integrator)."""
    f = np.asarray(f, dtype=float)
    z = np.exp(2j * np.pi * f / servo.sample_rate_fs)
    dt = 1.0 / servo.sample_rate_fs
    c = servo.kp + servo.ki * (dt / 2.0) * (z + 1.0) / (z - 1.0)
    if servo.kd:
        c = c + servo.kd * (1.0 - 1.0 / z) / dt
    return c


def loop_transfer(cavity: CavityConfig, pdh: PdhConfig, plant: PlantConfig,
                  servo: ServoConfig, f):
    """Exact z-domain model of the simulated loop at frequency f.

    Returns a dict with the discriminant D (V/m, signed), plant response
    P (m/V including actuator delay), controller C, open loop gain L
    (positive at DC for the shipped sign convention), sensitivity S and
    the injection-to-error transfer T measured by the Bode analyzer.
    """
    fs = servo.sample_rate_fs
    f = np.asarray(f, dtype=float)
    z = np.exp(2j * np.pi * f / fs)
    rigid, coeffs, delay = discretize(plant, fs)
    delay = max(1, delay)
    h = np.full(f.shape, rigid, dtype=complex)
    for b0, b1, b2, a1, a2 in coeffs:
        h = h + (b0 + b1 / z + b2 / z ** 2) / (1.0 + a1 / z + a2 / z ** 2)
    p = plant.piezo_gain * h * z ** (-float(delay))
    d = error_slope_per_meter(cavity, pdh)
    c = controller_z(servo, f)
    l = -d * p * c
    s = 1.0 / (1.0 + l)
    t = d * p * s
    return {"D": d, "P": p, "C": c, "L": l, "S": s, "T": t}


# ---------------------------------------------------------------------------
# Bode analyzer

@dataclass
class BodePoint:
    f_hz: float
    gain_db: float
    phase_deg: float
    amplitude_v: float
    valid: bool
    linear: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _linear_error_limit(cavity: CavityConfig, pdh: PdhConfig) -> float:
    """|error| at half a linewidth detuning: edge of the useful range."""
    from .pdh import error_signal
    fsr = C_LIGHT / (2.0 * cavity.optical_length)
    from .cavity import derive
    lw = derive(cavity).linewidth_fwhm
    return abs(error_signal(cavity, pdh, lw / 2.0))


def bode_measure(cavity: CavityConfig, pdh: PdhConfig,
                 noise_spec: NoiseSpec | None, plant: PlantConfig,
                 servo: ServoConfig, f_points, injection_amplitude: float,
                 seed: int = 0, n_periods_min: int = 8,
                 min_window_s: float = 0.25, settle_s: float = 0.02):
    """Measure the in-loop piezo-to-error response at each frequency.

    Acquires lock, then injects a sinusoid at the piezo summing node and
    demodulates the error signal over an integer number of periods.
    The per-point drive is reduced below `injection_amplitude` where the
    analytic model predicts the error would leave the linear discriminant
    range.  A point that loses lock is flagged invalid and retried once.
    """
    if injection_amplitude <= 0:
        raise ValidationError("injection amplitude must be positive")
    f_points = np.asarray(sorted(f_points), dtype=float)
    if f_points.size == 0 or f_points[0] <= 0:
        raise ValidationError("need positive measurement frequencies")
    fs = servo.sample_rate_fs
    if f_points[-1] >= fs / 2:
        raise ValidationError("measurement frequency above Nyquist")

    # per-point windows
    settle_n = [int(round((settle_s + 3.0 / f) * fs)) for f in f_points]
    meas_n = []
    for f in f_points:
        n_per = max(n_periods_min, int(math.ceil(min_window_s * f)))
        meas_n.append(int(round(n_per / f * fs)))
    acq_budget = int(round(3.0 * fs))
    total = acq_budget + int(sum(settle_n) + 2 * sum(meas_n) + fs)

    eng = _Engine(cavity, pdh, noise_spec, plant, servo, total / fs, seed)

    # acquire lock
    chunk = int(0.2 * fs)
    waited = 0
    while eng.state != STATE_LOCKED:
        if waited >= acq_budget:
            raise AnalysisError("bode: failed to acquire lock")
        eng.run(chunk)
        waited += chunk
    eng.run(int(0.1 * fs))  # settle

    e_lim = 0.45 * _linear_error_limit(cavity, pdh)
    model = loop_transfer(cavity, pdh, plant, servo, f_points)
    t_pred = np.abs(model["T"])

    points = []
    for i, f in enumerate(f_points):
        amp = min(injection_amplitude, e_lim / max(t_pred[i], 1e-30))
        linear_req = amp >= injection_amplitude * (1 - 1e-12)
        result = None
        for attempt in range(2):
            rec, acc = eng.run(settle_n[i], inj_amp=0.0)
            rec, acc = eng.run(meas_n[i], inj_amp=amp, inj_freq=f,
                               demod_start=0)
            n_w = acc[2]
            lost = acc[3] > 0 or eng.state != STATE_LOCKED
            if not lost:
                x_e = (acc[0] - 1j * acc[1]) * 2.0 / n_w
                h = x_e / (-1j * amp)
                result = BodePoint(
                    f_hz=float(f),
                    gain_db=float(20 * np.log10(abs(h))),
                    phase_deg=float(np.degrees(np.angle(h))),
                    amplitude_v=float(amp),
                    valid=True,
                    linear=bool(acc[4] <= 1.05 * e_lim) and linear_req,
                )
                break
            # lock lost: re-acquire once, then retry the point
            waited = 0
            while eng.state != STATE_LOCKED and waited < acq_budget:
                eng.run(chunk)
                waited += chunk
            if eng.state != STATE_LOCKED:
                break
        if result is None:
            result = BodePoint(f_hz=float(f), gain_db=math.nan,
                               phase_deg=math.nan, amplitude_v=float(amp),
                               valid=False, linear=False)
        points.append(result)
    return points
