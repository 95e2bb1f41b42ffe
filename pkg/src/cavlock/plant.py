"""Piezo actuator model: rigid low-frequency response plus parameterized
second-order mechanical modes, and its discrete-time realization.

The normalized voltage-to-displacement response is

    H(f) = (1 - sum w_k) + sum_k w_k f0k^2 / (f0k^2 - f^2 + i f f0k / q_k)

times a pure delay, so H(0) = 1 and the displacement is piezo_gain * H.
Discretization uses bilinear sections pre-warped at each resonance, which
keeps the discrete response exact at every f0k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class Mode:
    f0: float              # Hz
    quality_q: float
    modal_weight: float    # contribution to the DC response

    def __post_init__(self):
        if self.f0 <= 0 or self.quality_q <= 0:
            raise ValidationError("mode f0 and q must be positive")
        if not 0.0 <= self.modal_weight <= 1.0:
            raise ValidationError("modal weight must lie in [0, 1]")


@dataclass(frozen=True)
class PlantConfig:
    piezo_gain: float = 5e-9            # m/V at DC
    voltage_range: tuple = (0.0, 150.0)  # V
    modes: tuple = ()
    loop_delay: float = 2e-6            # s, total actuation latency

    def __post_init__(self):
        modes = tuple(m if isinstance(m, Mode) else Mode(**m) for m in self.modes)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "voltage_range", tuple(self.voltage_range))
        if self.piezo_gain <= 0:
            raise ValidationError("piezo gain must be positive")
        if len(self.voltage_range) != 2 or self.voltage_range[0] >= self.voltage_range[1]:
            raise ValidationError("voltage_range must be (lo, hi) with lo < hi")
        if self.loop_delay < 0:
            raise ValidationError("loop delay must be >= 0")
        if sum(m.modal_weight for m in modes) > 1.0:
            raise ValidationError("modal weights exceed the DC response")

    @property
    def rigid_weight(self) -> float:
        return 1.0 - sum(m.modal_weight for m in self.modes)

    def to_dict(self) -> dict:
        return {
            "piezo_gain": self.piezo_gain,
            "voltage_range": list(self.voltage_range),
            "modes": [asdict(m) for m in self.modes],
            "loop_delay": self.loop_delay,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PlantConfig":
        try:
            return cls(
                piezo_gain=d["piezo_gain"],
                voltage_range=tuple(d.get("voltage_range", (0.0, 150.0))),
                modes=tuple(Mode(**m) for m in d.get("modes", ())),
                loop_delay=d.get("loop_delay", 2e-6),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"bad plant config fields: {exc}") from exc


def mode_response(mode: Mode, f):
    """Complex response of a single second-order section, w at DC."""
    f = np.asarray(f, dtype=float)
    f0, q, w = mode.f0, mode.quality_q, mode.modal_weight
    return w * f0 ** 2 / (f0 ** 2 - f ** 2 + 1j * f * f0 / q)


def transfer_function(plant: PlantConfig, f):
    """Continuous normalized response (dimensionless, H(0) = 1)."""
    f = np.asarray(f, dtype=float)
    h = np.full(f.shape, plant.rigid_weight, dtype=complex)
    for m in plant.modes:
        h = h + mode_response(m, f)
    h = h * np.exp(-2j * np.pi * f * plant.loop_delay)
    return h if h.ndim else complex(h)


def biquad_coefficients(mode: Mode, dt: float):
    """Bilinear coefficients (b0, b1, b2, a1, a2), pre-warped at f0."""
    w0 = 2.0 * math.pi * mode.f0
    if w0 * dt >= math.pi:
        raise ValidationError(f"mode at {mode.f0:.3g} Hz above Nyquist")
    k = w0 / math.tan(w0 * dt / 2.0)
    a_, b_, c_ = k * k, w0 * k / mode.quality_q, w0 * w0
    a0 = a_ + b_ + c_
    w = mode.modal_weight
    return (w * c_ / a0, 2.0 * w * c_ / a0, w * c_ / a0,
            2.0 * (c_ - a_) / a0, (a_ - b_ + c_) / a0)


def discretize(plant: PlantConfig, sample_rate: float):
    """(rigid_weight, coefficient array (n_modes, 5), delay_samples)."""
    dt = 1.0 / sample_rate
    coeffs = np.array([biquad_coefficients(m, dt) for m in plant.modes],
                      dtype=float).reshape(len(plant.modes), 5)
    delay = int(round(plant.loop_delay * sample_rate))
    return plant.rigid_weight, coeffs, delay


def transfer_function_z(plant: PlantConfig, f, sample_rate: float):
    """Exact response of the discrete realization at z = e^{i 2 pi f dt}."""
    rigid, coeffs, delay = discretize(plant, sample_rate)
    f = np.asarray(f, dtype=float)
    z = np.exp(2j * np.pi * f / sample_rate)
    h = np.full(f.shape, rigid, dtype=complex)
    for b0, b1, b2, a1, a2 in coeffs:
        h = h + (b0 + b1 / z + b2 / z ** 2) / (1.0 + a1 / z + a2 / z ** 2)
    h = h * z ** (-delay)
    return h if h.ndim else complex(h)


class PlantState:
    """Single-owner mutable state for stepping the plant sample by sample.

    Output is piezo_gain * (rigid + modal biquads)(delayed V) + noise
    displacement.  The commanded voltage is clamped to the range; clamps
    are counted in `saturation_count`.
    """

    def __init__(self, plant: PlantConfig, sample_rate: float):
        self.plant = plant
        self.sample_rate = sample_rate
        self.rigid, self.coeffs, delay = discretize(plant, sample_rate)
        self._zstate = np.zeros((len(plant.modes), 2))
        self._ring = np.zeros(max(delay, 0) + 1)
        self._ring_idx = 0
        self.saturation_count = 0

    def step(self, control_voltage: float, noise_displacement: float = 0.0) -> float:
        if not (math.isfinite(control_voltage) and math.isfinite(noise_displacement)):
            raise ValidationError("non-finite plant input")
        lo, hi = self.plant.voltage_range
        v = control_voltage
        if v < lo or v > hi:
            v = min(max(v, lo), hi)
            self.saturation_count += 1
        # delay line: write now, read the oldest entry
        ring = self._ring
        ring[self._ring_idx] = v
        self._ring_idx = (self._ring_idx + 1) % ring.size
        v_applied = ring[self._ring_idx] if ring.size > 1 else v
        y = self.rigid * v_applied
        st = self._zstate
        for k in range(self.coeffs.shape[0]):
            b0, b1, b2, a1, a2 = self.coeffs[k]
            yk = b0 * v_applied + st[k, 0]
            st[k, 0] = b1 * v_applied - a1 * yk + st[k, 1]
            st[k, 1] = b2 * v_applied - a2 * yk
            y += yk
        return self.plant.piezo_gain * y + noise_displacement

    def run(self, voltages, noise=None) -> np.ndarray:
        voltages = np.asarray(voltages, dtype=float)
        if noise is None:
            noise = np.zeros_like(voltages)
        out = np.empty_like(voltages)
        for i in range(voltages.size):
            out[i] = self.step(voltages[i], noise[i])
        return out
