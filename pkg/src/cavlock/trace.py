"""Uniformly sampled time series with units and metadata.

Trace is the exchange object between the simulator, the analysis
routines and the CLI.  On disk a trace is a CSV file with ``# key=value``
header lines followed by ``t,value`` rows; see `Trace.save`.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

# Relative tolerance between the declared sample rate and the t spacing.
_RATE_TOL = 1e-6


@dataclass
class Trace:
    values: np.ndarray
    sample_rate_hz: float
    units: str = ""
    t0: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1:
            raise ValidationError("trace values must be one-dimensional")
        if self.sample_rate_hz <= 0:
            raise ValidationError("sample_rate_hz must be positive")
        if self.values.size and not np.all(np.isfinite(self.values)):
            raise ValidationError("trace contains non-finite values")

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate_hz

    @property
    def duration(self) -> float:
        return self.n * self.dt

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.n) / self.sample_rate_hz

    def rms(self) -> float:
        """Standard deviation about the mean."""
        return float(np.std(self.values))

    def save(self, path):
        """Write the trace atomically (temp file + rename)."""
        header = dict(self.meta)
        header["sample_rate_hz"] = self.sample_rate_hz
        header["units"] = self.units
        header["t0"] = self.t0
        header.setdefault("seed", "")
        header.setdefault("created_by", "cavlock")
        header.setdefault("config_hash", "")
        lines = [f"# {k}={_fmt(v)}\n" for k, v in header.items()]
        lines.append("t,value\n")
        t = self.times()
        rows = "\n".join(
            f"{_fmt(t[i])},{_fmt(self.values[i])}" for i in range(self.n)
        )
        _atomic_write(path, "".join(lines) + rows + ("\n" if self.n else ""))

    @classmethod
    def load(cls, path) -> "Trace":
        meta = {}
        data_start = 0
        with open(path, "r") as fh:
            lines = fh.readlines()
        for i, line in enumerate(lines):
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    k, v = body.split("=", 1)
                    meta[k.strip()] = _parse(v.strip())
            else:
                data_start = i
                break
        else:
            raise ValidationError(f"{path}: no data rows")
        if lines[data_start].strip() != "t,value":
            raise ValidationError(f"{path}: missing 't,value' column header")
        try:
            body = np.loadtxt(lines[data_start + 1:], delimiter=",", ndmin=2)
        except Exception as exc:
            raise ValidationError(f"{path}: malformed CSV rows ({exc})") from exc
        t, values = body[:, 0], body[:, 1]
        rate = meta.pop("sample_rate_hz", None)
        if rate is None:
            raise ValidationError(f"{path}: header lacks sample_rate_hz")
        rate = float(rate)
        if t.size >= 2:
            dts = np.diff(t)
            if np.any(np.abs(dts * rate - 1.0) > _RATE_TOL):
                raise ValidationError(
                    f"{path}: time axis not uniform at declared sample rate"
                )
        units = str(meta.pop("units", ""))
        t0 = float(meta.pop("t0", t[0] if t.size else 0.0))
        return cls(values, rate, units=units, t0=t0, meta=meta)


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def _parse(s: str):
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def _atomic_write(path, text: str):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-trace-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
