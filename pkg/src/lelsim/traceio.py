"""Uniformly sampled multi-channel traces and their CSV round-trip."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from lelsim.errors import InvalidArgument, ValidationError

# Relative jitter allowed in the time column before it is rejected
# as non-uniform.
_MAX_REL_JITTER = 1e-9


@dataclass
class Trace:
    """Multi-channel time series with a fixed sample period.

    channels maps channel name -> 1-D float array; all channels have the
    same length.  meta carries free-form origin information and is not
    interpreted anywhere.
    """

    sample_period: float
    channels: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.sample_period <= 0:
            raise InvalidArgument("sample_period must be > 0")
        if not self.channels:
            raise InvalidArgument("trace needs at least one channel")
        lengths = {len(v) for v in self.channels.values()}
        if len(lengths) != 1:
            raise InvalidArgument("all channels must have the same length")
        self.channels = {k: np.asarray(v, dtype=float) for k, v in self.channels.items()}

    def __len__(self):
        return len(next(iter(self.channels.values())))

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) * self.sample_period

    def channel(self, name: str) -> np.ndarray:
        return self.channels[name]

    def first_channel(self) -> np.ndarray:
        return next(iter(self.channels.values()))


def read_trace(path_or_file, expected_channels=None) -> Trace:
    """Read a trace CSV with header ``t,<channel>,...``.

    The time column must be strictly increasing and uniform within
    relative jitter 1e-9.  Raises ValidationError naming the offending
    row or channel.
    """
    if hasattr(path_or_file, "read"):
        rows = list(csv.reader(path_or_file))
    else:
        with open(path_or_file, newline="") as fh:
            rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError("empty trace file")
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "t":
        raise ValidationError("first column of a trace file must be 't'")
    names = header[1:]
    if not names:
        raise ValidationError("trace file has no data channels")
    if expected_channels is not None:
        missing = [c for c in expected_channels if c not in names]
        if missing:
            raise ValidationError(f"missing channel(s): {', '.join(missing)}")

    data = np.empty((len(rows) - 1, len(header)), dtype=float)
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ValidationError(f"row {i}: expected {len(header)} fields, got {len(row)}")
        try:
            data[i - 2] = [float(x) for x in row]
        except ValueError as exc:
            raise ValidationError(f"row {i}: {exc}") from exc
    if np.isnan(data).any():
        bad = int(np.argwhere(np.isnan(data))[0, 0]) + 2
        raise ValidationError(f"row {bad}: NaN value")
    t = data[:, 0]
    if len(t) < 2:
        dt = 1.0
    else:
        steps = np.diff(t)
        if (steps <= 0).any():
            bad = int(np.argmax(steps <= 0)) + 3
            raise ValidationError(f"row {bad}: time column not strictly increasing")
        dt = float(steps[0])
        if np.abs(steps - dt).max() > _MAX_REL_JITTER * max(abs(t[-1]), dt):
            bad = int(np.argmax(np.abs(steps - dt))) + 3
            raise ValidationError(f"row {bad}: non-uniform sample period")
    channels = {name: data[:, j + 1].copy() for j, name in enumerate(names)}
    return Trace(sample_period=dt, channels=channels)


def write_trace(trace: Trace, path_or_file) -> None:
    """Write a trace as CSV (inverse of read_trace, full float precision)."""
    names = list(trace.channels)
    own = not hasattr(path_or_file, "write")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        writer = csv.writer(fh)
        writer.writerow(["t"] + names)
        t = trace.times
        cols = [trace.channels[n] for n in names]
        for i in range(len(trace)):
            writer.writerow([repr(float(t[i]))] + [repr(float(c[i])) for c in cols])
    finally:
        if own:
            fh.close()


def trace_to_string(trace: Trace) -> str:
    buf = io.StringIO()
    write_trace(trace, buf)
    return buf.getvalue()
