"""Normalised smoothed envelope threshold (NSET-style) arrival picking."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import signal as sps
from scipy.ndimage import uniform_filter1d

from .core import TdoaVector
from .wavesim import SyntheticSignal


class ExtractionError(ValueError):
    pass


@dataclass(frozen=True)
class ExtractionConfig:
    """Filter and picker settings.

    ``bandwidth`` defaults to ``center_frequency`` and ``smoothing_window``
    to two carrier periods.
    """

    center_frequency: float = 1.0
    bandwidth: float | None = None
    threshold_fraction: float = 0.025
    smoothing_window: float | None = None
    filter_order: int = 4

    def __post_init__(self):
        if self.center_frequency <= 0:
            raise ValueError("center_frequency must be positive")
        if self.bandwidth is None:
            object.__setattr__(self, "bandwidth", self.center_frequency)
        if self.smoothing_window is None:
            object.__setattr__(self, "smoothing_window", 2.0 / self.center_frequency)
        if not 0 < self.threshold_fraction < 1:
            raise ValueError("threshold_fraction must lie in (0, 1)")
        if not 0 < self.bandwidth < 2 * self.center_frequency:
            raise ValueError("bandwidth must be positive and below twice the centre frequency")
        if self.smoothing_window <= 0:
            raise ValueError("smoothing_window must be positive")

    @property
    def band(self):
        return (self.center_frequency - self.bandwidth / 2, self.center_frequency + self.bandwidth / 2)


def bandpass(signal: SyntheticSignal, cfg: ExtractionConfig) -> SyntheticSignal:
    """Zero-phase Butterworth band-pass around the configured frequency."""
    lo, hi = cfg.band
    nyq = signal.sample_rate / 2
    if hi >= nyq:
        raise ExtractionError(f"pass band upper edge {hi} kHz is at or above Nyquist ({nyq} kHz)")
    sos = sps.butter(cfg.filter_order, [lo, hi], btype="bandpass", fs=signal.sample_rate, output="sos")
    x = signal.samples
    padlen = min(x.size - 1, 3 * (2 * len(sos) + 1))
    y = sps.sosfiltfilt(sos, x, padlen=padlen)
    return SyntheticSignal(y, signal.sample_rate, signal.t0)


def envelope(signal: SyntheticSignal, cfg: ExtractionConfig) -> SyntheticSignal:
    """Rectify, smooth with a centred moving average and normalise to unit peak."""
    x = np.abs(signal.samples)
    width = max(1, int(round(cfg.smoothing_window * signal.sample_rate)))
    env = uniform_filter1d(x, size=width, mode="constant")
    peak = env.max()
    if not peak > 0:
        raise ExtractionError("degenerate signal: envelope has no positive peak")
    return SyntheticSignal(np.clip(env / peak, 0.0, 1.0), signal.sample_rate, signal.t0)


def pick_arrival(env: SyntheticSignal, cfg: ExtractionConfig) -> float:
    """Time (ms) of the first threshold crossing, linearly interpolated."""
    e = env.samples
    thr = cfg.threshold_fraction
    hit = np.flatnonzero(e >= thr)
    if hit.size == 0:
        raise ExtractionError("threshold never crossed")
    i = int(hit[0])
    if i == 0:
        return float(env.t0)
    frac = (thr - e[i - 1]) / (e[i] - e[i - 1])
    return float(env.t0 + (i - 1 + frac) * env.dt)


def arrival_time(signal: SyntheticSignal, cfg: ExtractionConfig) -> float:
    return pick_arrival(envelope(bandpass(signal, cfg), cfg), cfg)


def extract_tdoa(signals: Sequence[SyntheticSignal], cfg: ExtractionConfig,
                 ids: Sequence[str] | None = None) -> TdoaVector:
    """Pick every sensor and anchor the result on the earliest arrival."""
    if len(signals) == 0:
        raise ExtractionError("no signals given")
    rates = {s.sample_rate for s in signals}
    if len(rates) != 1:
        raise ExtractionError("signals do not share a common sample rate")
    ids = list(ids) if ids is not None else [f"S{i + 1}" for i in range(len(signals))]
    picks = []
    for sid, s in zip(ids, signals):
        try:
            picks.append(arrival_time(s, cfg))
        except ExtractionError as exc:
            raise ExtractionError(f"sensor {sid}: {exc}") from exc
    return TdoaVector.from_arrivals(picks, cfg.center_frequency)


def rise_time(env: SyntheticSignal, low: float = 0.1, high: float = 0.9) -> float:
    """10-90 % rise time (ms) of a normalised envelope's leading edge."""
    e = env.samples
    i_lo = int(np.flatnonzero(e >= low)[0])
    i_hi = int(np.flatnonzero(e >= high)[0])
    return (i_hi - i_lo) * env.dt
