"""Behavioral analog layer: driver, channel, comparator sampling, eyes.

The differential driver is an ideal NRZ trapezoid at +/- swing/2 with a
configurable rise time.  The channel is a pure delay plus a first-order
low-pass whose pole is derived from the trace length by a two-point
calibration map, plus additive Gaussian noise.  Comparators return the
sign of the (optionally jittered) sampled differential voltage.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, signal

from .errors import InsufficientSpan, OutOfRange

LINE_RATE = 0.8e9          # bits/s at DDR with the nominal 400 MHz clock
UI_S = 1.0 / LINE_RATE     # 1.25 ns unit interval
SAMPLES_PER_UI = 32
DEFAULT_EYE_UIS = 150

# Two-point calibration anchors for the trace-length -> pole map:
# eye height in volts measured at a 0.44 V swing.
_CAL_ANCHORS = ((2.0, 0.418), (5.0, 0.386))
_CAL_SWING = 0.44


@dataclass
class ChannelConfig:
    swing: float = 0.44            # differential swing, volts (levels +/- swing/2)
    trace_length_cm: float = 2.0
    lowpass_pole_hz: float | None = None  # None: derive from trace length
    prop_delay_s: float = 0.0
    noise_sigma_v: float = 0.0
    rj_sigma_s: float = 0.0        # random jitter on sampling instants
    rise_time_ui: float = 0.1
    comparator_offset_v: float = 0.0
    tie_bit: int = 0               # comparator decision at exactly 0 V

    def __post_init__(self):
        if self.swing <= 0:
            raise ValueError("swing must be positive")
        if self.noise_sigma_v < 0:
            raise ValueError("noise_sigma_v must be non-negative")

    def pole_hz(self):
        if self.lowpass_pole_hz is not None:
            return self.lowpass_pole_hz
        return pole_for_length(self.trace_length_cm)


@dataclass
class Waveform:
    """Differential voltage sampled on a regular sub-UI grid."""

    t0_s: float
    dt_s: float
    samples: np.ndarray

    @property
    def t_end_s(self):
        return self.t0_s + (len(self.samples) - 1) * self.dt_s

    def times(self):
        return self.t0_s + np.arange(len(self.samples)) * self.dt_s

    def value_at(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < self.t0_s) or np.any(t > self.t_end_s):
            raise OutOfRange("sample time outside waveform span")
        idx = (t - self.t0_s) / self.dt_s
        return np.interp(idx, np.arange(len(self.samples)), self.samples)


def _levels_from_bits(bits, swing):
    bits = np.asarray(bits)
    levels = np.where(bits > 0, swing / 2.0, -swing / 2.0).astype(float)
    return levels


def _render_trapezoid(levels, spu, rise_ui, prev_level, next_level):
    """NRZ trapezoid on the sample grid; ramps centered on bit boundaries."""
    levels = np.asarray(levels, dtype=float)
    n = len(levels)
    out = np.repeat(levels, spu)
    half = rise_ui / 2.0
    if half <= 0 or n == 0:
        return out
    offs = np.arange(spu) / float(spu)  # sample offset within each bit, in UI
    lead = np.nonzero(offs < half)[0]   # still ramping from the previous level
    tail = np.nonzero(offs > 1.0 - half)[0]  # ramping toward the next level
    prevs = np.concatenate(([prev_level], levels[:-1]))
    nexts = np.concatenate((levels[1:], [next_level]))
    base = np.arange(n)[:, None] * spu
    if len(lead):
        frac = offs[lead] / rise_ui + 0.5
        pos = (base + lead[None, :]).ravel()
        out[pos] = (prevs[:, None] + (levels - prevs)[:, None] * frac[None, :]).ravel()
    if len(tail):
        frac = (offs[tail] - 1.0) / rise_ui + 0.5
        pos = (base + tail[None, :]).ravel()
        out[pos] = (levels[:, None] + (nexts - levels)[:, None] * frac[None, :]).ravel()
    return out


def drive(bits, cfg: ChannelConfig, ui_s=UI_S, samples_per_ui=SAMPLES_PER_UI):
    """Render the TX output for a bit sequence (one bit per UI, DDR)."""
    levels = _levels_from_bits(bits, cfg.swing)
    samples = _render_trapezoid(levels, samples_per_ui, cfg.rise_time_ui,
                                levels[0], levels[-1])
    return Waveform(0.0, ui_s / samples_per_ui, samples)


def _lowpass_coeffs(pole_hz, dt_s):
    alpha = 1.0 - math.exp(-2.0 * math.pi * pole_hz * dt_s)
    return [alpha], [1.0, alpha - 1.0]


def channel_apply(w: Waveform, cfg: ChannelConfig, rng=None):
    """Delay, low-pass and add noise; identity when the trace length is 0."""
    samples = w.samples
    pole = cfg.pole_hz()
    if pole is not None:
        b, a = _lowpass_coeffs(pole, w.dt_s)
        zi = np.array([(1.0 - b[0]) * samples[0]])
        samples, _ = signal.lfilter(b, a, samples, zi=zi)
    if cfg.noise_sigma_v > 0:
        if rng is None:
            rng = np.random.default_rng(0)
        samples = samples + rng.normal(0.0, cfg.noise_sigma_v, len(samples))
    return Waveform(w.t0_s + cfg.prop_delay_s, w.dt_s, np.asarray(samples))


def sample(w: Waveform, t, cfg: ChannelConfig | None = None, rng=None):
    """Comparator decision at time t: sign of the differential voltage."""
    cfg = cfg or ChannelConfig()
    if rng is not None and cfg.rj_sigma_s > 0:
        t = t + rng.normal(0.0, cfg.rj_sigma_s)
    v = float(w.value_at(t)) + cfg.comparator_offset_v
    if v > 0:
        return 1
    if v < 0:
        return 0
    return cfg.tie_bit


@dataclass
class EyeDiagram:
    counts: np.ndarray       # phase_bin x voltage_bin histogram
    phase_edges: np.ndarray  # UI, over a 2-UI window
    volt_edges: np.ndarray
    eye_height_v: float
    eye_width_ui: float
    best_phase_ui: float


def eye_capture(w: Waveform, ui_s=UI_S, n_ui=DEFAULT_EYE_UIS, volt_bins=64):
    """Fold a waveform modulo 2 UI and measure the eye opening.

    Height is the vertical opening (smallest high sample minus largest
    low sample) at the best phase; width is the contiguous phase span
    around it where the opening stays within 0.1% of the best.
    """
    spu = int(round(ui_s / w.dt_s))
    span_ui = (len(w.samples) - 1) / spu
    if span_ui < n_ui:
        raise InsufficientSpan(f"waveform spans {span_ui:.1f} UI, need {n_ui}")
    window = 2 * spu
    n_traces = int(n_ui) // 2
    folded = w.samples[:n_traces * window].reshape(n_traces, window)

    openings = np.full(window, -np.inf)
    for col in range(window):
        v = folded[:, col]
        hi = v[v > 0]
        lo = v[v <= 0]  # a trace sitting at 0 V pierces the opening
        if len(hi) and len(lo):
            openings[col] = hi.min() - lo.max()
    best = int(np.argmax(openings))
    height = float(max(openings[best], 0.0))

    # width: run of near-best opening around the best phase, circular
    if height > 0:
        ok = openings >= 0.999 * height
        width = 1
        i = best
        while width < window and ok[(i - 1) % window]:
            i -= 1
            width += 1
        j = best
        while width < window and ok[(j + 1) % window]:
            j += 1
            width += 1
        width_ui = width / spu
    else:
        width_ui = 0.0

    phases = (np.arange(n_traces * window) % window) / spu
    vmin = float(w.samples.min())
    vmax = max(float(w.samples.max()), vmin + 1e-12)
    counts, pe, ve = np.histogram2d(
        phases, w.samples[:n_traces * window],
        bins=[window, volt_bins],
        range=[[0.0, 2.0], [vmin, vmax]])
    return EyeDiagram(counts, pe, ve, height, width_ui, best / spu)


def _calibration_eye_height(tau_s):
    rng = np.random.default_rng(20210906)
    bits = rng.integers(0, 2, 480)
    cfg = ChannelConfig(swing=_CAL_SWING, trace_length_cm=0.0,
                        lowpass_pole_hz=1.0 / (2.0 * math.pi * tau_s))
    w = channel_apply(drive(bits, cfg), cfg)
    return eye_capture(w, n_ui=400).eye_height_v


@functools.lru_cache(maxsize=None)
def _anchor_tau(length_cm, target_v):
    f = lambda tau: _calibration_eye_height(tau) - target_v
    return optimize.brentq(f, 1e-12, 2e-9, xtol=1e-15)


@functools.lru_cache(maxsize=None)
def pole_for_length(length_cm):
    """Trace length -> low-pass pole, from the two-point calibration map.

    Log-log interpolation between the calibrated anchors, extrapolated
    beyond them; zero length means no filtering at all.
    """
    if length_cm <= 0:
        return None
    (l1, t1), (l2, t2) = _CAL_ANCHORS
    tau1 = _anchor_tau(l1, t1)
    tau2 = _anchor_tau(l2, t2)
    slope = (math.log(tau2) - math.log(tau1)) / (math.log(l2) - math.log(l1))
    tau = math.exp(math.log(tau1) + slope * (math.log(length_cm) - math.log(l1)))
    return 1.0 / (2.0 * math.pi * tau)


class StreamingNrz:
    """Chunk-rendered TX waveform for long closed-loop runs.

    Levels are pushed in bursts (one per bit period, None while the
    driver is idle); ``voltage`` evaluates the delayed, filtered, noisy
    waveform at arbitrary times within the rendered window.  One pending
    level is always held back so boundary ramps see their next level.
    """

    def __init__(self, cfg: ChannelConfig, tx_ui_s=UI_S,
                 samples_per_ui=SAMPLES_PER_UI, seed=0, chunk_bits=256,
                 bit_source=None):
        self.cfg = cfg
        self.tx_ui_s = tx_ui_s
        self.spu = samples_per_ui
        self.dt_s = tx_ui_s / samples_per_ui
        self._chunk_bits = chunk_bits
        self._bit_source = bit_source
        self._rng = np.random.default_rng([seed, 0xC0])
        pole = cfg.pole_hz()
        self._ba = _lowpass_coeffs(pole, self.dt_s) if pole is not None else None
        self._zi = None
        self._pending = []        # levels not yet rendered
        self._nbits = 0           # bits fully rendered
        self._prev_level = 0.0
        self._grid_t0 = 0.0       # time of rendered sample 0 (pre-delay)
        self._tail = np.zeros(0)  # rendered samples kept for interpolation
        self._keep = chunk_bits * samples_per_ui * 3

    def push_bits(self, bits):
        self.push_levels(_levels_from_bits(bits, self.cfg.swing))

    def push_levels(self, levels):
        self._pending.extend(0.0 if v is None else float(v) for v in levels)
        while len(self._pending) > self._chunk_bits:
            self._render(self._pending[:self._chunk_bits],
                         self._pending[self._chunk_bits])
            self._pending = self._pending[self._chunk_bits:]

    def _render(self, levels, next_level):
        levels = np.asarray(levels, dtype=float)
        raw = _render_trapezoid(levels, self.spu, self.cfg.rise_time_ui,
                                self._prev_level, next_level)
        self._prev_level = levels[-1]
        if self._ba is not None:
            b, a = self._ba
            if self._zi is None:
                self._zi = np.array([(1.0 - b[0]) * raw[0]])
            raw, self._zi = signal.lfilter(b, a, raw, zi=self._zi)
        if self.cfg.noise_sigma_v > 0:
            raw = raw + self._rng.normal(0.0, self.cfg.noise_sigma_v, len(raw))
        self._nbits += len(levels)
        self._tail = np.concatenate((self._tail, raw))
        if len(self._tail) > self._keep:
            drop = len(self._tail) - self._keep
            self._tail = self._tail[drop:]
            self._grid_t0 += drop * self.dt_s

    @property
    def frontier_s(self):
        """Latest time (post-delay) the waveform is valid for."""
        return (self._nbits * self.tx_ui_s - self.dt_s) + self.cfg.prop_delay_s

    @property
    def reference_delay_s(self):
        """Where transmitted bit centers effectively sit at the receiver:
        propagation delay plus the low-pass transition delay (a first-order
        step crosses zero ln2 time constants after the input edge)."""
        pole = self.cfg.pole_hz()
        group = math.log(2.0) / (2.0 * math.pi * pole) if pole is not None else 0.0
        return self.cfg.prop_delay_s + group

    def ensure(self, t_s):
        """Render forward (draining pending levels, then the bit source)."""
        while self.frontier_s <= t_s:
            if len(self._pending) > 1:
                take = min(self._chunk_bits, len(self._pending) - 1)
                self._render(self._pending[:take], self._pending[take])
                self._pending = self._pending[take:]
            elif self._bit_source is not None:
                self.push_bits(self._bit_source(self._chunk_bits))
            else:
                raise OutOfRange(f"waveform not rendered up to {t_s * 1e9:.3f} ns")

    def voltage(self, times):
        times = np.asarray(times, dtype=float)
        self.ensure(float(times.max()))
        rel = (times - self.cfg.prop_delay_s - self._grid_t0) / self.dt_s
        if np.any(rel < 0):
            raise OutOfRange("sample time before retained waveform window")
        return np.interp(rel, np.arange(len(self._tail)), self._tail)

    def sample_bits(self, times, rng=None):
        """Comparator decisions at the given times (with jitter if set)."""
        times = np.asarray(times, dtype=float)
        if rng is not None and self.cfg.rj_sigma_s > 0:
            times = times + rng.normal(0.0, self.cfg.rj_sigma_s, len(times))
        v = self.voltage(times) + self.cfg.comparator_offset_v
        # interpolation roundoff near an exact transition must not break ties
        v = np.where(np.abs(v) <= 1e-9, 0.0, v)
        bits = np.where(v > 0, 1, np.where(v < 0, 0, self.cfg.tie_bit))
        return bits.astype(np.int8)
