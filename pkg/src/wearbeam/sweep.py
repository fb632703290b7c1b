"""Linear swept-sine excitation and impulse-response estimation.

The measurement chain is: play ``generate_sweep(spec)``, record, average the
aligned repeats with ``average_repeats`` and recover the impulse response
with ``deconvolve``.
"""

from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from .dataset import ImpulseResponse
from .errors import SweepError

# regularization floor relative to the peak sweep power
_EPS_REL = 1e-12
# width of the raised-cosine skirts around the excited band, in octaves
_SKIRT_OCT = 1.0 / 12.0


@dataclass(frozen=True)
class SweepSpec:
    f_start_hz: float = 20.0
    f_end_hz: float = 24000.0
    duration_s: float = 10.0
    repeats: int = 3
    gap_s: float = 0.5
    sample_rate_hz: int = 48000
    sweep_law: str = "linear"

    def __post_init__(self):
        if self.sweep_law != "linear":
            raise SweepError(f"only linear sweeps are supported, got {self.sweep_law!r}")
        if self.sample_rate_hz <= 0:
            raise SweepError("sample rate must be positive")
        if not 0 < self.f_start_hz < self.f_end_hz <= self.sample_rate_hz / 2:
            raise SweepError("need 0 < f_start < f_end <= sample_rate / 2")
        if self.duration_s <= 0 or self.repeats < 1 or self.gap_s < 0:
            raise SweepError("duration must be positive, repeats >= 1, gap >= 0")
        for name in ("duration_s", "gap_s"):
            n = getattr(self, name) * self.sample_rate_hz
            if abs(n - round(n)) > 1e-6:
                raise SweepError(f"{name} * sample_rate must be a whole number of samples")

    @property
    def sweep_samples(self):
        return int(round(self.duration_s * self.sample_rate_hz))

    @property
    def gap_samples(self):
        return int(round(self.gap_s * self.sample_rate_hz))

    @property
    def period_samples(self):
        """Length of one repeat including the silent gap that follows it."""
        return self.sweep_samples + self.gap_samples

    @property
    def total_samples(self):
        return self.repeats * self.sweep_samples + (self.repeats - 1) * self.gap_samples


def single_sweep(spec):
    """One linear sweep with unit peak amplitude."""
    n = spec.sweep_samples
    t = np.arange(n) / spec.sample_rate_hz
    rate = (spec.f_end_hz - spec.f_start_hz) / spec.duration_s
    phase = 2 * np.pi * (spec.f_start_hz * t + 0.5 * rate * t**2)
    sweep = np.sin(phase)
    return sweep / np.max(np.abs(sweep))


def generate_sweep(spec):
    """Excitation signal: ``spec.repeats`` sweeps separated by ``spec.gap_s`` of silence."""
    one = single_sweep(spec)
    out = np.zeros(spec.total_samples)
    for r in range(spec.repeats):
        start = r * spec.period_samples
        out[start:start + spec.sweep_samples] = one
    return out


def average_repeats(recording, spec):
    """Sample-wise mean of the repeats, one period (sweep + gap) long.

    Repeat ``r`` starts at ``r * period_samples``. A recording that stops
    right after the last sweep (no trailing gap) is zero-padded, so the last
    repeat contributes nothing to its missing tail.
    """
    recording = np.asarray(recording, dtype=np.float64)
    if recording.ndim != 1:
        raise SweepError("recording must be one-dimensional")
    if recording.size < spec.total_samples:
        raise SweepError(
            f"recording has {recording.size} samples, expected at least {spec.total_samples}"
            f" for {spec.repeats} repeats"
        )
    period = spec.period_samples
    needed = spec.repeats * period
    if recording.size < needed:
        recording = np.concatenate([recording, np.zeros(needed - recording.size)])
    return recording[:needed].reshape(spec.repeats, period).mean(axis=0)


def band_mask(freqs, f_start, f_end, skirt_oct=_SKIRT_OCT):
    """1 inside [f_start, f_end], raised-cosine skirts, 0 beyond."""
    freqs = np.asarray(freqs, dtype=np.float64)
    mask = ((freqs >= f_start) & (freqs <= f_end)).astype(np.float64)
    lo = f_start * 2.0 ** (-skirt_oct)
    sel = (freqs > lo) & (freqs < f_start)
    mask[sel] = 0.5 - 0.5 * np.cos(np.pi * np.log2(freqs[sel] / lo) / skirt_oct)
    hi = f_end * 2.0 ** skirt_oct
    sel = (freqs > f_end) & (freqs < hi)
    mask[sel] = 0.5 + 0.5 * np.cos(np.pi * np.log2(freqs[sel] / f_end) / skirt_oct)
    return mask


def inverse_filter(spec, n_fft):
    """Band-limited regularized inverse of the sweep spectrum on an rfft grid."""
    s = sfft.rfft(single_sweep(spec), n_fft)
    freqs = np.fft.rfftfreq(n_fft, 1.0 / spec.sample_rate_hz)
    power = np.abs(s) ** 2
    mask = band_mask(freqs, spec.f_start_hz, spec.f_end_hz)
    return mask * np.conj(s) / (power + _EPS_REL * power.max())


def deconvolve(recording, spec, out_len_s=0.5, mic_id=0):
    """Estimate the impulse response from a single-sweep recording.

    The recording is the system's response to one sweep (the output of
    ``average_repeats``). Spectral division uses a linear (non-wrapping)
    transform length; the estimate is band-limited to the sweep range.
    """
    recording = np.asarray(recording, dtype=np.float64)
    if recording.ndim != 1 or recording.size == 0:
        raise SweepError("recording must be a non-empty 1-D sequence")
    if not np.any(recording):
        raise SweepError("recording is all zeros; nothing to deconvolve")
    out_len = int(round(out_len_s * spec.sample_rate_hz))
    if out_len <= 0:
        raise SweepError("out_len_s must be positive")
    if out_len > recording.size:
        raise SweepError(
            f"requested {out_len} samples but recording only supports {recording.size}"
        )
    n_fft = sfft.next_fast_len(recording.size + spec.sweep_samples, real=True)
    spectrum = sfft.rfft(recording, n_fft) * inverse_filter(spec, n_fft)
    ir = sfft.irfft(spectrum, n_fft)[:out_len]
    return ImpulseResponse(ir, spec.sample_rate_hz, mic_id)


def in_band_error(estimate, reference, spec, n_fft=None):
    """Relative L2 error between two responses over the sweep's band.

    Both sequences are transformed on a common grid and compared only at
    bins inside [f_start, f_end].
    """
    estimate = np.asarray(estimate, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if n_fft is None:
        n_fft = max(estimate.size, reference.size)
    freqs = np.fft.rfftfreq(n_fft, 1.0 / spec.sample_rate_hz)
    band = (freqs >= spec.f_start_hz) & (freqs <= spec.f_end_hz)
    e = sfft.rfft(estimate, n_fft)[band]
    r = sfft.rfft(reference, n_fft)[band]
    return float(np.linalg.norm(e - r) / np.linalg.norm(r))
