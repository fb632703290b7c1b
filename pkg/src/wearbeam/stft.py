"""Weighted overlap-add STFT with a perfect-reconstruction check."""

from dataclasses import asdict, dataclass

import numpy as np
from scipy import fft as sfft

from .errors import STFTConfigError

WINDOWS = ("sqrt_hann", "rect")


def _window(name, n):
    if name == "sqrt_hann":
        # periodic Hann, so that shifted copies sum to a constant
        return np.sqrt(0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n))
    if name == "rect":
        return np.ones(n)
    raise STFTConfigError(f"unknown window {name!r}; choose from {WINDOWS}")


@dataclass(frozen=True)
class STFTConfig:
    fft_size: int = 4096
    hop: int = 2048
    window: str = "sqrt_hann"

    def __post_init__(self):
        if self.fft_size <= 0 or self.hop <= 0 or self.hop > self.fft_size:
            raise STFTConfigError("need 0 < hop <= fft_size")
        wsum = self.overlap_sum()
        if np.ptp(wsum) > 1e-10 * np.max(wsum) or np.max(wsum) <= 0:
            raise STFTConfigError(
                f"{self.window} window with fft_size={self.fft_size}, hop={self.hop}"
                " does not satisfy the overlap-add reconstruction condition"
            )

    @property
    def n_bins(self):
        return self.fft_size // 2 + 1

    def analysis_window(self):
        return _window(self.window, self.fft_size)

    def synthesis_window(self):
        return _window(self.window, self.fft_size) / self.overlap_sum()[0]

    def overlap_sum(self):
        """Sum over frame shifts of analysis*synthesis windows, one hop long."""
        w = _window(self.window, self.fft_size) ** 2
        pad = (-self.fft_size) % self.hop
        return np.concatenate([w, np.zeros(pad)]).reshape(-1, self.hop).sum(axis=0)

    def to_dict(self):
        return asdict(self)


def _padding(n, cfg):
    front = cfg.fft_size - cfg.hop
    total = n + 2 * front
    n_frames = int(np.ceil(max(total - cfg.fft_size, 0) / cfg.hop)) + 1
    back = (n_frames - 1) * cfg.hop + cfg.fft_size - n - front
    return front, back, n_frames


def stft(x, cfg: STFTConfig):
    """Short-time spectra of ``x`` shaped (..., frames, bins).

    The signal is padded so every sample is covered by the full set of
    overlapping frames, which makes ``istft(stft(x))`` exact.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    front, back, n_frames = _padding(n, cfg)
    pad = [(0, 0)] * (x.ndim - 1) + [(front, back)]
    xp = np.pad(x, pad)
    idx = np.arange(n_frames)[:, None] * cfg.hop + np.arange(cfg.fft_size)[None, :]
    frames = xp[..., idx] * cfg.analysis_window()
    return sfft.rfft(frames, axis=-1)


def istft(spec, cfg: STFTConfig, length):
    """Overlap-add inverse of ``stft``, trimmed to ``length`` samples."""
    spec = np.asarray(spec)
    if spec.shape[-1] != cfg.n_bins:
        raise STFTConfigError(f"expected {cfg.n_bins} bins, got {spec.shape[-1]}")
    frames = sfft.irfft(spec, cfg.fft_size, axis=-1) * cfg.synthesis_window()
    n_frames = frames.shape[-2]
    front, back, expected = _padding(length, cfg)
    if n_frames != expected:
        raise STFTConfigError(f"{n_frames} frames cannot reconstruct {length} samples")
    out = np.zeros(frames.shape[:-2] + ((n_frames - 1) * cfg.hop + cfg.fft_size,))
    for t in range(n_frames):
        out[..., t * cfg.hop:t * cfg.hop + cfg.fft_size] += frames[..., t, :]
    return out[..., front:front + length]


def long_term_psd(x, cfg: STFTConfig):
    """Mean |STFT|^2 over frames, per bin."""
    return np.mean(np.abs(stft(x, cfg)) ** 2, axis=-2)
