"""Frequency-domain MVDR beamforming.

Weights follow the convention ``Y = W^H X`` with the distortionless
constraint taken relative to channel 1 (the left-ear reference)::

    W(w) = conj(A_1(w)) R^-1 A / (A^H R^-1 A)

so the target reaches the output exactly as it reaches microphone 1.
"""

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataset import ImpulseResponse
from .errors import SingularCovarianceError, STFTConfigError
from .stft import STFTConfig, istft, stft

DEFAULT_WINDOW_S = 0.032
DEFAULT_LOADING_DB = 10.0
_HERMITIAN_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class SteeringSpectrum:
    """Per-bin transfer-function vectors, shape (bins, mics)."""

    vectors: np.ndarray
    mic_ids: tuple = ()
    window_len_s: Optional[float] = None
    sample_rate_hz: Optional[int] = None

    def __post_init__(self):
        a = np.array(self.vectors, dtype=np.complex128)
        if a.ndim != 2:
            raise ValueError("steering vectors must be shaped (bins, mics)")
        if not np.all(np.isfinite(a)):
            raise ValueError("steering vectors must be finite")
        object.__setattr__(self, "vectors", a)
        object.__setattr__(self, "mic_ids", tuple(self.mic_ids))

    @property
    def n_bins(self):
        return self.vectors.shape[0]

    @property
    def n_mics(self):
        return self.vectors.shape[1]


@dataclass(frozen=True, eq=False)
class CovarianceSpectrum:
    """Per-bin Hermitian noise PSD matrices, shape (bins, mics, mics).

    ``loading`` is the per-bin diagonal load already included in
    ``matrices``.
    """

    matrices: np.ndarray
    loading: np.ndarray = None
    rank_deficient: bool = False

    def __post_init__(self):
        r = np.array(self.matrices, dtype=np.complex128)
        if r.ndim != 3 or r.shape[1] != r.shape[2]:
            raise ValueError("covariance must be shaped (bins, mics, mics)")
        scale = np.max(np.abs(r), axis=(1, 2), keepdims=True)
        asym = np.abs(r - np.conj(np.swapaxes(r, 1, 2)))
        if np.any(asym > _HERMITIAN_RTOL * np.maximum(scale, np.finfo(float).tiny)):
            raise ValueError("covariance matrices are not Hermitian")
        loading = np.zeros(r.shape[0]) if self.loading is None else np.broadcast_to(
            np.asarray(self.loading, dtype=np.float64), (r.shape[0],)).copy()
        object.__setattr__(self, "matrices", r)
        object.__setattr__(self, "loading", loading)

    @property
    def n_bins(self):
        return self.matrices.shape[0]

    def min_eigenvalues(self):
        return np.linalg.eigvalsh(self.matrices)[:, 0]


@dataclass(frozen=True, eq=False)
class BeamformerWeights:
    """Per-bin weights, shape (bins, mics); output is ``W^H X``."""

    weights: np.ndarray
    mic_ids: tuple = ()
    zero_steering_bins: np.ndarray = field(default=None)
    stft: Optional[STFTConfig] = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.complex128)
        if w.ndim != 2:
            raise ValueError("weights must be shaped (bins, mics)")
        flags = (np.zeros(w.shape[0], bool) if self.zero_steering_bins is None
                 else np.asarray(self.zero_steering_bins, bool))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "mic_ids", tuple(self.mic_ids))
        object.__setattr__(self, "zero_steering_bins", flags)

    @classmethod
    def select_channel(cls, n_bins, n_mics, channel=0, **kwargs):
        """Weights that pass one channel through unchanged."""
        w = np.zeros((n_bins, n_mics), dtype=np.complex128)
        w[:, channel] = 1.0
        return cls(w, **kwargs)

    def to_dict(self):
        return {
            "format_version": 1,
            "mic_ids": list(self.mic_ids),
            "stft": None if self.stft is None else self.stft.to_dict(),
            "zero_steering_bins": np.flatnonzero(self.zero_steering_bins).tolist(),
            "real": self.weights.real.tolist(),
            "imag": self.weights.imag.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        w = np.asarray(doc["real"], dtype=np.float64) + 1j * np.asarray(doc["imag"], np.float64)
        flags = np.zeros(w.shape[0], bool)
        flags[doc.get("zero_steering_bins", [])] = True
        cfg = doc.get("stft")
        return cls(w, tuple(doc.get("mic_ids", ())), flags,
                   None if cfg is None else STFTConfig(**cfg))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def truncate_ir(ir: ImpulseResponse, window_len_s=DEFAULT_WINDOW_S, fade_fraction=0.1):
    """Keep the first ``window_len_s`` seconds with a raised-cosine fade-out.

    The fade covers the final ``fade_fraction`` of the window and ends just
    short of zero, so no hard edge is left.
    """
    if window_len_s <= 0:
        raise ValueError("window length must be positive")
    n = int(round(window_len_s * ir.sample_rate_hz))
    if n > len(ir):
        raise ValueError(f"window of {n} samples is longer than the IR ({len(ir)} samples)")
    out = ir.samples[:n].copy()
    n_fade = int(round(fade_fraction * n))
    if n_fade > 0:
        k = np.arange(1, n_fade + 1)
        out[n - n_fade:] *= 0.5 + 0.5 * np.cos(np.pi * k / (n_fade + 1))
    return ImpulseResponse(out, ir.sample_rate_hz, ir.mic_id)


def steering_from_irs(irs: Sequence[ImpulseResponse], fft_size) -> SteeringSpectrum:
    """Stack the zero-padded spectra of per-microphone responses."""
    if not irs:
        raise ValueError("need at least one impulse response")
    rate, length = irs[0].sample_rate_hz, len(irs[0])
    for ir in irs:
        if ir.sample_rate_hz != rate or len(ir) != length:
            raise ValueError("impulse responses must share sample rate and length")
    if fft_size < length:
        raise ValueError(f"fft_size {fft_size} is shorter than the IRs ({length} samples)")
    stacked = np.stack([ir.samples for ir in irs])
    return SteeringSpectrum(
        np.fft.rfft(stacked, fft_size, axis=-1).T,
        tuple(ir.mic_id for ir in irs),
        length / rate,
        rate,
    )


def noise_covariance(noise_stft) -> CovarianceSpectrum:
    """Sample covariance per bin from STFT frames shaped (mics, frames, bins)."""
    x = np.asarray(noise_stft)
    if x.ndim != 3:
        raise ValueError("noise STFT must be shaped (mics, frames, bins)")
    m, t, _ = x.shape
    if t == 0:
        raise ValueError("no frames to estimate a covariance from")
    rank_deficient = t < m
    if rank_deficient:
        warnings.warn(f"only {t} frames for {m} microphones; covariance is rank deficient",
                      stacklevel=2)
    xf = np.transpose(x, (2, 0, 1))  # bins, mics, frames
    r = xf @ np.conj(np.swapaxes(xf, 1, 2)) / t
    r = 0.5 * (r + np.conj(np.swapaxes(r, 1, 2)))
    return CovarianceSpectrum(r, rank_deficient=rank_deficient)


def apply_loading(cov: CovarianceSpectrum, speech_power,
                  offset_db=DEFAULT_LOADING_DB) -> CovarianceSpectrum:
    """Add ``speech_power * 10^(-offset_db/10)`` to every diagonal.

    ``speech_power`` is a scalar or one value per bin.
    """
    p = np.broadcast_to(np.asarray(speech_power, dtype=np.float64), (cov.n_bins,))
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("speech power must be finite and non-negative")
    delta = p * 10.0 ** (-offset_db / 10.0)
    m = cov.matrices.shape[1]
    loaded = cov.matrices + delta[:, None, None] * np.eye(m)[None]
    return CovarianceSpectrum(loaded, cov.loading + delta, cov.rank_deficient)


def loading_power(steering: SteeringSpectrum, target_psd, mode="per_bin"):
    """Average target speech power at the microphones.

    ``per_bin`` gives mean_m |A_m(w)|^2 * S(w); ``broadband`` replaces it by
    its mean over bins.
    """
    p = np.mean(np.abs(steering.vectors) ** 2, axis=1) * np.asarray(target_psd, np.float64)
    if mode == "per_bin":
        return p
    if mode == "broadband":
        return np.full_like(p, p.mean())
    raise ValueError(f"unknown loading mode {mode!r}")


def _cholesky(r):
    try:
        return np.linalg.cholesky(r)
    except np.linalg.LinAlgError:
        bad = []
        for k in range(r.shape[0]):
            try:
                np.linalg.cholesky(r[k])
            except np.linalg.LinAlgError:
                bad.append(k)
        raise SingularCovarianceError(bad) from None


def _cho_solve(lower, b):
    """Solve (L L^H) x = b per bin by forward and back substitution."""
    n_bins, m = b.shape
    y = np.empty_like(b)
    for i in range(m):
        acc = b[:, i] - np.einsum("kj,kj->k", lower[:, i, :i], y[:, :i])
        y[:, i] = acc / lower[:, i, i]
    x = np.empty_like(b)
    upper = np.conj(np.swapaxes(lower, 1, 2))
    for i in reversed(range(m)):
        acc = y[:, i] - np.einsum("kj,kj->k", upper[:, i, i + 1:], x[:, i + 1:])
        x[:, i] = acc / upper[:, i, i]
    return x


def mvdr_weights(steering: SteeringSpectrum, cov: CovarianceSpectrum,
                 stft_config: Optional[STFTConfig] = None) -> BeamformerWeights:
    """MVDR weights with unity gain relative to channel 1.

    Each bin is solved through a Cholesky factorization of R. Bins whose
    steering vector is exactly zero get zero weights and are flagged.

    Raises
    ------
    SingularCovarianceError
        R is not positive definite at some bin; the offending bin indices are
        attached.
    """
    a = steering.vectors
    r = cov.matrices
    if r.shape[0] != a.shape[0] or r.shape[1] != a.shape[1]:
        raise ValueError(f"steering {a.shape} and covariance {r.shape} do not match")
    lower = _cholesky(r)
    r_inv_a = _cho_solve(lower, a)
    denom = np.real(np.einsum("km,km->k", np.conj(a), r_inv_a))
    zero = ~np.any(a != 0, axis=1)
    safe = np.where(zero, 1.0, denom)
    w = np.conj(a[:, :1]) * r_inv_a / safe[:, None]
    w[zero] = 0.0
    return BeamformerWeights(w, steering.mic_ids, zero, stft_config)


def beamform(weights: BeamformerWeights, x, stft_config: STFTConfig = None):
    """Filter a (mics, samples) signal: ``Y = W^H X`` per STFT bin, then overlap-add."""
    cfg = stft_config or weights.stft or STFTConfig()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != weights.weights.shape[1]:
        raise ValueError(f"signal has shape {x.shape}; expected ({weights.weights.shape[1]}, n)")
    if weights.weights.shape[0] != cfg.n_bins:
        raise STFTConfigError(
            f"weights have {weights.weights.shape[0]} bins but the STFT has {cfg.n_bins}"
        )
    spec = stft(x, cfg)  # mics, frames, bins
    y_spec = np.einsum("fm,mtf->tf", np.conj(weights.weights), spec)
    return istft(y_spec, cfg, x.shape[1])
