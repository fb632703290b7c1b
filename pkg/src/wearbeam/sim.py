"""Beamforming trials over wearable arrays.

A trial places a target and five interferers at six distinct grid angles,
mixes their clips through the full impulse responses, designs an MVDR
beamformer from 32 ms windowed responses and scores it by the SNR
improvement over the left-ear reference microphone.
"""

import csv
import enum
import hashlib
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import signal

from .audio import read_wav
from .beamformer import (
    DEFAULT_LOADING_DB,
    DEFAULT_WINDOW_S,
    CovarianceSpectrum,
    apply_loading,
    beamform,
    loading_power,
    mvdr_weights,
    steering_from_irs,
    truncate_ir,
)
from .dataset import AZIMUTHS_DEG, ImpulseResponse, MeasurementKey, load_ir, sha256_file
from .errors import SimulationError
from .stft import STFTConfig, long_term_psd
from .synth import speech_like_clip

N_SOURCES = 6


class SnrOutcome(str, enum.Enum):
    """Sentinels for the degenerate cases of the SNR-improvement ratio."""

    PERFECT = "perfect"  # output error is exactly zero
    ALREADY_CLEAN = "already_clean"  # reference channel error is exactly zero


def delta_snr(d, x1, y):
    """SNR improvement of ``y`` over ``x1`` with respect to the clean ``d``, in dB.

    ``10 log10( sum (d - x1)^2 / sum (d - y)^2 )``. All three are aligned at
    sample 0 and trimmed to the shortest. Returns a ``SnrOutcome`` instead
    of an infinite or undefined value.
    """
    d, x1, y = (np.asarray(v, dtype=np.float64) for v in (d, x1, y))
    n = min(d.size, x1.size, y.size)
    if n == 0:
        raise SimulationError("empty signal")
    d, x1, y = d[:n], x1[:n], y[:n]
    before = float(np.sum((d - x1) ** 2))
    after = float(np.sum((d - y) ** 2))
    if before == 0.0:
        return SnrOutcome.ALREADY_CLEAN
    if after == 0.0:
        return SnrOutcome.PERFECT
    return 10.0 * math.log10(before / after)


def snr_db(d, x):
    n = min(len(d), len(x))
    d, x = np.asarray(d[:n]), np.asarray(x[:n])
    err = float(np.sum((d - x) ** 2))
    return math.inf if err == 0 else 10.0 * math.log10(float(np.sum(d**2)) / err)


def simulate_mixture(spec, irs, clips):
    """Convolutive mixture ``x[n] = sum_k a[k] s[n-k]`` over all six sources.

    Parameters
    ----------
    spec : TrialSpec
    irs : mapping ``(azimuth, mic_id) -> ImpulseResponse``, full-length responses
    clips : sequence of 1-D arrays in source order (target first)

    Returns
    -------
    ndarray (mics, n_clip + ir_len - 1)
    """
    azimuths = spec.azimuths
    if len(clips) != len(azimuths):
        raise SimulationError(f"expected {len(azimuths)} clips, got {len(clips)}")
    stacks, rate = [], None
    for az in azimuths:
        try:
            row = [irs[(az, m)] for m in spec.array]
        except KeyError as exc:
            raise SimulationError(f"missing impulse response for {exc.args[0]}") from None
        for ir in row:
            rate = ir.sample_rate_hz if rate is None else rate
            if ir.sample_rate_hz != rate:
                raise SimulationError("impulse responses have different sample rates")
        stacks.append(np.stack([ir.samples for ir in row]))
    ir_len = max(s.shape[1] for s in stacks)
    n = max(len(c) for c in clips) + ir_len - 1
    x = np.zeros((len(spec.array), n))
    for stack, clip in zip(stacks, clips):
        clip = np.asarray(clip, dtype=np.float64)
        if not np.any(clip):
            continue
        part = signal.fftconvolve(stack, clip[None, :], axes=1)
        x[:, :part.shape[1]] += part
    return x


def desired_signal(target_clip, ref_ir: ImpulseResponse):
    """Noise-free target at the reference mic through the windowed response."""
    return signal.fftconvolve(np.asarray(target_clip, dtype=np.float64), ref_ir.samples)


@dataclass(frozen=True)
class TrialSpec:
    seed: int
    target_azimuth: int
    interferer_azimuths: tuple
    clip_ids: tuple
    array: tuple
    ir_window_s: float = DEFAULT_WINDOW_S
    loading_offset_db: float = DEFAULT_LOADING_DB
    duration_s: Optional[float] = None
    trial_id: int = 0

    def __post_init__(self):
        if len(set(self.azimuths)) != N_SOURCES or len(self.azimuths) != N_SOURCES:
            raise SimulationError("need six distinct source azimuths")
        if any(a not in AZIMUTHS_DEG for a in self.azimuths):
            raise SimulationError("source azimuths must be on the 24-angle grid")
        if len(self.clip_ids) != N_SOURCES or len(set(self.clip_ids)) != N_SOURCES:
            raise SimulationError("need six distinct clips")
        if not self.array:
            raise SimulationError("array is empty")

    @property
    def azimuths(self):
        return (self.target_azimuth,) + tuple(self.interferer_azimuths)


@dataclass(frozen=True)
class TrialResult:
    trial_id: int
    config: str
    target_azimuth: int
    delta_snr_db: Optional[float]
    input_snr_db: float
    status: str = "ok"  # or one of SnrOutcome values
    n_zero_steering_bins: int = 0
    spec: Optional[TrialSpec] = field(default=None, compare=False, repr=False)


class ClipPool:
    """Mono speech clips addressed by id, at a common sample rate."""

    def __init__(self, clips, sample_rate_hz, hashes=None):
        self._clips = {str(k): np.asarray(v, dtype=np.float64) for k, v in clips.items()}
        self.sample_rate_hz = int(sample_rate_hz)
        if hashes is None:
            hashes = {k: hashlib.sha256(v.tobytes()).hexdigest() for k, v in self._clips.items()}
        self.hashes = dict(hashes)

    @property
    def ids(self):
        return tuple(sorted(self._clips))

    def __len__(self):
        return len(self._clips)

    def get(self, clip_id, sample_rate_hz=None):
        clip = self._clips[clip_id]
        if sample_rate_hz is None or sample_rate_hz == self.sample_rate_hz:
            return clip
        g = math.gcd(int(sample_rate_hz), self.sample_rate_hz)
        return signal.resample_poly(clip, int(sample_rate_hz) // g, self.sample_rate_hz // g)

    @property
    def corpus_hash(self):
        digest = hashlib.sha256()
        for k in self.ids:
            digest.update(f"{k}:{self.hashes[k]}\n".encode())
        return digest.hexdigest()

    @classmethod
    def synthetic(cls, n_clips=20, duration_s=10.0, sample_rate_hz=16000, seed=0):
        """Deterministic pool of speech-like clips (stand-in for a speech corpus)."""
        clips = {}
        for i in range(n_clips):
            rng = np.random.default_rng([seed, i])
            clips[f"synth{i:03d}"] = speech_like_clip(duration_s, sample_rate_hz, rng)
        return cls(clips, sample_rate_hz)

    @classmethod
    def from_manifest(cls, path):
        """Load a clip manifest::

            {"format_version": 1, "sample_rate_hz": 48000,
             "clips": [{"id": "p225_001", "file": "p225_001.wav",
                        "duration_s": 10.0, "sha256": "..."}]}
        """
        path = Path(path)
        doc = json.loads(path.read_text())
        clips, hashes, rate = {}, {}, doc.get("sample_rate_hz")
        for row in doc["clips"]:
            file = path.parent / row["file"]
            digest = sha256_file(file)
            if row.get("sha256") and row["sha256"] != digest:
                raise SimulationError(f"clip {row['id']} checksum mismatch")
            file_rate, data = read_wav(file)
            if rate is None:
                rate = file_rate
            if file_rate != rate:
                g = math.gcd(file_rate, rate)
                data = signal.resample_poly(data, rate // g, file_rate // g, axis=0)
            clips[row["id"]] = data[:, 0]
            hashes[row["id"]] = digest
        return cls(clips, rate, hashes)


class ManifestIRSource:
    """IR provider over one (subject, wear configuration) slice of a dataset."""

    def __init__(self, manifest, subject, wear_config="bare"):
        self.manifest = manifest
        self.subject = subject
        self.wear_config = wear_config
        self.sample_rate_hz = manifest.sample_rate_hz
        self._load = lru_cache(maxsize=None)(self._load_uncached)

    def _load_uncached(self, mic_id, azimuth):
        return load_ir(self.manifest, MeasurementKey(self.subject, self.wear_config, mic_id,
                                                      azimuth))

    def ir(self, mic_id, azimuth):
        return self._load(mic_id, azimuth)


@dataclass(frozen=True)
class TrialConfig:
    """Everything a batch of trials needs besides the seed.

    ``ir_source`` is any object with ``sample_rate_hz`` and an
    ``ir(mic_id, azimuth)`` method, e.g. a SyntheticBodyModel or a
    ManifestIRSource.
    """

    label: str
    array: tuple
    ir_source: object
    clips: ClipPool
    ir_window_s: float = DEFAULT_WINDOW_S
    loading_offset_db: float = DEFAULT_LOADING_DB
    loading_mode: str = "per_bin"
    stft: STFTConfig = field(default_factory=STFTConfig)
    duration_s: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "array", tuple(int(m) for m in self.array))
        if not self.array:
            raise SimulationError(f"{self.label}: array is empty")
        if len(set(self.array)) != len(self.array):
            raise SimulationError(f"{self.label}: duplicate microphones in array")
        if len(self.clips) < N_SOURCES:
            raise SimulationError(f"clip pool has {len(self.clips)} clips; need {N_SOURCES}")
        n_win = int(round(self.ir_window_s * self.ir_source.sample_rate_hz))
        if n_win > self.stft.fft_size:
            raise SimulationError("IR window does not fit in the STFT frame")


def make_trial_spec(config: TrialConfig, trial_id, master_seed) -> TrialSpec:
    """Draw angles and clips for one trial from its own seeded stream.

    Target angle is uniform over the 24 angles; interferers are drawn
    without replacement from the remaining 23; the six clips are distinct.
    The stream depends only on ``(master_seed, trial_id)``, so arrays
    compared under the same seed see identical scenes.
    """
    seq = np.random.SeedSequence([int(master_seed) & (2**64 - 1), int(trial_id)])
    rng = np.random.default_rng(seq)
    target = int(rng.choice(AZIMUTHS_DEG))
    rest = [a for a in AZIMUTHS_DEG if a != target]
    interferers = tuple(int(a) for a in rng.choice(rest, N_SOURCES - 1, replace=False))
    clip_ids = tuple(str(c) for c in rng.choice(config.clips.ids, N_SOURCES, replace=False))
    return TrialSpec(
        seed=int(seq.generate_state(1, np.uint64)[0]),
        target_azimuth=target,
        interferer_azimuths=interferers,
        clip_ids=clip_ids,
        array=config.array,
        ir_window_s=config.ir_window_s,
        loading_offset_db=config.loading_offset_db,
        duration_s=config.duration_s,
        trial_id=int(trial_id),
    )


class _TrialContext:
    """Per-run caches shared by worker threads (read-mostly)."""

    def __init__(self, config):
        self.config = config
        self.rate = config.ir_source.sample_rate_hz
        self._clip = lru_cache(maxsize=None)(self._clip_uncached)
        self._psd = lru_cache(maxsize=None)(self._psd_uncached)
        self._ir = lru_cache(maxsize=None)(self._ir_uncached)

    def _clip_uncached(self, clip_id):
        clip = self.config.clips.get(clip_id, self.rate)
        if self.config.duration_s is not None:
            n = int(round(self.config.duration_s * self.rate))
            if clip.size < n:
                raise SimulationError(f"clip {clip_id} is shorter than {self.config.duration_s} s")
            clip = clip[:n]
        return clip

    def _psd_uncached(self, clip_id):
        return long_term_psd(self.clip(clip_id), self.config.stft)

    def _ir_uncached(self, mic_id, azimuth):
        full = self.config.ir_source.ir(mic_id, azimuth)
        if full.sample_rate_hz != self.rate:
            raise SimulationError("impulse response rate differs from the IR source rate")
        return full, truncate_ir(full, self.config.ir_window_s)

    def clip(self, clip_id):
        return self._clip(clip_id)

    def psd(self, clip_id):
        return self._psd(clip_id)

    def ir(self, mic_id, azimuth):
        return self._ir(mic_id, azimuth)


def interference_covariance(steerings, psds, n_mics):
    """Sum over interferers of ``S_i(w) A_i(w) A_i(w)^H``."""
    r = np.zeros((steerings[0].n_bins, n_mics, n_mics), dtype=np.complex128)
    for a, p in zip(steerings, psds):
        v = a.vectors
        r += p[:, None, None] * v[:, :, None] * np.conj(v[:, None, :])
    return CovarianceSpectrum(0.5 * (r + np.conj(np.swapaxes(r, 1, 2))))


def run_trial(spec: TrialSpec, config: TrialConfig, ctx=None) -> TrialResult:
    ctx = ctx or _TrialContext(config)
    cfg = config.stft
    full, windowed = {}, {}
    for az in spec.azimuths:
        for m in spec.array:
            full[(az, m)], windowed[(az, m)] = ctx.ir(m, az)
    clips = [ctx.clip(c) for c in spec.clip_ids]
    x = simulate_mixture(spec, full, clips)

    steer = [steering_from_irs([windowed[(az, m)] for m in spec.array], cfg.fft_size)
             for az in spec.azimuths]
    psds = [ctx.psd(c) for c in spec.clip_ids]
    cov = interference_covariance(steer[1:], psds[1:], len(spec.array))
    cov = apply_loading(cov, loading_power(steer[0], psds[0], config.loading_mode),
                        spec.loading_offset_db)
    weights = mvdr_weights(steer[0], cov, cfg)
    y = beamform(weights, x, cfg)

    d = desired_signal(clips[0], windowed[(spec.target_azimuth, spec.array[0])])
    outcome = delta_snr(d, x[0], y)
    if isinstance(outcome, SnrOutcome):
        value, status = None, outcome.value
    else:
        value, status = outcome, "ok"
    return TrialResult(
        trial_id=spec.trial_id,
        config=config.label,
        target_azimuth=spec.target_azimuth,
        delta_snr_db=value,
        input_snr_db=snr_db(d, x[0]),
        status=status,
        n_zero_steering_bins=int(np.count_nonzero(weights.zero_steering_bins)),
        spec=spec,
    )


@dataclass(frozen=True)
class TrialSummary:
    config: str
    n_trials: int
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float
    mean: float
    n_perfect: int = 0
    n_already_clean: int = 0

    def to_dict(self):
        return {k: (round(v, 6) if isinstance(v, float) else v) for k, v in self.__dict__.items()}


def summarize(results: Sequence[TrialResult]) -> TrialSummary:
    """Box-plot statistics; whiskers are the minimum and maximum."""
    if not results:
        raise SimulationError("no trial results to summarize")
    vals = np.array([r.delta_snr_db for r in results if r.delta_snr_db is not None])
    if vals.size == 0:
        nan = float("nan")
        stats = [nan] * 6
    else:
        q = np.percentile(vals, [0, 25, 50, 75, 100])
        stats = [float(v) for v in q] + [float(vals.mean())]
    labels = {r.config for r in results}
    return TrialSummary(
        config=labels.pop() if len(labels) == 1 else "mixed",
        n_trials=len(results),
        minimum=stats[0], q1=stats[1], median=stats[2], q3=stats[3], maximum=stats[4],
        mean=stats[5],
        n_perfect=sum(r.status == SnrOutcome.PERFECT.value for r in results),
        n_already_clean=sum(r.status == SnrOutcome.ALREADY_CLEAN.value for r in results),
    )


def run_trials(config: TrialConfig, n_trials=100, master_seed=0, workers=1):
    """Run seeded trials, optionally on a thread pool.

    Returns ``(results sorted by trial id, summary)``. Results do not depend
    on ``workers``.
    """
    if n_trials < 1:
        raise SimulationError("n_trials must be positive")
    specs = [make_trial_spec(config, i, master_seed) for i in range(n_trials)]
    ctx = _TrialContext(config)
    if workers <= 1:
        results = [run_trial(s, config, ctx) for s in specs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda s: run_trial(s, config, ctx), specs))
    results.sort(key=lambda r: r.trial_id)
    return results, summarize(results)


RESULT_COLUMNS = ("trial_id", "config", "target_angle", "delta_snr_db", "input_snr_db", "status")


def results_csv(results: Sequence[TrialResult], header_lines=()):
    """Trial table as CSV text; ``header_lines`` become leading ``#`` comments."""
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULT_COLUMNS)
    for r in sorted(results, key=lambda r: (r.config, r.trial_id)):
        writer.writerow([
            r.trial_id,
            r.config,
            r.target_azimuth,
            "" if r.delta_snr_db is None else f"{r.delta_snr_db:.6f}",
            f"{r.input_snr_db:.6f}",
            r.status,
        ])
    return buf.getvalue()
