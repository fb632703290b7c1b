"""Synthetic body-related impulse responses and speech-like test clips.

The model places microphones on a horizontal circle around the body
centre. A plane wave from azimuth ``theta`` reaches microphone ``m`` with
the geometric delay of its position, and a microphone facing away from the
source is low-pass shadowed::

    gain_dB(f, theta) = -alpha_m(f) * s(angle between theta and facing)
    alpha_m(f) = depth_m * f^2 / (f^2 + knee_m^2)

``s`` is 0 up to ``shadow_onset_deg``, rises as a raised cosine over
``shadow_width_deg`` and stays 1 beyond. With the defaults (45 and 90
degrees) sources within 45 degrees of the facing direction are unshadowed
and sources within 45 degrees of the opposite direction get the full
``alpha_m``.
"""

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
from scipy import fft as sfft
from scipy import signal

from .audio import write_wav
from .dataset import (
    AZIMUTHS_DEG,
    ImpulseResponse,
    MicrophonePosition,
    build_manifest,
    save_manifest,
)
from .errors import KeyValidationError, SelectionError, SimulationError

SPEED_OF_SOUND = 343.0


@dataclass(frozen=True)
class SyntheticMic:
    mic_id: int
    region: str
    azimuth_deg: float  # position angle on the body circle, also the facing direction
    radius_m: float
    shadow_depth_db: float
    shadow_knee_hz: float = 1000.0
    reference_ear: Optional[str] = None


@dataclass(frozen=True)
class SyntheticBodyModel:
    mics: tuple
    sample_rate_hz: int = 16000
    ir_length: int = 1024
    bulk_delay: int = 64
    shadow_onset_deg: float = 45.0
    shadow_width_deg: float = 90.0
    # extra high-frequency loss applied to torso mics, keyed by wear config
    garments: Mapping = field(default_factory=dict)
    garment_knee_hz: float = 4000.0
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        ids = [m.mic_id for m in self.mics]
        if len(set(ids)) != len(ids):
            raise SimulationError("synthetic model has duplicate microphone ids")
        max_delay = self.bulk_delay + 2 * max(m.radius_m for m in self.mics) * (
            self.sample_rate_hz / self.speed_of_sound)
        if max_delay >= self.ir_length // 2:
            raise SimulationError("ir_length too short for the model's propagation delays")

    @property
    def mic_ids(self):
        return tuple(m.mic_id for m in self.mics)

    def mic(self, mic_id):
        for m in self.mics:
            if m.mic_id == mic_id:
                return m
        raise SimulationError(f"synthetic model has no microphone {mic_id}")

    def ir(self, mic_id, azimuth):
        return synth_brtf(self, mic_id, azimuth)

    @property
    def microphones(self):
        """Microphone table in dataset form, so ``select_array`` accepts the model."""
        return {m.mic_id: MicrophonePosition(m.mic_id, m.region, m.azimuth_deg % 360.0,
                                             m.reference_ear) for m in self.mics}

    def reference_mic(self, side):
        for m in self.mics:
            if m.reference_ear == side:
                return m.mic_id
        raise SelectionError(f"synthetic model has no {side} ear reference")

    def to_dict(self):
        d = asdict(self)
        d["mics"] = [asdict(m) for m in self.mics]
        d["garments"] = dict(self.garments)
        return d

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        doc["mics"] = tuple(SyntheticMic(**m) for m in doc["mics"])
        return cls(**doc)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def shadow_weight(model, angle_deg):
    """Raised-cosine shadow profile in [0, 1] for a source-to-facing angle."""
    d = np.abs((np.asarray(angle_deg, dtype=np.float64) + 180.0) % 360.0 - 180.0)
    x = np.clip((d - model.shadow_onset_deg) / model.shadow_width_deg, 0.0, 1.0)
    return 0.5 - 0.5 * np.cos(np.pi * x)


def shadow_depth_db(mic, freqs):
    """Frequency-dependent full shadow depth ``alpha(f)`` in dB (non-negative)."""
    f2 = np.asarray(freqs, dtype=np.float64) ** 2
    if mic.shadow_knee_hz <= 0:
        return np.full_like(f2, mic.shadow_depth_db)
    return mic.shadow_depth_db * f2 / (f2 + mic.shadow_knee_hz**2)


def propagation_delay(model, mic, azimuth):
    """Arrival delay in samples; identical geometry for every microphone."""
    rel = np.deg2rad(azimuth - mic.azimuth_deg)
    r_max = max(m.radius_m for m in model.mics)
    path = r_max - mic.radius_m * np.cos(rel)
    return model.bulk_delay + path * model.sample_rate_hz / model.speed_of_sound


def synth_brtf(model: SyntheticBodyModel, mic_id, azimuth, wear_config="bare") -> ImpulseResponse:
    """Synthesize the response of one microphone to a source at ``azimuth``.

    The spectrum is built on the ``ir_length`` rfft grid, so its magnitude
    on that grid is exactly the model gain.
    """
    if azimuth not in AZIMUTHS_DEG:
        raise KeyValidationError(f"azimuth {azimuth} is not on the 15 degree grid")
    mic = model.mic(mic_id)
    n = model.ir_length
    freqs = np.fft.rfftfreq(n, 1.0 / model.sample_rate_hz)
    gain_db = -shadow_depth_db(mic, freqs) * shadow_weight(model, azimuth - mic.azimuth_deg)
    if wear_config != "bare" and mic.region.startswith("torso"):
        depth = model.garments.get(wear_config)
        if depth is None:
            raise SimulationError(f"synthetic model does not define garment {wear_config!r}")
        f2 = freqs**2
        gain_db = gain_db - depth * f2 / (f2 + model.garment_knee_hz**2)
    tau = propagation_delay(model, mic, azimuth)
    spectrum = 10.0 ** (gain_db / 20.0) * np.exp(-2j * np.pi * freqs * tau / model.sample_rate_hz)
    if n % 2 == 0:
        # the Nyquist bin of a real signal must be real
        spectrum[-1] = np.abs(spectrum[-1]) * np.cos(np.pi * tau)
    return ImpulseResponse(sfft.irfft(spectrum, n), model.sample_rate_hz, mic_id)


def free_space_response(model):
    """A body-free omnidirectional microphone at the body centre."""
    r_max = max(m.radius_m for m in model.mics)
    delay = model.bulk_delay + r_max * model.sample_rate_hz / model.speed_of_sound
    freqs = np.fft.rfftfreq(model.ir_length, 1.0 / model.sample_rate_hz)
    spectrum = np.exp(-2j * np.pi * freqs * delay / model.sample_rate_hz)
    if model.ir_length % 2 == 0:
        spectrum[-1] = np.cos(np.pi * delay)
    return ImpulseResponse(sfft.irfft(spectrum, model.ir_length), model.sample_rate_hz, 0)


def default_body_model(sample_rate_hz=16000, garments=None) -> SyntheticBodyModel:
    """Twenty-four microphones on a body-sized layout.

    Ids 1 and 2 are the left and right ear canals; the remaining ids
    alternate between sides and heights so that the first ``M`` ids form a
    spatially spread array for any ``M``.
    """
    layout = [
        # id, region, azimuth, radius, depth, knee, ear
        (1, "ear_canal", 90.0, 0.09, 10.0, 1500.0, "left"),
        (2, "ear_canal", 270.0, 0.09, 10.0, 1500.0, "right"),
        (3, "torso_upper", 15.0, 0.16, 8.0, 800.0, None),
        (4, "torso_upper", 200.0, 0.16, 8.0, 800.0, None),
        (5, "shoulder", 60.0, 0.20, 6.0, 1000.0, None),
        (6, "shoulder", 300.0, 0.20, 6.0, 1000.0, None),
        (7, "torso_lower", 330.0, 0.14, 9.0, 700.0, None),
        (8, "torso_lower", 150.0, 0.14, 9.0, 700.0, None),
        (9, "head_other", 0.0, 0.10, 5.0, 2000.0, None),
        (10, "torso_upper", 100.0, 0.17, 8.0, 800.0, None),
        (11, "torso_upper", 260.0, 0.17, 8.0, 800.0, None),
        (12, "torso_lower", 45.0, 0.15, 9.0, 700.0, None),
        (13, "torso_lower", 225.0, 0.15, 9.0, 700.0, None),
        (14, "head_other", 180.0, 0.10, 5.0, 2000.0, None),
        (15, "torso_upper", 345.0, 0.16, 8.0, 800.0, None),
        (16, "torso_lower", 120.0, 0.15, 9.0, 700.0, None),
        (17, "torso_upper", 165.0, 0.16, 8.0, 800.0, None),
        (18, "torso_lower", 285.0, 0.15, 9.0, 700.0, None),
        (19, "torso_upper", 75.0, 0.17, 8.0, 800.0, None),
        (20, "torso_upper", 240.0, 0.17, 8.0, 800.0, None),
        (21, "torso_lower", 0.0, 0.14, 9.0, 700.0, None),
        (22, "torso_lower", 180.0, 0.14, 9.0, 700.0, None),
        (23, "shoulder", 135.0, 0.20, 6.0, 1000.0, None),
        (24, "shoulder", 315.0, 0.20, 6.0, 1000.0, None),
    ]
    mics = tuple(SyntheticMic(*row) for row in layout)
    if garments is None:
        garments = {"tshirt": 3.0, "wool_coat": 12.0}
    return SyntheticBodyModel(mics=mics, sample_rate_hz=sample_rate_hz,
                              ir_length=max(1024, int(round(0.064 * sample_rate_hz))),
                              bulk_delay=int(round(0.004 * sample_rate_hz)),
                              garments=dict(garments))


def render_dataset(model, dest, subject="mannequin", wear_configs=("bare",), bit_depth=32,
                   name="synthetic"):
    """Write every (wear config, mic, azimuth) response as WAV plus a manifest.

    One multichannel file per (wear config, azimuth) holds all microphones.
    Returns the manifest path.
    """
    dest = Path(dest)
    (dest / "audio").mkdir(parents=True, exist_ok=True)
    entries = []
    for wc in wear_configs:
        for az in AZIMUTHS_DEG:
            data = np.stack([synth_brtf(model, m.mic_id, az, wc).samples for m in model.mics],
                            axis=1)
            rel = f"audio/{subject}_{wc}_az{az:03d}.wav"
            write_wav(dest / rel, data, model.sample_rate_hz, bit_depth)
            for ch, m in enumerate(model.mics):
                entries.append({"subject": subject, "wear_config": wc, "mic_id": m.mic_id,
                                "source_azimuth_deg": az, "file": rel, "channel": ch})
    write_wav(dest / "audio/free_space.wav", free_space_response(model).samples,
              model.sample_rate_hz, bit_depth)
    free = [{"subject": subject, "mic_id": 0, "source_azimuth_deg": 0,
             "file": "audio/free_space.wav", "channel": 0}]
    mics = list(model.microphones.values())
    vocab = tuple(dict.fromkeys(("bare",) + tuple(wear_configs)))
    manifest = build_manifest(dest, mics, entries, free, sample_rate_hz=model.sample_rate_hz,
                              bit_depth=bit_depth, wear_configs=vocab, name=name)
    path = dest / "manifest.json"
    save_manifest(manifest, path)
    return path


def speech_like_clip(duration_s, sample_rate_hz, rng):
    """Noise with a speech-like long-term spectrum and syllabic envelope.

    Pink-ish spectral tilt above 500 Hz, random formant-style resonances and
    a 3-6 Hz on/off amplitude modulation with short pauses.
    """
    n = int(round(duration_s * sample_rate_hz))
    white = rng.standard_normal(n)
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate_hz)
    tilt = 1.0 / np.sqrt(1.0 + (freqs / 500.0) ** 2)
    tilt *= freqs / np.sqrt(freqs**2 + 100.0**2)
    shaped = np.fft.irfft(np.fft.rfft(white) * tilt, n)
    for fc in rng.uniform([400, 1000, 2200], [900, 2000, 3500]):
        if fc < sample_rate_hz / 2 * 0.9:
            b, a = signal.iirpeak(fc, 4.0, fs=sample_rate_hz)
            shaped = shaped + 0.5 * signal.lfilter(b, a, shaped)
    t = np.arange(n) / sample_rate_hz
    rate = rng.uniform(3.0, 6.0)
    env = np.clip(np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)), 0.0, None) ** 0.7
    slow = 0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(0.2, 0.5) * t + rng.uniform(0, 2 * np.pi))
    clip = shaped * env * (0.3 + 0.7 * slow)
    return clip / np.max(np.abs(clip)) * 0.5


def with_sample_rate(model, sample_rate_hz):
    """The same layout at another sample rate (delays and lengths rescaled)."""
    scale = sample_rate_hz / model.sample_rate_hz
    return replace(model, sample_rate_hz=sample_rate_hz,
                   ir_length=int(round(model.ir_length * scale)),
                   bulk_delay=int(round(model.bulk_delay * scale)))
