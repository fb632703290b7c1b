"""WAV reading and writing.

Integer PCM (16/24/32-bit) and 32-bit float files are accepted. Samples are
returned as float64 scaled to [-1, 1].
"""

import wave
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import AudioDecodeError


def read_wav(path):
    """Return ``(sample_rate, data)`` with ``data`` shaped (frames, channels)."""
    try:
        rate, data = wavfile.read(str(path))
    except (ValueError, OSError, EOFError) as exc:
        raise AudioDecodeError(f"cannot decode {path}: {exc}") from exc
    if data.dtype == np.uint8:
        out = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype == np.int16:
        out = data / 32768.0
    elif data.dtype == np.int32:
        # scipy left-justifies 24-bit PCM into int32
        out = data / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        out = data.astype(np.float64)
    else:
        raise AudioDecodeError(f"unsupported sample type {data.dtype} in {path}")
    if out.ndim == 1:
        out = out[:, None]
    if not np.all(np.isfinite(out)):
        raise AudioDecodeError(f"non-finite samples in {path}")
    return int(rate), out


def write_wav(path, data, sample_rate, bit_depth=24):
    """Write float samples in [-1, 1] as 16/24-bit PCM or 32-bit float.

    ``data`` is (frames,) or (frames, channels). Values outside [-1, 1] are
    clipped for integer formats.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    path = Path(path)
    if bit_depth == 32:
        wavfile.write(str(path), int(sample_rate), data.astype(np.float32))
        return
    if bit_depth not in (16, 24):
        raise ValueError(f"bit_depth must be 16, 24 or 32, got {bit_depth}")
    full_scale = 2 ** (bit_depth - 1)
    ints = np.clip(np.round(data * full_scale), -full_scale, full_scale - 1).astype("<i4")
    if bit_depth == 16:
        raw = ints.astype("<i2").tobytes()
    else:
        raw = ints.view(np.uint8).reshape(-1, 4)[:, :3].tobytes()
    with wave.open(str(path), "wb") as handle:
        handle.setnchannels(data.shape[1])
        handle.setsampwidth(bit_depth // 8)
        handle.setframerate(int(sample_rate))
        handle.writeframes(raw)
