"""WAV reading and writing on top of scipy.io.wavfile."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.io import wavfile


def read_wav(path) -> tuple[np.ndarray, int]:
    """Samples as float64 (T, channels) in [-1, 1] nominal, and the rate.

    Accepts 8/16/24/32-bit PCM and float WAV. 24-bit PCM arrives from scipy
    as left-justified int32, so one scale covers both 24 and 32 bit.
    """
    rate, data = wavfile.read(str(path))
    if data.ndim == 1:
        data = data[:, None]
    if data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif np.issubdtype(data.dtype, np.floating):
        x = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample type {data.dtype}")
    return x, int(rate)


def write_wav(path, samples, rate: int, dtype="float32") -> Path:
    """Write (T,) or (T, channels) samples; float32 unless told otherwise."""
    x = np.asarray(samples, dtype=np.float64)
    if dtype == "float32":
        out = x.astype(np.float32)
    elif dtype == "int16":
        out = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise ValueError(f"unsupported output type {dtype}")
    wavfile.write(str(path), int(rate), out)
    return Path(path)


def write_pcm24(path, samples, rate: int) -> Path:
    """24-bit PCM writer (scipy only writes 8/16/32-bit integers)."""
    import wave

    x = np.atleast_2d(np.asarray(samples, dtype=np.float64).T).T
    q = np.clip(np.round(x * 8388608.0), -8388608, 8388607).astype("<i4")
    raw = q.view(np.uint8).reshape(q.shape + (4,))[..., :3].tobytes()
    with wave.open(str(path), "wb") as w:
        w.setnchannels(x.shape[1])
        w.setsampwidth(3)
        w.setframerate(int(rate))
        w.writeframes(raw)
    return Path(path)
