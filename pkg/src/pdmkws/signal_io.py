"""PCM WAV I/O, unipolar normalization and integer oversampling.

Only mono 16-bit PCM RIFF/WAVE files are accepted; anything else is rejected
rather than silently converted.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, UnsupportedFormatError

PCM_FULL_SCALE = 32768  # 16-bit scaling: sample / 32768 in [-1, 1)


@dataclass(frozen=True)
class PcmSignal:
    """Real-valued waveform with samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate_hz}")
        if samples.size and (samples.min() < -1.0 or samples.max() > 1.0):
            raise ValueError("PCM samples must lie in [-1, 1]")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


@dataclass(frozen=True)
class UnipolarSignal:
    """Waveform normalized to [0, 1], the modulator input domain."""

    samples: np.ndarray
    rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if self.rate_hz <= 0:
            raise ValueError(f"rate must be positive, got {self.rate_hz}")
        if samples.size and (samples.min() < 0.0 or samples.max() > 1.0):
            raise ValueError("unipolar samples must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.samples)


def read_wav(path) -> PcmSignal:
    """Read a mono 16-bit PCM WAV file.

    Integer samples are divided by 32768, so the result lies in [-1, 1).
    Raises FormatError for malformed/truncated files and
    UnsupportedFormatError for non-16-bit or multichannel content.
    """
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            nchannels = wf.getnchannels()
            sampwidth = wf.getsampwidth()
            rate = wf.getframerate()
            nframes = wf.getnframes()
            comptype = wf.getcomptype()
            frames = wf.readframes(nframes)
    except wave.Error as exc:
        raise FormatError(f"{path}: not a valid RIFF/WAVE file ({exc})") from exc
    except EOFError as exc:
        raise FormatError(f"{path}: truncated WAV header") from exc
    if comptype != "NONE":
        raise UnsupportedFormatError(f"{path}: compressed WAV ({comptype}) not supported")
    if sampwidth != 2:
        raise UnsupportedFormatError(f"{path}: only 16-bit PCM supported, got {8 * sampwidth}-bit")
    if nchannels != 1:
        raise UnsupportedFormatError(f"{path}: only mono supported, got {nchannels} channels")
    if rate <= 0:
        raise FormatError(f"{path}: invalid sample rate {rate}")
    if len(frames) < 2 * nframes:
        raise FormatError(f"{path}: truncated data chunk ({len(frames)} bytes for {nframes} frames)")
    ints = np.frombuffer(frames, dtype="<i2")
    return PcmSignal(ints.astype(np.float64) / PCM_FULL_SCALE, rate)


def write_wav(signal: PcmSignal, path) -> None:
    """Write a PcmSignal as mono 16-bit PCM.

    Round trip through read_wav reproduces samples within one quantization
    step (1/32768).
    """
    ints = np.clip(np.rint(signal.samples * PCM_FULL_SCALE), -32768, 32767).astype("<i2")
    with open(path, "wb") as fh:
        with wave.open(fh, "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(2)
            wf.setframerate(signal.sample_rate_hz)
            wf.writeframes(ints.tobytes())


def to_unipolar(signal: PcmSignal) -> UnipolarSignal:
    """Map [-1, 1] onto [0, 1] via y = (x + 1) / 2."""
    return UnipolarSignal((signal.samples + 1.0) / 2.0, signal.sample_rate_hz)


def to_bipolar(signal: UnipolarSignal) -> PcmSignal:
    """Exact inverse of to_unipolar: x = 2y - 1."""
    return PcmSignal(2.0 * signal.samples - 1.0, signal.rate_hz)


def oversample(signal: UnipolarSignal, alpha: int, method: str = "hold") -> UnipolarSignal:
    """Raise the sampling rate by an integer factor.

    ``hold`` repeats each sample alpha times (exact density preservation).
    ``sinc`` interpolates with a Kaiser-windowed sinc lowpass; overshoot is
    clamped back into [0, 1] because the modulators assume that range.
    """
    if alpha < 1:
        raise ValueError(f"alpha must be >= 1, got {alpha}")
    if method not in ("hold", "sinc"):
        raise ValueError(f"unknown oversampling method {method!r}")
    x = signal.samples
    if alpha == 1:
        return UnipolarSignal(x.copy(), signal.rate_hz)
    if method == "hold":
        return UnipolarSignal(np.repeat(x, alpha), signal.rate_hz * alpha)
    return UnipolarSignal(_sinc_interpolate(x, alpha), signal.rate_hz * alpha)


def _sinc_interpolate(x: np.ndarray, alpha: int) -> np.ndarray:
    # Zero-stuff then lowpass at 0.45/alpha of the output rate. Kaiser beta 8.6
    # gives ~90 dB image rejection; interpolation gain alpha restores amplitude.
    from scipy.signal import fftconvolve

    taps = 16 * alpha + 1
    n = np.arange(taps) - (taps - 1) / 2
    h = 2 * 0.45 / alpha * np.sinc(2 * 0.45 / alpha * n) * np.kaiser(taps, 8.6)
    h *= alpha / h.sum()  # unit DC gain after zero-stuffing
    stuffed = np.zeros(len(x) * alpha)
    stuffed[::alpha] = x
    y = fftconvolve(stuffed, h, mode="same")
    return np.clip(y, 0.0, 1.0)
