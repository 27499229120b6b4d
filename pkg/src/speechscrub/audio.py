"""Waveform and complex-spectrogram primitives.

Everything in the pipeline runs at 16 kHz mono.  The analysis/synthesis
pair is a square-root periodic Hann window of length 510 with hop 128,
giving 256 one-sided frequency bins; frames are centered (frame i's
window is centered on sample i*hop) with reflect padding at the edges.
All functions are pure and safe for concurrent use.
"""

from __future__ import annotations

import wave as _wavemodule
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DataError, DegenerateInputError, InvalidInputError, StateError

SAMPLE_RATE = 16000


@dataclass(frozen=True)
class Waveform:
    """Mono PCM audio: real samples (nominally in [-1, 1]) at a fixed rate."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise InvalidInputError(f"waveform must be 1-D, got shape {samples.shape}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class SpectrogramConfig:
    """STFT geometry. n_bins is tied to the window size (one-sided rFFT)."""

    window_size: int = 510
    hop_length: int = 128

    def __post_init__(self):
        if self.window_size <= 0 or self.window_size % 2 != 0:
            raise InvalidInputError("window_size must be a positive even integer")
        if not 0 < self.hop_length <= self.window_size:
            raise InvalidInputError("hop_length must be in (0, window_size]")

    @property
    def n_bins(self) -> int:
        return self.window_size // 2 + 1

    @property
    def pad(self) -> int:
        return self.window_size // 2

    def n_frames(self, n_samples: int) -> int:
        return n_samples // self.hop_length + 1

    def frame_center_time(self, frame: int, sample_rate: int = SAMPLE_RATE) -> float:
        return frame * self.hop_length / sample_rate

    def to_dict(self) -> dict:
        return {"window_size": self.window_size, "hop_length": self.hop_length}


@lru_cache(maxsize=8)
def sqrt_hann_window(window_size: int) -> np.ndarray:
    """Element-wise square root of a periodic Hann window."""
    hann = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(window_size) / window_size))
    w = np.sqrt(hann)
    w.setflags(write=False)
    return w


@dataclass(frozen=True)
class ComplexSpectrogram:
    """One-sided complex STFT, shape [n_bins x n_frames]."""

    data: np.ndarray
    config: SpectrogramConfig = field(default_factory=SpectrogramConfig)
    warped: bool = False

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.complex128)
        if data.ndim != 2 or data.shape[0] != self.config.n_bins:
            raise InvalidInputError(
                f"spectrogram must have shape [{self.config.n_bins} x F], got {data.shape}"
            )
        object.__setattr__(self, "data", data)

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.data)


def stft(wave: Waveform, config: SpectrogramConfig | None = None) -> ComplexSpectrogram:
    """Centered STFT with sqrt-Hann analysis window and reflect padding."""
    config = config or SpectrogramConfig()
    if wave.sample_rate != SAMPLE_RATE:
        raise InvalidInputError(f"expected {SAMPLE_RATE} Hz audio, got {wave.sample_rate}")
    x = wave.samples
    if x.size == 0:
        raise InvalidInputError("cannot take STFT of an empty waveform")
    pad = config.pad
    if x.size <= pad:
        raise InvalidInputError(
            f"waveform too short for reflect padding: need > {pad} samples, got {x.size}"
        )
    xp = np.pad(x, pad, mode="reflect")
    n_frames = config.n_frames(x.size)
    frames = np.lib.stride_tricks.sliding_window_view(xp, config.window_size)
    frames = frames[:: config.hop_length][:n_frames]
    windowed = frames * sqrt_hann_window(config.window_size)
    data = np.fft.rfft(windowed, n=config.window_size, axis=1).T
    return ComplexSpectrogram(data=data, config=config, warped=False)


def istft(spec: ComplexSpectrogram, config: SpectrogramConfig | None = None,
          out_length: int | None = None) -> Waveform:
    """Inverse STFT via windowed overlap-add with least-squares normalization.

    The synthesis window equals the analysis window, so stft -> istft is an
    identity (up to float rounding) wherever the window overlap is nonzero.
    """
    config = config or spec.config
    if config != spec.config:
        raise InvalidInputError("istft config disagrees with the spectrogram's config")
    if spec.warped:
        raise StateError("cannot invert a magnitude-warped spectrogram; unwarp first")
    n_frames = spec.n_frames
    if n_frames == 0:
        raise InvalidInputError("spectrogram has no frames")
    hop, win_len, pad = config.hop_length, config.window_size, config.pad
    max_out = (n_frames - 1) * hop + pad
    if out_length is None:
        out_length = max_out
    if not 0 <= out_length <= max_out:
        raise InvalidInputError(
            f"out_length {out_length} not reconstructable from {n_frames} frames (max {max_out})"
        )
    window = sqrt_hann_window(win_len)
    frames_td = np.fft.irfft(spec.data.T, n=win_len, axis=1) * window
    padded_len = (n_frames - 1) * hop + win_len
    y = np.zeros(padded_len)
    wsum = np.zeros(padded_len)
    wsq = window * window
    for i in range(n_frames):
        start = i * hop
        y[start:start + win_len] += frames_td[i]
        wsum[start:start + win_len] += wsq
    nonzero = wsum > 1e-12
    y[nonzero] /= wsum[nonzero]
    return Waveform(samples=y[pad:pad + out_length])


def warp_magnitude(spec: ComplexSpectrogram) -> ComplexSpectrogram:
    """Square-root magnitude warping: z -> sqrt(|z|) * exp(i*arg z)."""
    if spec.warped:
        raise StateError("spectrogram is already magnitude-warped")
    mag = np.abs(spec.data)
    scale = np.zeros_like(mag)
    nonzero = mag > 0
    scale[nonzero] = 1.0 / np.sqrt(mag[nonzero])
    return ComplexSpectrogram(data=spec.data * scale, config=spec.config, warped=True)


def unwarp_magnitude(spec: ComplexSpectrogram) -> ComplexSpectrogram:
    """Exact inverse of warp_magnitude: z -> |z|^2 * exp(i*arg z) == z * |z|."""
    if not spec.warped:
        raise StateError("spectrogram is not magnitude-warped")
    return ComplexSpectrogram(data=spec.data * np.abs(spec.data), config=spec.config,
                              warped=False)


def normalize_by_peak(x: Waveform, reference: Waveform) -> tuple[Waveform, float]:
    """Divide x by the peak absolute value of reference; returns (scaled, scale)."""
    scale = float(np.max(np.abs(reference.samples))) if len(reference) else 0.0
    if scale == 0.0:
        raise DegenerateInputError("reference waveform has no nonzero sample")
    return Waveform(samples=x.samples / scale, sample_rate=x.sample_rate), scale


@dataclass(frozen=True)
class ChunkMeta:
    """Bookkeeping to undo chunk_fixed exactly."""

    total_length: int
    chunk_len: int
    n_chunks: int

    @property
    def tail(self) -> int:
        if self.total_length == 0:
            return 0
        rem = self.total_length % self.chunk_len
        return rem if rem else self.chunk_len


def chunk_fixed(x: Waveform, chunk_len: int = 16000) -> tuple[list[Waveform], ChunkMeta]:
    """Split into consecutive chunks of chunk_len samples, zero-padding the tail."""
    if chunk_len <= 0:
        raise InvalidInputError("chunk_len must be positive")
    n = len(x)
    n_chunks = max(1, -(-n // chunk_len))
    padded = np.zeros(n_chunks * chunk_len)
    padded[:n] = x.samples
    chunks = [Waveform(samples=padded[i * chunk_len:(i + 1) * chunk_len],
                       sample_rate=x.sample_rate)
              for i in range(n_chunks)]
    return chunks, ChunkMeta(total_length=n, chunk_len=chunk_len, n_chunks=n_chunks)


def concat_chunks(chunks: list[Waveform], meta: ChunkMeta) -> Waveform:
    """Invert chunk_fixed bit-exactly (drops the zero padding)."""
    if len(chunks) != meta.n_chunks:
        raise InvalidInputError(f"expected {meta.n_chunks} chunks, got {len(chunks)}")
    full = np.concatenate([c.samples for c in chunks]) if chunks else np.zeros(0)
    return Waveform(samples=full[:meta.total_length],
                    sample_rate=chunks[0].sample_rate if chunks else SAMPLE_RATE)


def read_wav(path) -> Waveform:
    """Read a 16-bit PCM mono 16 kHz WAV file. Other formats are rejected."""
    try:
        with _wavemodule.open(str(path), "rb") as fh:
            n_channels = fh.getnchannels()
            sampwidth = fh.getsampwidth()
            rate = fh.getframerate()
            n = fh.getnframes()
            raw = fh.readframes(n)
    except (OSError, _wavemodule.Error) as exc:
        raise DataError(f"cannot read WAV file {path}: {exc}") from exc
    if n_channels != 1:
        raise DataError(f"{path}: expected mono audio, got {n_channels} channels")
    if sampwidth != 2:
        raise DataError(f"{path}: expected 16-bit PCM, got {8 * sampwidth}-bit")
    if rate != SAMPLE_RATE:
        raise DataError(f"{path}: expected {SAMPLE_RATE} Hz, got {rate} Hz (resampling "
                        "is out of scope; convert the file first)")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples=samples, sample_rate=rate)


def write_wav(path, wave: Waveform) -> None:
    """Write 16-bit PCM mono WAV; samples are clipped to [-1, 1]."""
    clipped = np.clip(wave.samples, -1.0, 1.0)
    pcm = np.clip(np.round(clipped * 32768.0), -32768, 32767).astype("<i2")
    with _wavemodule.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(wave.sample_rate)
        fh.writeframes(pcm.tobytes())


def snr_db(reference: np.ndarray, test: np.ndarray) -> float:
    """Signal-to-noise ratio of test against reference, in dB."""
    reference = np.asarray(reference, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    noise = reference - test
    p_sig = float(np.sum(reference ** 2))
    p_noise = float(np.sum(noise ** 2))
    if p_noise == 0.0:
        return np.inf
    if p_sig == 0.0:
        return -np.inf
    return 10.0 * np.log10(p_sig / p_noise)
