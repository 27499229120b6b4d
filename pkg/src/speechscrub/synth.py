"""Synthetic speakers and utterances for desk-scale experiments.

Each "speaker" is a harmonic source with a characteristic fundamental and
formant placement; each "phoneme" is a formant pattern, so every generated
utterance comes with an exact time alignment by construction.  This gives
the pipeline separable speaker identities and aligned transcripts without
shipping any speech corpus.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import SAMPLE_RATE, Waveform
from .errors import InvalidInputError
from .phonemes import AlignedTranscript, PhonemeInterval

# Vowel-like formant targets (Hz) and bandwidths, loosely after classic
# American-English vowel measurements.
PHONEME_PATTERNS: dict[str, tuple[tuple[float, float], ...]] = {
    "AA": ((730.0, 90.0), (1090.0, 110.0), (2440.0, 160.0)),
    "IY": ((270.0, 60.0), (2290.0, 140.0), (3010.0, 200.0)),
    "UW": ((300.0, 70.0), (870.0, 100.0), (2240.0, 160.0)),
    "EH": ((530.0, 80.0), (1840.0, 120.0), (2480.0, 160.0)),
    "OW": ((570.0, 80.0), (840.0, 100.0), (2410.0, 160.0)),
    "AE": ((660.0, 90.0), (1720.0, 120.0), (2410.0, 160.0)),
}

PHONEME_INVENTORY = tuple(sorted(PHONEME_PATTERNS))


@dataclass(frozen=True)
class SpeakerProfile:
    """Parameters that define one synthetic voice."""

    speaker_id: str
    f0: float
    formant_scale: float
    tilt: float
    breathiness: float


def make_speakers(n: int, seed: int = 0) -> list[SpeakerProfile]:
    """n well-separated synthetic voices, deterministic in seed."""
    if n < 1:
        raise InvalidInputError("need at least one speaker")
    rng = np.random.default_rng(seed)
    base_f0 = np.linspace(95.0, 260.0, n)
    profiles = []
    for i in range(n):
        profiles.append(SpeakerProfile(
            speaker_id=f"spk{i}",
            f0=float(base_f0[i] * (1.0 + 0.04 * rng.standard_normal())),
            formant_scale=float(0.85 + 0.3 * i / max(1, n - 1)
                                + 0.02 * rng.standard_normal()),
            tilt=float(0.8 + 0.5 * rng.random()),
            breathiness=float(0.002 + 0.004 * rng.random()),
        ))
    return profiles


def _formant_envelope(freqs: np.ndarray, label: str, scale: float) -> np.ndarray:
    env = np.full_like(freqs, 0.02)
    for center, bw in PHONEME_PATTERNS[label]:
        c = center * scale
        env = env + 1.0 / (1.0 + ((freqs - c) / bw) ** 2)
    return env


def synth_utterance(profile: SpeakerProfile, duration: float = 1.0,
                    seed: int = 0) -> tuple[Waveform, AlignedTranscript]:
    """One vowel-sequence utterance with its exact phoneme alignment."""
    if duration <= 0:
        raise InvalidInputError("duration must be positive")
    rng = np.random.default_rng(seed)
    n_samples = int(round(duration * SAMPLE_RATE))
    t = np.arange(n_samples) / SAMPLE_RATE

    # segment the utterance into 120-260 ms vowels
    intervals: list[PhonemeInterval] = []
    cursor = 0.0
    while cursor < duration - 1e-9:
        seg = min(float(rng.uniform(0.12, 0.26)), duration - cursor)
        label = str(rng.choice(PHONEME_INVENTORY))
        intervals.append(PhonemeInterval(label=label, start=cursor, end=cursor + seg))
        cursor += seg

    # slowly varying f0 with vibrato
    drift = rng.uniform(-0.03, 0.03)
    vibrato = 0.01 * np.sin(2.0 * np.pi * rng.uniform(4.5, 6.5) * t
                            + rng.uniform(0, 2 * np.pi))
    f0_track = profile.f0 * (1.0 + drift * t / max(duration, 1e-9) + vibrato)
    phase0 = 2.0 * np.pi * np.cumsum(f0_track) / SAMPLE_RATE

    n_harmonics = int(7600.0 // profile.f0)
    x = np.zeros(n_samples)
    for interval in intervals:
        lo = int(round(interval.start * SAMPLE_RATE))
        hi = min(int(round(interval.end * SAMPLE_RATE)), n_samples)
        if hi <= lo:
            continue
        seg_t = t[lo:hi]
        seg = np.zeros(hi - lo)
        harmonics = np.arange(1, n_harmonics + 1)
        freqs = harmonics * profile.f0
        amps = _formant_envelope(freqs, interval.label, profile.formant_scale)
        amps = amps / (harmonics ** profile.tilt)
        for k, amp in zip(harmonics, amps):
            seg += amp * np.sin(k * phase0[lo:hi] + rng.uniform(0, 2 * np.pi))
        # soft attack/decay to avoid clicks at segment joins
        ramp = min(160, (hi - lo) // 4)
        if ramp > 0:
            fade = np.ones(hi - lo)
            fade[:ramp] = np.linspace(0.0, 1.0, ramp)
            fade[-ramp:] = np.linspace(1.0, 0.0, ramp)
            seg *= fade
        # syllable-scale amplitude movement
        seg *= 0.8 + 0.2 * np.sin(2.0 * np.pi * rng.uniform(1.5, 3.0) * seg_t
                                  + rng.uniform(0, 2 * np.pi))
        x[lo:hi] += seg

    x += profile.breathiness * rng.standard_normal(n_samples)
    peak = np.max(np.abs(x))
    if peak > 0:
        x *= 0.35 / peak
    transcript = AlignedTranscript(intervals=tuple(intervals),
                                   audio_duration=n_samples / SAMPLE_RATE)
    return Waveform(samples=x), transcript


def synth_corpus(profiles: list[SpeakerProfile], clips_per_speaker: int,
                 duration: float = 1.0, seed: int = 0
                 ) -> list[tuple[Waveform, AlignedTranscript, str]]:
    """Deterministic corpus of (waveform, transcript, speaker_id) triples."""
    corpus = []
    for s_idx, profile in enumerate(profiles):
        for c_idx in range(clips_per_speaker):
            clip_seed = seed * 1_000_003 + s_idx * 1009 + c_idx
            wave, transcript = synth_utterance(profile, duration, seed=clip_seed)
            corpus.append((wave, transcript, profile.speaker_id))
    return corpus


def synth_noise(duration: float, seed: int = 0, kind: str = "pink") -> Waveform:
    """Background-noise clip for training-set augmentation."""
    rng = np.random.default_rng(seed)
    n = int(round(duration * SAMPLE_RATE))
    white = rng.standard_normal(n)
    if kind == "white":
        x = white
    elif kind == "pink":
        # shape the spectrum by 1/sqrt(f)
        spec = np.fft.rfft(white)
        freqs = np.fft.rfftfreq(n, d=1.0 / SAMPLE_RATE)
        freqs[0] = freqs[1] if n > 1 else 1.0
        x = np.fft.irfft(spec / np.sqrt(freqs), n=n)
    elif kind == "hum":
        t = np.arange(n) / SAMPLE_RATE
        x = np.sin(2 * np.pi * 50.0 * t) + 0.3 * np.sin(2 * np.pi * 150.0 * t)
        x += 0.2 * white
    else:
        raise InvalidInputError(f"unknown noise kind {kind!r}")
    peak = np.max(np.abs(x))
    if peak > 0:
        x = 0.5 * x / peak
    return Waveform(samples=x)
