"""Phoneme alignments, the average-magnitude dictionary, and the
frame-wise conditioning matrix built from it.

The dictionary maps each phoneme label to the mean linear-magnitude
spectral column over every STFT frame assigned to that label in the
build corpus.  The conditioning matrix for an utterance has one column
per STFT frame, holding the dictionary entry of the phoneme active at
that frame's center time, so it always has the same shape as the
utterance's magnitude spectrogram.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import SAMPLE_RATE, ComplexSpectrogram, SpectrogramConfig, Waveform, stft
from .containers import config_fingerprint, load_container, save_container
from .errors import AlignmentFormatError, InvalidInputError

SIL = "SIL"
UNK = "UNK"

_TIME_EPS = 1e-9


@dataclass(frozen=True)
class PhonemeInterval:
    label: str
    start: float
    end: float

    def __post_init__(self):
        if self.start < 0 or self.end <= self.start:
            raise AlignmentFormatError(
                f"bad interval [{self.start}, {self.end}) for label {self.label!r}"
            )


@dataclass(frozen=True)
class AlignedTranscript:
    """Non-overlapping phoneme intervals sorted by start time."""

    intervals: tuple[PhonemeInterval, ...]
    audio_duration: float

    def __post_init__(self):
        intervals = tuple(self.intervals)
        for a, b in zip(intervals, intervals[1:]):
            if b.start < a.end - _TIME_EPS:
                raise AlignmentFormatError(
                    f"overlapping intervals: {a.label} ends {a.end}, {b.label} starts {b.start}"
                )
            if b.start < a.start:
                raise AlignmentFormatError("intervals are not sorted by start time")
        object.__setattr__(self, "intervals", intervals)

    def label_at(self, time: float) -> str:
        """Phoneme active at a time point; SIL in gaps and outside coverage."""
        for interval in self.intervals:
            if interval.start - _TIME_EPS <= time < interval.end - _TIME_EPS:
                return interval.label
        return SIL


def _normalize_intervals(raw: list[PhonemeInterval], audio_duration: float
                         ) -> AlignedTranscript:
    ordered = sorted(raw, key=lambda iv: (iv.start, iv.end))
    filled: list[PhonemeInterval] = []
    cursor = 0.0
    for iv in ordered:
        if filled and iv.start < filled[-1].end - _TIME_EPS:
            raise AlignmentFormatError(
                f"overlapping intervals at {iv.start:.4f}s (label {iv.label!r})"
            )
        if iv.start > cursor + _TIME_EPS:
            filled.append(PhonemeInterval(label=SIL, start=cursor, end=iv.start))
        filled.append(iv)
        cursor = max(cursor, iv.end)
    if audio_duration > cursor + _TIME_EPS:
        filled.append(PhonemeInterval(label=SIL, start=cursor, end=audio_duration))
    return AlignedTranscript(intervals=tuple(filled), audio_duration=audio_duration)


def parse_alignment(path) -> AlignedTranscript:
    """Read a phoneme alignment from JSON or a TextGrid phone tier.

    JSON form: either a bare list of {"label","start","end"} objects or an
    object {"intervals": [...], "audio_duration": seconds}.  Gaps become SIL.
    """
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".textgrid" or text.lstrip().startswith("File type"):
        return _parse_textgrid(text, path)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise AlignmentFormatError(f"{path}: invalid JSON alignment: {exc}") from exc
    if isinstance(doc, dict):
        items = doc.get("intervals", [])
        duration = doc.get("audio_duration")
    else:
        items, duration = doc, None
    raw = []
    for item in items:
        try:
            raw.append(PhonemeInterval(label=str(item["label"]),
                                       start=float(item["start"]),
                                       end=float(item["end"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise AlignmentFormatError(f"{path}: malformed interval {item!r}") from exc
    if duration is None:
        duration = max((iv.end for iv in raw), default=0.0)
    return _normalize_intervals(raw, float(duration))


_TG_FLOAT = r"(-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)"


def _parse_textgrid(text: str, path) -> AlignedTranscript:
    """Minimal reader for long-format TextGrid interval tiers (phones first)."""
    m_total = re.search(rf"xmax\s*=\s*{_TG_FLOAT}", text)
    if m_total is None:
        raise AlignmentFormatError(f"{path}: TextGrid missing global xmax")
    duration = float(m_total.group(1))
    tiers = re.split(r"item\s*\[\d+\]\s*:", text)[1:]
    if not tiers:
        raise AlignmentFormatError(f"{path}: TextGrid has no tiers")
    chosen = None
    for tier in tiers:
        name_m = re.search(r'name\s*=\s*"([^"]*)"', tier)
        if name_m and name_m.group(1).lower() in ("phones", "phone", "phonemes"):
            chosen = tier
            break
    if chosen is None:
        chosen = tiers[0]
    raw = []
    pattern = (rf"intervals\s*\[\d+\]\s*:\s*xmin\s*=\s*{_TG_FLOAT}\s*"
               rf"xmax\s*=\s*{_TG_FLOAT}\s*text\s*=\s*\"([^\"]*)\"")
    for m in re.finditer(pattern, chosen):
        label = m.group(3).strip()
        start, end = float(m.group(1)), float(m.group(2))
        if end <= start:
            continue
        raw.append(PhonemeInterval(label=label if label else SIL, start=start, end=end))
    if not raw:
        raise AlignmentFormatError(f"{path}: no intervals found in TextGrid tier")
    return _normalize_intervals(raw, duration)


def frames_for_interval(interval: PhonemeInterval, config: SpectrogramConfig,
                        n_frames: int, sample_rate: int = SAMPLE_RATE) -> range:
    """Half-open frame range whose center times fall inside the interval."""
    hop_s = config.hop_length / sample_rate
    first = int(np.ceil(interval.start / hop_s - _TIME_EPS))
    stop = int(np.ceil(interval.end / hop_s - _TIME_EPS))
    first = max(first, 0)
    stop = min(stop, n_frames)
    return range(first, max(first, stop))


def frame_labels(transcript: AlignedTranscript, config: SpectrogramConfig,
                 n_frames: int) -> list[str]:
    """Assign every frame in [0, n_frames) to exactly one label (SIL fallback)."""
    labels = [SIL] * n_frames
    for interval in transcript.intervals:
        for i in frames_for_interval(interval, config, n_frames):
            labels[i] = interval.label
    return labels


@dataclass(frozen=True)
class PhonemeDictionary:
    """Per-phoneme average magnitude columns plus a global fallback."""

    entries: dict[str, np.ndarray]
    frame_counts: dict[str, int]
    config: SpectrogramConfig
    global_average: np.ndarray = field(repr=False)

    @property
    def inventory(self) -> list[str]:
        return sorted(self.entries)

    def lookup(self, label: str, fallback: bool = True) -> np.ndarray:
        if label in self.entries:
            return self.entries[label]
        if not fallback:
            raise KeyError(f"label {label!r} not in dictionary and fallback disabled")
        return self.global_average

    def fingerprint(self) -> str:
        payload = {"config": self.config.to_dict(),
                   "inventory": self.inventory,
                   "counts": {k: self.frame_counts[k] for k in self.inventory},
                   "sums": {k: float(np.sum(self.entries[k])) for k in self.inventory}}
        return config_fingerprint(payload)


@dataclass(frozen=True)
class PhonemeRepresentation:
    """Conditioning matrix, one dictionary column per STFT frame."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise InvalidInputError("phoneme representation must be a 2-D matrix")
        object.__setattr__(self, "data", data)

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]


def build_dictionary(corpus: list[tuple[Waveform, AlignedTranscript]],
                     config: SpectrogramConfig | None = None) -> PhonemeDictionary:
    """Average the magnitude spectrogram columns of every frame per label.

    Utterance order cannot matter: the reduction is a plain sum + count.
    """
    config = config or SpectrogramConfig()
    if not corpus:
        raise InvalidInputError("cannot build a dictionary from an empty corpus")
    sums: dict[str, np.ndarray] = {}
    counts: dict[str, int] = {}
    total_sum = np.zeros(config.n_bins)
    total_count = 0
    for wave, transcript in corpus:
        mismatch = abs(transcript.audio_duration - wave.duration)
        if mismatch > config.hop_length / SAMPLE_RATE + _TIME_EPS:
            raise InvalidInputError(
                f"alignment duration {transcript.audio_duration:.3f}s differs from "
                f"audio duration {wave.duration:.3f}s by more than one frame"
            )
        mag = np.abs(stft(wave, config).data)
        labels = frame_labels(transcript, config, mag.shape[1])
        for i, label in enumerate(labels):
            col = mag[:, i]
            if label not in sums:
                sums[label] = np.zeros(config.n_bins)
                counts[label] = 0
            sums[label] += col
            counts[label] += 1
            total_sum += col
            total_count += 1
    entries = {label: sums[label] / counts[label] for label in sums}
    global_average = total_sum / max(total_count, 1)
    entries.setdefault(UNK, global_average.copy())
    counts.setdefault(UNK, 0)
    return PhonemeDictionary(entries=entries, frame_counts=counts, config=config,
                             global_average=global_average)


def assemble_representation(transcript: AlignedTranscript, n_frames: int,
                            dictionary: PhonemeDictionary,
                            fallback: bool = True) -> PhonemeRepresentation:
    """Broadcast dictionary columns over each interval's frames."""
    labels = frame_labels(transcript, dictionary.config, n_frames)
    data = np.empty((dictionary.config.n_bins, n_frames))
    for i, label in enumerate(labels):
        data[:, i] = dictionary.lookup(label, fallback=fallback)
    return PhonemeRepresentation(data=data)


def zero_representation(n_bins: int, n_frames: int) -> PhonemeRepresentation:
    return PhonemeRepresentation(data=np.zeros((n_bins, n_frames)))


def global_average_representation(dictionary: PhonemeDictionary,
                                  n_frames: int) -> PhonemeRepresentation:
    data = np.tile(dictionary.global_average[:, None], (1, n_frames))
    return PhonemeRepresentation(data=data)


def representation_for_spectrogram(spec: ComplexSpectrogram,
                                   transcript: AlignedTranscript,
                                   dictionary: PhonemeDictionary
                                   ) -> PhonemeRepresentation:
    if spec.config != dictionary.config:
        raise InvalidInputError("spectrogram and dictionary use different STFT configs")
    return assemble_representation(transcript, spec.n_frames, dictionary)


def save_dictionary(path, dictionary: PhonemeDictionary) -> None:
    inventory = dictionary.inventory
    entry_matrix = np.stack([dictionary.entries[label] for label in inventory])
    meta = {
        "inventory": inventory,
        "frame_counts": [dictionary.frame_counts.get(label, 0) for label in inventory],
        "stft_config": dictionary.config.to_dict(),
        "stft_fingerprint": config_fingerprint(dictionary.config.to_dict()),
    }
    save_container(path, kind="phoneme_dictionary", meta=meta,
                   arrays={"entries": entry_matrix,
                           "global_average": dictionary.global_average})


def load_dictionary(path) -> PhonemeDictionary:
    meta, arrays = load_container(path, kind="phoneme_dictionary")
    config = SpectrogramConfig(**meta["stft_config"])
    inventory = meta["inventory"]
    entries = {label: arrays["entries"][i] for i, label in enumerate(inventory)}
    counts = {label: int(c) for label, c in zip(inventory, meta["frame_counts"])}
    return PhonemeDictionary(entries=entries, frame_counts=counts, config=config,
                             global_average=arrays["global_average"])
