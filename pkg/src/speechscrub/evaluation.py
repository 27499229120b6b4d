"""Speaker-verification metrics and embedding-similarity reports."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .audio import Waveform
from .errors import InvalidInputError
from .protection import SpeakerEncoder, cosine


class QualityScorer(Protocol):
    """Plug-in interface for an external audio-quality model (no client here)."""

    def score(self, wave: Waveform) -> float: ...


@dataclass(frozen=True)
class VerificationSystem:
    encoder: SpeakerEncoder
    threshold: float

    def __post_init__(self):
        if not -1.0 <= self.threshold <= 1.0:
            raise InvalidInputError("threshold must lie in [-1, 1]")


@dataclass(frozen=True)
class VerificationReport:
    per_sample: list[tuple[str, float, bool]]
    sva: float
    threshold: float
    condition: str = ""

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "threshold": self.threshold,
            "sva": self.sva,
            "per_sample": [
                {"id": sid, "score": score, "accept": accept}
                for sid, score, accept in self.per_sample
            ],
        }


def sva(test_waves: list[Waveform], enrollment: Waveform,
        system: VerificationSystem, ids: list[str] | None = None,
        condition: str = "") -> VerificationReport:
    """Fraction of test clips whose cosine score clears the threshold."""
    if not test_waves:
        raise InvalidInputError("empty test set")
    if ids is None:
        ids = [str(i) for i in range(len(test_waves))]
    if len(ids) != len(test_waves):
        raise InvalidInputError("ids and test set length differ")
    enroll_emb = system.encoder.embed(enrollment)
    per_sample = []
    for sid, wave in zip(ids, test_waves):
        score = cosine(system.encoder.embed(wave), enroll_emb)
        per_sample.append((sid, score, score >= system.threshold))
    accept_rate = float(np.mean([acc for _, _, acc in per_sample]))
    return VerificationReport(per_sample=per_sample, sva=accept_rate,
                              threshold=system.threshold, condition=condition)


def far_frr(threshold: float, genuine: np.ndarray,
            impostor: np.ndarray) -> tuple[float, float]:
    """Operating point at a threshold: accept iff score >= threshold."""
    far = float(np.mean(impostor >= threshold))
    frr = float(np.mean(genuine < threshold))
    return far, frr


def eer_threshold(genuine: list[float], impostor: list[float]
                  ) -> tuple[float, float]:
    """Threshold where false-accept and false-reject rates meet.

    Candidates are the midpoints between adjacent points of the pooled
    score list (plus the extremes); the candidate minimizing |FAR - FRR|
    wins, ties broken toward the lower threshold, and the reported EER is
    the mean of the two rates there.  A separable gap therefore yields its
    midpoint with EER 0.
    """
    genuine_arr = np.asarray(genuine, dtype=np.float64)
    impostor_arr = np.asarray(impostor, dtype=np.float64)
    if genuine_arr.size == 0 or impostor_arr.size == 0:
        raise InvalidInputError("genuine and impostor score lists must be non-empty")
    pooled = np.unique(np.concatenate([genuine_arr, impostor_arr]))
    candidates = [pooled[0] - 1.0]
    candidates.extend((pooled[:-1] + pooled[1:]) / 2.0)
    candidates.append(pooled[-1] + 1.0)
    best_thr, best_gap, best_eer = None, None, None
    for thr in candidates:
        far, frr = far_frr(thr, genuine_arr, impostor_arr)
        gap = abs(far - frr)
        if best_gap is None or gap < best_gap - 1e-12:
            best_thr, best_gap, best_eer = thr, gap, (far + frr) / 2.0
    return float(best_thr), float(best_eer)


@dataclass(frozen=True)
class SimilarityReport:
    pair_ids: list[str]
    similarities: np.ndarray
    condition: str = ""
    stats: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "pairs": [{"id": pid, "cosine": float(s)}
                      for pid, s in zip(self.pair_ids, self.similarities)],
            "stats": self.stats,
        }


def embedding_similarity_report(clean: list[tuple[str, Waveform]],
                                processed: list[tuple[str, Waveform]],
                                encoder: SpeakerEncoder,
                                condition: str = "") -> SimilarityReport:
    """Per-pair cosine similarity between clean clips and processed versions."""
    clean_map = dict(clean)
    processed_map = dict(processed)
    if set(clean_map) != set(processed_map):
        missing = set(clean_map) ^ set(processed_map)
        raise InvalidInputError(f"unpaired sample ids: {sorted(missing)}")
    if not clean_map:
        raise InvalidInputError("no pairs to compare")
    pair_ids = sorted(clean_map)
    sims = np.array([
        cosine(encoder.embed(clean_map[pid]), encoder.embed(processed_map[pid]))
        for pid in pair_ids
    ])
    stats = {
        "mean": float(np.mean(sims)),
        "median": float(np.median(sims)),
        "q25": float(np.quantile(sims, 0.25)),
        "q75": float(np.quantile(sims, 0.75)),
        "min": float(np.min(sims)),
        "max": float(np.max(sims)),
        "count": int(sims.size),
    }
    return SimilarityReport(pair_ids=pair_ids, similarities=sims,
                            condition=condition, stats=stats)
