"""Two-stage removal of anti-voice-cloning perturbations from speech.

Stage 1 purifies the waveform with a small unconditional diffusion model;
stage 2 refines the result in the complex spectrogram domain with a
phoneme-conditioned score-based model.  A protection simulator (toy
speaker encoder + embedding-space PGD, plus a BPDA+EOT adaptive variant)
and a verification/metrics harness exercise the pipeline end to end.
"""

from .audio import (ComplexSpectrogram, SpectrogramConfig, Waveform, chunk_fixed,
                    concat_chunks, istft, normalize_by_peak, read_wav, snr_db, stft,
                    unwarp_magnitude, warp_magnitude, write_wav)
from .errors import (AlignmentFormatError, CheckpointMismatchError, ConfigError,
                     DataError, DegenerateInputError, InvalidInputError,
                     SpeechScrubError, StateError)
from .evaluation import (QualityScorer, SimilarityReport, VerificationReport,
                         VerificationSystem, eer_threshold,
                         embedding_similarity_report, sva)
from .phonemes import (AlignedTranscript, PhonemeDictionary, PhonemeInterval,
                       PhonemeRepresentation, assemble_representation,
                       build_dictionary, frames_for_interval, load_dictionary,
                       parse_alignment, save_dictionary)
from .protection import (ProtectionConfig, SpeakerEncoder, bpda_eot_protect,
                         cosine, embedding_attack, load_encoder, save_encoder,
                         train_toy_encoder)
from .purifier import (DenoiserModel, NoiseSchedule, PurifierSettings,
                       build_schedule, forward_diffuse, load_purifier, purify,
                       reverse_step, save_purifier, train_purifier)
from .refiner import (OUSDEParams, SamplerSettings, ScoreEstimator, TrainingPair,
                      complex_normal, dsm_loss, forward_perturb, load_refiner,
                      ou_mean, ou_sigma, refine, refine_waveform, save_refiner,
                      train_refiner)

__version__ = "0.1.0"
