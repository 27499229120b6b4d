"""Protective-perturbation generation against a toy speaker encoder.

The encoder embeds waveforms on the unit sphere; protection runs
sign-gradient PGD on cosine similarity in that embedding space, either
pushing away from the clip's own embedding or toward a supplied target.
The adaptive variant wraps the same loop with BPDA (purification treated
as identity in the backward pass) and expectation over stochastic
purification draws.
"""

from __future__ import annotations

import inspect
import logging
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .audio import Waveform, sqrt_hann_window
from .containers import load_container, save_container
from .errors import InvalidInputError

log = logging.getLogger(__name__)

MODE_UNTARGETED = "untargeted-away"
MODE_TARGETED = "targeted-toward"


@dataclass(frozen=True)
class ProtectionConfig:
    epsilon: float = 0.008
    n_iters: int = 100
    step_size: float | None = None
    mode: str = MODE_UNTARGETED
    target_embedding: np.ndarray | None = None

    def __post_init__(self):
        if self.epsilon < 0:
            raise InvalidInputError("epsilon must be >= 0")
        if self.n_iters < 0:
            raise InvalidInputError("n_iters must be >= 0")
        if self.mode not in (MODE_UNTARGETED, MODE_TARGETED):
            raise InvalidInputError(f"unknown protection mode {self.mode!r}")
        if self.mode == MODE_TARGETED and self.target_embedding is None:
            raise InvalidInputError("targeted mode requires target_embedding")
        step = self.step_size if self.step_size is not None else self.epsilon / 10.0
        if step > self.epsilon:
            raise InvalidInputError("step_size must not exceed epsilon")
        object.__setattr__(self, "step_size", step)


class EncoderNet(nn.Module):
    """Spectral conv-net speaker embedder, differentiable end to end."""

    def __init__(self, window_size: int = 510, hop_length: int = 128,
                 channels: int = 48, embed_dim: int = 32):
        super().__init__()
        self.hyper = {"window_size": window_size, "hop_length": hop_length,
                      "channels": channels, "embed_dim": embed_dim}
        self.window_size = window_size
        self.hop_length = hop_length
        n_bins = window_size // 2 + 1
        self.register_buffer("window",
                             torch.from_numpy(np.asarray(sqrt_hann_window(window_size),
                                                         dtype=np.float32)))
        self.conv = nn.Sequential(
            nn.Conv1d(n_bins, channels, 5, padding=2),
            nn.GroupNorm(8, channels), nn.SiLU(),
            nn.Conv1d(channels, channels, 3, stride=2, padding=1),
            nn.GroupNorm(8, channels), nn.SiLU(),
            nn.Conv1d(channels, channels, 3, padding=1), nn.SiLU(),
        )
        self.head = nn.Linear(2 * channels, embed_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] < self.window_size:
            x = torch.nn.functional.pad(x, (0, self.window_size - x.shape[-1]))
        frames = x.unfold(-1, self.window_size, self.hop_length) * self.window
        mag = torch.abs(torch.fft.rfft(frames, dim=-1))
        feats = torch.log1p(mag).transpose(1, 2)
        h = self.conv(feats)
        pooled = torch.cat([h.mean(dim=2), h.std(dim=2, unbiased=False)], dim=1)
        emb = self.head(pooled)
        return emb / emb.norm(dim=1, keepdim=True).clamp_min(1e-12)


class SpeakerEncoder:
    """Unit-norm speaker embeddings with numpy and torch entry points."""

    def __init__(self, net: EncoderNet):
        self.net = net.eval()

    @property
    def embed_dim(self) -> int:
        return self.net.hyper["embed_dim"]

    def embed_tensor(self, x: torch.Tensor) -> torch.Tensor:
        """Differentiable batched embedding of [B, L] float tensors."""
        return self.net(x)

    def embed(self, wave: Waveform) -> np.ndarray:
        with torch.no_grad():
            x = torch.from_numpy(wave.samples.astype(np.float32))[None]
            return self.net(x)[0].double().numpy()


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0:
        raise InvalidInputError("cosine of a zero vector is undefined")
    return float(np.dot(a, b) / denom)


@dataclass(frozen=True)
class EncoderTrainingConfig:
    steps: int = 300
    batch_size: int = 16
    learning_rate: float = 1e-3
    seed: int = 0
    train_len: int = 16000
    log_every: int = 50


def train_toy_encoder(corpus: list[tuple[Waveform, str]],
                      config: EncoderTrainingConfig | None = None) -> SpeakerEncoder:
    """Train the embedder with a softmax speaker-classification head.

    The head is discarded after training; only the unit-norm embedding
    survives.  Deterministic under config.seed.
    """
    config = config or EncoderTrainingConfig()
    speakers = sorted({sid for _, sid in corpus})
    if len(speakers) < 2:
        raise InvalidInputError("need at least two speakers to train an encoder")
    spk_index = {sid: i for i, sid in enumerate(speakers)}
    clips = []
    labels = []
    for wave, sid in corpus:
        x = wave.samples
        if x.size < config.train_len:
            padded = np.zeros(config.train_len)
            padded[:x.size] = x
            x = padded
        clips.append(x)
        labels.append(spk_index[sid])
    labels_arr = np.asarray(labels)
    rng = np.random.default_rng(config.seed)
    torch.manual_seed(config.seed)
    net = EncoderNet()
    classifier = nn.Linear(net.hyper["embed_dim"], len(speakers))
    logit_scale = nn.Parameter(torch.tensor(10.0))
    opt = torch.optim.Adam(list(net.parameters()) + list(classifier.parameters())
                           + [logit_scale], lr=config.learning_rate)
    net.train()
    for step in range(config.steps):
        idx = rng.integers(0, len(clips), size=config.batch_size)
        batch = np.empty((config.batch_size, config.train_len))
        for row, i in enumerate(idx):
            clip = clips[i]
            if clip.size > config.train_len:
                start = int(rng.integers(0, clip.size - config.train_len + 1))
                batch[row] = clip[start:start + config.train_len]
            else:
                batch[row] = clip
        xb = torch.from_numpy(batch.astype(np.float32))
        yb = torch.from_numpy(labels_arr[idx])
        emb = net(xb)
        logits = logit_scale * classifier(emb)
        loss = torch.nn.functional.cross_entropy(logits, yb)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if config.log_every and step % config.log_every == 0:
            log.info("encoder step %d/%d loss %.4f", step, config.steps,
                     float(loss.item()))
    net.eval()
    return SpeakerEncoder(net)


def _exact_budget(x: np.ndarray, x_prime: np.ndarray, eps: float) -> np.ndarray:
    """Nudge samples so the recomputed difference obeys the budget bit-exactly."""
    x_prime = x_prime.copy()
    over = np.abs(x_prime - x) > eps
    while np.any(over):
        x_prime[over] = np.nextafter(x_prime[over], x[over])
        over = np.abs(x_prime - x) > eps
    return x_prime


def _pgd_protect(x: Waveform, encoder: SpeakerEncoder, config: ProtectionConfig,
                 seed: int, purify_fn=None, eot_size: int = 1) -> Waveform:
    if eot_size < 1:
        raise InvalidInputError("eot_size must be >= 1")
    samples = x.samples
    if config.epsilon == 0.0 or config.n_iters == 0:
        return Waveform(samples=samples.copy(), sample_rate=x.sample_rate)
    rng = np.random.default_rng(seed)
    accepts_seed = False
    if purify_fn is not None:
        try:
            accepts_seed = "seed" in inspect.signature(purify_fn).parameters
        except (TypeError, ValueError):
            accepts_seed = False

    with torch.no_grad():
        own = encoder.embed_tensor(
            torch.from_numpy(samples.astype(np.float32))[None])[0]
    if config.mode == MODE_TARGETED:
        ref = torch.from_numpy(np.asarray(config.target_embedding, dtype=np.float32))
        sign = -1.0  # maximize similarity to the target
    else:
        ref = own
        sign = 1.0  # minimize similarity to the own embedding

    # random start inside the budget ball: at delta = 0 the untargeted
    # cosine loss sits exactly at its maximum, where the gradient
    # underflows to zero and sign-PGD would never move
    delta = rng.uniform(-config.epsilon, config.epsilon, size=samples.shape)
    delta = np.clip(samples + delta, -1.0, 1.0) - samples
    for _ in range(config.n_iters):
        grad_sum = np.zeros_like(samples)
        for _ in range(eot_size):
            candidate = samples + delta
            if purify_fn is None:
                view = candidate
            elif accepts_seed:
                view = purify_fn(Waveform(samples=candidate, sample_rate=x.sample_rate),
                                 seed=int(rng.integers(0, 2 ** 31))).samples
            else:
                view = purify_fn(Waveform(samples=candidate,
                                          sample_rate=x.sample_rate)).samples
            yt = torch.from_numpy(view.astype(np.float32))[None]
            yt.requires_grad_(True)
            emb = encoder.embed_tensor(yt)[0]
            loss = sign * torch.nn.functional.cosine_similarity(emb, ref, dim=0)
            loss.backward()
            # BPDA: the purification map is treated as identity, so the
            # gradient at its output applies directly to the input.
            grad_sum += yt.grad[0].double().numpy()
        grad = grad_sum / eot_size
        delta = delta - config.step_size * np.sign(grad)
        delta = np.clip(delta, -config.epsilon, config.epsilon)
        delta = np.clip(samples + delta, -1.0, 1.0) - samples
    delta = np.clip(delta, -config.epsilon, config.epsilon)
    protected = _exact_budget(samples, np.clip(samples + delta, -1.0, 1.0),
                              config.epsilon)
    return Waveform(samples=protected, sample_rate=x.sample_rate)


def embedding_attack(x: Waveform, encoder: SpeakerEncoder,
                     config: ProtectionConfig | None = None,
                     seed: int = 0) -> Waveform:
    """Embedding-space PGD protection with an exact L-infinity budget."""
    return _pgd_protect(x, encoder, config or ProtectionConfig(), seed)


def bpda_eot_protect(x: Waveform, encoder: SpeakerEncoder, purify_fn,
                     eot_size: int = 1, config: ProtectionConfig | None = None,
                     seed: int = 0) -> Waveform:
    """Adaptive protection through a stochastic purifier.

    Per PGD iteration, eot_size purification outcomes of the current
    perturbed clip are drawn (purify_fn may accept a `seed` kwarg fed from
    this function's stream), losses are evaluated on each purified output,
    and their input gradients are averaged with the purifier treated as an
    identity map in the backward pass.
    """
    if eot_size < 1:
        raise InvalidInputError("eot_size must be >= 1")
    config = config or ProtectionConfig(n_iters=150)
    return _pgd_protect(x, encoder, config, seed, purify_fn=purify_fn,
                        eot_size=eot_size)


def save_encoder(path, encoder: SpeakerEncoder) -> None:
    arrays = {f"param.{name}": tensor.detach().numpy()
              for name, tensor in encoder.net.state_dict().items()}
    save_container(path, kind="encoder", meta={"hyper": encoder.net.hyper},
                   arrays=arrays)


def load_encoder(path) -> SpeakerEncoder:
    meta, arrays = load_container(path, kind="encoder")
    net = EncoderNet(**meta["hyper"])
    state = {name[len("param."):]: torch.from_numpy(arr)
             for name, arr in arrays.items() if name.startswith("param.")}
    net.load_state_dict(state)
    return SpeakerEncoder(net)


def embedding_displacement(encoder: SpeakerEncoder, original: Waveform,
                           modified: Waveform) -> float:
    """1 - cosine between the embeddings of two versions of a clip."""
    return 1.0 - cosine(encoder.embed(original), encoder.embed(modified))
