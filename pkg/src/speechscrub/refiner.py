"""Stage 2: phoneme-conditioned score-based refinement of complex spectrograms.

The forward process is an Ornstein-Uhlenbeck SDE pulling the clean
spectrogram toward the purified one with stiffness gamma, driven by a
variance-exploding diffusion term

    g(tau) = sigma_min * (sigma_max/sigma_min)^tau * sqrt(2 ln(sigma_max/sigma_min)),

whose perturbation kernel has the closed forms implemented below (the
tests validate them against Euler-Maruyama simulation and the variance
ODE, independent of any literature convention).  Sampling runs the
reverse SDE with an Euler-Maruyama predictor and an annealed Langevin
corrector.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .audio import (ComplexSpectrogram, SpectrogramConfig, Waveform, istft,
                    normalize_by_peak, stft, unwarp_magnitude, warp_magnitude)
from .containers import (check_fingerprint, config_fingerprint, load_container,
                         save_container)
from .errors import InvalidInputError
from .phonemes import (AlignedTranscript, PhonemeDictionary, PhonemeRepresentation,
                       assemble_representation)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OUSDEParams:
    """Stiffness and noise range of the forward SDE."""

    gamma: float = 1.5
    sigma_min: float = 0.05
    sigma_max: float = 0.5
    t_max: float = 1.0
    tau_eps: float = 0.03

    def __post_init__(self):
        if not 0.0 < self.sigma_min < self.sigma_max:
            raise InvalidInputError("need 0 < sigma_min < sigma_max")
        if self.gamma <= 0.0:
            raise InvalidInputError("gamma must be positive")
        if not 0.0 < self.tau_eps < self.t_max:
            raise InvalidInputError("need 0 < tau_eps < t_max")

    @property
    def log_ratio(self) -> float:
        return math.log(self.sigma_max / self.sigma_min)

    def to_dict(self) -> dict:
        return {"gamma": self.gamma, "sigma_min": self.sigma_min,
                "sigma_max": self.sigma_max, "t_max": self.t_max,
                "tau_eps": self.tau_eps}


@dataclass(frozen=True)
class SamplerSettings:
    n_steps: int = 30
    corrector_snr: float = 0.4
    corrector_steps: int = 1

    def __post_init__(self):
        if self.n_steps < 1:
            raise InvalidInputError("n_steps must be >= 1")
        if self.corrector_snr <= 0.0:
            raise InvalidInputError("corrector_snr must be positive")
        if self.corrector_steps < 0:
            raise InvalidInputError("corrector_steps must be >= 0")

    def to_dict(self) -> dict:
        return {"n_steps": self.n_steps, "corrector_snr": self.corrector_snr,
                "corrector_steps": self.corrector_steps}


def ou_mean(m0, y, tau: float, params: OUSDEParams) -> np.ndarray:
    """Perturbation-kernel mean: exp(-gamma tau) m0 + (1 - exp(-gamma tau)) y."""
    m0 = np.asarray(m0)
    y = np.asarray(y)
    if m0.shape != y.shape:
        raise InvalidInputError(f"shape mismatch: m0 {m0.shape} vs y {y.shape}")
    w = math.exp(-params.gamma * tau)
    return w * m0 + (1.0 - w) * y


def ou_variance(tau: float, params: OUSDEParams) -> float:
    """Closed-form perturbation-kernel variance (total complex variance)."""
    L = params.log_ratio
    ratio_pow = (params.sigma_max / params.sigma_min) ** (2.0 * tau)
    decay = math.exp(-2.0 * params.gamma * tau)
    var = params.sigma_min ** 2 * (ratio_pow - decay) * L / (params.gamma + L)
    return max(var, 0.0)


def ou_sigma(tau: float, params: OUSDEParams) -> float:
    return math.sqrt(ou_variance(tau, params))


def diffusion_coefficient(tau: float, params: OUSDEParams) -> float:
    """g(tau) of the forward SDE."""
    return (params.sigma_min * (params.sigma_max / params.sigma_min) ** tau
            * math.sqrt(2.0 * params.log_ratio))


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Circular complex normal with unit total variance per element."""
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return (re + 1j * im) / math.sqrt(2.0)


def forward_perturb(m0, m_pur, tau: float, z, params: OUSDEParams) -> np.ndarray:
    """Sample the diffused state: ou_mean + ou_sigma * z."""
    m0 = np.asarray(m0)
    z = np.asarray(z)
    if z.shape != m0.shape:
        raise InvalidInputError(f"shape mismatch: m0 {m0.shape} vs z {z.shape}")
    return ou_mean(m0, m_pur, tau, params) + ou_sigma(tau, params) * z


def dsm_loss(score_out, z, sigma: float):
    """Denoising score matching objective: mean squared modulus of score + z/sigma.

    Accepts torch tensors (keeps autograd) or numpy arrays (returns float).
    """
    if sigma == 0:
        raise InvalidInputError("sigma must be nonzero")
    if torch.is_tensor(score_out):
        return torch.mean(torch.abs(score_out + z / sigma) ** 2)
    score_out = np.asarray(score_out)
    z = np.asarray(z)
    if score_out.shape != z.shape:
        raise InvalidInputError("score_out and z shapes differ")
    return float(np.mean(np.abs(score_out + z / sigma) ** 2))


class _FourierTimeEmbedding(nn.Module):
    """Random Fourier features of the continuous diffusion time."""

    def __init__(self, dim: int, scale: float = 16.0):
        super().__init__()
        half = dim // 2
        self.register_buffer("freqs", torch.randn(half) * scale)
        self.proj = nn.Sequential(nn.Linear(dim, dim), nn.SiLU(), nn.Linear(dim, dim))

    def forward(self, tau: torch.Tensor) -> torch.Tensor:
        args = 2.0 * math.pi * tau[:, None] * self.freqs[None, :]
        emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
        return self.proj(emb)


class _ConvBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, emb_dim: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1)
        self.norm1 = nn.GroupNorm(min(8, out_ch), out_ch)
        self.emb_proj = nn.Linear(emb_dim, out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.norm2 = nn.GroupNorm(min(8, out_ch), out_ch)

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = torch.nn.functional.silu(self.norm1(self.conv1(x)))
        h = h + self.emb_proj(emb)[:, :, None, None]
        return torch.nn.functional.silu(self.norm2(self.conv2(h)))


class ScoreNet(nn.Module):
    """Small U-shaped score network over [channels x bins x frames] inputs.

    Inputs carry the noised spectrogram, the purified conditioning
    spectrogram (both as real/imag channel pairs) and the warped phoneme
    conditioning channel; the output pair is the raw (unscaled) score.
    """

    def __init__(self, in_channels: int = 5, base_channels: int = 16,
                 emb_dim: int = 64):
        super().__init__()
        self.hyper = {"in_channels": in_channels, "base_channels": base_channels,
                      "emb_dim": emb_dim}
        b = base_channels
        self.embedding = _FourierTimeEmbedding(emb_dim)
        self.enc1 = _ConvBlock(in_channels, b, emb_dim)
        self.enc2 = _ConvBlock(b, 2 * b, emb_dim, stride=2)
        self.bottleneck = _ConvBlock(2 * b, 4 * b, emb_dim, stride=2)
        self.up2 = nn.ConvTranspose2d(4 * b, 2 * b, 2, stride=2)
        self.dec2 = _ConvBlock(4 * b, 2 * b, emb_dim)
        self.up1 = nn.ConvTranspose2d(2 * b, b, 2, stride=2)
        self.dec1 = _ConvBlock(2 * b, b, emb_dim)
        self.out = nn.Conv2d(b, 2, 3, padding=1)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, x: torch.Tensor, tau: torch.Tensor) -> torch.Tensor:
        emb = self.embedding(tau)
        h1 = self.enc1(x, emb)
        h2 = self.enc2(h1, emb)
        h3 = self.bottleneck(h2, emb)
        d2 = self.dec2(torch.cat([self.up2(h3), h2], dim=1), emb)
        d1 = self.dec1(torch.cat([self.up1(d2), h1], dim=1), emb)
        return self.out(d1)


def _stack_channels(m_tau: np.ndarray, m_pur: np.ndarray,
                    lam: np.ndarray) -> np.ndarray:
    """[5 x bins x frames] float32 input: state, conditioning, warped phonemes."""
    return np.stack([m_tau.real, m_tau.imag, m_pur.real, m_pur.imag,
                     np.sqrt(np.maximum(lam, 0.0))]).astype(np.float32)


def _pad_to_multiple(x: torch.Tensor, multiple: int = 4) -> tuple[torch.Tensor, int, int]:
    bins, frames = x.shape[-2], x.shape[-1]
    pad_b = (-bins) % multiple
    pad_f = (-frames) % multiple
    if pad_b or pad_f:
        x = torch.nn.functional.pad(x, (0, pad_f, 0, pad_b))
    return x, bins, frames


class ScoreEstimator:
    """Learned score with a numpy-facing deterministic interface.

    The network predicts the unscaled score; dividing by sigma(tau) gives
    the variance-exploding parameterization the sampler consumes.
    """

    def __init__(self, net: ScoreNet, params: OUSDEParams,
                 stft_fingerprint: str = "", dictionary_fingerprint: str = "",
                 loss_history: list[float] | None = None):
        self.net = net.eval()
        self.params = params
        self.stft_fingerprint = stft_fingerprint
        self.dictionary_fingerprint = dictionary_fingerprint
        self.loss_history = loss_history or []

    def score(self, m_tau: np.ndarray, m_pur: np.ndarray, lam: np.ndarray,
              tau: float) -> np.ndarray:
        if m_tau.shape != m_pur.shape or m_tau.shape != lam.shape:
            raise InvalidInputError("state, conditioning and phoneme shapes differ")
        x = torch.from_numpy(_stack_channels(m_tau, m_pur, lam))[None]
        x, bins, frames = _pad_to_multiple(x)
        with torch.no_grad():
            raw = self.net(x, torch.tensor([float(tau)]))
        raw = raw[0, :, :bins, :frames].double().numpy()
        sigma = ou_sigma(tau, self.params)
        if sigma == 0.0:
            raise InvalidInputError("score is undefined at tau with zero noise")
        return (raw[0] + 1j * raw[1]) / sigma


class AnalyticScoreModel:
    """Exact score for a circular Gaussian target centered near the conditioner.

    Oracle for the sampler: with target m0 ~ CN(target_mean, target_var I),
    the score of the diffused marginal at time tau is
    -(m - mu_tau) / (exp(-2 gamma tau) target_var + sigma(tau)^2).
    """

    def __init__(self, target_mean: np.ndarray, target_var: float,
                 params: OUSDEParams):
        self.target_mean = np.asarray(target_mean)
        self.target_var = float(target_var)
        self.params = params

    def score(self, m_tau, m_pur, lam, tau: float) -> np.ndarray:
        w = math.exp(-self.params.gamma * tau)
        mu_tau = w * self.target_mean + (1.0 - w) * np.asarray(m_pur)
        v_tau = w * w * self.target_var + ou_variance(tau, self.params)
        return -(np.asarray(m_tau) - mu_tau) / v_tau


class ZeroScoreModel:
    """Degenerate score (always zero); sampler shape/termination checks."""

    def score(self, m_tau, m_pur, lam, tau: float) -> np.ndarray:
        return np.zeros_like(np.asarray(m_tau))


def refine(m_pur: ComplexSpectrogram, lam: PhonemeRepresentation, model,
           params: OUSDEParams | None = None,
           sampler: SamplerSettings | None = None,
           rng_seed: int = 0) -> ComplexSpectrogram:
    """Predictor-corrector reverse sampling from m_pur + sigma(T) z down to tau_eps.

    Each of the n_steps iterations takes one reverse-SDE Euler-Maruyama
    predictor step of size (t_max - tau_eps)/n_steps followed by
    corrector_steps annealed Langevin updates with step size
    2 (snr ||z|| / ||score||)^2.  The conditioning pair (m_pur, phonemes)
    is held fixed throughout.  Deterministic given rng_seed.
    """
    params = params or OUSDEParams()
    sampler = sampler or SamplerSettings()
    y = m_pur.data
    lam_data = np.asarray(lam.data if isinstance(lam, PhonemeRepresentation) else lam)
    if lam_data.shape != y.shape:
        raise InvalidInputError(
            f"phoneme representation shape {lam_data.shape} differs from "
            f"spectrogram shape {y.shape}"
        )
    rng = np.random.default_rng(rng_seed)
    t_ref = params.t_max
    dtau = (t_ref - params.tau_eps) / sampler.n_steps
    m = y + ou_sigma(t_ref, params) * complex_normal(rng, y.shape)
    tau = t_ref
    for _ in range(sampler.n_steps):
        # predictor: Euler-Maruyama step of the reverse SDE
        s = model.score(m, y, lam_data, tau)
        g = diffusion_coefficient(tau, params)
        drift = params.gamma * (y - m) - g * g * s
        z_p = complex_normal(rng, y.shape)
        m = m - drift * dtau + g * math.sqrt(dtau) * z_p
        tau = tau - dtau
        # corrector: annealed Langevin dynamics at the new time
        for _ in range(sampler.corrector_steps):
            s = model.score(m, y, lam_data, tau)
            z_c = complex_normal(rng, y.shape)
            s_norm = float(np.linalg.norm(s))
            if s_norm == 0.0:
                continue
            z_norm = float(np.linalg.norm(z_c))
            eps_c = 2.0 * (sampler.corrector_snr * z_norm / s_norm) ** 2
            m = m + eps_c * s + math.sqrt(2.0 * eps_c) * z_c
    return ComplexSpectrogram(data=m, config=m_pur.config, warped=m_pur.warped)


def refine_waveform(x_pur: Waveform, transcript: AlignedTranscript,
                    dictionary: PhonemeDictionary, model,
                    params: OUSDEParams | None = None,
                    sampler: SamplerSettings | None = None,
                    rng_seed: int = 0) -> Waveform:
    """Full stage-2 path from a purified waveform to the refined waveform.

    normalize by peak -> STFT -> sqrt warp -> assemble phoneme conditioning
    -> reverse sampling -> unwarp -> inverse STFT -> restore scale.
    """
    config = dictionary.config
    normalized, scale = normalize_by_peak(x_pur, x_pur)
    spec = stft(normalized, config)
    warped = warp_magnitude(spec)
    lam = assemble_representation(transcript, spec.n_frames, dictionary)
    m_ref = refine(warped, lam, model, params=params, sampler=sampler,
                   rng_seed=rng_seed)
    restored = unwarp_magnitude(m_ref)
    out = istft(restored, config, out_length=len(x_pur))
    return Waveform(samples=out.samples * scale, sample_rate=x_pur.sample_rate)


@dataclass(frozen=True)
class TrainingPair:
    """Clean/purified spectrogram pair plus the clip's phoneme conditioning.

    Both spectrograms must be warped, share the clean clip's frame count,
    and be normalized by the same (purified-peak) scale; the phoneme matrix
    stays linear and is warped at network-input assembly.
    """

    clean: ComplexSpectrogram
    purified: ComplexSpectrogram
    phoneme_rep: PhonemeRepresentation

    def __post_init__(self):
        frames = {self.clean.n_frames, self.purified.n_frames,
                  self.phoneme_rep.n_frames}
        if len(frames) != 1:
            raise InvalidInputError(f"frame counts differ across the pair: {frames}")
        if not (self.clean.warped and self.purified.warped):
            raise InvalidInputError("training spectrograms must be magnitude-warped")


@dataclass(frozen=True)
class RefinerTrainingConfig:
    steps: int = 400
    batch_size: int = 4
    learning_rate: float = 1e-4
    seed: int = 0
    crop_frames: int = 256
    log_every: int = 50
    base_channels: int = 16
    grad_clip: float = 5.0


def _crop_or_pad(data: np.ndarray, start: int, length: int) -> tuple[np.ndarray, np.ndarray]:
    """Frame crop [start, start+length), zero-padded with a validity mask."""
    bins, frames = data.shape
    out = np.zeros((bins, length), dtype=data.dtype)
    mask = np.zeros(length)
    take = min(length, frames - start)
    if take > 0:
        out[:, :take] = data[:, start:start + take]
        mask[:take] = 1.0
    return out, mask


def train_refiner(pairs: list[TrainingPair], params: OUSDEParams | None = None,
                  config: RefinerTrainingConfig | None = None) -> ScoreEstimator:
    """Fit the score network with the denoising score matching objective.

    Per step: uniform pair choice, uniform 256-frame crop (zero-padded with
    a mask when the clip is shorter), tau uniform in [tau_eps, t_max].
    Deterministic under config.seed.
    """
    params = params or OUSDEParams()
    config = config or RefinerTrainingConfig()
    if not pairs:
        raise InvalidInputError("no training pairs")
    rng = np.random.default_rng(config.seed)
    torch.manual_seed(config.seed)
    net = ScoreNet(base_channels=config.base_channels)
    net.train()
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    n_bins = pairs[0].clean.config.n_bins
    losses: list[float] = []
    for step in range(config.steps):
        m0 = np.empty((config.batch_size, n_bins, config.crop_frames), dtype=complex)
        y = np.empty_like(m0)
        lam = np.empty((config.batch_size, n_bins, config.crop_frames))
        mask = np.empty((config.batch_size, config.crop_frames))
        taus = rng.uniform(params.tau_eps, params.t_max, size=config.batch_size)
        for row in range(config.batch_size):
            pair = pairs[int(rng.integers(0, len(pairs)))]
            frames = pair.clean.n_frames
            start = int(rng.integers(0, max(1, frames - config.crop_frames + 1)))
            m0[row], mask[row] = _crop_or_pad(pair.clean.data, start, config.crop_frames)
            y[row], _ = _crop_or_pad(pair.purified.data, start, config.crop_frames)
            lam[row], _ = _crop_or_pad(pair.phoneme_rep.data, start, config.crop_frames)
        z = complex_normal(rng, m0.shape)
        sigmas = np.array([ou_sigma(t, params) for t in taus])
        weights = np.exp(-params.gamma * taus)[:, None, None]
        m_tau = weights * m0 + (1.0 - weights) * y + sigmas[:, None, None] * z
        x = np.stack([
            _stack_channels(m_tau[row], y[row], lam[row])
            for row in range(config.batch_size)
        ])
        xt = torch.from_numpy(x)
        tau_t = torch.from_numpy(taus.astype(np.float32))
        raw = net(xt, tau_t)
        sigma_t = torch.from_numpy(sigmas.astype(np.float32))[:, None, None]
        score = torch.complex(raw[:, 0], raw[:, 1]) / sigma_t
        target = torch.from_numpy((z / sigmas[:, None, None]).astype(np.complex64))
        mask_t = torch.from_numpy(mask.astype(np.float32))[:, None, :]
        residual_sq = torch.abs(score + target) ** 2 * mask_t
        loss = residual_sq.sum() / (mask_t.sum() * n_bins)
        opt.zero_grad()
        loss.backward()
        if config.grad_clip:
            torch.nn.utils.clip_grad_norm_(net.parameters(), config.grad_clip)
        opt.step()
        losses.append(float(loss.item()))
        if config.log_every and step % config.log_every == 0:
            log.info("refiner step %d/%d loss %.5f", step, config.steps, losses[-1])
    net.eval()
    return ScoreEstimator(net, params, loss_history=losses)


def save_refiner(path, model: ScoreEstimator, sampler: SamplerSettings | None = None,
                 stft_config: SpectrogramConfig | None = None) -> None:
    sampler = sampler or SamplerSettings()
    stft_config = stft_config or SpectrogramConfig()
    meta = {
        "hyper": model.net.hyper,
        "ou_params": model.params.to_dict(),
        "sampler": sampler.to_dict(),
        "stft_fingerprint": model.stft_fingerprint
        or config_fingerprint(stft_config.to_dict()),
        "dictionary_fingerprint": model.dictionary_fingerprint,
    }
    arrays = {f"param.{name}": tensor.detach().numpy()
              for name, tensor in model.net.state_dict().items()}
    save_container(path, kind="refiner", meta=meta, arrays=arrays)


def load_refiner(path, expected_stft: SpectrogramConfig | None = None,
                 expected_dictionary_fingerprint: str | None = None
                 ) -> tuple[ScoreEstimator, SamplerSettings]:
    meta, arrays = load_container(path, kind="refiner")
    if expected_stft is not None:
        check_fingerprint(meta["stft_fingerprint"],
                          config_fingerprint(expected_stft.to_dict()), "STFT config")
    if expected_dictionary_fingerprint is not None and meta["dictionary_fingerprint"]:
        check_fingerprint(meta["dictionary_fingerprint"],
                          expected_dictionary_fingerprint, "phoneme dictionary")
    net = ScoreNet(**meta["hyper"])
    state = {name[len("param."):]: torch.from_numpy(arr)
             for name, arr in arrays.items() if name.startswith("param.")}
    net.load_state_dict(state)
    params = OUSDEParams(**meta["ou_params"])
    estimator = ScoreEstimator(net, params,
                               stft_fingerprint=meta["stft_fingerprint"],
                               dictionary_fingerprint=meta["dictionary_fingerprint"])
    return estimator, SamplerSettings(**meta["sampler"])
