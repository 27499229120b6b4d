"""Stage 1: waveform-domain diffusion purification.

A small unconditional DDPM over 16k-sample chunks: noise the input a few
steps with the closed-form forward marginal, then run the learned
ancestral reverse chain back down.  The denoiser predicts the injected
noise; the reverse step uses the posterior variance with no noise on the
final step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .audio import Waveform, chunk_fixed, concat_chunks
from .containers import (check_fingerprint, config_fingerprint, load_container,
                         save_container)
from .errors import InvalidInputError

log = logging.getLogger(__name__)

DEFAULT_T_MAX = 50
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.05


@dataclass(frozen=True)
class NoiseSchedule:
    """Discrete variance schedule beta_t and its cumulative products."""

    betas: np.ndarray
    alphas_bar: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "betas", np.asarray(self.betas, dtype=np.float64))
        object.__setattr__(self, "alphas_bar",
                           np.asarray(self.alphas_bar, dtype=np.float64))

    @property
    def t_max(self) -> int:
        return self.betas.size

    def beta(self, t: int) -> float:
        self._check_t(t)
        return float(self.betas[t - 1])

    def alpha_bar(self, t: int) -> float:
        if t == 0:
            return 1.0
        self._check_t(t)
        return float(self.alphas_bar[t - 1])

    def _check_t(self, t: int) -> None:
        if not 1 <= t <= self.t_max:
            raise InvalidInputError(f"step t={t} outside schedule range [1, {self.t_max}]")

    def fingerprint(self) -> str:
        return config_fingerprint({"betas": self.betas.tolist()})


def build_schedule(t_max: int = DEFAULT_T_MAX, beta_start: float = DEFAULT_BETA_START,
                   beta_end: float = DEFAULT_BETA_END) -> NoiseSchedule:
    """Linear beta schedule with precomputed cumulative alpha products."""
    if t_max < 1:
        raise InvalidInputError("t_max must be >= 1")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise InvalidInputError(
            f"need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
        )
    if t_max == 1:
        betas = np.array([beta_start])
    else:
        betas = beta_start + np.arange(t_max) / (t_max - 1) * (beta_end - beta_start)
    return NoiseSchedule(betas=betas, alphas_bar=np.cumprod(1.0 - betas))


@dataclass(frozen=True)
class PurifierSettings:
    """Inference-time knobs. t_pur=0 bypasses purification entirely."""

    t_pur: int = 3
    chunk_len: int = 16000

    def __post_init__(self):
        if self.t_pur < 0:
            raise InvalidInputError("t_pur must be >= 0")
        if self.chunk_len <= 0:
            raise InvalidInputError("chunk_len must be positive")


def forward_diffuse(x0: np.ndarray, t: int, noise: np.ndarray,
                    schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form forward marginal: sqrt(abar_t) x0 + sqrt(1-abar_t) noise."""
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if x0.shape != noise.shape:
        raise InvalidInputError(f"shape mismatch: x0 {x0.shape} vs noise {noise.shape}")
    abar = schedule.alpha_bar(t)
    return math.sqrt(abar) * x0 + math.sqrt(1.0 - abar) * noise


def reverse_step(x_t: np.ndarray, t: int, model, schedule: NoiseSchedule,
                 noise: np.ndarray | None = None) -> np.ndarray:
    """One ancestral reverse step t -> t-1 with posterior variance (zero at t=1)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    beta = schedule.beta(t)
    abar_t = schedule.alpha_bar(t)
    abar_prev = schedule.alpha_bar(t - 1)
    eps_hat = np.asarray(model.predict_noise(x_t, t), dtype=np.float64)
    if eps_hat.shape != x_t.shape:
        raise InvalidInputError("denoiser output shape differs from input shape")
    mean = (x_t - beta / math.sqrt(1.0 - abar_t) * eps_hat) / math.sqrt(1.0 - beta)
    if t == 1:
        return mean
    sigma = math.sqrt(beta * (1.0 - abar_prev) / (1.0 - abar_t))
    if noise is None:
        noise = np.zeros_like(x_t)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != x_t.shape:
        raise InvalidInputError("noise shape differs from state shape")
    return mean + sigma * noise


class _StepEmbedding(nn.Module):
    """Sinusoidal embedding of the integer diffusion step."""

    def __init__(self, dim: int):
        super().__init__()
        half = dim // 2
        freqs = torch.exp(-math.log(10000.0) * torch.arange(half) / max(half - 1, 1))
        self.register_buffer("freqs", freqs)
        self.proj = nn.Sequential(nn.Linear(dim, dim), nn.SiLU(), nn.Linear(dim, dim))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        args = t.float()[:, None] * self.freqs[None, :]
        emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
        return self.proj(emb)


class _DilatedBlock(nn.Module):
    def __init__(self, channels: int, dilation: int, emb_dim: int):
        super().__init__()
        self.embed_proj = nn.Linear(emb_dim, channels)
        self.conv = nn.Conv1d(channels, 2 * channels, kernel_size=3,
                              padding=dilation, dilation=dilation)
        self.out = nn.Conv1d(channels, channels, kernel_size=1)

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = x + self.embed_proj(emb)[:, :, None]
        h = self.conv(h)
        gate, filt = h.chunk(2, dim=1)
        h = torch.sigmoid(gate) * torch.tanh(filt)
        return x + self.out(h)


class DenoiserNet(nn.Module):
    """Dilated 1-D convolutional residual noise predictor."""

    def __init__(self, channels: int = 24, n_blocks: int = 8, emb_dim: int = 64,
                 dilation_cycle: int = 8):
        super().__init__()
        self.hyper = {"channels": channels, "n_blocks": n_blocks, "emb_dim": emb_dim,
                      "dilation_cycle": dilation_cycle}
        self.embedding = _StepEmbedding(emb_dim)
        self.input_proj = nn.Conv1d(1, channels, kernel_size=1)
        self.blocks = nn.ModuleList([
            _DilatedBlock(channels, 2 ** (i % dilation_cycle), emb_dim)
            for i in range(n_blocks)
        ])
        self.output_proj = nn.Sequential(
            nn.Conv1d(channels, channels, kernel_size=1), nn.SiLU(),
            nn.Conv1d(channels, 1, kernel_size=1),
        )
        nn.init.zeros_(self.output_proj[-1].weight)
        nn.init.zeros_(self.output_proj[-1].bias)

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        emb = self.embedding(t)
        h = torch.relu(self.input_proj(x))
        for block in self.blocks:
            h = block(h, emb)
        return self.output_proj(h)


class DenoiserModel:
    """Learned noise predictor with a numpy-facing deterministic interface."""

    def __init__(self, net: DenoiserNet, schedule_fingerprint: str,
                 loss_history: list[float] | None = None):
        self.net = net.eval()
        self.schedule_fingerprint = schedule_fingerprint
        self.loss_history = loss_history or []

    def predict_noise(self, x_t: np.ndarray, t: int) -> np.ndarray:
        x_t = np.asarray(x_t, dtype=np.float64)
        squeeze = x_t.ndim == 1
        batch = x_t[None, :] if squeeze else x_t
        with torch.no_grad():
            xt = torch.from_numpy(np.ascontiguousarray(batch, dtype=np.float32))
            tt = torch.full((xt.shape[0],), int(t), dtype=torch.long)
            pred = self.net(xt[:, None, :], tt)[:, 0, :].double().numpy()
        return pred[0] if squeeze else pred


class AnalyticGaussianDenoiser:
    """Exact posterior-mean noise predictor for scalar Gaussian data.

    For x0 ~ N(mu0, s0^2) the conditional expectation of the injected
    noise given the diffused state has a closed form; running the reverse
    chain with it is a ground-truth oracle for the sampler.
    """

    def __init__(self, mu0: float, s0: float, schedule: NoiseSchedule):
        self.mu0 = float(mu0)
        self.s0 = float(s0)
        self.schedule = schedule

    def predict_noise(self, x_t: np.ndarray, t: int) -> np.ndarray:
        abar = self.schedule.alpha_bar(t)
        var_t = abar * self.s0 ** 2 + (1.0 - abar)
        return math.sqrt(1.0 - abar) * (np.asarray(x_t) - math.sqrt(abar) * self.mu0) / var_t


def purify(x_adv: Waveform, model, schedule: NoiseSchedule,
           settings: PurifierSettings | None = None, rng_seed: int = 0) -> Waveform:
    """Forward-diffuse t_pur steps (one closed-form jump) then denoise back.

    Chunks are processed independently, each consuming fresh draws from the
    seeded stream; output length always equals input length.
    """
    settings = settings or PurifierSettings()
    if settings.t_pur == 0:
        return x_adv
    if settings.t_pur > schedule.t_max:
        raise InvalidInputError(
            f"t_pur={settings.t_pur} exceeds schedule length {schedule.t_max}"
        )
    rng = np.random.default_rng(rng_seed)
    chunks, meta = chunk_fixed(x_adv, settings.chunk_len)
    out = []
    for chunk in chunks:
        eps = rng.standard_normal(settings.chunk_len)
        x_t = forward_diffuse(chunk.samples, settings.t_pur, eps, schedule)
        for t in range(settings.t_pur, 0, -1):
            z = rng.standard_normal(settings.chunk_len)
            x_t = reverse_step(x_t, t, model, schedule, z)
        out.append(Waveform(samples=x_t, sample_rate=x_adv.sample_rate))
    return concat_chunks(out, meta)


@dataclass(frozen=True)
class PurifierTrainingConfig:
    steps: int = 400
    batch_size: int = 4
    learning_rate: float = 2e-4
    seed: int = 0
    log_every: int = 50
    channels: int = 24
    n_blocks: int = 8
    chunk_len: int = 16000


def train_purifier(dataset: list[Waveform], schedule: NoiseSchedule,
                   config: PurifierTrainingConfig | None = None) -> DenoiserModel:
    """Fit the noise predictor by regressing the injected noise (MSE).

    Steps are sampled uniformly in [1, t_max]; clips shorter than chunk_len
    are zero-padded, longer ones are randomly cropped.  Fully deterministic
    under config.seed.
    """
    config = config or PurifierTrainingConfig()
    if not dataset:
        raise InvalidInputError("training dataset is empty")
    pool = []
    for wave in dataset:
        x = wave.samples
        if x.size < config.chunk_len:
            padded = np.zeros(config.chunk_len)
            padded[:x.size] = x
            pool.append(padded)
        else:
            pool.append(x)
    rng = np.random.default_rng(config.seed)
    torch.manual_seed(config.seed)
    net = DenoiserNet(channels=config.channels, n_blocks=config.n_blocks)
    net.train()
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    sqrt_abar = np.sqrt(schedule.alphas_bar)
    sqrt_one_minus = np.sqrt(1.0 - schedule.alphas_bar)
    losses: list[float] = []
    for step in range(config.steps):
        idx = rng.integers(0, len(pool), size=config.batch_size)
        x0 = np.empty((config.batch_size, config.chunk_len))
        for row, i in enumerate(idx):
            clip = pool[i]
            if clip.size > config.chunk_len:
                start = int(rng.integers(0, clip.size - config.chunk_len + 1))
                x0[row] = clip[start:start + config.chunk_len]
            else:
                x0[row] = clip
        t = rng.integers(1, schedule.t_max + 1, size=config.batch_size)
        eps = rng.standard_normal((config.batch_size, config.chunk_len))
        x_t = sqrt_abar[t - 1, None] * x0 + sqrt_one_minus[t - 1, None] * eps
        xt = torch.from_numpy(x_t.astype(np.float32))[:, None, :]
        target = torch.from_numpy(eps.astype(np.float32))[:, None, :]
        pred = net(xt, torch.from_numpy(t.astype(np.int64)))
        loss = torch.mean((pred - target) ** 2)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.item()))
        if config.log_every and step % config.log_every == 0:
            log.info("purifier step %d/%d loss %.5f", step, config.steps, losses[-1])
    net.eval()
    return DenoiserModel(net, schedule.fingerprint(), loss_history=losses)


def save_purifier(path, model: DenoiserModel, schedule: NoiseSchedule,
                  settings: PurifierSettings | None = None) -> None:
    settings = settings or PurifierSettings()
    meta = {
        "hyper": model.net.hyper,
        "settings": {"t_pur": settings.t_pur, "chunk_len": settings.chunk_len},
        "schedule_fingerprint": schedule.fingerprint(),
    }
    arrays = {"schedule_betas": np.asarray(schedule.betas)}
    for name, tensor in model.net.state_dict().items():
        arrays[f"param.{name}"] = tensor.detach().numpy()
    save_container(path, kind="purifier", meta=meta, arrays=arrays)


def load_purifier(path, expected_schedule: NoiseSchedule | None = None
                  ) -> tuple[DenoiserModel, NoiseSchedule, PurifierSettings]:
    meta, arrays = load_container(path, kind="purifier")
    schedule = NoiseSchedule(betas=arrays["schedule_betas"],
                             alphas_bar=np.cumprod(1.0 - arrays["schedule_betas"]))
    if expected_schedule is not None:
        check_fingerprint(meta["schedule_fingerprint"],
                          expected_schedule.fingerprint(), "noise schedule")
    net = DenoiserNet(**meta["hyper"])
    state = {name[len("param."):]: torch.from_numpy(arr)
             for name, arr in arrays.items() if name.startswith("param.")}
    net.load_state_dict(state)
    settings = PurifierSettings(**meta["settings"])
    return (DenoiserModel(net, meta["schedule_fingerprint"]), schedule, settings)
