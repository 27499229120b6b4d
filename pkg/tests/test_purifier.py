import numpy as np
import pytest

from speechscrub import (InvalidInputError, PurifierSettings, Waveform,
                         build_schedule, forward_diffuse, load_purifier, purify,
                         reverse_step, save_purifier, train_purifier)
from speechscrub.purifier import AnalyticGaussianDenoiser, PurifierTrainingConfig


class _ZeroDenoiser:
    def predict_noise(self, x_t, t):
        return np.zeros_like(x_t)


def test_schedule_single_step():
    sched = build_schedule(1, 0.1, 0.1)
    np.testing.assert_allclose(sched.betas, [0.1])
    np.testing.assert_allclose(sched.alphas_bar, [0.9])


def test_schedule_brute_force_product():
    sched = build_schedule(50, 1e-4, 0.05)
    prod = 1.0
    for t in range(1, 51):
        prod *= 1.0 - sched.beta(t)
        assert abs(sched.alpha_bar(t) - prod) < 1e-10
    assert sched.alpha_bar(0) == 1.0
    diffs = np.diff(sched.betas)
    assert np.all(diffs >= 0)
    assert np.all(np.diff(sched.alphas_bar) < 0)


def test_schedule_bound_errors():
    with pytest.raises(InvalidInputError):
        build_schedule(50, 1e-4, 1.0)
    with pytest.raises(InvalidInputError):
        build_schedule(50, 0.0, 0.05)
    with pytest.raises(InvalidInputError):
        build_schedule(0, 1e-4, 0.05)
    with pytest.raises(InvalidInputError):
        build_schedule(50, 0.06, 0.05)


def test_forward_diffuse_zero_noise():
    sched = build_schedule(50, 1e-4, 0.05)
    x0 = np.linspace(-1, 1, 100)
    out = forward_diffuse(x0, 7, np.zeros_like(x0), sched)
    np.testing.assert_allclose(out, np.sqrt(sched.alpha_bar(7)) * x0, atol=1e-15)


def test_forward_diffuse_shape_mismatch():
    sched = build_schedule(10, 1e-3, 0.05)
    with pytest.raises(InvalidInputError):
        forward_diffuse(np.zeros(10), 3, np.zeros(11), sched)
    with pytest.raises(InvalidInputError):
        forward_diffuse(np.zeros(10), 11, np.zeros(10), sched)


def test_forward_closed_form_matches_iterated_chain():
    # Monte-Carlo equivalence of the closed-form marginal and the
    # step-by-step chain, in mean and variance
    sched = build_schedule(50, 1e-4, 0.05)
    rng = np.random.default_rng(123)
    n = 10_000
    x0 = 0.7
    for t in (1, 10, 50):
        closed = forward_diffuse(np.full(n, x0), t,
                                 rng.standard_normal(n), sched)
        iterated = np.full(n, x0)
        for s in range(1, t + 1):
            beta = sched.beta(s)
            iterated = (np.sqrt(1 - beta) * iterated
                        + np.sqrt(beta) * rng.standard_normal(n))
        assert abs(closed.mean() - iterated.mean()) <= 0.02 * max(abs(iterated.mean()), 0.1)
        assert abs(closed.var() - iterated.var()) <= 0.02 * max(iterated.var(), 1e-3)


def test_forward_energy_expectation():
    # E||x_t||^2 = abar ||x0||^2 + (1 - abar) dim, within 2%
    sched = build_schedule(50, 1e-4, 0.05)
    rng = np.random.default_rng(5)
    dim, trials, t = 64, 4000, 25
    x0 = rng.standard_normal(dim)
    sq = np.empty(trials)
    for k in range(trials):
        x_t = forward_diffuse(x0, t, rng.standard_normal(dim), sched)
        sq[k] = np.sum(x_t ** 2)
    expected = sched.alpha_bar(t) * np.sum(x0 ** 2) + (1 - sched.alpha_bar(t)) * dim
    assert abs(sq.mean() - expected) <= 0.02 * expected


def test_forward_terminal_decorrelation():
    sched = build_schedule(50, 1e-4, 0.05)
    rng = np.random.default_rng(17)
    x0 = rng.standard_normal(20000)
    x_T = forward_diffuse(x0, 50, rng.standard_normal(20000), sched)
    corr = np.corrcoef(x0, x_T)[0, 1]
    # abar_50 ~ 0.28 here, so correlation ~ sqrt(0.28)/sqrt(1.28);
    # with a steeper schedule it drops below 0.1
    steep = build_schedule(200, 1e-4, 0.05)
    x_T2 = forward_diffuse(x0, 200, rng.standard_normal(20000), steep)
    assert abs(np.corrcoef(x0, x_T2)[0, 1]) < 0.1
    assert abs(corr) < 0.6


def test_reverse_step_zero_model_formula():
    sched = build_schedule(20, 1e-3, 0.04)
    x_t = np.linspace(-0.5, 0.5, 32)
    out = reverse_step(x_t, 5, _ZeroDenoiser(), sched, np.zeros_like(x_t))
    np.testing.assert_allclose(out, x_t / np.sqrt(1 - sched.beta(5)), atol=1e-14)


def test_reverse_step_t1_ignores_noise():
    sched = build_schedule(20, 1e-3, 0.04)
    x_t = np.ones(16)
    a = reverse_step(x_t, 1, _ZeroDenoiser(), sched, np.full(16, 100.0))
    b = reverse_step(x_t, 1, _ZeroDenoiser(), sched, np.zeros(16))
    np.testing.assert_array_equal(a, b)


def test_reverse_step_range_error():
    sched = build_schedule(20, 1e-3, 0.04)
    with pytest.raises(InvalidInputError):
        reverse_step(np.zeros(4), 0, _ZeroDenoiser(), sched)
    with pytest.raises(InvalidInputError):
        reverse_step(np.zeros(4), 21, _ZeroDenoiser(), sched)


def test_reverse_sampling_analytic_gaussian_oracle():
    # with the optimal noise predictor for scalar Gaussian data, the full
    # reverse chain from pure noise reproduces the data's first two moments
    mu0, s0 = 1.0, 0.8
    sched = build_schedule(400, 1e-4, 0.05)
    model = AnalyticGaussianDenoiser(mu0, s0, sched)
    rng = np.random.default_rng(2024)
    n = 10_000
    x = rng.standard_normal(n)
    for t in range(sched.t_max, 0, -1):
        x = reverse_step(x, t, model, sched, rng.standard_normal(n))
    assert abs(x.mean() - mu0) <= 0.05 * abs(mu0)
    assert abs(x.var() - s0 ** 2) <= 0.05 * s0 ** 2


def _tiny_training_config(**overrides):
    defaults = dict(steps=60, batch_size=4, learning_rate=3e-4, seed=0,
                    log_every=0, channels=12, n_blocks=4, chunk_len=2000)
    defaults.update(overrides)
    return PurifierTrainingConfig(**defaults)


def test_purify_t0_is_identity():
    sched = build_schedule(10, 1e-3, 0.02)
    wave = Waveform(np.linspace(-0.3, 0.3, 5000))
    out = purify(wave, _ZeroDenoiser(), sched, PurifierSettings(t_pur=0), rng_seed=1)
    assert np.array_equal(out.samples, wave.samples)


def test_purify_deterministic_and_length():
    sched = build_schedule(10, 1e-3, 0.02)
    rng = np.random.default_rng(3)
    wave = Waveform(rng.standard_normal(35000) * 0.1)
    settings = PurifierSettings(t_pur=4, chunk_len=16000)
    a = purify(wave, _ZeroDenoiser(), sched, settings, rng_seed=42)
    b = purify(wave, _ZeroDenoiser(), sched, settings, rng_seed=42)
    c = purify(wave, _ZeroDenoiser(), sched, settings, rng_seed=43)
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)
    assert len(a) == len(wave)


def test_purify_rejects_t_beyond_schedule():
    sched = build_schedule(5, 1e-3, 0.02)
    with pytest.raises(InvalidInputError):
        purify(Waveform(np.zeros(1000)), _ZeroDenoiser(), sched,
               PurifierSettings(t_pur=6), rng_seed=0)


def test_train_empty_dataset_error():
    sched = build_schedule(10, 1e-3, 0.02)
    with pytest.raises(InvalidInputError):
        train_purifier([], sched)


def test_training_deterministic():
    sched = build_schedule(10, 1e-3, 0.02)
    rng = np.random.default_rng(0)
    data = [Waveform(rng.standard_normal(2000) * 0.2) for _ in range(8)]
    cfg = _tiny_training_config(steps=12)
    m1 = train_purifier(data, sched, cfg)
    m2 = train_purifier(data, sched, cfg)
    assert abs(m1.loss_history[-1] - m2.loss_history[-1]) < 1e-6
    np.testing.assert_allclose(m1.loss_history, m2.loss_history, atol=1e-6)


def test_training_loss_decreases_on_sinusoids():
    sched = build_schedule(20, 1e-3, 0.05)
    rng = np.random.default_rng(1)
    corpus = []
    for _ in range(100):
        f = rng.uniform(300, 600)
        phase = rng.uniform(0, 2 * np.pi)
        t = np.arange(2000) / 16000
        corpus.append(Waveform(0.3 * np.sin(2 * np.pi * f * t + phase)))
    model = train_purifier(corpus, sched, _tiny_training_config(steps=150))
    start = np.mean(model.loss_history[:10])
    end = np.mean(model.loss_history[-10:])
    assert end <= 0.5 * start


def test_training_constant_zero_dataset_pulls_to_zero():
    # denoiser trained on silence learns to remove everything the chain sees
    sched = build_schedule(20, 1e-3, 0.05)
    corpus = [Waveform(np.zeros(2000)) for _ in range(10)]
    model = train_purifier(corpus, sched, _tiny_training_config(steps=200))
    t = np.arange(6000) / 16000
    wave = Waveform(0.3 * np.sin(2 * np.pi * 440 * t))
    out = purify(wave, model, sched, PurifierSettings(t_pur=15, chunk_len=2000),
                 rng_seed=0)
    assert np.mean(np.abs(out.samples)) < 0.05


def test_checkpoint_round_trip(tmp_path):
    sched = build_schedule(10, 1e-3, 0.02)
    rng = np.random.default_rng(0)
    data = [Waveform(rng.standard_normal(2000) * 0.2) for _ in range(4)]
    model = train_purifier(data, sched, _tiny_training_config(steps=5))
    path = tmp_path / "purifier.npz"
    save_purifier(path, model, sched, PurifierSettings(t_pur=3, chunk_len=2000))
    loaded, loaded_sched, settings = load_purifier(path)
    np.testing.assert_allclose(loaded_sched.betas, sched.betas)
    assert settings.t_pur == 3 and settings.chunk_len == 2000
    x = rng.standard_normal(2000)
    np.testing.assert_allclose(loaded.predict_noise(x, 4),
                               model.predict_noise(x, 4), atol=1e-7)
