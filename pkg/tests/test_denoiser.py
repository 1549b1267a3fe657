import numpy as np
import pytest

from multiscale_diffusion.denoiser import (
    ConfigurationError,
    MLPDenoiser,
    TrainConfig,
    load_checkpoint,
    preconditioning,
    save_checkpoint,
    train,
)
from multiscale_diffusion.diffusion import MaskedSample, conditional_loss
from multiscale_diffusion.io import ArtifactError
from multiscale_diffusion.rng import Stream
from multiscale_diffusion.scheme import plan_multiscale
from multiscale_diffusion.synthetic import SinusoidConfig, generate_dataset


def perturbed(window=5, hidden=(16, 16, 16), seed=3):
    d = MLPDenoiser(window, hidden=hidden, seed=seed, time_scale=3.0)
    rng = Stream(seed, (99,))
    for p in d.params:
        p += 0.1 * rng.normal(p.shape)
    return d


def batch(window=5, b=4, seed=1):
    s = Stream(seed)
    x = s.normal((b, window))
    sigma = np.exp(s.normal(b))
    mask = np.zeros(window, bool)
    mask[: window // 2] = True
    x_in = np.where(mask, x, x + sigma[:, None] * s.normal((b, window)))
    return x, x_in, sigma, mask, np.arange(window) - window // 2


def test_preconditioning_coefficients():
    c_skip, c_out, c_in, c_noise = preconditioning(np.array([0.5, 2.0]), 1.0)
    assert np.allclose(c_skip, [0.8, 0.2])
    assert np.allclose(c_out, [0.5 / np.sqrt(1.25), 2 / np.sqrt(5)])
    assert np.allclose(c_in, [1 / np.sqrt(1.25), 1 / np.sqrt(5)])
    assert np.allclose(c_noise, 0.25 * np.log([0.5, 2.0]))


def test_parameter_count_default():
    d = MLPDenoiser(7)
    assert d.widths == [22, 128, 128, 128, 7]
    assert 30_000 < d.n_params < 70_000


def test_zero_network_is_skip_path():
    d = MLPDenoiser(5).zero_()
    x, x_in, sigma, mask, t = batch()
    c_skip = preconditioning(sigma, 1.0)[0][:, None]
    out = d(x_in, sigma, mask, t)
    assert np.allclose(out[:, ~mask], (c_skip * x_in)[:, ~mask])
    assert np.array_equal(out[:, mask], x_in[:, mask])


def test_fresh_network_output_is_skip_path():
    d = MLPDenoiser(5, seed=7)
    x, x_in, sigma, mask, t = batch()
    c_skip = preconditioning(sigma, 1.0)[0][:, None]
    assert np.allclose(d(x_in, sigma, mask, t)[:, ~mask], (c_skip * x_in)[:, ~mask])


def test_loss_matches_conditional_loss():
    d = perturbed()
    x, _, _, mask, t = batch(b=1)
    sample = MaskedSample(x[0], mask, t)
    expected = conditional_loss(d, sample, 0.7, Stream(5))
    eps = Stream(5).normal(x[0].shape)
    x_in = np.where(mask, x[0], x[0] + 0.7 * eps)
    loss, _ = d.loss_and_grad(x, x_in[None], np.array([0.7]), mask, t)
    assert loss == expected


def test_gradient_finite_differences():
    d = perturbed()
    x, x_in, sigma, mask, t = batch()
    _, grads = d.loss_and_grad(x, x_in, sigma, mask, t)
    rng = Stream(2)
    h = 1e-5
    for _ in range(30):
        k = int(rng.integers(0, len(d.params)))
        i = tuple(int(rng.integers(0, n)) for n in d.params[k].shape)
        old = d.params[k][i]
        d.params[k][i] = old + h
        lp, _ = d.loss_and_grad(x, x_in, sigma, mask, t)
        d.params[k][i] = old - h
        lm, _ = d.loss_and_grad(x, x_in, sigma, mask, t)
        d.params[k][i] = old
        fd = (lp - lm) / (2 * h)
        g = grads[k][i]
        assert abs(fd - g) <= 1e-4 * max(abs(fd), abs(g), 1e-6)


def test_width_mismatch():
    with pytest.raises(ValueError):
        MLPDenoiser(5)(np.zeros((1, 4)), 1.0, np.zeros(4, bool), np.arange(4))


def _sinusoid_training():
    data = generate_dataset(SinusoidConfig(length=60), 64, 3)
    pairs = plan_multiscale(9, 3).training_pairs()
    return data, pairs


def test_zero_epochs_keeps_parameters():
    data, pairs = _sinusoid_training()
    d = MLPDenoiser(7, hidden=(16, 16))
    before = [p.copy() for p in d.params]
    res = train(d, data, pairs, TrainConfig(epochs=0))
    assert all(np.array_equal(a, b) for a, b in zip(before, d.params))
    assert res.losses.size == 0


def test_training_reproducible_and_decreasing():
    data, pairs = _sinusoid_training()
    cfg = TrainConfig(epochs=6, steps_per_epoch=50, seed=4)
    a = train(MLPDenoiser(7, hidden=(32, 32), seed=1, time_scale=9), data, pairs, cfg)
    b = train(MLPDenoiser(7, hidden=(32, 32), seed=1, time_scale=9), data, pairs, cfg)
    assert np.array_equal(a.losses, b.losses)
    assert a.epoch_losses[-1] < a.epoch_losses[0]


def test_training_configuration_errors():
    data, pairs = _sinusoid_training()
    short = [np.zeros(10)]
    with pytest.raises(ConfigurationError, match=r"\[-9, -3, -1, 0, 1, 3, 9\]"):
        train(MLPDenoiser(7), short, pairs, TrainConfig(epochs=1, steps_per_epoch=1))
    with pytest.raises(ConfigurationError):
        train(MLPDenoiser(7), data, [p[0] for p in pairs], TrainConfig(epochs=1))
    with pytest.raises(ConfigurationError):
        train(MLPDenoiser(5), data, pairs, TrainConfig(epochs=1))
    with pytest.raises(ConfigurationError):
        TrainConfig(mask_sampling="everything")
    with pytest.raises(ConfigurationError):
        TrainConfig(learning_rate=0)


def test_uniform_random_masks_accept_plain_windows():
    data, pairs = _sinusoid_training()
    res = train(
        MLPDenoiser(7, hidden=(8,)),
        data,
        [p[0] for p in pairs],
        TrainConfig(epochs=1, steps_per_epoch=5, mask_sampling="uniform_random"),
    )
    assert res.losses.shape == (5,)


def test_checkpoint_round_trip(tmp_path):
    d = perturbed()
    d.offset, d.scale = 0.25, 2.0
    path = save_checkpoint(tmp_path / "m.ckpt", d)
    back = load_checkpoint(path)
    assert back.widths == d.widths and back.time_scale == d.time_scale
    assert (back.offset, back.scale, back.data_std) == (0.25, 2.0, 1.0)
    x, x_in, sigma, mask, t = batch()
    assert np.array_equal(back(x_in, sigma, mask, t), d(x_in, sigma, mask, t))
    raw = path.read_bytes()
    assert raw[:4] == b"MSDN"
    path.write_bytes(raw[:-8])
    with pytest.raises(ArtifactError):
        load_checkpoint(path)
    with pytest.raises(ArtifactError):
        load_checkpoint(tmp_path / "nothing.ckpt")
