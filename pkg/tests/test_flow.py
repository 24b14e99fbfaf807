import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deskvid.flow import ShiftConfig, euler_sample, fm_loss, make_training_pair, sample_timestep, shift_timestep, timestep_grid
from deskvid.tensor import Tensor


def test_shift_examples():
    assert shift_timestep(0.37, 1.0) == 0.37
    assert shift_timestep(0.5, 2.0) == pytest.approx(2 / 3, abs=1e-12)
    for alpha in (1.0, 1.5, 4.0, 100.0):
        assert shift_timestep(0.0, alpha) == 0.0
        assert shift_timestep(1.0, alpha) == 1.0


@pytest.mark.parametrize("alpha", [1.0, 1.3, 2.0, 9.0, 297.0])
def test_shift_strictly_increasing_on_fine_grid(alpha):
    vals = shift_timestep(np.arange(0, 1.0005, 1e-3), alpha)
    assert np.all(np.diff(vals) > 0)


@settings(max_examples=200, deadline=None)
@given(t=st.floats(0, 1), alpha=st.floats(1e-3, 1e3))
def test_shift_inverse(t, alpha):
    assert shift_timestep(shift_timestep(t, alpha), 1 / alpha) == pytest.approx(t, abs=1e-12)


def test_shift_rejects_bad_input():
    with pytest.raises(ValueError):
        shift_timestep(1.2, 2.0)
    with pytest.raises(ValueError):
        shift_timestep(0.5, 0.0)


def test_alpha_scales_with_tokens():
    cfg = ShiftConfig()
    assert cfg.alpha(100) == 1.0
    assert cfg.alpha(4096) == 16.0
    assert ShiftConfig(alpha_base=0.0).alpha(10_000) == 1.0
    with pytest.raises(ValueError):
        ShiftConfig(alpha_floor=0.5)


def test_logit_normal_mean_is_one_half():
    t = sample_timestep(np.random.default_rng(0), ShiftConfig(alpha_base=0.0), tokens=1, size=1_000_000)
    assert abs(t.mean() - 0.5) < 0.01
    assert np.all((t > 0) & (t < 1))


def test_larger_videos_get_noisier_timesteps():
    cfg = ShiftConfig()
    video = sample_timestep(np.random.default_rng(1), cfg, 4096, size=200_000)
    image = sample_timestep(np.random.default_rng(2), cfg, 256, size=200_000)
    assert np.median(video) > np.median(image)
    qs = np.linspace(0.05, 0.95, 19)
    assert np.all(np.quantile(video, qs) >= np.quantile(image, qs))


def test_training_pair_examples():
    rng = np.random.default_rng(0)
    x0 = rng.normal(size=(2, 3))
    p = make_training_pair(x0, rng, 0.0)
    np.testing.assert_array_equal(p.xt, x0)
    p = make_training_pair(x0, rng, 1.0)
    np.testing.assert_array_equal(p.xt, p.x1)
    p = make_training_pair(np.array([2.0]), rng, 0.5, x1=np.array([0.0]))
    np.testing.assert_array_equal(p.xt, [1.0])
    np.testing.assert_array_equal(p.target, [2.0])


def test_training_pair_per_sample_times():
    rng = np.random.default_rng(0)
    x0 = rng.normal(size=(3, 4))
    t = np.array([0.0, 0.5, 1.0])
    p = make_training_pair(x0, rng, t)
    np.testing.assert_allclose(p.xt, (1 - t[:, None]) * x0 + t[:, None] * p.x1)


def test_fm_loss_examples():
    target = np.random.default_rng(0).normal(size=(4, 5))
    assert float(fm_loss(target, target).data) == 0.0
    assert float(fm_loss(target + 1.0, target).data) == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(ValueError):
        fm_loss(np.zeros(3), np.zeros(4))


def test_grid_endpoints():
    g = timestep_grid(10, alpha=3.0)
    assert g[0] == 1.0 and g[-1] == 0.0 and np.all(np.diff(g) < 0)


def test_euler_exact_linear_field_one_step():
    rng = np.random.default_rng(0)
    x0, x1 = rng.normal(size=8), rng.normal(size=8)
    out = euler_sample(lambda x, t: x0 - x1, x1, steps=1)
    np.testing.assert_allclose(out, x0, atol=1e-15)


@pytest.mark.parametrize("alpha", [1.0, 3.0])
def test_euler_step_count_invariance(alpha):
    rng = np.random.default_rng(0)
    x0, x1 = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    a = euler_sample(lambda x, t: x0 - x1, x1, steps=1, alpha=alpha)
    b = euler_sample(lambda x, t: x0 - x1, x1, steps=50, alpha=alpha)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_euler_guidance_hook_receives_one_based_steps():
    seen = []

    def hook(x, t, step):
        seen.append(step)
        return np.zeros_like(x)

    euler_sample(None, np.zeros(2), steps=4, guidance_hook=hook)
    assert seen == [1, 2, 3, 4]


def test_euler_accepts_tensor_output_and_checks_shape():
    out = euler_sample(lambda x, t: Tensor(np.ones_like(x)), np.zeros(3), steps=2)
    np.testing.assert_allclose(out, np.ones(3), atol=1e-6)
    with pytest.raises(ValueError):
        euler_sample(lambda x, t: np.ones(4), np.zeros(3), steps=2)


def test_toy_gaussian_loss_halves_within_500_steps():
    from deskvid.toy1d import train_gaussian

    _, losses = train_gaussian(steps=500)
    assert np.mean(losses[-50:]) <= 0.5 * losses[0]
