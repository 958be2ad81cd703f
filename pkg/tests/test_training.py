"""Objective, optimizer, metrics, and the training loop."""

import math

import mpmath
import numpy as np
import pytest

from adair import degrade as D
from adair import network as N
from adair import tensor as T
from adair import training as TR
from adair.errors import ImageTooSmall, NaNLoss, ShapeMismatch
from adair.tensor import Tensor


# ---------------------------------------------------------------------------
# L1 loss
# ---------------------------------------------------------------------------

def test_l1_identical_is_zero():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    assert TR.l1_loss(x, x.data.copy()).item() == 0.0


def test_l1_hand_arithmetic():
    loss = TR.l1_loss(Tensor([1.0, 2.0]), np.array([0.0, 0.0]))
    assert loss.item() == 1.5


def test_l1_gradient_is_sign_over_n():
    x = Tensor(np.array([0.5, -0.75, 1.25]), requires_grad=True)
    target = np.array([0.0, 0.0, 0.0])
    T.get_tape().clear()
    T.backward(TR.l1_loss(x, target))
    np.testing.assert_allclose(x.grad, np.sign(x.data) / 3.0)
    err = T.finite_diff_check(lambda t: TR.l1_loss(t, target), Tensor(x.data))
    assert err < 1e-4


def test_l1_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        TR.l1_loss(Tensor([1.0, 2.0]), np.zeros(3))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def test_adam_zero_gradient_is_noop():
    cfg = TR.TrainConfig(lr=0.1)
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    state = {"t": 0, "m": [np.array([0.5, 0.5])], "v": [np.array([0.25, 0.25])]}
    TR.adam_step([p], [np.zeros(2)], state, cfg)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    assert state["t"] == 1
    np.testing.assert_array_equal(state["m"][0], [0.5, 0.5])  # moments untouched too


def test_adam_first_step_is_signed_learning_rate():
    cfg = TR.TrainConfig(lr=2e-4)
    p = Tensor(np.array([0.0]), requires_grad=True)
    state = {"t": 0, "m": [np.zeros(1)], "v": [np.zeros(1)]}
    TR.adam_step([p], [np.array([0.3])], state, cfg)
    # bias correction gives m_hat=g, v_hat=g^2, so the step is ~ -lr*sign(g)
    np.testing.assert_allclose(p.data, [-2e-4], rtol=1e-4)


def test_adam_three_step_trace_against_high_precision_oracle():
    mpmath.mp.dps = 50
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    theta = mpmath.mpf(1.0)
    m = v = mpmath.mpf(0)
    trace = []
    for t in range(1, 4):
        g = theta  # gradient of theta^2 / 2
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - mpmath.mpf(b1) ** t)
        v_hat = v / (1 - mpmath.mpf(b2) ** t)
        theta = theta - lr * m_hat / (mpmath.sqrt(v_hat) + eps)
        trace.append(float(theta))

    cfg = TR.TrainConfig(lr=lr, beta1=b1, beta2=b2, eps=eps)
    p = Tensor(np.array([1.0]), requires_grad=True)
    state = {"t": 0, "m": [np.zeros(1)], "v": [np.zeros(1)]}
    ours = []
    for _ in range(3):
        TR.adam_step([p], [p.data.copy()], state, cfg)
        ours.append(float(p.data[0]))
    np.testing.assert_allclose(ours, trace, rtol=1e-12)


# ---------------------------------------------------------------------------
# PSNR / SSIM
# ---------------------------------------------------------------------------

def test_psnr_identical_hits_cap():
    img = D.make_test_image(16, 16, seed=0)
    assert TR.psnr(img, img) == 100.0


def test_psnr_uniform_difference_closed_form():
    a = np.full((3, 8, 8), 128.0 / 255.0)
    b = np.zeros((3, 8, 8))
    np.testing.assert_allclose(TR.psnr(a, b), 20.0 * math.log10(255.0 / 128.0), rtol=1e-12)


def test_psnr_against_formula_oracle():
    mpmath.mp.dps = 40
    rng = np.random.default_rng(1)
    a = rng.uniform(size=(3, 8, 8))
    b = rng.uniform(size=(3, 8, 8))
    mse = mpmath.mpf(0)
    for x, y in zip(a.reshape(-1), b.reshape(-1)):
        mse += (mpmath.mpf(x) - mpmath.mpf(y)) ** 2
    mse /= a.size
    expected = float(10 * mpmath.log(1.0 / mse, 10))
    np.testing.assert_allclose(TR.psnr(a, b), expected, rtol=1e-12)


def test_psnr_decreases_with_noise_level():
    clean = D.make_test_image(64, 64, seed=2)
    values = [TR.psnr(D.add_gaussian_noise(clean, s, seed=3), clean) for s in (5, 15, 25, 50)]
    assert all(x > y for x, y in zip(values, values[1:]))


def _ssim_direct(a, b):
    """Independent nested-loop SSIM for the oracle comparison."""
    a = a.mean(axis=0) if a.ndim == 3 else a
    b = b.mean(axis=0) if b.ndim == 3 else b
    size, sigma = 11, 1.5
    coords = np.arange(size) - 5.0
    g = np.exp(-(coords ** 2) / (2 * sigma ** 2))
    win = np.outer(g, g)
    win /= win.sum()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    h, w = a.shape
    vals = []
    for i in range(h - 10):
        for j in range(w - 10):
            pa = a[i:i + 11, j:j + 11]
            pb = b[i:i + 11, j:j + 11]
            mu1 = (pa * win).sum()
            mu2 = (pb * win).sum()
            var1 = (pa * pa * win).sum() - mu1 ** 2
            var2 = (pb * pb * win).sum() - mu2 ** 2
            cov = (pa * pb * win).sum() - mu1 * mu2
            vals.append(((2 * mu1 * mu2 + c1) * (2 * cov + c2))
                        / ((mu1 ** 2 + mu2 ** 2 + c1) * (var1 + var2 + c2)))
    return float(np.mean(vals))


def test_ssim_identity_symmetry_and_oracle():
    clean = D.make_test_image(32, 32, seed=4)
    noisy = D.add_gaussian_noise(clean, 25.0, seed=5)
    assert TR.ssim(clean, clean) == pytest.approx(1.0, abs=1e-12)
    assert TR.ssim(clean, noisy) == pytest.approx(TR.ssim(noisy, clean), abs=1e-15)
    assert abs(TR.ssim(clean, noisy) - _ssim_direct(clean, noisy)) < 1e-8
    assert -1.0 <= TR.ssim(clean, noisy) <= 1.0


def test_ssim_too_small_rejected():
    with pytest.raises(ImageTooSmall):
        TR.ssim(np.zeros((3, 8, 8)), np.zeros((3, 8, 8)))


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def _tiny_dataset(n=2, size=16):
    pairs = []
    for i in range(n):
        clean = D.make_test_image(size, size, seed=100 + i)
        pairs.append(D.make_pair(clean, D.DegradationSpec("noise", {"sigma": 25.0}, seed=i)))
    return pairs


def test_train_loop_lr_zero_keeps_weights():
    model = N.build_model(N.desk_config(), seed=31)
    before = [p.data.copy() for p in model.parameters()]
    cfg = TR.TrainConfig(lr=0.0, steps=3, batch_size=2, patch=16, seed=1)
    TR.train_loop(model, _tiny_dataset(), cfg)
    for p, b in zip(model.parameters(), before):
        np.testing.assert_array_equal(p.data, b)


def test_train_loop_deterministic_history():
    def run():
        model = N.build_model(N.desk_config(), seed=32)
        cfg = TR.TrainConfig(steps=4, batch_size=2, patch=16, seed=9)
        _, metrics = TR.train_loop(model, _tiny_dataset(), cfg)
        return metrics.losses

    a = run()
    b = run()
    assert a == b  # bit-identical floats


def test_train_loop_smoke_overfit_decreases_loss():
    model = N.build_model(N.desk_config(), seed=33)
    cfg = TR.TrainConfig(steps=30, batch_size=2, patch=16, seed=3)
    _, metrics = TR.train_loop(model, _tiny_dataset(), cfg)
    first = np.mean(metrics.losses[:5])
    last = np.mean(metrics.losses[-5:])
    assert last < first
    assert 0.0 < metrics.factor_min <= metrics.factor_max < 1.0


def test_train_loop_nan_raises_with_diagnostics():
    model = N.build_model(N.desk_config(), seed=34)
    model.patch_embed.weight.data[:] = 1e300
    cfg = TR.TrainConfig(steps=2, batch_size=1, patch=16, seed=0)
    with pytest.raises(NaNLoss) as err:
        TR.train_loop(model, _tiny_dataset(1), cfg)
    assert "step 1" in str(err.value)


def test_history_csv_format(tmp_path):
    metrics = TR.Metrics(losses=[0.5, 0.25], psnrs=[10.0, 13.0])
    path = tmp_path / "history.csv"
    TR.write_history_csv(path, metrics)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "step,loss,psnr_val"
    assert lines[1].startswith("1,0.5,")
    assert len(lines) == 3


def test_train_config_text_roundtrip():
    cfg = TR.TrainConfig(lr=1e-3, steps=7, flips=False)
    again = TR.TrainConfig.from_text(cfg.to_text())
    assert again == cfg
