"""Finite-difference verification suite for every learnable block.

Each check compares the tape gradient of a weighted-sum loss against
central differences in float64.  Weights are re-drawn at healthy
magnitudes so the checks probe the derivative code rather than the
near-zero initialization regime.
"""

from __future__ import annotations

import numpy as np

from . import blocks as B
from . import network as N
from . import tensor as T
from .tensor import Tensor

FULL_MODEL_TOL = 1e-3
BLOCK_TOL = 1e-4


def _healthy_weights(module, rng, std=0.2) -> None:
    for name, p in module.named_parameters():
        if name.endswith("gain") or name.endswith("temperature"):
            p.data[:] = 1.0 + rng.normal(0.0, 0.05, size=p.shape)
        else:
            p.data[:] = rng.normal(0.0, std, size=p.shape)


def _input_check(fn, shape, rng) -> float:
    x0 = rng.normal(size=shape)
    r = rng.normal(size=shape)

    def f(t):
        return (fn(t) * Tensor(r)).sum()

    return T.finite_diff_check(f, Tensor(x0))


def _sampled_weight_check(model, img, target, rng, coords_per_param=3) -> float:
    from .training import l1_loss

    def loss_fn():
        return l1_loss(model(img, train=True), Tensor(target))

    worst = 0.0
    params = [model.patch_embed.weight, model.output_proj.weight,
              model.aflb2.modulation.merge_proj.weight]
    for param in params:
        T.get_tape().clear()
        model.zero_grad()
        T.backward(loss_fn())
        analytic = param.grad.reshape(-1)
        flat = param.data.reshape(-1)
        with T.no_grad():
            for i in rng.choice(param.size, size=coords_per_param, replace=False):
                orig = flat[i]
                flat[i] = orig + 1e-5
                fp = loss_fn().item()
                flat[i] = orig - 1e-5
                fm = loss_fn().item()
                flat[i] = orig
                numeric = (fp - fm) / 2e-5
                worst = max(worst, abs(analytic[i] - numeric) / (abs(analytic[i]) + 1e-8))
    return worst


def gradcheck_suite(seed: int = 0):
    """Run all block checks; returns [(name, max_rel_error, tolerance)]."""
    rng = np.random.default_rng(seed)
    results = []

    gen = B.MaskGenerator(np.random.default_rng(seed + 1), channels=4, r1=2)
    _healthy_weights(gen, rng, std=0.3)

    def mgb_fn(t):
        alpha, beta = gen(t)
        return alpha + 2.0 * beta

    results.append(("mask_generator", _input_check(mgb_fn, (1, 4, 4, 4), rng), BLOCK_TOL))

    attn = B.ChannelAttention(np.random.default_rng(seed + 2), channels=4, heads=2)
    _healthy_weights(attn, rng, std=0.3)
    kv = Tensor(rng.normal(size=(1, 4, 8, 8)))
    results.append(("cross_attention", _input_check(lambda t: attn(t, kv), (1, 4, 8, 8), rng),
                    BLOCK_TOL))

    hl = B.HighToLow(np.random.default_rng(seed + 3))
    _healthy_weights(hl, rng, std=0.3)
    other = Tensor(rng.normal(size=(1, 4, 8, 8)))
    results.append(("high_to_low", _input_check(lambda t: hl(t, other), (1, 4, 8, 8), rng),
                    BLOCK_TOL))

    lh = B.LowToHigh(np.random.default_rng(seed + 4), channels=4, r2=2)
    _healthy_weights(lh, rng, std=0.3)
    results.append(("low_to_high", _input_check(lambda t: lh(other, t), (1, 4, 8, 8), rng),
                    BLOCK_TOL))

    mod = B.FrequencyModulation(np.random.default_rng(seed + 5), channels=4, heads=2, r2=2)
    _healthy_weights(mod, rng, std=0.25)
    low = Tensor(rng.normal(size=(1, 4, 8, 8)))
    results.append(("merge", _input_check(lambda t: mod.merge(t, low, other), (1, 4, 8, 8), rng),
                    BLOCK_TOL))

    mdta = B.Mdta(np.random.default_rng(seed + 6), channels=4, heads=2)
    _healthy_weights(mdta, rng, std=0.2)
    results.append(("mdta", _input_check(mdta, (1, 4, 8, 8), rng), BLOCK_TOL))

    gdfn = B.Gdfn(np.random.default_rng(seed + 7), channels=4)
    _healthy_weights(gdfn, rng, std=0.2)
    results.append(("gdfn", _input_check(gdfn, (1, 4, 8, 8), rng), BLOCK_TOL))

    tb = B.TransformerBlock(np.random.default_rng(seed + 8), channels=4, heads=2)
    _healthy_weights(tb, rng, std=0.2)
    results.append(("transformer_block", _input_check(tb, (1, 4, 8, 8), rng), BLOCK_TOL))

    aflb = B.FrequencyLearningBlock(np.random.default_rng(seed + 9), channels=4, heads=2,
                                    r1=2, r2=2, mask_mode="learned-soft")
    _healthy_weights(aflb, rng, std=0.2)
    guide = Tensor(rng.uniform(size=(1, 3, 8, 8)))
    results.append(("frequency_learning_block",
                    _input_check(lambda t: aflb(t, guide), (1, 4, 8, 8), rng), BLOCK_TOL))

    model = N.build_model(N.desk_config(precision="float64"), seed=seed + 10)
    _healthy_weights(model, rng, std=0.15)
    img = rng.uniform(size=(1, 3, 16, 16))
    target = rng.uniform(size=(1, 3, 16, 16))
    results.append(("full_desk_model", _sampled_weight_check(model, img, target, rng),
                    FULL_MODEL_TOL))
    return results
