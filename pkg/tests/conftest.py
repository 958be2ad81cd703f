"""Shared helpers for conditioning-sensitive gradient checks."""

from adair import tensor as T


def randomize_params(module, rng, std=0.2):
    """Replace init weights with healthy magnitudes; keeps gains/temps near 1."""
    for name, p in module.named_parameters():
        if name.endswith("gain") or name.endswith("temperature"):
            p.data[:] = 1.0 + rng.normal(0.0, 0.05, size=p.shape)
        else:
            p.data[:] = rng.normal(0.0, std, size=p.shape)


def fd_on_coords(loss_fn, param, coords, h=1e-5):
    """Central differences on selected flat coordinates of one parameter.

    Returns the max relative error against the tape gradient.
    """
    T.get_tape().clear()
    param.grad = None
    loss = loss_fn()
    T.backward(loss)
    analytic = param.grad.reshape(-1)
    flat = param.data.reshape(-1)
    worst = 0.0
    with T.no_grad():
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_fn().item()
            flat[i] = orig - h
            fm = loss_fn().item()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            rel = abs(analytic[i] - numeric) / (abs(analytic[i]) + 1e-8)
            worst = max(worst, rel)
    return worst
