"""L1 objective, Adam optimizer, training loop, and image-fidelity metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor as T
from .degrade import make_training_batch
from .errors import (
    EmptyInput,
    ImageTooSmall,
    InvalidConfig,
    NaNLoss,
    NonFiniteValue,
    ShapeMismatch,
)
from .network import _parse_field, save_checkpoint
from .tensor import Tensor


##########################################################################
# configuration


@dataclass
class TrainConfig:
    """Optimization protocol; defaults are the desk-scale probe settings."""

    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4
    steps: int = 200
    patch: int = 32
    flips: bool = True
    seed: int = 0
    checkpoint_every: int = 0
    lr_schedule: str = "constant"

    def validate(self) -> None:
        if self.lr < 0:
            raise InvalidConfig("lr must be non-negative")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise InvalidConfig("betas must lie in [0, 1)")
        if self.eps <= 0:
            raise InvalidConfig("eps must be positive")
        if min(self.batch_size, self.steps, self.patch) < 1:
            raise InvalidConfig("batch_size, steps, patch must be positive")
        if self.lr_schedule != "constant":
            raise InvalidConfig(f"only the constant schedule is implemented, got {self.lr_schedule!r}")

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {getattr(self, f.name)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidConfig(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in known:
                raise InvalidConfig(f"unknown training key {key!r}")
            values[key] = _parse_field(getattr(cls, key), val)
        cfg = cls(**values)
        cfg.validate()
        return cfg


##########################################################################
# objective and optimizer


def l1_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute difference over all scalars."""
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"{pred.shape} vs {target.shape}")
    return (pred - target).abs().mean()


def adam_step(params, grads, state, config: TrainConfig):
    """Bias-corrected Adam update on parallel lists; mutates params and state.

    Parameters whose gradient is identically zero are left untouched
    (their moments do not decay), so a zero-gradient step is a no-op.
    """
    state["t"] += 1
    t = state["t"]
    c1 = 1.0 - config.beta1 ** t
    c2 = 1.0 - config.beta2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None or not np.any(g):
            continue
        g = np.asarray(g, dtype=p.data.dtype)
        state["m"][i] = config.beta1 * state["m"][i] + (1.0 - config.beta1) * g
        state["v"][i] = config.beta2 * state["v"][i] + (1.0 - config.beta2) * (g * g)
        m_hat = state["m"][i] / c1
        v_hat = state["v"][i] / c2
        p.data -= config.lr * m_hat / (np.sqrt(v_hat) + config.eps)
    return params, state


class Adam:
    """Name-keyed wrapper around `adam_step` for whole models."""

    def __init__(self, model, config: TrainConfig):
        self.config = config
        self.named = list(model.named_parameters())
        self.state = {
            "t": 0,
            "m": [np.zeros_like(p.data) for _, p in self.named],
            "v": [np.zeros_like(p.data) for _, p in self.named],
        }

    def step(self) -> None:
        params = [p for _, p in self.named]
        grads = [p.grad for _, p in self.named]
        adam_step(params, grads, self.state, self.config)

    def state_dict(self) -> dict:
        names = [n for n, _ in self.named]
        return {
            "step": self.state["t"],
            "m": dict(zip(names, self.state["m"])),
            "v": dict(zip(names, self.state["v"])),
        }

    def load_state_dict(self, state: dict) -> None:
        self.state["t"] = int(state["step"])
        for i, (name, p) in enumerate(self.named):
            self.state["m"][i] = np.asarray(state["m"][name], dtype=p.data.dtype)
            self.state["v"][i] = np.asarray(state["v"][name], dtype=p.data.dtype)


##########################################################################
# metrics


def psnr(a, b, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE) in dB, capped at 100 for near-zero MSE."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-12:
        return 100.0
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    coords = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(a, b) -> float:
    """Mean local SSIM map (11x11 Gaussian window, K1=0.01, K2=0.03, peak 1).

    Color images are converted to grayscale by the channel mean.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    if a.ndim == 3:
        a, b = a.mean(axis=0), b.mean(axis=0)
    if a.ndim != 2:
        raise ShapeMismatch(f"expected an image, got shape {a.shape}")
    if min(a.shape) < 11:
        raise ImageTooSmall(f"SSIM needs at least 11 px per side, got {a.shape}")
    win = _gaussian_window()
    c1 = 0.01 ** 2
    c2 = 0.03 ** 2

    def local(img):
        return np.einsum("hwij,ij->hw", sliding_window_view(img, (11, 11)), win)

    mu_a, mu_b = local(a), local(b)
    var_a = local(a * a) - mu_a ** 2
    var_b = local(b * b) - mu_b ** 2
    cov = local(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


##########################################################################
# training loop


@dataclass
class Metrics:
    """Per-step loss/PSNR traces plus mask-factor range diagnostics."""

    losses: list = field(default_factory=list)
    psnrs: list = field(default_factory=list)
    factor_min: float = math.inf
    factor_max: float = -math.inf


def write_history_csv(path, metrics: Metrics) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,loss,psnr_val\n")
        for i, (loss, p) in enumerate(zip(metrics.losses, metrics.psnrs), 1):
            fh.write(f"{i},{loss:.10g},{p:.10g}\n")


def _norm_diagnostics(model) -> str:
    sections: dict[str, float] = {}
    for name, p in model.named_parameters():
        head = name.split(".", 1)[0]
        g = 0.0 if p.grad is None else float(np.abs(p.grad).max())
        sections[head] = max(sections.get(head, 0.0), g)
    parts = [f"{k}:|g|max={v:.3g}" for k, v in sections.items()]
    return ", ".join(parts)


def train_loop(model, dataset, config: TrainConfig, out_dir=None):
    """Seeded batches, forward, L1, backward, Adam; fully deterministic.

    Returns (model, Metrics).  Loss is computed on the unclamped output;
    the per-step PSNR uses the clamped prediction.  Raises NaNLoss with
    per-section gradient norms if the loss leaves the finite range.
    """
    config.validate()
    if not dataset:
        raise EmptyInput("training dataset is empty")
    rng = np.random.default_rng(config.seed)
    optimizer = Adam(model, config)
    metrics = Metrics()
    out_dir = Path(out_dir) if out_dir is not None else None
    for step in range(1, config.steps + 1):
        if config.batch_size <= len(dataset):
            idx = rng.permutation(len(dataset))[:config.batch_size]
        else:
            idx = rng.integers(0, len(dataset), size=config.batch_size)
        batch_seed = int(rng.integers(0, 2 ** 62))
        degraded, clean, _tags = make_training_batch(
            [dataset[i] for i in idx], config.patch, config.flips, seed=batch_seed
        )
        T.get_tape().clear()
        model.zero_grad()
        try:
            pred = model(degraded, train=True)
            loss = l1_loss(pred, Tensor(clean.astype(model.config.dtype)))
            loss_val = loss.item()
            if not math.isfinite(loss_val):
                raise NonFiniteValue("loss is not finite")
            T.backward(loss)
        except NonFiniteValue as exc:
            raise NaNLoss(f"step {step}: {exc} ({_norm_diagnostics(model)})") from exc
        optimizer.step()
        metrics.losses.append(loss_val)
        metrics.psnrs.append(psnr(np.clip(pred.data, 0.0, 1.0), clean))
        for aflb in model.aflbs():
            if aflb.last_factors is not None:
                alpha, beta = aflb.last_factors
                metrics.factor_min = min(metrics.factor_min, float(alpha.min()), float(beta.min()))
                metrics.factor_max = max(metrics.factor_max, float(alpha.max()), float(beta.max()))
        if out_dir and config.checkpoint_every and step % config.checkpoint_every == 0:
            save_checkpoint(model, out_dir / f"step{step:06d}.ckpt", optimizer.state_dict())
    return model, metrics
