"""Synthetic degradation generators and dataset assembly.

Stand-ins for the usual haze/rain/noise/blur/low-light corpora at desk
scale.  Every generator takes a clean 3 x H x W image in [0, 1], is the
identity at its null parameter point, keeps outputs inside [0, 1], and
draws all randomness from an explicit seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import PatchTooLarge, ShapeMismatch, UnnormalizedKernel
from .tensor import resize_bilinear

KINDS = ("noise", "haze", "rain", "blur", "lowlight", "composite")


def _check_image(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ShapeMismatch(f"expected 3 x H x W image, got {arr.shape}")
    return arr


##########################################################################
# generators


def add_gaussian_noise(img, sigma_255: float, seed: int = 0) -> np.ndarray:
    """i.i.d. Gaussian noise with sigma on the 0-255 scale, then clip."""
    arr = _check_image(img)
    if sigma_255 < 0:
        raise ShapeMismatch("sigma must be non-negative")
    if sigma_255 == 0:
        return arr.copy()
    rng = np.random.default_rng(seed)
    noisy = arr + rng.normal(0.0, sigma_255 / 255.0, size=arr.shape)
    return np.clip(noisy, 0.0, 1.0)


def make_depth_map(h: int, w: int, seed: int = 0) -> np.ndarray:
    """Procedural depth: vertical ramp plus smooth seeded noise, in [0, ~1.6]."""
    rng = np.random.default_rng(seed)
    ramp = np.linspace(1.2, 0.3, h).reshape(-1, 1) * np.ones((1, w))
    coarse = rng.normal(0.0, 1.0, size=(max(2, h // 8), max(2, w // 8)))
    smooth = resize_bilinear(coarse, h, w)
    smooth = smooth / (np.abs(smooth).max() + 1e-9)
    return np.clip(ramp + 0.4 * smooth, 0.0, None)


def synth_haze(img, beta_scatter: float, airlight: float, depth=None, seed: int = 0) -> np.ndarray:
    """Atmospheric scattering: out = img * exp(-beta*d) + A * (1 - exp(-beta*d))."""
    arr = _check_image(img)
    if beta_scatter < 0:
        raise ShapeMismatch("beta_scatter must be non-negative")
    if not 0.0 <= airlight <= 1.0:
        raise ShapeMismatch("airlight must lie in [0, 1]")
    if depth is None:
        depth = make_depth_map(arr.shape[1], arr.shape[2], seed=seed)
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != arr.shape[1:]:
        raise ShapeMismatch(f"depth {depth.shape} does not match image {arr.shape[1:]}")
    if np.any(depth < 0):
        raise ShapeMismatch("depth must be non-negative")
    t = np.exp(-beta_scatter * depth)[None]
    return np.clip(arr * t + airlight * (1.0 - t), 0.0, 1.0)


def synth_rain(img, count: int = 60, length: float = 12.0, angle_deg: float = 75.0,
               angle_jitter: float = 12.0, width: int = 1, intensity: float = 0.3,
               seed: int = 0) -> np.ndarray:
    """Additive seeded rain streaks: line segments splatted with bilinear
    weights, lightly smoothed along the streak axis, added and clipped.

    Per-streak angle jitter spreads the streak spectra over a wedge of
    directions, which is what gives rain its broadband high-frequency
    signature."""
    arr = _check_image(img)
    if count < 0:
        raise ShapeMismatch("count must be non-negative")
    if count == 0:
        return arr.copy()
    _, h, w = arr.shape
    rng = np.random.default_rng(seed)
    thetas = np.radians(angle_deg + rng.uniform(-angle_jitter, angle_jitter, size=count))
    dx, dy = np.cos(thetas), np.sin(thetas)
    steps = max(2, int(2 * length))
    t = np.linspace(0.0, length, steps)
    x0 = rng.uniform(-length, w, size=count)
    y0 = rng.uniform(-length, h, size=count)
    amp = intensity * rng.uniform(0.5, 1.0, size=count) / steps * length
    overlay = np.zeros((h, w))
    # perpendicular offsets give the streak its width
    for lane in range(max(1, int(width))):
        off = lane - (max(1, int(width)) - 1) / 2.0
        xs = x0[:, None] + t[None, :] * dx[:, None] - off * dy[:, None]
        ys = y0[:, None] + t[None, :] * dy[:, None] + off * dx[:, None]
        vals = np.broadcast_to(amp[:, None], xs.shape).reshape(-1)
        xs, ys = xs.reshape(-1), ys.reshape(-1)
        inside = (xs >= 0) & (xs < w - 1) & (ys >= 0) & (ys < h - 1)
        xs, ys, vals = xs[inside], ys[inside], vals[inside]
        ix, iy = xs.astype(np.intp), ys.astype(np.intp)
        fx, fy = xs - ix, ys - iy
        np.add.at(overlay, (iy, ix), vals * (1 - fx) * (1 - fy))
        np.add.at(overlay, (iy, ix + 1), vals * fx * (1 - fy))
        np.add.at(overlay, (iy + 1, ix), vals * (1 - fx) * fy)
        np.add.at(overlay, (iy + 1, ix + 1), vals * fx * fy)
    # light smoothing along the dominant streak direction only
    si, sj = int(round(float(np.sin(math.radians(angle_deg))))), int(round(float(np.cos(math.radians(angle_deg)))))
    smoothed = 0.7 * overlay
    for sgn in (-1, 1):
        smoothed += 0.15 * np.roll(overlay, (sgn * si, sgn * sj), axis=(0, 1))
    return np.clip(arr + smoothed[None], 0.0, 1.0)


def synth_lowlight(img, gamma: float = 2.2, scale: float = 0.4) -> np.ndarray:
    """Gamma-darkened, globally dimmed image: scale * img ** gamma."""
    arr = _check_image(img)
    if gamma < 1.0:
        raise ShapeMismatch("gamma must be >= 1")
    if not 0.0 < scale <= 1.0:
        raise ShapeMismatch("scale must lie in (0, 1]")
    return np.clip(scale * np.power(arr, gamma), 0.0, 1.0)


def box_kernel(size: int, horizontal: bool = True) -> np.ndarray:
    k = np.full((1, size) if horizontal else (size, 1), 1.0 / size)
    return k


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def synth_blur(img, kernel) -> np.ndarray:
    """Cross-correlation with a normalized kernel under reflect padding."""
    arr = _check_image(img)
    k = np.asarray(kernel, dtype=np.float64)
    if k.ndim != 2:
        raise ShapeMismatch(f"kernel must be 2D, got {k.shape}")
    if abs(k.sum() - 1.0) > 1e-8:
        raise UnnormalizedKernel(f"kernel sums to {k.sum()}, expected 1")
    kh, kw = k.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    padded = np.pad(arr, ((0, 0), (ph, kh - 1 - ph), (pw, kw - 1 - pw)), mode="reflect")
    windows = sliding_window_view(padded, (kh, kw), axis=(1, 2))
    out = np.einsum("chwij,ij->chw", windows, k)
    return np.clip(out, 0.0, 1.0)


##########################################################################
# specifications and composition


@dataclass
class DegradationSpec:
    """One degradation step: a kind plus its parameters and seed."""

    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ShapeMismatch(f"unknown degradation kind {self.kind!r}")

    def to_json(self) -> str:
        return json.dumps({"kind": self.kind, "params": self.params, "seed": self.seed},
                          sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DegradationSpec":
        raw = json.loads(text)
        params = raw.get("params", {})
        if raw["kind"] == "composite":
            params = dict(params)
            params["specs"] = [cls.from_json(json.dumps(s)) if isinstance(s, dict) else s
                               for s in params.get("specs", [])]
        return cls(raw["kind"], params, raw.get("seed", 0))


def apply_spec(img, spec: DegradationSpec) -> np.ndarray:
    p = spec.params
    if spec.kind == "noise":
        return add_gaussian_noise(img, p.get("sigma", 25.0), seed=spec.seed)
    if spec.kind == "haze":
        return synth_haze(img, p.get("beta_scatter", 1.0), p.get("airlight", 0.8),
                          seed=spec.seed)
    if spec.kind == "rain":
        return synth_rain(img, count=p.get("count", 60), length=p.get("length", 12.0),
                          angle_deg=p.get("angle", 75.0), width=p.get("width", 1),
                          intensity=p.get("intensity", 0.3), seed=spec.seed)
    if spec.kind == "blur":
        if "kernel" in p:
            kernel = np.asarray(p["kernel"])
        elif p.get("shape", "gaussian") == "box":
            kernel = box_kernel(p.get("size", 9), p.get("horizontal", True))
        else:
            kernel = gaussian_kernel(p.get("size", 9), p.get("sigma", 1.6))
        return synth_blur(img, kernel)
    if spec.kind == "lowlight":
        return synth_lowlight(img, p.get("gamma", 2.2), p.get("scale", 0.4))
    if spec.kind == "composite":
        return compose_degradations(img, p["specs"], seed=spec.seed)
    raise ShapeMismatch(f"unknown degradation kind {spec.kind!r}")


def compose_degradations(img, specs, seed: int = 0) -> np.ndarray:
    """Apply specs in order; per-step seeds derive from the master seed."""
    arr = _check_image(img).copy()
    seeds = np.random.SeedSequence(seed).generate_state(max(1, len(specs)))
    for i, spec in enumerate(specs):
        derived = DegradationSpec(spec.kind, spec.params, seed=int(seeds[i] ^ spec.seed))
        arr = apply_spec(arr, derived)
    return arr


##########################################################################
# sample pairs and batches


@dataclass
class SamplePair:
    """A (degraded, clean) training or evaluation unit."""

    clean: np.ndarray
    degraded: np.ndarray
    tag: str

    def __post_init__(self):
        if self.clean.shape != self.degraded.shape:
            raise ShapeMismatch(f"{self.clean.shape} vs {self.degraded.shape}")


def make_pair(clean, spec: DegradationSpec, tag: str | None = None) -> SamplePair:
    return SamplePair(np.asarray(clean, dtype=np.float64), apply_spec(clean, spec),
                      tag if tag is not None else spec.kind)


def make_training_batch(pairs, patch: int, flips: bool, seed: int = 0):
    """Identical seeded crop and flips for both members of each pair.

    Returns (degraded, clean, tags) with images stacked N x 3 x patch x patch.
    """
    if patch % 2:
        raise PatchTooLarge(f"patch must be even, got {patch}")
    rng = np.random.default_rng(seed)
    degraded, clean, tags = [], [], []
    for pair in pairs:
        _, h, w = pair.clean.shape
        if patch > h or patch > w:
            raise PatchTooLarge(f"patch {patch} exceeds image {h}x{w}")
        top = int(rng.integers(0, h - patch + 1))
        left = int(rng.integers(0, w - patch + 1))
        sl = (slice(None), slice(top, top + patch), slice(left, left + patch))
        d, c = pair.degraded[sl], pair.clean[sl]
        if flips:
            if rng.random() < 0.5:
                d, c = d[:, :, ::-1], c[:, :, ::-1]
            if rng.random() < 0.5:
                d, c = d[:, ::-1, :], c[:, ::-1, :]
        degraded.append(np.ascontiguousarray(d))
        clean.append(np.ascontiguousarray(c))
        tags.append(pair.tag)
    return np.stack(degraded), np.stack(clean), tags


##########################################################################
# synthetic clean images and ready-made datasets


def make_test_image(h: int, w: int, seed: int = 0) -> np.ndarray:
    """Textured synthetic clean image: ramps, gratings, and soft shapes."""
    rng = np.random.default_rng(seed)
    yy = np.linspace(0, 1, h).reshape(-1, 1)
    xx = np.linspace(0, 1, w).reshape(1, -1)
    img = np.zeros((3, h, w))
    for c in range(3):
        a, b = rng.uniform(0.2, 0.8, size=2)
        img[c] = a * yy + b * xx
        freq = rng.uniform(4, 10)
        phase = rng.uniform(0, 2 * np.pi)
        ang = rng.uniform(0, np.pi)
        img[c] += 0.15 * np.sin(2 * np.pi * freq * (np.cos(ang) * xx + np.sin(ang) * yy) + phase)
    for _ in range(4):
        cy, cx = rng.uniform(0.1, 0.9) * h, rng.uniform(0.1, 0.9) * w
        ry, rx = rng.uniform(0.08, 0.25) * h, rng.uniform(0.08, 0.25) * w
        blob = ((yy * h - cy) / ry) ** 2 + ((xx * w - cx) / rx) ** 2 < 1.0
        img[:, blob] += rng.uniform(-0.35, 0.35, size=3).reshape(3, 1)
    lo, hi = img.min(), img.max()
    return 0.05 + 0.9 * (img - lo) / (hi - lo + 1e-12)


def default_spec(kind: str, seed: int = 0) -> DegradationSpec:
    presets = {
        "noise": {"sigma": 25.0},
        "haze": {"beta_scatter": 1.2, "airlight": 0.85},
        "rain": {"count": 80, "length": 14.0, "angle": 75.0, "intensity": 0.35},
        "blur": {"shape": "gaussian", "size": 9, "sigma": 1.6},
        "lowlight": {"gamma": 2.2, "scale": 0.4},
    }
    return DegradationSpec(kind, presets[kind], seed=seed)


def build_dataset(kinds, per_kind: int, size: int, seed: int = 0):
    """Seeded list of SamplePairs over synthetic clean images."""
    pairs = []
    counter = 0
    for kind in kinds:
        for i in range(per_kind):
            clean = make_test_image(size, size, seed=seed * 1000 + counter)
            spec = default_spec(kind, seed=seed * 1000 + 500 + counter)
            pairs.append(make_pair(clean, spec))
            counter += 1
    return pairs


##########################################################################
# dataset manifest: one record per line, clean_path <TAB> spec_json <TAB> seed


def write_manifest(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for clean_path, spec, seed in records:
            fh.write(f"{clean_path}\t{spec.to_json()}\t{seed}\n")


def read_manifest(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ShapeMismatch(f"manifest line {lineno}: expected 3 tab-separated fields")
            records.append((parts[0], DegradationSpec.from_json(parts[1]), int(parts[2])))
    return records


def load_manifest_pairs(path):
    """Materialize SamplePairs from a manifest of PPM cleans and specs."""
    from .ppm import read_image

    pairs = []
    for clean_path, spec, seed in read_manifest(path):
        clean = read_image(clean_path)
        spec = DegradationSpec(spec.kind, spec.params, seed=seed)
        pairs.append(make_pair(clean, spec))
    return pairs
