"""Model assembly: configuration, the 4-level encoder-decoder, parameter
accounting, and checkpoint persistence.

The backbone encodes at widths C, 2C, 4C with a latent at 8C; resampling is
a 3x3 conv followed by pixel (un)shuffling, skip fusion concatenates encoder
features and reduces them with a 1x1 conv at levels 3 and 2, and the first
decoder level and refinement run at 2C.  Frequency learning blocks sit on
the decoder path before each upsample (widths 8C, 4C, 2C), each fed the
degraded input resized to its resolution.  The restored image is the output
projection plus a global residual from the input.
"""

from __future__ import annotations

import contextlib
import hashlib
import struct
from dataclasses import dataclass, fields, replace

import numpy as np

from . import blocks as B
from . import tensor as T
from .errors import (
    ConfigMismatch,
    CorruptCheckpoint,
    EmptyInput,
    InvalidConfig,
    ShapeMismatch,
)
from .tensor import Tensor

GAPS = ("gap1", "gap2", "gap3")
MASK_MODES = ("learned-soft", "learned-hard", "fixed")

CHECKPOINT_MAGIC = b"ADAIRCKP"
CHECKPOINT_VERSION = 1

_DTYPE_CODES = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}
_CODE_DTYPES = {0: np.float64, 1: np.float32}


##########################################################################
# configuration


@dataclass
class ModelConfig:
    """Architecture hyperparameters; `validate` enforces the invariants."""

    base_channels: int = 48
    tb_counts: tuple = (4, 6, 6, 8)
    refinement_blocks: int = 4
    heads: tuple = (1, 2, 4, 8)
    gdfn_expansion: float = 2.66
    r1: int = 4
    r2: int = 8
    k: int = 128
    mask_mode: str = "learned-soft"
    fixed_mask_side: int = 10
    mask_tau: float = 0.5
    aflb_placement: tuple = GAPS
    normalize_qk: bool = True
    precision: str = "float64"

    def validate(self) -> None:
        c = self.base_channels
        if c < 2 or c % 2:
            raise InvalidConfig(f"base_channels must be even and >= 2, got {c}")
        if len(self.tb_counts) != 4 or any(n < 1 for n in self.tb_counts):
            raise InvalidConfig(f"tb_counts needs four positive entries, got {self.tb_counts}")
        if len(self.heads) != 4 or any(h < 1 for h in self.heads):
            raise InvalidConfig(f"heads needs four positive entries, got {self.heads}")
        for level, h in enumerate(self.heads):
            if (c * 2 ** level) % h:
                raise InvalidConfig(f"heads[{level}]={h} does not divide {c * 2 ** level}")
        if self.refinement_blocks < 0:
            raise InvalidConfig("refinement_blocks must be non-negative")
        if self.gdfn_expansion <= 1.0:
            raise InvalidConfig("gdfn_expansion must exceed 1")
        if min(self.r1, self.r2, self.k) < 1:
            raise InvalidConfig("r1, r2, k must be positive")
        if self.mask_mode not in MASK_MODES:
            raise InvalidConfig(f"mask_mode must be one of {MASK_MODES}")
        if self.fixed_mask_side < 0:
            raise InvalidConfig("fixed_mask_side must be non-negative")
        if self.mask_tau <= 0:
            raise InvalidConfig("mask_tau must be positive")
        seen = set()
        for gap in self.aflb_placement:
            if gap not in GAPS or gap in seen:
                raise InvalidConfig(f"aflb_placement entries must be unique gaps, got {self.aflb_placement}")
            seen.add(gap)
        if self.precision not in ("float64", "float32"):
            raise InvalidConfig(f"precision must be float64 or float32, got {self.precision}")

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        known = {f.name: f for f in fields(cls)}
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
                raise InvalidConfig(f"unknown configuration key {key!r}")
            values[key] = _parse_field(getattr(cls, key), val)
        cfg = cls(**values)
        cfg.validate()
        return cfg


def _parse_field(default, val: str):
    if isinstance(default, bool):
        if val.lower() in ("true", "1", "yes"):
            return True
        if val.lower() in ("false", "0", "no"):
            return False
        raise InvalidConfig(f"expected a boolean, got {val!r}")
    if isinstance(default, tuple):
        items = [v.strip() for v in val.split(",") if v.strip()]
        if all(item.lstrip("-").isdigit() for item in items):
            return tuple(int(v) for v in items)
        return tuple(items)
    if isinstance(default, int):
        return int(val)
    if isinstance(default, float):
        return float(val)
    return val


def paper_config(**overrides) -> ModelConfig:
    """Published-scale architecture (26.13M baseline / ~28.8M full)."""
    return replace(ModelConfig(), **overrides)


def desk_config(**overrides) -> ModelConfig:
    """Small configuration for tests and probes on a single CPU core."""
    base = ModelConfig(base_channels=8, tb_counts=(1, 1, 1, 1), refinement_blocks=1,
                       precision="float32")
    return replace(base, **overrides)


##########################################################################
# model


def _run(blocks, x):
    for block in blocks:
        x = block(x)
    return x


class AdaIRModel(B.Module):
    """4-level encoder-decoder with frequency learning blocks on the decoder."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self.config = config
        dtype = config.dtype
        rng = np.random.default_rng(seed)
        c = config.base_channels
        d1, d2, d3, d4 = c, 2 * c, 4 * c, 8 * c
        h1, h2, h3, h4 = config.heads
        exp = config.gdfn_expansion
        nq = config.normalize_qk
        aflb_kw = dict(
            r1=config.r1, r2=config.r2, k=config.k, mask_mode=config.mask_mode,
            tau=config.mask_tau, fixed_half_side=config.fixed_mask_side // 2,
            normalize_qk=nq, dtype=dtype,
        )

        def tbs(dim, heads, n):
            return [B.TransformerBlock(rng, dim, heads, exp, nq, dtype=dtype) for _ in range(n)]

        place = config.aflb_placement
        # the embedding runs hot (order-one features feed the residual stream)
        # while the output projection starts small, so early training fixes
        # the readout quickly instead of fighting a large random restoration
        self.patch_embed = B.Conv2d(rng, 3, d1, 3, bias=False, gain=2.5, dtype=dtype)
        self.encoder1 = tbs(d1, h1, config.tb_counts[0])
        self.down1 = B.Conv2d(rng, d1, d1 // 2, 3, bias=False, dtype=dtype)
        self.encoder2 = tbs(d2, h2, config.tb_counts[1])
        self.down2 = B.Conv2d(rng, d2, d2 // 2, 3, bias=False, dtype=dtype)
        self.encoder3 = tbs(d3, h3, config.tb_counts[2])
        self.down3 = B.Conv2d(rng, d3, d3 // 2, 3, bias=False, dtype=dtype)
        self.latent = tbs(d4, h4, config.tb_counts[3])
        self.aflb1 = (
            B.FrequencyLearningBlock(rng, d4, h4, **aflb_kw) if "gap1" in place else None
        )
        self.up3 = B.Conv2d(rng, d4, d4 * 2, 3, bias=False, dtype=dtype)
        self.fuse3 = B.Conv2d(rng, d4, d3, 1, bias=False, dtype=dtype)
        self.decoder3 = tbs(d3, h3, config.tb_counts[2])
        self.aflb2 = (
            B.FrequencyLearningBlock(rng, d3, h3, **aflb_kw) if "gap2" in place else None
        )
        self.up2 = B.Conv2d(rng, d3, d3 * 2, 3, bias=False, dtype=dtype)
        self.fuse2 = B.Conv2d(rng, d3, d2, 1, bias=False, dtype=dtype)
        self.decoder2 = tbs(d2, h2, config.tb_counts[1])
        self.aflb3 = (
            B.FrequencyLearningBlock(rng, d2, h2, **aflb_kw) if "gap3" in place else None
        )
        self.up1 = B.Conv2d(rng, d2, d2 * 2, 3, bias=False, dtype=dtype)
        self.decoder1 = tbs(d2, h1, config.tb_counts[0])
        self.refinement = tbs(d2, h1, config.refinement_blocks)
        self.output_proj = B.Conv2d(rng, d2, 3, 3, bias=False, gain=0.2, dtype=dtype)

    def aflbs(self):
        return [a for a in (self.aflb1, self.aflb2, self.aflb3) if a is not None]

    def __call__(self, image, train: bool = False):
        """Restore an N x 3 x H x W image batch in [0, 1].

        With train=True the unclamped output tensor stays on the tape;
        otherwise a clamped plain array is returned.
        """
        arr = np.asarray(image, dtype=self.config.dtype)
        if arr.ndim == 3:
            arr = arr[None]
        if arr.size == 0:
            raise EmptyInput("empty image batch")
        if arr.ndim != 4 or arr.shape[1] != 3:
            raise ShapeMismatch(f"expected N x 3 x H x W, got {arr.shape}")
        n, _, h, w = arr.shape
        ph, pw = (-h) % 8, (-w) % 8
        if ph >= h or pw >= w:
            raise ShapeMismatch(f"input {h}x{w} too small to reflect-pad to a multiple of 8")
        if ph or pw:
            arr = np.pad(arr, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="reflect")
        ctx = contextlib.nullcontext() if train else T.no_grad()
        with ctx:
            x0 = Tensor(arr)
            hp, wp = arr.shape[2], arr.shape[3]
            guide = {
                s: Tensor(T.resize_bilinear(arr, hp // s, wp // s)) for s in (2, 4, 8)
            }
            y = self.patch_embed(x0)
            e1 = _run(self.encoder1, y)
            e2 = _run(self.encoder2, T.pixel_unshuffle(self.down1(e1), 2))
            e3 = _run(self.encoder3, T.pixel_unshuffle(self.down2(e2), 2))
            lat = _run(self.latent, T.pixel_unshuffle(self.down3(e3), 2))
            if self.aflb1 is not None:
                lat = self.aflb1(lat, guide[8])
            y = T.pixel_shuffle(self.up3(lat), 2)
            d3 = _run(self.decoder3, self.fuse3(T.concat([y, e3], 1)))
            if self.aflb2 is not None:
                d3 = self.aflb2(d3, guide[4])
            y = T.pixel_shuffle(self.up2(d3), 2)
            d2 = _run(self.decoder2, self.fuse2(T.concat([y, e2], 1)))
            if self.aflb3 is not None:
                d2 = self.aflb3(d2, guide[2])
            y = T.pixel_shuffle(self.up1(d2), 2)
            d1 = _run(self.decoder1, T.concat([y, e1], 1))
            out = self.output_proj(_run(self.refinement, d1)) + x0
            if ph:
                out = T.narrow(out, 2, 0, h)
            if pw:
                out = T.narrow(out, 3, 0, w)
        if train:
            return out
        return np.clip(out.data, 0.0, 1.0)


def build_model(config: ModelConfig, seed: int = 0) -> AdaIRModel:
    return AdaIRModel(config, seed=seed)


##########################################################################
# parameter accounting


_SECTION_PREFIXES = (
    ("aflb", "aflb"),
    ("patch_embed", "encoder"),
    ("encoder", "encoder"),
    ("down", "encoder"),
    ("latent", "encoder"),
    ("up", "decoder"),
    ("fuse", "decoder"),
    ("decoder", "decoder"),
    ("refinement", "refinement"),
    ("output_proj", "output"),
)


def count_parameters(model: AdaIRModel):
    """Exact scalar count plus a per-section breakdown."""
    total = 0
    sections: dict[str, int] = {}
    for name, p in model.named_parameters():
        total += p.size
        for prefix, section in _SECTION_PREFIXES:
            if name.startswith(prefix):
                sections[section] = sections.get(section, 0) + p.size
                break
        else:
            sections["other"] = sections.get("other", 0) + p.size
    return total, sections


##########################################################################
# checkpoints


def _write_record(out: bytearray, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    out += struct.pack("<H", len(encoded))
    out += encoded
    out += struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim)
    for d in arr.shape:
        out += struct.pack("<I", d)
    out += arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()


class _Reader:
    def __init__(self, blob: bytes, offset: int):
        self.blob = blob
        self.off = offset

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.blob):
            raise CorruptCheckpoint("checkpoint truncated")
        piece = self.blob[self.off:self.off + n]
        self.off += n
        return piece

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def u8(self) -> int:
        return self.take(1)[0]

    def record(self):
        name = self.take(self.u16()).decode("utf-8")
        code, ndim = self.u8(), self.u8()
        if code not in _CODE_DTYPES:
            raise CorruptCheckpoint(f"unknown dtype code {code}")
        shape = tuple(self.u32() for _ in range(ndim))
        dtype = np.dtype(_CODE_DTYPES[code]).newbyteorder("<")
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(self.take(count * dtype.itemsize), dtype=dtype)
        return name, arr.astype(_CODE_DTYPES[code]).reshape(shape)


def _checksum(payload: bytes) -> int:
    return struct.unpack("<Q", hashlib.sha256(payload).digest()[:8])[0]


def save_checkpoint(model: AdaIRModel, path, optimizer_state: dict | None = None) -> None:
    """Write magic, version, config text, weight table, optimizer state, checksum."""
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<I", CHECKPOINT_VERSION)
    cfg = model.config.to_text().encode("utf-8")
    out += struct.pack("<I", len(cfg))
    out += cfg
    params = list(model.named_parameters())
    out += struct.pack("<I", len(params))
    for name, p in params:
        _write_record(out, name, p.data)
    if optimizer_state is None:
        out += struct.pack("<B", 0)
    else:
        out += struct.pack("<B", 1)
        out += struct.pack("<Q", int(optimizer_state["step"]))
        for table in ("m", "v"):
            entries = optimizer_state[table]
            out += struct.pack("<I", len(entries))
            for name, arr in entries.items():
                _write_record(out, name, np.asarray(arr))
    out += struct.pack("<Q", _checksum(bytes(out)))
    with open(path, "wb") as fh:
        fh.write(bytes(out))


def load_checkpoint(path, model: AdaIRModel | None = None):
    """Restore (model, optimizer_state) from a checkpoint file.

    When `model` is given its configuration must match the stored one;
    otherwise a fresh model is built from the stored configuration.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(CHECKPOINT_MAGIC) + 12 or blob[:8] != CHECKPOINT_MAGIC:
        raise CorruptCheckpoint("bad magic")
    stored_sum = struct.unpack("<Q", blob[-8:])[0]
    if _checksum(blob[:-8]) != stored_sum:
        raise CorruptCheckpoint("checksum mismatch")
    r = _Reader(blob[:-8], 8)
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise CorruptCheckpoint(f"unsupported version {version}")
    cfg_text = r.take(r.u32()).decode("utf-8")
    config = ModelConfig.from_text(cfg_text)
    if model is None:
        model = AdaIRModel(config, seed=0)
    elif model.config != config:
        raise ConfigMismatch("checkpoint configuration differs from the target model")
    params = dict(model.named_parameters())
    n = r.u32()
    loaded = set()
    for _ in range(n):
        name, arr = r.record()
        if name not in params:
            raise ConfigMismatch(f"checkpoint weight {name!r} has no target parameter")
        if params[name].data.shape != arr.shape:
            raise ConfigMismatch(f"shape mismatch for {name!r}")
        params[name].data[:] = arr.astype(params[name].data.dtype)
        loaded.add(name)
    if loaded != set(params):
        raise ConfigMismatch("checkpoint is missing model parameters")
    optimizer_state = None
    if r.u8():
        step = r.u64()
        tables = {}
        for table in ("m", "v"):
            entries = {}
            for _ in range(r.u32()):
                name, arr = r.record()
                entries[name] = arr
            tables[table] = entries
        optimizer_state = {"step": step, "m": tables["m"], "v": tables["v"]}
    return model, optimizer_state
