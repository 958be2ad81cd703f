"""Binary PPM (P6, 8-bit) image reading and writing.

Values map to [0, 1] by /255 on read and round-trip bit-exactly.  Headers
may carry `#` comments per the format; only maxval 255 is supported.
"""

from __future__ import annotations

import numpy as np

from .errors import MalformedHeader, ShapeMismatch, TruncatedPayload


def _read_token(blob: bytes, pos: int):
    """Next whitespace-delimited header token, skipping comments."""
    n = len(blob)
    while pos < n:
        ch = blob[pos:pos + 1]
        if ch == b"#":
            while pos < n and blob[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise MalformedHeader("header ended before all fields were read")
    start = pos
    while pos < n and not blob[pos:pos + 1].isspace() and blob[pos:pos + 1] != b"#":
        pos += 1
    return blob[start:pos], pos


def read_image(path) -> np.ndarray:
    """Read a P6 file into a 3 x H x W float array in [0, 1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:2] != b"P6":
        raise MalformedHeader(f"expected P6 magic, got {blob[:2]!r}")
    pos = 2
    fields = []
    for _ in range(3):
        token, pos = _read_token(blob, pos)
        if not token.isdigit():
            raise MalformedHeader(f"non-numeric header field {token!r}")
        fields.append(int(token))
    width, height, maxval = fields
    if maxval != 255:
        raise MalformedHeader(f"only maxval 255 is supported, got {maxval}")
    if width < 1 or height < 1:
        raise MalformedHeader(f"bad dimensions {width}x{height}")
    pos += 1  # single whitespace byte after maxval
    payload = blob[pos:pos + width * height * 3]
    if len(payload) < width * height * 3:
        raise TruncatedPayload(
            f"expected {width * height * 3} payload bytes, got {len(payload)}"
        )
    raw = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return raw.transpose(2, 0, 1).astype(np.float64) / 255.0


def write_image(path, img) -> None:
    """Write a 3 x H x W array in [0, 1] as a P6 file (values round to 8 bit)."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ShapeMismatch(f"expected 3 x H x W image, got {arr.shape}")
    quantized = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    h, w = arr.shape[1], arr.shape[2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(quantized.transpose(1, 2, 0).tobytes())
