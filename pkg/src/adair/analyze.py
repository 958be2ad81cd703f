"""Residual-spectrum profiling: square-perimeter curves and their statistics.

The residual between a clean and a degraded image is transformed per
channel, centered, and reduced to a channel-averaged magnitude image that
is resized to a common 320 x 320 grid.  The curve value at half-side L is
the mean magnitude over the perimeter of the centered square with that
half-side (Chebyshev ring); `filled` switches to means over the whole
square instead.  A flat curve (low coefficient of variation) marks
degradations spread across all bands, a decaying one (rank correlation
near -1) marks low-frequency-heavy degradations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import spectral as S
from . import tensor as T
from .errors import ShapeMismatch
from .tensor import Tensor

SPECTRUM_SIZE = 320
CURVE_POINTS = 160
FLATNESS_RANGE = (8, 160)


@dataclass
class CurveReport:
    """Square-curve profile of one residual spectrum."""

    tag: str
    curve: np.ndarray      # index i holds the mean magnitude at half-side L = i + 1
    flatness_cv: float     # std/mean over L in FLATNESS_RANGE
    monotonicity: float    # rank correlation of value against L


def rank_correlation(x, y) -> float:
    """Spearman-style rank correlation; 0 when either side is constant.

    Ties are not averaged (curve values are continuous in practice).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        return 0.0
    rx = np.argsort(np.argsort(x)).astype(np.float64)
    ry = np.argsort(np.argsort(y)).astype(np.float64)
    return float(((rx - rx.mean()) * (ry - ry.mean())).mean() / (rx.std() * ry.std()))


def _chebyshev_rings() -> np.ndarray:
    c = SPECTRUM_SIZE // 2
    idx = np.arange(SPECTRUM_SIZE)
    return np.maximum(np.abs(idx - c)[:, None], np.abs(idx - c)[None, :])


def residual_spectrum_curve(clean, degraded, tag: str = "", filled: bool = False) -> CurveReport:
    """Profile the spectrum of (clean - degraded) over centered squares."""
    clean = np.asarray(clean, dtype=np.float64)
    degraded = np.asarray(degraded, dtype=np.float64)
    if clean.shape != degraded.shape:
        raise ShapeMismatch(f"{clean.shape} vs {degraded.shape}")
    if clean.ndim != 3 or clean.shape[0] != 3:
        raise ShapeMismatch(f"expected 3 x H x W images, got {clean.shape}")
    residual = clean - degraded
    with T.no_grad():
        spec = S.fft2(Tensor(residual[None]))
    magnitude = S.fftshift_array(spec.magnitude()[0]).mean(axis=0)
    resized = T.resize_bilinear(magnitude, SPECTRUM_SIZE, SPECTRUM_SIZE)
    rings = _chebyshev_rings()
    sums = np.bincount(rings.reshape(-1), weights=resized.reshape(-1),
                       minlength=CURVE_POINTS + 1)
    counts = np.bincount(rings.reshape(-1), minlength=CURVE_POINTS + 1)
    if filled:
        sums, counts = np.cumsum(sums), np.cumsum(counts)
    means = sums / counts
    curve = means[1:CURVE_POINTS + 1].copy()
    lo, hi = FLATNESS_RANGE
    window = curve[lo - 1:hi]
    mean = window.mean()
    flatness = float(window.std() / mean) if mean > 1e-12 else 0.0
    if np.ptp(curve) < 1e-12:
        monotonicity = 0.0
    else:
        monotonicity = rank_correlation(np.arange(1, CURVE_POINTS + 1), curve)
    return CurveReport(tag=tag, curve=curve, flatness_cv=flatness, monotonicity=monotonicity)


def write_curve_csv(path, report: CurveReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("L,mean_magnitude\n")
        for i, v in enumerate(report.curve, 1):
            fh.write(f"{i},{v:.10g}\n")


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def write_curve_svg(path, reports) -> None:
    """Simple line plot of log(1 + magnitude) against half-side L."""
    width, height = 640, 400
    ml, mr, mt, mb = 60, 20, 20, 45
    pw, ph = width - ml - mr, height - mt - mb
    logs = [np.log1p(r.curve) for r in reports]
    top = max(float(l.max()) for l in logs) or 1.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>',
        f'<text x="{ml + pw / 2:.0f}" y="{height - 10}" text-anchor="middle" '
        f'font-size="13">square half-side L</text>',
        f'<text x="15" y="{mt + ph / 2:.0f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 15 {mt + ph / 2:.0f})">log(1 + mean magnitude)</text>',
    ]
    for k, (report, logc) in enumerate(zip(reports, logs)):
        color = _PALETTE[k % len(_PALETTE)]
        pts = []
        for i, v in enumerate(logc):
            x = ml + pw * i / (CURVE_POINTS - 1)
            y = mt + ph * (1.0 - v / top)
            pts.append(f"{x:.1f},{y:.1f}")
        parts.append(
            f'<polyline points="{" ".join(pts)}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        label = report.tag or f"curve {k + 1}"
        parts.append(
            f'<text x="{ml + pw - 5}" y="{mt + 16 * (k + 1)}" text-anchor="end" '
            f'font-size="12" fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
