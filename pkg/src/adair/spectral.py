"""2D Fourier transforms, spectrum centering, and rectangular frequency masks.

The forward transform is unnormalized; the inverse carries the 1/(H*W)
factor, so ``ifft2(fft2(x)) == x`` and Parseval reads
``sum |x|^2 == (1/HW) sum |F|^2``.  Transforms run per channel on NCHW
tensors and are recorded on the autodiff tape (they are linear, so their
gradients are exact adjoint transforms).

The fast path is an iterative radix-2 butterfly; even composite extents
split recursively and odd factors fall back to the direct definitional
transform, so any extent >= 1 is supported.  ``dft2_oracle`` is the
brute-force reference used by the verification suite and shares no code
with the fast path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import InvalidRange, ShapeMismatch
from .tensor import Tensor

# ---------------------------------------------------------------------------
# complex FFT core (plain arrays)
# ---------------------------------------------------------------------------


def _fft_pow2(z: np.ndarray, inverse: bool) -> np.ndarray:
    """Iterative radix-2 transform along the last axis (length a power of two)."""
    n = z.shape[-1]
    levels = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(levels):
        rev |= ((idx >> b) & 1) << (levels - 1 - b)
    out = np.ascontiguousarray(z[..., rev], dtype=np.complex128)
    sign = 1.0 if inverse else -1.0
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(sign * 2j * np.pi * np.arange(half) / size)
        v = out.reshape(z.shape[:-1] + (n // size, size))
        t = v[..., half:] * tw
        u = v[..., :half].copy()
        v[..., :half] = u + t
        v[..., half:] = u - t
        size *= 2
    return out


def _fft_axis(z: np.ndarray, inverse: bool) -> np.ndarray:
    """Transform along the last axis for any extent."""
    n = z.shape[-1]
    if n == 1:
        return z.astype(np.complex128, copy=True)
    if n & (n - 1) == 0:
        return _fft_pow2(z, inverse)
    sign = 1.0 if inverse else -1.0
    if n % 2 == 0:
        even = _fft_axis(z[..., 0::2], inverse)
        odd = _fft_axis(z[..., 1::2], inverse)
        half = n // 2
        tw = np.exp(sign * 2j * np.pi * np.arange(half) / n)
        t = tw * odd
        return np.concatenate([even + t, even - t], axis=-1)
    # odd extent: direct definitional transform on this factor
    k = np.arange(n)
    mat = np.exp(sign * 2j * np.pi * np.outer(k, k) / n)
    return z @ mat.T


def _fft2_complex(z: np.ndarray, inverse: bool) -> np.ndarray:
    z = _fft_axis(z, inverse)
    z = np.swapaxes(_fft_axis(np.swapaxes(z, -1, -2), inverse), -1, -2)
    return np.ascontiguousarray(z)


# ---------------------------------------------------------------------------
# spectra on the tape
# ---------------------------------------------------------------------------

@dataclass
class ComplexSpectrum:
    """Real/imaginary tensor pair holding a per-channel 2D spectrum."""

    re: Tensor
    im: Tensor

    @property
    def shape(self):
        return self.re.shape

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.re.data, self.im.data)

    def conjugate_symmetry_error(self, centered: bool = False) -> float:
        """Max deviation from F[u,v] == conj(F[-u mod H, -v mod W])."""
        f = self.re.data + 1j * self.im.data
        h, w = f.shape[-2], f.shape[-1]
        iu, iv = np.arange(h), np.arange(w)
        if centered:
            iu = (2 * (h // 2) - iu) % h
            iv = (2 * (w // 2) - iv) % w
        else:
            iu, iv = (-iu) % h, (-iv) % w
        mirrored = f[..., iu[:, None], iv[None, :]]
        return float(np.abs(f - np.conj(mirrored)).max())


def fft2(x) -> ComplexSpectrum:
    """Unnormalized forward DFT of the trailing two axes."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    f = _fft2_complex(x.data.astype(np.complex128), inverse=False)

    def bwd(g_re, g_im):
        # adjoint of the unnormalized forward DFT is the unnormalized inverse
        g = _fft2_complex(g_re + 1j * g_im, inverse=True)
        return (np.ascontiguousarray(g.real).astype(x.dtype, copy=False),)

    re, im = T._result_multi((f.real.copy(), f.imag.copy()), (x,), bwd)
    return ComplexSpectrum(re, im)


def ifft2(spec: ComplexSpectrum):
    """Inverse DFT with 1/(H*W) normalization.

    Returns (real part, max absolute imaginary residual); the residual is a
    diagnostic for the symmetric-mask invariant and is not differentiated.
    """
    f = spec.re.data + 1j * spec.im.data
    norm = f.shape[-2] * f.shape[-1]
    z = _fft2_complex(f, inverse=True) / norm
    residual = float(np.abs(z.imag).max())

    def bwd(g):
        gc = _fft2_complex(g.astype(np.complex128), inverse=True)
        return (
            np.ascontiguousarray(gc.real / norm).astype(spec.re.dtype, copy=False),
            np.ascontiguousarray(-gc.imag / norm).astype(spec.im.dtype, copy=False),
        )

    out = T._result(np.ascontiguousarray(z.real), (spec.re, spec.im), bwd)
    return out, residual


def _roll2(x: Tensor, sh: int, sw: int) -> Tensor:
    def bwd(g):
        return (np.roll(g, (-sh, -sw), axis=(-2, -1)),)

    return T._result(np.roll(x.data, (sh, sw), axis=(-2, -1)), (x,), bwd)


def fftshift2(spec: ComplexSpectrum) -> ComplexSpectrum:
    """Move the DC bin to (H//2, W//2)."""
    h, w = spec.shape[-2], spec.shape[-1]
    return ComplexSpectrum(_roll2(spec.re, h // 2, w // 2), _roll2(spec.im, h // 2, w // 2))


def ifftshift2(spec: ComplexSpectrum) -> ComplexSpectrum:
    """Inverse of fftshift2 (exact permutation inverse for any extent)."""
    h, w = spec.shape[-2], spec.shape[-1]
    return ComplexSpectrum(_roll2(spec.re, -(h // 2), -(w // 2)), _roll2(spec.im, -(h // 2), -(w // 2)))


def fftshift_array(arr: np.ndarray) -> np.ndarray:
    """Array-level centering for magnitude images."""
    return np.roll(arr, (arr.shape[-2] // 2, arr.shape[-1] // 2), axis=(-2, -1))


# ---------------------------------------------------------------------------
# frequency masks
# ---------------------------------------------------------------------------

def _round_half_away(v: float) -> int:
    return int(math.floor(v + 0.5))


def _center_distances(h: int, w: int, dtype=np.float64):
    di = np.abs(np.arange(h, dtype=dtype) - h // 2).reshape(1, 1, h, 1)
    dj = np.abs(np.arange(w, dtype=dtype) - w // 2).reshape(1, 1, 1, w)
    return di, dj


def soft_lowpass_mask(alpha, beta, h: int, w: int, k: int = 128, tau: float = 0.5) -> Tensor:
    """Differentiable low-pass gate, (N,1,H,W), from per-sample factors.

    alpha/beta are (N,1,1,1) tensors in [0,1]; the half-sides a = alpha*H/k
    and b = beta*W/k stay continuous so gradients reach the factors.
    """
    alpha = alpha if isinstance(alpha, Tensor) else Tensor(alpha)
    beta = beta if isinstance(beta, Tensor) else Tensor(beta)
    di, dj = _center_distances(h, w)
    a = alpha * (h / k)
    b = beta * (w / k)
    row = T.sigmoid(T.div(a + 0.5 - Tensor(di), tau))
    col = T.sigmoid(T.div(b + 0.5 - Tensor(dj), tau))
    return row * col


def hard_lowpass_masks(alphas: np.ndarray, betas: np.ndarray, h: int, w: int,
                       k: int = 128) -> np.ndarray:
    """Binary per-sample low-pass masks, (N,1,H,W); half-sides round half away."""
    alphas = np.atleast_1d(np.asarray(alphas, dtype=np.float64)).reshape(-1)
    betas = np.atleast_1d(np.asarray(betas, dtype=np.float64)).reshape(-1)
    di, dj = _center_distances(h, w)
    a = np.array([_round_half_away(v * h / k) for v in alphas]).reshape(-1, 1, 1, 1)
    b = np.array([_round_half_away(v * w / k) for v in betas]).reshape(-1, 1, 1, 1)
    return ((di <= a) & (dj <= b)).astype(np.float64)


def hard_square_mask(half_side: int, h: int, w: int) -> np.ndarray:
    """Centered binary square mask with the given half-side, (H,W)."""
    di, dj = _center_distances(h, w)
    return ((di <= half_side) & (dj <= half_side)).astype(np.float64).reshape(h, w)


@dataclass
class FrequencyMask:
    """Complementary low/high masks for a centered spectrum."""

    alpha: float
    beta: float
    k: int
    mode: str
    tau: float
    m_low: np.ndarray
    m_high: np.ndarray


def build_frequency_masks(alpha: float, beta: float, h: int, w: int, k: int = 128,
                          mode: str = "hard", tau: float = 0.5) -> FrequencyMask:
    """Build the complementary (m_low, m_high) pair for given mask factors.

    Hard mode uses the inclusive symmetric rectangle with half-sides
    round(alpha*H/k), round(beta*W/k); soft mode uses a separable sigmoid
    gate with temperature tau.  Both are symmetric about the centered DC
    bin, so masked spectra of real inputs invert to real signals.
    """
    if not (0.0 <= alpha <= 1.0 and 0.0 <= beta <= 1.0):
        raise InvalidRange(f"alpha={alpha}, beta={beta} must lie in [0, 1]")
    if mode not in ("hard", "soft"):
        raise InvalidRange(f"unknown mask mode {mode!r}")
    if tau <= 0:
        raise InvalidRange("tau must be positive")
    if mode == "hard":
        m_low = hard_lowpass_masks([alpha], [beta], h, w, k)[0, 0]
        m_high = 1.0 - m_low
    else:
        with T.no_grad():
            m_low = soft_lowpass_mask(
                Tensor(np.array(alpha).reshape(1, 1, 1, 1)),
                Tensor(np.array(beta).reshape(1, 1, 1, 1)),
                h, w, k=k, tau=tau,
            ).data[0, 0].copy()
        m_high = 1.0 - m_low
    return FrequencyMask(alpha, beta, k, mode, tau, m_low, m_high)


def mask_apply_invert(spec: ComplexSpectrum, mask) -> Tensor:
    """Apply a symmetric mask to a centered spectrum and invert to space.

    `spec` must already be fftshifted; `mask` is (H,W), (N,1,H,W), or a
    tensor on the tape (soft masks carry gradients to their factors).
    """
    m = mask if isinstance(mask, Tensor) else Tensor(mask)
    if m.shape[-2:] != spec.shape[-2:]:
        raise ShapeMismatch(f"mask {m.shape} does not match spectrum {spec.shape}")
    masked = ComplexSpectrum(spec.re * m, spec.im * m)
    out, _residual = ifft2(ifftshift2(masked))
    return out


# ---------------------------------------------------------------------------
# brute-force reference
# ---------------------------------------------------------------------------

def dft2_oracle(x: np.ndarray) -> np.ndarray:
    """Direct definitional DFT of a single 2D array (verification only).

    Evaluates F[u,v] = sum_{h,w} x[h,w] exp(-2*pi*i*(u*h/H + v*w/W)) bin by
    bin; shares nothing with the fast path.
    """
    x = np.asarray(x)
    h, w = x.shape
    hh = np.arange(h).reshape(-1, 1)
    ww = np.arange(w).reshape(1, -1)
    out = np.empty((h, w), dtype=np.complex128)
    for u in range(h):
        for v in range(w):
            phase = np.exp(-2j * np.pi * (u * hh / h + v * ww / w))
            out[u, v] = (x * phase).sum()
    return out
