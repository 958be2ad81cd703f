"""Adaptive rectangular frequency masks and band splitting.

Builds the complementary low/high mask pair at a few factor settings,
verifies the algebra that the restoration blocks rely on (exact
complement, conjugate symmetry, real inverse transforms, low + high
reconstructions summing to the original), and band-splits an image.

Run:  python demos/02_frequency_masks.py
"""

import pathlib

import numpy as np

from adair import degrade, ppm, spectral
from adair.tensor import Tensor

here = pathlib.Path(__file__).parent
out = here / "out"
out.mkdir(exist_ok=True)

# --- mask construction at different factors --------------------------------
for alpha, beta in [(0.0, 0.0), (0.5, 0.5), (1.0, 1.0)]:
    mask = spectral.build_frequency_masks(alpha, beta, 64, 64, k=16, mode="hard")
    print(f"alpha={alpha} beta={beta}: low-pass region holds {int(mask.m_low.sum())} bins")

soft = spectral.build_frequency_masks(0.5, 0.5, 64, 64, k=16, mode="soft", tau=0.5)
print(f"soft mask partition error: {np.abs(soft.m_low + soft.m_high - 1).max():.2e}")

# --- band splitting ---------------------------------------------------------
img = degrade.make_test_image(64, 64, seed=3)
spec = spectral.fftshift2(spectral.fft2(Tensor(img[None])))
print(f"conjugate symmetry error of the centered spectrum: "
      f"{spec.conjugate_symmetry_error(centered=True):.2e}")

mask = spectral.build_frequency_masks(0.6, 0.6, 64, 64, k=16, mode="hard")
low = spectral.mask_apply_invert(spec, mask.m_low).data[0]
high = spectral.mask_apply_invert(spec, mask.m_high).data[0]

print(f"low + high reconstruction error: {np.abs(low + high - img).max():.2e}")
print(f"energy split: low {np.sum(low ** 2) / np.sum(img ** 2):.1%}, "
      f"high {np.sum(high ** 2) / np.sum(img ** 2):.1%} of the total")

ppm.write_image(out / "band_full.ppm", img)
ppm.write_image(out / "band_low.ppm", np.clip(low, 0, 1))
ppm.write_image(out / "band_high.ppm", np.clip(high + 0.5, 0, 1))  # re-centered for display
print(f"band-split images written to {out}/")
