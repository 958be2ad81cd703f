"""Overfit a desk-scale model on four noisy images.

Four synthetic clean images are corrupted with sigma=25 Gaussian noise;
the model trains on exactly those pairs, so the loss should fall well
below the noise floor and the restorations should beat the noisy inputs
by several dB.  With the default 200 steps this takes a couple of minutes
on one CPU core; pass a smaller step count for a quick look.

Run:  python demos/04_overfit_denoising.py [steps]
"""

import pathlib
import sys

import numpy as np

from adair import degrade, network, ppm, training

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 200
here = pathlib.Path(__file__).parent
out = here / "out"
out.mkdir(exist_ok=True)

pairs = []
for i in range(4):
    clean = degrade.make_test_image(32, 32, seed=200 + i)
    pairs.append(degrade.make_pair(clean, degrade.DegradationSpec("noise", {"sigma": 25.0},
                                                                  seed=300 + i)))

model = network.build_model(network.desk_config(), seed=5)
config = training.TrainConfig(lr=2e-4, steps=steps, batch_size=4, patch=32, flips=False, seed=5)
print(f"training {steps} steps on 4 noisy/clean pairs ...")
model, metrics = training.train_loop(model, pairs, config)

print(f"L1 loss: {metrics.losses[0]:.4f} -> {metrics.losses[-1]:.4f} "
      f"({metrics.losses[-1] / metrics.losses[0]:.2f}x)")
for i, pair in enumerate(pairs):
    restored = model(pair.degraded[None])[0]
    before = training.psnr(pair.degraded, pair.clean)
    after = training.psnr(restored, pair.clean)
    print(f"pair {i}: {before:.2f} dB -> {after:.2f} dB  ({after - before:+.2f})")
    if i == 0:
        ppm.write_image(out / "denoise_clean.ppm", pair.clean)
        ppm.write_image(out / "denoise_noisy.ppm", pair.degraded)
        ppm.write_image(out / "denoise_restored.ppm", restored)

training.write_history_csv(out / "denoise_history.csv", metrics)
print(f"history and example images written to {out}/")
